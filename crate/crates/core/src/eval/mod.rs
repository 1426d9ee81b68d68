//! Objective metrics, the oracle MVDR baseline, and corpus reports.

pub mod metrics;
pub mod mvdr;
pub mod report;

pub use metrics::{resample_poly, sdr, stoi, SDR_CAP_DB};
pub use mvdr::{mvdr_weights, oracle_mvdr, oracle_weights, spatial_covariance, steering_vector};
pub use report::{
    evaluate_corpus, MetricReport, ModelEnhancer, NoisyPassthrough, OracleCirm, OracleMvdr, PesqHook, SpeechEnhancer,
    UtteranceMetrics,
};
