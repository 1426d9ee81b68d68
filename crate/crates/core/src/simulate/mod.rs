//! Reverberation-free multichannel mixture simulation.

pub mod corpus;
pub mod delay;
pub mod mix;
pub mod sampler;

pub use corpus::{read_manifest, synth_noise, synth_speech, write_manifest, write_synthetic_corpus, Clip, Corpus};
pub use delay::{delay_channels, fractional_delay_filter, ArrayGeometry, DELAY_TAPS, SPEED_OF_SOUND};
pub use mix::{energy, mix_at_snr, snr_db, MixtureMeta, MixtureSample, NoiseSpatial};
pub use sampler::{item_seed, load_split, write_split, MixtureSampler, SimulationConfig, SplitEntry};
