#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use mcnet::mask::{Compression, MaskGrid};
use mcnet::model::{backward, forward_with_cache, streaming_step, McNetParams, ModelConfig, StreamState};
use mcnet::normalize::online_normalize;
use mcnet::simulate::{write_synthetic_corpus, Corpus, MixtureSampler, SimulationConfig};
use mcnet::stft::{ComplexSpectrogram, StftConfig};
use mcnet::train::loss_and_grad;
use mcnet::{Complex, Mode};
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_model(mode: Mode) -> ModelConfig {
    ModelConfig {
        channels: 2,
        hidden_width: 4,
        lstm_hidden: [4, 4, 4, 4],
        n1: 1,
        n2: 1,
        context: 2,
        mode,
        enabled_modules: vec![1, 2, 3, 4],
        reference_channel: 1,
    }
}

pub fn small_model(mode: Mode, channels: usize) -> ModelConfig {
    ModelConfig {
        channels,
        hidden_width: 6,
        lstm_hidden: [8, 8, 8, 8],
        n1: 2,
        n2: 1,
        context: 3,
        mode,
        enabled_modules: vec![1, 2, 3, 4],
        reference_channel: channels.min(2),
    }
}

pub fn random_grid(rng: &mut impl Rng, t: usize, f: usize, m: usize) -> Array3<Complex> {
    Array3::from_shape_fn((t, f, m), |_| Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

/// Spectrogram with the given shape; the STFT config is only nominal.
pub fn spectrogram(data: Array3<Complex>, reference_channel: usize) -> ComplexSpectrogram {
    let f = data.dim().1;
    let config = StftConfig {
        window_length: (f - 1) * 2,
        hop: f - 1,
        sample_rate: 16000,
    };
    ComplexSpectrogram::new(data, config, reference_channel).unwrap()
}

pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(module, max relative error, parameters checked)`.
    pub per_module: Vec<(usize, f64, usize)>,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Analytic vs central finite-difference gradients for every parameter.
pub fn gradient_check(config: &ModelConfig, t: usize, f: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_grid(&mut rng, t, f, config.channels);
    let target = MaskGrid::compressed(
        Array2::from_shape_fn((t, f), |_| Complex::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))),
        Compression::default(),
    );
    let valid = Array2::from_elem((t, f), true);
    let params = McNetParams::init(config, &mut rng).unwrap();
    let r = config.reference_channel;
    let loss_at = |p: &McNetParams| {
        let (y, _) = forward_with_cache(x.view(), r, config, p).unwrap();
        loss_and_grad(y.view(), &target, valid.view()).unwrap().0
    };
    let (y, cache) = forward_with_cache(x.view(), r, config, &params).unwrap();
    let (_, dy) = loss_and_grad(y.view(), &target, valid.view()).unwrap();
    let grads = backward(config, &params, &cache, dy.view());
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().iter().map(|t| (t.name.clone(), t.data.to_vec())).collect();

    let h = 1e-4;
    let mut per_module: Vec<(usize, f64, usize)> = Vec::new();
    for (ti, (name, ga)) in analytic.iter().enumerate() {
        let module: usize = name[1..2].parse().unwrap();
        for (k, &g) in ga.iter().enumerate() {
            let at = |delta: f64| {
                let mut p = params.clone();
                p.slices_mut()[ti][k] += delta;
                loss_at(&p)
            };
            // fourth-order central difference
            let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            let e = rel_err(g, numeric);
            match per_module.iter_mut().find(|m| m.0 == module) {
                Some(m) => {
                    m.1 = m.1.max(e);
                    m.2 += 1;
                }
                None => per_module.push((module, e, 1)),
            }
        }
    }
    let max_rel_err = per_module.iter().map(|m| m.1).fold(0.0, f64::max);
    GradCheck { max_rel_err, per_module }
}

/// Max elementwise gap between batch and frame-by-frame inference on a raw
/// spectrogram.
pub fn streaming_gap(config: &ModelConfig, params: &McNetParams, raw: &ComplexSpectrogram, smoothing_len: usize) -> f64 {
    let (normed, _) = online_normalize(raw, smoothing_len).unwrap();
    let (y, _) = forward_with_cache(normed.data.view(), config.reference_channel, config, params).unwrap();
    let (_, f, _) = raw.data.dim();
    let mut state = StreamState::new(config, f, smoothing_len).unwrap();
    let mut gap: f64 = 0.0;
    for (t, frame) in raw.data.axis_iter(Axis(0)).enumerate() {
        let out = streaming_step(&mut state, frame, config, params).unwrap();
        for fi in 0..f {
            for k in 0..2 {
                gap = gap.max((out[[fi, k]] - y[[t, fi, k]]).abs());
            }
        }
    }
    gap
}

/// Max change of outputs at frames `<= t0` after replacing every frame
/// `> t0` of the raw input, with online normalization in the loop.
pub fn causality_gap(config: &ModelConfig, params: &McNetParams, raw: &ComplexSpectrogram, t0: usize, seed: u64) -> f64 {
    let run = |s: &ComplexSpectrogram| {
        let (normed, _) = online_normalize(s, 192).unwrap();
        forward_with_cache(normed.data.view(), config.reference_channel, config, params).unwrap().0
    };
    let base = run(raw);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturbed = raw.clone();
    let (t, f, m) = raw.data.dim();
    for ti in t0 + 1..t {
        for fi in 0..f {
            for c in 0..m {
                perturbed.data[[ti, fi, c]] = Complex::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            }
        }
    }
    let other = run(&perturbed);
    let mut gap: f64 = 0.0;
    for ti in 0..=t0 {
        for fi in 0..f {
            for k in 0..2 {
                gap = gap.max((base[[ti, fi, k]] - other[[ti, fi, k]]).abs());
            }
        }
    }
    gap
}

/// Writes a small synthetic corpus under `dir` and builds a sampler on it.
pub fn synthetic_sampler(dir: &Path, n_speech: usize, sim: SimulationConfig, seed: u64) -> MixtureSampler {
    let (speech, noise) = write_synthetic_corpus(dir, n_speech, 3, (2.0, 3.5), 20.0, 16000, seed).unwrap();
    let speech = Corpus::from_manifest(&speech, 16000).unwrap();
    let noise = Corpus::from_manifest(&noise, 16000).unwrap();
    MixtureSampler::new(Arc::new(speech), Arc::new(noise), sim, StftConfig::default()).unwrap()
}
