//! Projection SDR and short-time objective intelligibility.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::Complex;

/// SDR values are reported within `[-SDR_CAP_DB, SDR_CAP_DB]`.
pub const SDR_CAP_DB: f64 = 60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Single-source SDR: `est` is split into its orthogonal projection onto
/// `reference` and a residual.
pub fn sdr(reference: &[f64], est: &[f64]) -> Result<f64> {
    if reference.len() != est.len() {
        return Err(Error::InvalidArgument(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            est.len()
        )));
    }
    if reference.iter().chain(est).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SDR inputs"));
    }
    let rr = dot(reference, reference);
    if rr <= 0.0 {
        return Err(Error::Data("SDR reference is silent".into()));
    }
    let alpha = dot(est, reference) / rr;
    let target = alpha * alpha * rr;
    let err: f64 = est.iter().zip(reference).map(|(e, r)| (e - alpha * r).powi(2)).sum();
    let value = if err <= 0.0 {
        SDR_CAP_DB
    } else if target <= 0.0 {
        -SDR_CAP_DB
    } else {
        10.0 * (target / err).log10()
    };
    Ok(value.clamp(-SDR_CAP_DB, SDR_CAP_DB))
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rational resampling by `up / down` with a Kaiser-windowed sinc
/// anti-aliasing filter (beta 5, ten zero crossings per side).
pub fn resample_poly(x: &[f64], up: usize, down: usize) -> Vec<f64> {
    let g = gcd(up, down);
    let (up, down) = (up / g, down / g);
    if up == down {
        return x.to_vec();
    }
    let max_rate = up.max(down);
    let half = 10 * max_rate;
    let cutoff = 1.0 / max_rate as f64;
    let beta = 5.0;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..=2 * half)
        .map(|n| {
            let m = n as f64 - half as f64;
            let arg = cutoff * m;
            let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            let r = m / half as f64;
            let win = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            cutoff * sinc * win
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= up as f64 / sum);
    let out_len = (x.len() * up).div_ceil(down);
    (0..out_len)
        .map(|k| {
            // Output k sits at upsampled index k*down; input j at j*up.
            let centre = (k * down) as i64;
            let j_lo = ((centre - half as i64).max(0) as usize).div_ceil(up);
            let j_hi = (((centre + half as i64) as usize) / up).min(x.len().saturating_sub(1));
            (j_lo..=j_hi)
                .filter(|&j| j < x.len())
                .map(|j| x[j] * h[(centre - (j * up) as i64 + half as i64) as usize])
                .sum()
        })
        .collect()
}

const STOI_FS: usize = 10_000;
const STOI_FRAME: usize = 256;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
/// Frames per intermediate intelligibility segment (384 ms).
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;

fn hann_inner(n: usize) -> Vec<f64> {
    // Hann of length n + 2 with both zero end points dropped.
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

/// Drops frames more than the dynamic range below the loudest clean frame and
/// re-synthesizes both signals by overlap-add.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = STOI_FRAME / 2;
    let w = hann_inner(STOI_FRAME);
    let frames: Vec<(Vec<f64>, Vec<f64>)> = frame_starts(x.len(), STOI_FRAME, hop)
        .map(|i| {
            let xf: Vec<f64> = (0..STOI_FRAME).map(|k| w[k] * x[i + k]).collect();
            let yf: Vec<f64> = (0..STOI_FRAME).map(|k| w[k] * y[i + k]).collect();
            (xf, yf)
        })
        .collect();
    let energies: Vec<f64> = frames
        .iter()
        .map(|(xf, _)| 20.0 * (dot(xf, xf).sqrt() + f64::EPSILON).log10())
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<&(Vec<f64>, Vec<f64>)> = frames
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - STOI_DYN_RANGE_DB - e < 0.0)
        .map(|(f, _)| f)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (kept.len() - 1) * hop + STOI_FRAME;
    let mut xo = vec![0.0; len];
    let mut yo = vec![0.0; len];
    for (n, (xf, yf)) in kept.iter().enumerate() {
        for k in 0..STOI_FRAME {
            xo[n * hop + k] += xf[k];
            yo[n * hop + k] += yf[k];
        }
    }
    (xo, yo)
}

/// One-third octave band power envelopes `[bands, frames]`.
fn band_envelopes(x: &[f64], fft: &Arc<dyn Fft<f64>>, bands: &[(usize, usize)]) -> Array2<f64> {
    let hop = STOI_FRAME / 2;
    let w = hann_inner(STOI_FRAME);
    let starts: Vec<usize> = frame_starts(x.len(), STOI_FRAME, hop).collect();
    let mut out = Array2::zeros((bands.len(), starts.len()));
    let mut buf = vec![Complex::new(0.0, 0.0); STOI_NFFT];
    for (t, &i) in starts.iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
        for k in 0..STOI_FRAME {
            buf[k] = Complex::new(w[k] * x[i + k], 0.0);
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let p: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[[b, t]] = p.sqrt();
        }
    }
    out
}

/// Bin ranges `[lo, hi)` of the one-third octave bands.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let n_bins = STOI_NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..n_bins).map(|i| i as f64 * STOI_FS as f64 / STOI_NFFT as f64).collect();
    let nearest = |target: f64| -> usize {
        freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .map(|(i, _)| i)
            .expect("non-empty")
    };
    (0..STOI_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = STOI_MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Short-time objective intelligibility of `est` against `reference`, both
/// sampled at `fs`.
pub fn stoi(reference: &[f64], est: &[f64], fs: u32) -> Result<f64> {
    if reference.len() != est.len() {
        return Err(Error::InvalidArgument(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            est.len()
        )));
    }
    if reference.iter().chain(est).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("STOI inputs"));
    }
    let (x, y) = if fs as usize == STOI_FS {
        (reference.to_vec(), est.to_vec())
    } else {
        (
            resample_poly(reference, STOI_FS, fs as usize),
            resample_poly(est, STOI_FS, fs as usize),
        )
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let fft = FftPlanner::new().plan_fft_forward(STOI_NFFT);
    let bands = third_octave_bands();
    let xb = band_envelopes(&x, &fft, &bands);
    let yb = band_envelopes(&y, &fft, &bands);
    let frames = xb.ncols();
    if frames < STOI_SEGMENT {
        return Err(Error::Data(format!(
            "STOI needs at least {STOI_SEGMENT} speech-active frames (384 ms), got {frames}"
        )));
    }
    let clip = 10f64.powf(-STOI_BETA_DB / 20.0);
    let eps = f64::EPSILON;
    let mut total = 0.0;
    let mut count = 0usize;
    for m in STOI_SEGMENT..=frames {
        let xs = xb.slice(s![.., m - STOI_SEGMENT..m]);
        let ys = yb.slice(s![.., m - STOI_SEGMENT..m]);
        for b in 0..STOI_BANDS {
            let xr = xs.row(b);
            let yr = ys.row(b);
            let scale = xr.dot(&xr).sqrt() / (yr.dot(&yr).sqrt() + eps);
            let yp: Vec<f64> = yr
                .iter()
                .zip(xr.iter())
                .map(|(&yv, &xv)| (yv * scale).min(xv * (1.0 + clip)))
                .collect();
            let xm = xr.sum() / STOI_SEGMENT as f64;
            let ym = yp.iter().sum::<f64>() / STOI_SEGMENT as f64;
            let xc: Vec<f64> = xr.iter().map(|v| v - xm).collect();
            let yc: Vec<f64> = yp.iter().map(|v| v - ym).collect();
            let xn = dot(&xc, &xc).sqrt() + eps;
            let yn = dot(&yc, &yc).sqrt() + eps;
            total += dot(&xc, &yc) / (xn * yn);
            count += 1;
        }
    }
    Ok(total / count as f64)
}
