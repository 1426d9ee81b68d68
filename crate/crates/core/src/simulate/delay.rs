//! Fractional-delay filtering and far-field array geometry.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the windowed-sinc interpolator.
pub const DELAY_TAPS: usize = 64;

pub const SPEED_OF_SOUND: f64 = 343.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(u: f64, half: f64) -> f64 {
    if u.abs() >= half {
        0.0
    } else {
        0.42 + 0.5 * (PI * u / half).cos() + 0.08 * (2.0 * PI * u / half).cos()
    }
}

/// Taps `h[j]` for offsets `n = j - 31`, approximating a delay of `frac`
/// samples, normalized to unit DC gain.
pub fn fractional_delay_filter(frac: f64) -> [f64; DELAY_TAPS] {
    let half = (DELAY_TAPS / 2) as f64;
    let mut h = [0.0; DELAY_TAPS];
    for (j, tap) in h.iter_mut().enumerate() {
        let u = j as f64 - (DELAY_TAPS / 2 - 1) as f64 - frac;
        *tap = sinc(u) * blackman(u, half);
    }
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Delays `source` by each entry of `delays` (in samples), returning `[N, M]`.
/// Integer delays are exact shifts; samples shifted in from outside are zero.
pub fn delay_channels(source: ArrayView1<'_, f64>, delays: &[f64]) -> Result<Array2<f64>> {
    let n = source.len();
    if n == 0 {
        return Err(Error::EmptySignal);
    }
    if delays.is_empty() {
        return Err(Error::InvalidArgument("no channels requested".into()));
    }
    if source.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("delay source"));
    }
    let mut out = Array2::zeros((n, delays.len()));
    for (m, &d) in delays.iter().enumerate() {
        if !d.is_finite() || d.abs() >= n as f64 {
            return Err(Error::InvalidArgument(format!(
                "delay {d} on channel {} exceeds signal length {n}",
                m + 1
            )));
        }
        let k = d.floor() as i64;
        let frac = d - k as f64;
        let mut col = out.column_mut(m);
        if frac < 1e-12 {
            for i in 0..n as i64 {
                let src = i - k;
                if (0..n as i64).contains(&src) {
                    col[i as usize] = source[src as usize];
                }
            }
            continue;
        }
        let h = fractional_delay_filter(frac);
        let offset = (DELAY_TAPS / 2 - 1) as i64;
        for i in 0..n as i64 {
            let mut acc = 0.0;
            for (j, &tap) in h.iter().enumerate() {
                let src = i - k - (j as i64 - offset);
                if (0..n as i64).contains(&src) {
                    acc += tap * source[src as usize];
                }
            }
            col[i as usize] = acc;
        }
    }
    Ok(out)
}

/// Microphone coordinates in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mics: Vec<[f64; 3]>,
}

impl ArrayGeometry {
    /// Uniform linear array along x, centered on the origin.
    pub fn linear(channels: usize, spacing: f64) -> Self {
        let centre = (channels as f64 - 1.0) / 2.0;
        Self {
            mics: (0..channels)
                .map(|i| [(i as f64 - centre) * spacing, 0.0, 0.0])
                .collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.mics.len()
    }

    /// Plane-wave arrival delays in samples for a source at `azimuth`
    /// (radians, in the x-y plane), shifted so the earliest mic has delay 0.
    pub fn far_field_delays(&self, azimuth: f64, sample_rate: u32) -> Vec<f64> {
        let dir = [azimuth.cos(), azimuth.sin(), 0.0];
        let raw: Vec<f64> = self
            .mics
            .iter()
            .map(|p| -(p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2]) / SPEED_OF_SOUND * sample_rate as f64)
            .collect();
        let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        raw.iter().map(|d| d - min).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mics.is_empty() {
            return Err(Error::Config("array geometry has no microphones".into()));
        }
        if self.mics.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("array geometry has non-finite coordinates".into()));
        }
        Ok(())
    }
}
