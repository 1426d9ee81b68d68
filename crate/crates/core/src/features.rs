//! Input assembly for the four cascaded modules.
//!
//! Frequency-major sequences run over frequencies within one frame
//! (`[T, F, dim]`); time-major sequences run over frames within one frequency
//! (`[F, T, dim]`). Out-of-range neighbours are zero-padded.

use ndarray::{s, Array3, ArrayView2, ArrayView3, ArrayViewMut1};

use crate::error::{shape_err, Error, Result};
use crate::stft::ComplexSpectrogram;
use crate::{Complex, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceAxis {
    /// One sequence per frame, stepping over frequencies.
    FrequencyMajor,
    /// One sequence per frequency, stepping over frames.
    TimeMajor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// `[sequences, steps, dim]`.
    pub data: Array3<f64>,
    pub axis: SequenceAxis,
}

impl FeatureSequence {
    pub fn dim(&self) -> usize {
        self.data.dim().2
    }
}

/// Per-bin module output, `[T, F, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGrid {
    pub data: Array3<f64>,
}

impl HiddenGrid {
    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

pub fn x1_dim(channels: usize) -> usize {
    2 * channels
}

pub fn x2_dim(channels: usize, hidden: Option<usize>) -> usize {
    2 * channels + hidden.unwrap_or(0)
}

pub fn x3_dim(n1: usize, n2: usize, hidden: Option<usize>) -> usize {
    (2 * n1 + 1) + hidden.map_or(0, |d| d * (2 * n2 + 1))
}

pub fn x4_dim(context: usize, mode: Mode, hidden: Option<usize>) -> usize {
    let frames = match mode {
        Mode::Online => context + 1,
        Mode::Offline => 2 * context + 1,
    };
    frames + hidden.unwrap_or(0)
}

fn check_hidden(h: Option<&HiddenGrid>, t: usize, f: usize) -> Result<()> {
    if let Some(h) = h {
        let (ht, hf, _) = h.data.dim();
        if (ht, hf) != (t, f) {
            return Err(shape_err(format!(
                "hidden grid is {ht}x{hf}, expected {t}x{f}"
            )));
        }
    }
    Ok(())
}

fn fill_x(mut out: ArrayViewMut1<'_, f64>, spec: ArrayView3<'_, Complex>, t: usize, f: usize) {
    for m in 0..spec.dim().2 {
        let c = spec[[t, f, m]];
        out[2 * m] = c.re;
        out[2 * m + 1] = c.im;
    }
}

/// `[Re X_1, Im X_1, ..., Re X_M, Im X_M]` per bin, frequency-major.
pub fn assemble_x1(spec: &ComplexSpectrogram) -> Result<FeatureSequence> {
    x1_from(spec.data.view())
}

pub(crate) fn x1_from(spec: ArrayView3<'_, Complex>) -> Result<FeatureSequence> {
    let (t, f, m) = spec.dim();
    if m == 0 {
        return Err(Error::InvalidArgument("spectrogram has no channels".into()));
    }
    let mut data = Array3::zeros((t, f, x1_dim(m)));
    for ti in 0..t {
        for fi in 0..f {
            fill_x(data.slice_mut(s![ti, fi, ..]), spec, ti, fi);
        }
    }
    Ok(FeatureSequence {
        data,
        axis: SequenceAxis::FrequencyMajor,
    })
}

/// Multichannel coefficients followed by `h1`, time-major.
pub fn assemble_x2(spec: &ComplexSpectrogram, h1: Option<&HiddenGrid>) -> Result<FeatureSequence> {
    x2_from(spec.data.view(), h1)
}

pub(crate) fn x2_from(spec: ArrayView3<'_, Complex>, h1: Option<&HiddenGrid>) -> Result<FeatureSequence> {
    let (t, f, m) = spec.dim();
    if m == 0 {
        return Err(Error::InvalidArgument("spectrogram has no channels".into()));
    }
    check_hidden(h1, t, f)?;
    let dim = x2_dim(m, h1.map(HiddenGrid::width));
    let mut data = Array3::zeros((f, t, dim));
    for fi in 0..f {
        for ti in 0..t {
            let mut row = data.slice_mut(s![fi, ti, ..]);
            fill_x(row.slice_mut(s![..2 * m]), spec, ti, fi);
            if let Some(h) = h1 {
                row.slice_mut(s![2 * m..]).assign(&h.data.slice(s![ti, fi, ..]));
            }
        }
    }
    Ok(FeatureSequence {
        data,
        axis: SequenceAxis::TimeMajor,
    })
}

/// Reference magnitudes at `f-n1..=f+n1` then `h2` at `f-n2..=f+n2`, time-major.
pub fn assemble_x3(
    mag_ref: ArrayView2<'_, f64>,
    h2: Option<&HiddenGrid>,
    n1: usize,
    n2: usize,
) -> Result<FeatureSequence> {
    let (t, f) = mag_ref.dim();
    if n1 >= f || (h2.is_some() && n2 >= f) {
        return Err(Error::InvalidArgument(format!(
            "neighbourhood (n1={n1}, n2={n2}) must be smaller than F={f}"
        )));
    }
    check_hidden(h2, t, f)?;
    let d = h2.map(HiddenGrid::width);
    let dim = x3_dim(n1, n2, d);
    let mut data = Array3::zeros((f, t, dim));
    for fi in 0..f {
        for ti in 0..t {
            let mut row = data.slice_mut(s![fi, ti, ..]);
            for j in 0..=2 * n1 {
                if let Some(src) = (fi + j).checked_sub(n1).filter(|&g| g < f) {
                    row[j] = mag_ref[[ti, src]];
                }
            }
            if let (Some(h), Some(d)) = (h2, d) {
                let base = 2 * n1 + 1;
                for j in 0..=2 * n2 {
                    if let Some(src) = (fi + j).checked_sub(n2).filter(|&g| g < f) {
                        row.slice_mut(s![base + j * d..base + (j + 1) * d])
                            .assign(&h.data.slice(s![ti, src, ..]));
                    }
                }
            }
        }
    }
    Ok(FeatureSequence {
        data,
        axis: SequenceAxis::TimeMajor,
    })
}

/// Fills the `[F, dim]` module-4 inputs of frame `t`.
pub(crate) fn fill_x4_frame(
    mut out: ndarray::ArrayViewMut2<'_, f64>,
    mag_ref: ArrayView2<'_, f64>,
    h3: Option<ArrayView2<'_, f64>>,
    t: usize,
    context: usize,
    mode: Mode,
) {
    let (n_t, f) = mag_ref.dim();
    let span = match mode {
        Mode::Online => context + 1,
        Mode::Offline => 2 * context + 1,
    };
    for fi in 0..f {
        let mut row = out.slice_mut(s![fi, ..]);
        for j in 0..span {
            if let Some(src) = (t + j).checked_sub(context).filter(|&g| g < n_t) {
                row[j] = mag_ref[[src, fi]];
            }
        }
        if let Some(h) = &h3 {
            row.slice_mut(s![span..]).assign(&h.slice(s![fi, ..]));
        }
    }
}

/// Reference magnitudes at `t-C..=t` (online) or `t-C..=t+C` (offline)
/// followed by `h3`, frequency-major.
pub fn assemble_x4(
    mag_ref: ArrayView2<'_, f64>,
    h3: Option<&HiddenGrid>,
    context: usize,
    mode: Mode,
) -> Result<FeatureSequence> {
    let (t, f) = mag_ref.dim();
    if context >= t {
        return Err(Error::InvalidArgument(format!(
            "context C={context} must be smaller than T={t}"
        )));
    }
    check_hidden(h3, t, f)?;
    let dim = x4_dim(context, mode, h3.map(HiddenGrid::width));
    let mut data = Array3::zeros((t, f, dim));
    for ti in 0..t {
        fill_x4_frame(
            data.slice_mut(s![ti, .., ..]),
            mag_ref,
            h3.map(|h| h.data.slice(s![ti, .., ..])),
            ti,
            context,
            mode,
        );
    }
    Ok(FeatureSequence {
        data,
        axis: SequenceAxis::FrequencyMajor,
    })
}

/// Gradient of a time-major input w.r.t. its trailing hidden part
/// (`x2`), returned as `[T, F, D]`.
pub(crate) fn time_major_tail_grad(dx: ArrayView3<'_, f64>, offset: usize) -> Array3<f64> {
    let (f, t, dim) = dx.dim();
    let d = dim - offset;
    let mut out = Array3::zeros((t, f, d));
    for fi in 0..f {
        for ti in 0..t {
            out.slice_mut(s![ti, fi, ..])
                .assign(&dx.slice(s![fi, ti, offset..]));
        }
    }
    out
}

/// Gradient of a frequency-major input w.r.t. its trailing hidden part
/// (`x4`), returned as `[T, F, D]`.
pub(crate) fn freq_major_tail_grad(dx: ArrayView3<'_, f64>, offset: usize) -> Array3<f64> {
    dx.slice(s![.., .., offset..]).to_owned()
}

/// Gradient of `x3` w.r.t. the windowed `h2`, scatter-added back to `[T, F, D]`.
pub(crate) fn x3_hidden_grad(dx: ArrayView3<'_, f64>, n1: usize, n2: usize, d: usize) -> Array3<f64> {
    let (f, t, _) = dx.dim();
    let base = 2 * n1 + 1;
    let mut out = Array3::zeros((t, f, d));
    for fi in 0..f {
        for ti in 0..t {
            for j in 0..=2 * n2 {
                if let Some(dst) = (fi + j).checked_sub(n2).filter(|&g| g < f) {
                    let src = dx.slice(s![fi, ti, base + j * d..base + (j + 1) * d]);
                    let mut tgt = out.slice_mut(s![ti, dst, ..]);
                    tgt += &src;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(t: usize, f: usize, m: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((t, f, m), |_| {
            Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let config = StftConfig {
            window_length: 2 * (f - 1),
            hop: f - 1,
            sample_rate: 16000,
        };
        ComplexSpectrogram::new(data, config, 1).unwrap()
    }

    fn hidden(t: usize, f: usize, d: usize, seed: u64) -> HiddenGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HiddenGrid {
            data: Array3::from_shape_fn((t, f, d), |_| rng.random::<f64>()),
        }
    }

    #[test]
    fn default_widths() {
        assert_eq!(x1_dim(6), 12);
        assert_eq!(x2_dim(6, Some(64)), 76);
        assert_eq!(x3_dim(3, 2, Some(64)), 327);
        assert_eq!(x4_dim(5, Mode::Online, Some(64)), 70);
        assert_eq!(x4_dim(5, Mode::Offline, Some(64)), 75);
    }

    #[test]
    fn x1_layout() {
        let mut s = spec(2, 3, 1, 0);
        s.data[[1, 2, 0]] = Complex::new(3.0, 4.0);
        let x = assemble_x1(&s).unwrap();
        assert_eq!(x.data.dim(), (2, 3, 2));
        assert_eq!(x.data.slice(s![1, 2, ..]).to_vec(), vec![3.0, 4.0]);

        let mut s = spec(2, 5, 6, 1);
        s.data.mapv_inplace(|c| Complex::new(c.re, 0.0));
        let x = assemble_x1(&s).unwrap();
        assert_eq!(x.dim(), 12);
        for k in (1..12).step_by(2) {
            assert!(x.data.slice(s![.., .., k]).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn x2_hidden_tail() {
        let s = spec(4, 5, 2, 2);
        let zero = HiddenGrid {
            data: Array3::zeros((4, 5, 3)),
        };
        let x = assemble_x2(&s, Some(&zero)).unwrap();
        assert_eq!(x.data.dim(), (5, 4, 7));
        assert!(x.data.slice(s![.., .., 4..]).iter().all(|v| *v == 0.0));
        let bad = hidden(3, 5, 3, 0);
        assert!(assemble_x2(&s, Some(&bad)).is_err());
    }

    #[test]
    fn x2_frame_permutation_commutes() {
        let s = spec(4, 5, 2, 3);
        let h = hidden(4, 5, 3, 4);
        let perm = [2usize, 0, 3, 1];
        let mut sp = s.clone();
        let mut hp = h.clone();
        for (dst, &src) in perm.iter().enumerate() {
            sp.data.slice_mut(s![dst, .., ..]).assign(&s.data.slice(s![src, .., ..]));
            hp.data.slice_mut(s![dst, .., ..]).assign(&h.data.slice(s![src, .., ..]));
        }
        let a = assemble_x2(&s, Some(&h)).unwrap();
        let b = assemble_x2(&sp, Some(&hp)).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(b.data.slice(s![.., dst, ..]), a.data.slice(s![.., src, ..]));
        }
    }

    #[test]
    fn x3_padding_and_constant() {
        let mag = Array2::from_elem((3, 10), 1.0);
        let h = HiddenGrid {
            data: Array3::zeros((3, 10, 64)),
        };
        let x = assemble_x3(mag.view(), Some(&h), 3, 2).unwrap();
        assert_eq!(x.dim(), 327);
        let row0 = x.data.slice(s![0, 1, ..]);
        assert_eq!(row0.slice(s![..3]).to_vec(), vec![0.0; 3]);
        assert_eq!(row0.slice(s![3..7]).to_vec(), vec![1.0; 4]);
        let interior = x.data.slice(s![5, 1, ..]);
        assert_eq!(interior.slice(s![..7]).to_vec(), vec![1.0; 7]);
        assert!(interior.slice(s![7..]).iter().all(|v| *v == 0.0));
        assert!(assemble_x3(mag.view(), Some(&h), 10, 2).is_err());
        assert!(assemble_x3(mag.view(), Some(&h), 3, 10).is_err());
    }

    #[test]
    fn x4_online_and_offline() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mag = Array2::from_shape_fn((8, 4), |_| rng.random::<f64>() + 0.1);
        let h = hidden(8, 4, 2, 6);
        let on = assemble_x4(mag.view(), Some(&h), 5, Mode::Online).unwrap();
        let off = assemble_x4(mag.view(), Some(&h), 5, Mode::Offline).unwrap();
        assert_eq!(on.dim(), 8);
        assert_eq!(off.dim(), 13);
        // second frame: C-1 leading zeros, then frames 0 and 1
        let row = on.data.slice(s![1, 2, ..]);
        assert_eq!(row.slice(s![..4]).to_vec(), vec![0.0; 4]);
        assert_eq!(row[4usize], mag[[0, 2]]);
        assert_eq!(row[5usize], mag[[1, 2]]);
        assert_eq!(row.slice(s![6..]), h.data.slice(s![1, 2, ..]));
        let row = off.data.slice(s![7, 0, ..]);
        assert_eq!(row[5usize], mag[[7, 0]]);
        assert!(row.slice(s![6..11]).iter().all(|v| *v == 0.0));
        assert!(assemble_x4(mag.view(), Some(&h), 8, Mode::Online).is_err());
    }

    #[test]
    fn x4_online_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mag = Array2::from_shape_fn((10, 4), |_| rng.random::<f64>());
        let mut perturbed = mag.clone();
        perturbed.slice_mut(s![6.., ..]).mapv_inplace(|v| v + 3.0);
        let a = assemble_x4(mag.view(), None, 3, Mode::Online).unwrap();
        let b = assemble_x4(perturbed.view(), None, 3, Mode::Online).unwrap();
        assert_eq!(a.data.slice(s![..6, .., ..]), b.data.slice(s![..6, .., ..]));
    }

    /// Every assembled element is either zero or equal to the input element
    /// that the index arithmetic says it should be.
    #[test]
    fn exhaustive_gather_check() {
        let (t, f, m, d) = (4, 5, 2, 3);
        let s = spec(t, f, m, 11);
        let h = hidden(t, f, d, 12);
        let mag = s.reference_magnitude();
        let x1 = assemble_x1(&s).unwrap();
        let x2 = assemble_x2(&s, Some(&h)).unwrap();
        let x3 = assemble_x3(mag.view(), Some(&h), 1, 1).unwrap();
        let x4 = assemble_x4(mag.view(), Some(&h), 2, Mode::Offline).unwrap();
        for ti in 0..t {
            for fi in 0..f {
                for k in 0..2 * m {
                    let c = s.data[[ti, fi, k / 2]];
                    let v = if k % 2 == 0 { c.re } else { c.im };
                    assert_eq!(x1.data[[ti, fi, k]], v);
                    assert_eq!(x2.data[[fi, ti, k]], v);
                }
                for k in 0..d {
                    assert_eq!(x2.data[[fi, ti, 2 * m + k]], h.data[[ti, fi, k]]);
                    assert_eq!(x4.data[[ti, fi, 5 + k]], h.data[[ti, fi, k]]);
                }
                for j in 0..3 {
                    let g = fi as isize + j as isize - 1;
                    let want = if (0..f as isize).contains(&g) { mag[[ti, g as usize]] } else { 0.0 };
                    assert_eq!(x3.data[[fi, ti, j]], want);
                    for k in 0..d {
                        let want = if (0..f as isize).contains(&g) { h.data[[ti, g as usize, k]] } else { 0.0 };
                        assert_eq!(x3.data[[fi, ti, 3 + j * d + k]], want);
                    }
                }
                for j in 0..5 {
                    let g = ti as isize + j as isize - 2;
                    let want = if (0..t as isize).contains(&g) { mag[[g as usize, fi]] } else { 0.0 };
                    assert_eq!(x4.data[[ti, fi, j]], want);
                }
            }
        }
    }

    #[test]
    fn x3_adjoint_matches_gather() {
        // <x3(h), g> == <h, x3_adjoint(g)> for the hidden part
        let (t, f, d, n1, n2) = (3, 6, 2, 1, 2);
        let mag = Array2::zeros((t, f));
        let h = hidden(t, f, d, 20);
        let x = assemble_x3(mag.view(), Some(&h), n1, n2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Array3::from_shape_fn(x.data.dim(), |_| rng.random::<f64>());
        let lhs: f64 = x.data.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let adj = x3_hidden_grad(g.view(), n1, n2, d);
        let rhs: f64 = h.data.iter().zip(adj.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
