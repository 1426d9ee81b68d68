//! Complex ideal ratio masks: computation, bounded compression, and
//! application to the noisy reference spectrum.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{shape_err, Error, Result};
use crate::Complex;

/// Bins whose noisy magnitude is below this get a zero target and are
/// excluded from the loss.
pub const MASK_EPS: f64 = 1e-8;

/// Relative clip margin used by [`decompress`]: values are limited to
/// `K * (1 - SATURATION_MARGIN)`.
pub const SATURATION_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compression {
    /// Output range `(-k, k)`.
    pub k: f64,
    /// Steepness.
    pub c: f64,
}

impl Default for Compression {
    fn default() -> Self {
        Self { k: 10.0, c: 0.1 }
    }
}

impl Compression {
    /// `k (1 - e^{-c v}) / (1 + e^{-c v})`, written as `k tanh(c v / 2)`.
    pub fn compress_value(&self, v: f64) -> f64 {
        self.k * (0.5 * self.c * v).tanh()
    }

    /// Inverse of [`Compression::compress_value`]; returns the value and
    /// whether the input had to be clipped into range.
    pub fn decompress_value(&self, v: f64) -> (f64, bool) {
        let bound = self.k * (1.0 - SATURATION_MARGIN);
        let saturated = v.abs() >= bound * (1.0 - 1e-12);
        let v = v.clamp(-bound, bound);
        // -(1/c) ln((k - v)/(k + v)) = (2/c) atanh(v/k)
        ((2.0 / self.c) * (v / self.k).atanh(), saturated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskForm {
    Raw,
    Compressed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    /// `[T, F]` complex mask.
    pub data: Array2<Complex>,
    pub form: MaskForm,
    pub compression: Compression,
    /// Number of components clipped during decompression.
    pub saturated: usize,
}

impl MaskGrid {
    pub fn raw(data: Array2<Complex>) -> Self {
        Self {
            data,
            form: MaskForm::Raw,
            compression: Compression::default(),
            saturated: 0,
        }
    }

    pub fn compressed(data: Array2<Complex>, compression: Compression) -> Self {
        Self {
            data,
            form: MaskForm::Compressed,
            compression,
            saturated: 0,
        }
    }

    /// Builds a compressed mask from a network output laid out `[T, F, 2]`.
    pub fn from_network_output(y: ndarray::ArrayView3<'_, f64>, compression: Compression) -> Self {
        let (t, f, _) = y.dim();
        let data = Array2::from_shape_fn((t, f), |(i, j)| Complex::new(y[[i, j, 0]], y[[i, j, 1]]));
        Self::compressed(data, compression)
    }
}

/// Bins where the noisy reference is large enough for a well-defined ratio.
pub fn valid_bins(noisy_ref: ArrayView2<'_, Complex>) -> Array2<bool> {
    noisy_ref.mapv(|x| x.norm() >= MASK_EPS)
}

pub fn compute_cirm(clean_ref: ArrayView2<'_, Complex>, noisy_ref: ArrayView2<'_, Complex>) -> Result<MaskGrid> {
    if clean_ref.dim() != noisy_ref.dim() {
        return Err(shape_err(format!(
            "clean {:?} vs noisy {:?}",
            clean_ref.dim(),
            noisy_ref.dim()
        )));
    }
    let mut data = Array2::<Complex>::zeros(noisy_ref.dim());
    Zip::from(&mut data)
        .and(clean_ref)
        .and(noisy_ref)
        .for_each(|m, &s, &x| {
            if x.norm() >= MASK_EPS {
                *m = s / x;
            }
        });
    Ok(MaskGrid::raw(data))
}

pub fn compress(mask: &MaskGrid, compression: Compression) -> Result<MaskGrid> {
    if mask.form != MaskForm::Raw {
        return Err(Error::InvalidArgument("mask is already compressed".into()));
    }
    let data = mask.data.mapv(|v| {
        Complex::new(
            compression.compress_value(v.re),
            compression.compress_value(v.im),
        )
    });
    Ok(MaskGrid::compressed(data, compression))
}

pub fn decompress(mask: &MaskGrid) -> Result<MaskGrid> {
    if mask.form != MaskForm::Compressed {
        return Err(Error::InvalidArgument("mask is not compressed".into()));
    }
    let comp = mask.compression;
    let mut saturated = 0;
    let data = mask.data.mapv(|v| {
        let (re, sr) = comp.decompress_value(v.re);
        let (im, si) = comp.decompress_value(v.im);
        saturated += sr as usize + si as usize;
        Complex::new(re, im)
    });
    if saturated > 0 {
        log::debug!("{saturated} mask components saturated during decompression");
    }
    Ok(MaskGrid {
        data,
        form: MaskForm::Raw,
        compression: comp,
        saturated,
    })
}

pub fn apply_mask(noisy_ref: ArrayView2<'_, Complex>, mask: &MaskGrid) -> Result<Array2<Complex>> {
    if mask.form != MaskForm::Raw {
        return Err(Error::InvalidArgument(
            "compressed mask must be decompressed before application".into(),
        ));
    }
    if mask.data.dim() != noisy_ref.dim() {
        return Err(shape_err(format!(
            "mask {:?} vs spectrum {:?}",
            mask.data.dim(),
            noisy_ref.dim()
        )));
    }
    Ok(&mask.data * &noisy_ref)
}
