//! Oracle MVDR beamformer from ground-truth speech and noise covariances.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView3};

use crate::error::{shape_err, Error, Result};
use crate::stft::ComplexSpectrogram;
use crate::Complex;

/// Relative diagonal loading applied when the noise covariance is singular.
pub const DIAGONAL_LOADING: f64 = 1e-6;

/// `mean_t v(t) v(t)^H` at frequency `f` of a `[T, F, M]` grid.
pub fn spatial_covariance(grid: ArrayView3<'_, Complex>, f: usize) -> DMatrix<Complex> {
    let (t_n, _, m) = grid.dim();
    let mut phi = DMatrix::<Complex>::zeros(m, m);
    for t in 0..t_n {
        for i in 0..m {
            let vi = grid[[t, f, i]];
            for j in 0..m {
                phi[(i, j)] += vi * grid[[t, f, j]].conj();
            }
        }
    }
    phi / Complex::new(t_n.max(1) as f64, 0.0)
}

/// Principal eigenvector of `phi_s` scaled to a unit component at 1-based
/// `reference`.
pub fn steering_vector(phi_s: &DMatrix<Complex>, reference: usize) -> Result<DVector<Complex>> {
    let m = phi_s.nrows();
    if reference == 0 || reference > m {
        return Err(Error::InvalidArgument(format!("reference channel {reference} outside 1..={m}")));
    }
    let eig = phi_s.clone().symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let v: DVector<Complex> = eig.eigenvectors.column(k).into_owned();
    let pivot = v[reference - 1];
    if pivot.norm() < 1e-12 * v.norm().max(f64::MIN_POSITIVE) {
        let mut e = DVector::zeros(m);
        e[reference - 1] = Complex::new(1.0, 0.0);
        return Ok(e);
    }
    Ok(v / pivot)
}

/// `w = Phi_n^{-1} d / (d^H Phi_n^{-1} d)`, diagonally loading `phi_n` by
/// `1e-6 * trace / M` if it is not positive definite.
pub fn mvdr_weights(phi_n: &DMatrix<Complex>, d: &DVector<Complex>) -> Result<DVector<Complex>> {
    let m = phi_n.nrows();
    if phi_n.ncols() != m || d.len() != m {
        return Err(shape_err(format!("covariance {m}x{} vs steering {}", phi_n.ncols(), d.len())));
    }
    let solved = match phi_n.clone().cholesky() {
        Some(ch) => ch.solve(d),
        None => {
            let trace = phi_n.trace().re;
            let load = DIAGONAL_LOADING * if trace > 0.0 { trace / m as f64 } else { 1.0 };
            log::debug!("noise covariance singular; loading diagonal by {load:e}");
            let loaded = phi_n + DMatrix::<Complex>::identity(m, m) * Complex::new(load, 0.0);
            loaded
                .cholesky()
                .ok_or_else(|| Error::Numerical("noise covariance not invertible after loading".into()))?
                .solve(d)
        }
    };
    let denom = d.dotc(&solved);
    if denom.norm().partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !denom.re.is_finite() {
        return Err(Error::Numerical("degenerate MVDR normalization".into()));
    }
    Ok(solved / denom)
}

/// Per-frequency MVDR weights `[F, M]` from clean and noise spectrograms.
pub fn oracle_weights(clean: &ComplexSpectrogram, noise: &ComplexSpectrogram, reference: usize) -> Result<Array2<Complex>> {
    if clean.data.dim() != noise.data.dim() {
        return Err(shape_err(format!("clean {:?} vs noise {:?}", clean.data.dim(), noise.data.dim())));
    }
    let (_, f_n, m) = clean.data.dim();
    let mut w = Array2::zeros((f_n, m));
    for f in 0..f_n {
        let phi_s = spatial_covariance(clean.data.view(), f);
        let phi_n = spatial_covariance(noise.data.view(), f);
        let d = steering_vector(&phi_s, reference)?;
        let wf = mvdr_weights(&phi_n, &d)?;
        for i in 0..m {
            w[[f, i]] = wf[i];
        }
    }
    Ok(w)
}

/// Beamformed `[T, F]` spectrum `w^H x` using ground-truth covariances.
pub fn oracle_mvdr(
    noisy: &ComplexSpectrogram,
    clean: &ComplexSpectrogram,
    noise: &ComplexSpectrogram,
    reference: usize,
) -> Result<Array2<Complex>> {
    if noisy.data.dim() != clean.data.dim() {
        return Err(shape_err(format!("noisy {:?} vs clean {:?}", noisy.data.dim(), clean.data.dim())));
    }
    let w = oracle_weights(clean, noise, reference)?;
    let (t_n, f_n, m) = noisy.data.dim();
    Ok(Array2::from_shape_fn((t_n, f_n), |(t, f)| {
        (0..m).map(|i| w[[f, i]].conj() * noisy.data[[t, f, i]]).sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    #[test]
    fn identity_noise_picks_steered_channel() {
        let phi = DMatrix::<Complex>::identity(2, 2);
        let d = DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let w = mvdr_weights(&phi, &d).unwrap();
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(w[1].norm() < 1e-15);
    }

    #[test]
    fn distortionless_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = rng.random_range(2..7);
            let a = DMatrix::from_fn(m, m + 3, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let phi = &a * a.adjoint();
            let d = DVector::from_fn(m, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let w = mvdr_weights(&phi, &d).unwrap();
            assert!((w.dotc(&d) - c(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn white_noise_reduces_to_matched_filter() {
        let d = DVector::from_vec(vec![c(1.0, 0.0), c(0.3, -0.4), c(-0.2, 0.9)]);
        let phi = DMatrix::<Complex>::identity(3, 3) * c(0.7, 0.0);
        let w = mvdr_weights(&phi, &d).unwrap();
        let expect = &d / d.dotc(&d);
        assert!((w - expect).norm() < 1e-12);
    }

    #[test]
    fn singular_noise_is_loaded() {
        let v = DVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let phi = &v * v.adjoint();
        let d = DVector::from_vec(vec![c(1.0, 0.0), c(-1.0, 0.0)]);
        let w = mvdr_weights(&phi, &d).unwrap();
        assert!((w.dotc(&d) - c(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn steering_from_rank_one_covariance() {
        let d = DVector::from_vec(vec![c(0.5, 0.5), c(1.0, 0.0), c(0.0, -1.0)]);
        let phi = &d * d.adjoint() * c(3.0, 0.0);
        let est = steering_vector(&phi, 2).unwrap();
        assert!((est - &d).norm() < 1e-10);
        assert!(steering_vector(&phi, 4).is_err());
    }
}
