//! Single-layer LSTM and affine projection with explicit backpropagation.
//!
//! Sequences are batched as `[S, L, I]` (sequences, steps, features). Gate
//! blocks are stacked in `i, f, g, o` order.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Dimension, IntoDimension};
use rand::Rng;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `tanh` through `expm1`, markedly faster than the libm routine and accurate
/// to a few ulp.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp_m1();
    (-e / (e + 2.0)).copysign(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[4H, I]`
    pub w_ih: Array2<f64>,
    /// `[4H, H]`
    pub w_hh: Array2<f64>,
    /// `[4H]`
    pub bias: Array1<f64>,
}

impl LstmParams {
    /// Uniform in `±1/sqrt(H)`.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut u = || rng.random_range(-k..k);
        Self {
            w_ih: Array2::from_shape_simple_fn((4 * hidden, input), &mut u),
            w_hh: Array2::from_shape_simple_fn((4 * hidden, hidden), &mut u),
            bias: Array1::from_shape_simple_fn(4 * hidden, &mut u),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `[out, in]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearParams {
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let k = 1.0 / (input as f64).sqrt();
        let mut u = || rng.random_range(-k..k);
        Self {
            weight: Array2::from_shape_simple_fn((output, input), &mut u),
            bias: Array1::from_shape_simple_fn(output, &mut u),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// `x W^T + b` on `[N, in]`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>, grad: &mut LinearParams) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

/// Row-major reshape that first makes `a` contiguous if needed.
pub(crate) fn reshape<D: Dimension, E: IntoDimension>(a: Array<f64, D>, shape: E) -> Array<f64, E::Dim> {
    let a = if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    };
    a.into_shape_with_order(shape).expect("element count preserved")
}

/// Activations kept for the backward pass, stored step-major (`[L, S, *]`)
/// so each recurrence step touches contiguous memory.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Inputs `[L*S, I]`.
    x: Array2<f64>,
    /// Activated gates `[L*S, 4H]`.
    gates: Array2<f64>,
    cells: Array2<f64>,
    hidden: Array2<f64>,
    n_seq: usize,
    n_steps: usize,
    reverse: bool,
}

fn cell_update(z: &mut [f64], c: &mut [f64], h: &mut [f64]) {
    let hd = c.len();
    let (zi, rest) = z.split_at_mut(hd);
    let (zf, rest) = rest.split_at_mut(hd);
    let (zg, zo) = rest.split_at_mut(hd);
    for k in 0..hd {
        let i = sigmoid(zi[k]);
        let f = sigmoid(zf[k]);
        let g = tanh(zg[k]);
        let o = sigmoid(zo[k]);
        zi[k] = i;
        zf[k] = f;
        zg[k] = g;
        zo[k] = o;
        c[k] = f * c[k] + i * g;
        h[k] = o * tanh(c[k]);
    }
}

fn step_major(x: ArrayView3<'_, f64>) -> Array2<f64> {
    let (s_n, l_n, i_n) = x.dim();
    reshape(x.permuted_axes([1, 0, 2]).as_standard_layout().into_owned(), (l_n * s_n, i_n))
}

fn seq_major(x: Array2<f64>, s_n: usize, l_n: usize) -> Array3<f64> {
    let width = x.ncols();
    reshape(x, (l_n, s_n, width))
        .permuted_axes([1, 0, 2])
        .as_standard_layout()
        .into_owned()
}

/// Runs the recurrence over axis 1 (backwards when `reverse`), from zero
/// initial state. Returns `[S, L, H]`.
pub fn lstm_forward(p: &LstmParams, x: ArrayView3<'_, f64>, reverse: bool) -> (Array3<f64>, LstmCache) {
    let (s_n, l_n, _) = x.dim();
    let hd = p.hidden();
    let x2 = step_major(x);
    let mut gates = x2.dot(&p.w_ih.t()) + &p.bias;
    let mut cells = Array2::zeros((l_n * s_n, hd));
    let mut hidden = Array2::zeros((l_n * s_n, hd));
    let mut h = Array2::<f64>::zeros((s_n, hd));
    let mut c = Array2::<f64>::zeros((s_n, hd));
    let w_hh_t = p.w_hh.t();
    for step in 0..l_n {
        let l = if reverse { l_n - 1 - step } else { step };
        let rows = l * s_n..(l + 1) * s_n;
        let mut z = gates.slice_mut(s![rows.clone(), ..]);
        if step > 0 {
            general_mat_mul(1.0, &h, &w_hh_t, 1.0, &mut z);
        }
        let zs = z.as_slice_mut().expect("contiguous step slab");
        let cs = c.as_slice_mut().expect("contiguous");
        let hs = h.as_slice_mut().expect("contiguous");
        for ((zr, cr), hr) in zs
            .chunks_exact_mut(4 * hd)
            .zip(cs.chunks_exact_mut(hd))
            .zip(hs.chunks_exact_mut(hd))
        {
            cell_update(zr, cr, hr);
        }
        cells.slice_mut(s![rows.clone(), ..]).assign(&c);
        hidden.slice_mut(s![rows, ..]).assign(&h);
    }
    let out = seq_major(hidden.clone(), s_n, l_n);
    let cache = LstmCache {
        x: x2,
        gates,
        cells,
        hidden,
        n_seq: s_n,
        n_steps: l_n,
        reverse,
    };
    (out, cache)
}

/// One recurrence step on `[S, I]` inputs, updating `(h, c)` in place.
pub fn lstm_step(p: &LstmParams, x: ArrayView2<'_, f64>, h: &mut Array2<f64>, c: &mut Array2<f64>) {
    let hd = p.hidden();
    let mut z = x.dot(&p.w_ih.t()) + &p.bias;
    general_mat_mul(1.0, &*h, &p.w_hh.t(), 1.0, &mut z);
    let zs = z.as_slice_mut().expect("contiguous");
    let cs = c.as_slice_mut().expect("contiguous");
    let hs = h.as_slice_mut().expect("contiguous");
    for ((zr, cr), hr) in zs
        .chunks_exact_mut(4 * hd)
        .zip(cs.chunks_exact_mut(hd))
        .zip(hs.chunks_exact_mut(hd))
    {
        cell_update(zr, cr, hr);
    }
}

/// Backpropagates `dh` (`[S, L, H]`, gradient w.r.t. the emitted hidden
/// states), accumulating into `grad` and returning `dL/dx` as `[S, L, I]`.
pub fn lstm_backward(p: &LstmParams, cache: &LstmCache, dh: ArrayView3<'_, f64>, grad: &mut LstmParams) -> Array3<f64> {
    let (s_n, l_n) = (cache.n_seq, cache.n_steps);
    let hd = p.hidden();
    let dh = step_major(dh);
    let mut da = Array2::<f64>::zeros((l_n * s_n, 4 * hd));
    let mut h_prev = Array2::<f64>::zeros((l_n * s_n, hd));
    let mut dh_next = Array2::<f64>::zeros((s_n, hd));
    let mut dc_next = Array2::<f64>::zeros((s_n, hd));
    let zeros = vec![0.0; s_n * hd];
    let slab = |a: &Array2<f64>, l: usize| -> std::ops::Range<usize> { l * s_n * a.ncols()..(l + 1) * s_n * a.ncols() };
    let gates = cache.gates.as_slice().expect("contiguous");
    let cells = cache.cells.as_slice().expect("contiguous");
    let dh_all = dh.as_slice().expect("contiguous");
    for step in (0..l_n).rev() {
        let l = if cache.reverse { l_n - 1 - step } else { step };
        let prev = (step > 0).then(|| if cache.reverse { l + 1 } else { l - 1 });
        if let Some(pl) = prev {
            h_prev
                .slice_mut(s![l * s_n..(l + 1) * s_n, ..])
                .assign(&cache.hidden.slice(s![pl * s_n..(pl + 1) * s_n, ..]));
        }
        let g_l = &gates[slab(&cache.gates, l)];
        let c_l = &cells[slab(&cache.cells, l)];
        let c_p = match prev {
            Some(pl) => &cells[slab(&cache.cells, pl)],
            None => &zeros[..],
        };
        let dh_l = &dh_all[slab(&dh, l)];
        let da_range = slab(&da, l);
        {
            let da_l = &mut da.as_slice_mut().expect("contiguous")[da_range.clone()];
            let dhn = dh_next.as_slice().expect("contiguous");
            let dcn = dc_next.as_slice_mut().expect("contiguous");
            for si in 0..s_n {
                let g = &g_l[si * 4 * hd..(si + 1) * 4 * hd];
                let a = &mut da_l[si * 4 * hd..(si + 1) * 4 * hd];
                let row = si * hd..(si + 1) * hd;
                let (c_r, cp_r, dh_r, dhn_r) = (&c_l[row.clone()], &c_p[row.clone()], &dh_l[row.clone()], &dhn[row.clone()]);
                let dcn_r = &mut dcn[row];
                for k in 0..hd {
                    let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
                    let tc = tanh(c_r[k]);
                    let dhv = dh_r[k] + dhn_r[k];
                    let dc = dhv * o * (1.0 - tc * tc) + dcn_r[k];
                    dcn_r[k] = dc * f;
                    a[k] = dc * gg * i * (1.0 - i);
                    a[hd + k] = dc * cp_r[k] * f * (1.0 - f);
                    a[2 * hd + k] = dc * i * (1.0 - gg * gg);
                    a[3 * hd + k] = dhv * tc * o * (1.0 - o);
                }
            }
        }
        let da_l = da.slice(s![l * s_n..(l + 1) * s_n, ..]);
        general_mat_mul(1.0, &da_l, &p.w_hh, 0.0, &mut dh_next);
    }
    general_mat_mul(1.0, &da.t(), &h_prev, 1.0, &mut grad.w_hh);
    general_mat_mul(1.0, &da.t(), &cache.x, 1.0, &mut grad.w_ih);
    grad.bias += &da.sum_axis(Axis(0));
    seq_major(da.dot(&p.w_ih), s_n, l_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(p: &LstmParams, x: &Array3<f64>, w: &Array3<f64>, reverse: bool) -> f64 {
        let (h, _) = lstm_forward(p, x.view(), reverse);
        (&h * w).sum()
    }

    #[test]
    fn step_matches_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::init(3, 4, &mut rng);
        let x = Array3::from_shape_fn((2, 5, 3), |_| rng.random_range(-1.0..1.0));
        let (h_seq, _) = lstm_forward(&p, x.view(), false);
        let mut h = Array2::zeros((2, 4));
        let mut c = Array2::zeros((2, 4));
        for l in 0..5 {
            lstm_step(&p, x.slice(s![.., l, ..]), &mut h, &mut c);
            for (a, b) in h.iter().zip(h_seq.slice(s![.., l, ..]).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reverse_equals_forward_on_flipped_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::init(2, 3, &mut rng);
        let x = Array3::from_shape_fn((1, 6, 2), |_| rng.random_range(-1.0..1.0));
        let flipped = x.slice(s![.., ..;-1, ..]).to_owned();
        let (a, _) = lstm_forward(&p, x.view(), true);
        let (b, _) = lstm_forward(&p, flipped.view(), false);
        let b = b.slice(s![.., ..;-1, ..]).to_owned();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for reverse in [false, true] {
            let p = LstmParams::init(3, 2, &mut rng);
            let x = Array3::from_shape_fn((2, 4, 3), |_| rng.random_range(-1.0..1.0));
            let w = Array3::from_shape_fn((2, 4, 2), |_| rng.random_range(-1.0..1.0));
            let (_, cache) = lstm_forward(&p, x.view(), reverse);
            let mut g = LstmParams::zeros(3, 2);
            let dx = lstm_backward(&p, &cache, w.view(), &mut g);
            let eps = 1e-6;
            for idx in 0..p.w_ih.len() {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp.w_ih.as_slice_mut().unwrap()[idx] += eps;
                pm.w_ih.as_slice_mut().unwrap()[idx] -= eps;
                let num = (loss(&pp, &x, &w, reverse) - loss(&pm, &x, &w, reverse)) / (2.0 * eps);
                assert!((num - g.w_ih.as_slice().unwrap()[idx]).abs() < 1e-7);
            }
            for idx in 0..p.w_hh.len() {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp.w_hh.as_slice_mut().unwrap()[idx] += eps;
                pm.w_hh.as_slice_mut().unwrap()[idx] -= eps;
                let num = (loss(&pp, &x, &w, reverse) - loss(&pm, &x, &w, reverse)) / (2.0 * eps);
                assert!((num - g.w_hh.as_slice().unwrap()[idx]).abs() < 1e-7);
            }
            for idx in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.as_slice_mut().unwrap()[idx] += eps;
                xm.as_slice_mut().unwrap()[idx] -= eps;
                let num = (loss(&p, &xp, &w, reverse) - loss(&p, &xm, &w, reverse)) / (2.0 * eps);
                assert!((num - dx.as_slice().unwrap()[idx]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn linear_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = LinearParams::init(3, 2, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let dy = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let mut g = LinearParams::zeros(3, 2);
        let dx = lin.backward(x.view(), dy.view(), &mut g);
        assert_eq!(dx, dy.dot(&lin.weight));
        assert_eq!(g.bias, dy.sum_axis(Axis(0)));
        assert_eq!(g.weight, dy.t().dot(&x));
    }

    #[test]
    fn fast_tanh_is_accurate() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.005;
            assert!((tanh(x) - x.tanh()).abs() <= 4.0 * f64::EPSILON * x.tanh().abs().max(f64::MIN_POSITIVE));
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(1e3), 1.0);
        assert_eq!(tanh(-1e3), -1.0);
        assert!((tanh(1e-10) - 1e-10).abs() < 1e-25);
    }
}
