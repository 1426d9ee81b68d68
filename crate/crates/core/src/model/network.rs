//! Batch forward and backward passes through the module cascade.

use ndarray::{concatenate, s, Array2, Array3, ArrayView3, Axis};

use super::config::{BlockSpec, ModelConfig};
use super::lstm::{lstm_backward, lstm_forward, reshape, LstmCache};
use super::params::{BlockParams, McNetParams};
use crate::error::{shape_err, Error, Result};
use crate::features::{
    assemble_x3, assemble_x4, freq_major_tail_grad, time_major_tail_grad, x1_from, x2_from, x3_hidden_grad,
    FeatureSequence, HiddenGrid, SequenceAxis,
};
use crate::mask::{Compression, MaskGrid};
use crate::stft::ComplexSpectrogram;
use crate::{Complex, Mode};

pub(crate) struct BlockCache {
    spec: BlockSpec,
    fwd: LstmCache,
    bwd: Option<LstmCache>,
    /// Concatenated recurrent outputs, `[S*L, H*dirs]`.
    lstm_out: Array2<f64>,
    n_seq: usize,
    n_steps: usize,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
}

/// `[S, L, K]` in the block's sequence layout to `[T, F, K]`.
pub(crate) fn to_grid(x: Array3<f64>, axis: SequenceAxis) -> Array3<f64> {
    match axis {
        SequenceAxis::FrequencyMajor => x,
        SequenceAxis::TimeMajor => x.permuted_axes([1, 0, 2]).as_standard_layout().into_owned(),
    }
}

pub(crate) fn from_grid(x: ArrayView3<'_, f64>, axis: SequenceAxis) -> Array3<f64> {
    match axis {
        SequenceAxis::FrequencyMajor => x.to_owned(),
        SequenceAxis::TimeMajor => x.permuted_axes([1, 0, 2]).as_standard_layout().into_owned(),
    }
}

/// Runs one block's recurrence and projection on assembled inputs.
pub(crate) fn run_block(spec: &BlockSpec, p: &BlockParams, x: &FeatureSequence) -> Result<(Array3<f64>, BlockCache)> {
    let (n_seq, n_steps, dim) = x.data.dim();
    if dim != spec.input_dim || x.axis != spec.axis {
        return Err(shape_err(format!(
            "module {} expects width {} ({:?}), got {dim} ({:?})",
            spec.module, spec.input_dim, spec.axis, x.axis
        )));
    }
    let (h_f, fwd) = lstm_forward(&p.forward, x.data.view(), false);
    let (h, bwd) = match &p.backward {
        Some(bp) => {
            let (h_b, cb) = lstm_forward(bp, x.data.view(), true);
            (concatenate![Axis(2), h_f, h_b], Some(cb))
        }
        None => (h_f, None),
    };
    let width = h.dim().2;
    let lstm_out = reshape(h, (n_seq * n_steps, width));
    let y = reshape(p.projection.forward(lstm_out.view()), (n_seq, n_steps, spec.output_dim));
    Ok((
        y,
        BlockCache {
            spec: spec.clone(),
            fwd,
            bwd,
            lstm_out,
            n_seq,
            n_steps,
        },
    ))
}

pub(crate) fn check_model(config: &ModelConfig, params: &McNetParams, channels: usize) -> Result<()> {
    config.validate()?;
    if channels != config.channels {
        return Err(shape_err(format!(
            "input has {channels} channels, model expects {}",
            config.channels
        )));
    }
    params.check_against(config)
}

/// Network output `[T, F, 2]` for a normalized `[T, F, M]` spectrogram.
pub fn forward_with_cache(
    spec_norm: ArrayView3<'_, Complex>,
    reference_channel: usize,
    config: &ModelConfig,
    params: &McNetParams,
) -> Result<(Array3<f64>, ForwardCache)> {
    let (_, _, m) = spec_norm.dim();
    check_model(config, params, m)?;
    if reference_channel == 0 || reference_channel > m {
        return Err(Error::InvalidArgument(format!("reference channel {reference_channel} outside 1..={m}")));
    }
    let mag = spec_norm.index_axis(Axis(2), reference_channel - 1).mapv(|c| c.norm());
    let mut prev: Option<HiddenGrid> = None;
    let mut caches = Vec::with_capacity(params.blocks.len());
    for (spec, p) in config.blocks().iter().zip(params.blocks.iter()) {
        let x = match spec.module {
            1 => x1_from(spec_norm)?,
            2 => x2_from(spec_norm, prev.as_ref())?,
            3 => assemble_x3(mag.view(), prev.as_ref(), config.n1, config.n2)?,
            _ => assemble_x4(mag.view(), prev.as_ref(), config.context, config.mode)?,
        };
        let (y, cache) = run_block(spec, p, &x)?;
        caches.push(cache);
        prev = Some(HiddenGrid {
            data: to_grid(y, spec.axis),
        });
    }
    let out = prev.expect("validated: at least one module").data;
    Ok((out, ForwardCache { blocks: caches }))
}

/// Predicted compressed mask for a normalized spectrogram.
pub fn forward(spec_norm: &ComplexSpectrogram, config: &ModelConfig, params: &McNetParams) -> Result<MaskGrid> {
    let (y, _) = forward_with_cache(spec_norm.data.view(), spec_norm.reference_channel, config, params)?;
    Ok(MaskGrid::from_network_output(y.view(), Compression::default()))
}

/// Gradient of a scalar loss w.r.t. all parameters given `dL/dy` (`[T, F, 2]`).
pub fn backward(config: &ModelConfig, params: &McNetParams, cache: &ForwardCache, dy: ArrayView3<'_, f64>) -> McNetParams {
    let mut grads = McNetParams::zeros(config);
    let mut dgrid = dy.to_owned();
    for i in (0..cache.blocks.len()).rev() {
        let bc = &cache.blocks[i];
        let bp = &params.blocks[i];
        let g = &mut grads.blocks[i];
        let dseq = from_grid(dgrid.view(), bc.spec.axis);
        let dflat = reshape(dseq, (bc.n_seq * bc.n_steps, bc.spec.output_dim));
        let dlstm = bp.projection.backward(bc.lstm_out.view(), dflat.view(), &mut g.projection);
        let h = bc.spec.lstm_hidden;
        let split = |lo: usize| {
            reshape(dlstm.slice(s![.., lo..lo + h]).to_owned(), (bc.n_seq, bc.n_steps, h))
        };
        let mut dx = lstm_backward(&bp.forward, &bc.fwd, split(0).view(), &mut g.forward);
        if let (Some(bwd_p), Some(bwd_c), Some(bwd_g)) = (&bp.backward, &bc.bwd, g.backward.as_mut()) {
            dx += &lstm_backward(bwd_p, bwd_c, split(h).view(), bwd_g);
        }
        if !bc.spec.takes_hidden {
            break;
        }
        dgrid = match bc.spec.module {
            2 => time_major_tail_grad(dx.view(), 2 * config.channels),
            3 => x3_hidden_grad(dx.view(), config.n1, config.n2, config.hidden_width),
            _ => {
                let span = match config.mode {
                    Mode::Online => config.context + 1,
                    Mode::Offline => 2 * config.context + 1,
                };
                freq_major_tail_grad(dx.view(), span)
            }
        };
    }
    grads
}
