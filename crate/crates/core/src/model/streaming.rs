//! Frame-by-frame inference for online models.
//!
//! Modules 1 and 4 recur over frequency inside the current frame, so they are
//! re-run per frame; modules 2 and 3 carry their recurrent state across
//! frames. Module 4's past-context magnitudes live in a short history buffer.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use super::config::ModelConfig;
use super::lstm::lstm_step;
use super::network::{check_model, run_block};
use super::params::McNetParams;
use crate::error::{shape_err, Error, Result};
use crate::features::{assemble_x3, fill_x4_frame, x1_from, x2_from, x4_dim, FeatureSequence, HiddenGrid, SequenceAxis};
use crate::normalize::OnlineMean;
use crate::{Complex, Mode};

#[derive(Debug, Clone)]
pub struct StreamState {
    n_freq: usize,
    norm: OnlineMean,
    /// Normalized reference magnitudes of the last `C` frames, oldest first.
    history: VecDeque<Array1<f64>>,
    /// `(h, c)` per time-recurrent block, `[F, H]` each.
    carries: Vec<Option<(Array2<f64>, Array2<f64>)>>,
    frames: usize,
}

impl StreamState {
    pub fn new(config: &ModelConfig, n_freq: usize, smoothing_len: usize) -> Result<Self> {
        config.validate()?;
        if config.mode != Mode::Online {
            return Err(Error::Config("streaming requires an online-mode model".into()));
        }
        let carries = config
            .blocks()
            .iter()
            .map(|b| {
                (b.axis == SequenceAxis::TimeMajor)
                    .then(|| (Array2::zeros((n_freq, b.lstm_hidden)), Array2::zeros((n_freq, b.lstm_hidden))))
            })
            .collect();
        Ok(Self {
            n_freq,
            norm: OnlineMean::new(smoothing_len)?,
            history: VecDeque::with_capacity(config.context),
            carries,
            frames: 0,
        })
    }

    /// Starts a new utterance.
    pub fn reset(&mut self) {
        self.norm.reset();
        self.history.clear();
        for (h, c) in self.carries.iter_mut().flatten() {
            h.fill(0.0);
            c.fill(0.0);
        }
        self.frames = 0;
    }

    pub fn frames_processed(&self) -> usize {
        self.frames
    }
}

/// Consumes one raw (un-normalized) `[F, M]` frame and emits the `[F, 2]`
/// compressed-mask prediction for it.
pub fn streaming_step(
    state: &mut StreamState,
    frame: ArrayView2<'_, Complex>,
    config: &ModelConfig,
    params: &McNetParams,
) -> Result<Array2<f64>> {
    if config.mode != Mode::Online {
        return Err(Error::Config("streaming requires an online-mode model".into()));
    }
    let (f, m) = frame.dim();
    check_model(config, params, m)?;
    if f != state.n_freq {
        return Err(shape_err(format!("frame has {f} bins, stream expects {}", state.n_freq)));
    }
    let r = config.reference_channel - 1;
    let frame_mean = frame.column(r).iter().map(|c| c.norm()).sum::<f64>() / f as f64;
    let (mu, _) = state.norm.update(frame_mean);
    let normed: Array3<Complex> = frame.mapv(|c| c / mu).insert_axis(Axis(0));
    let mag_now: Array1<f64> = normed.index_axis(Axis(0), 0).column(r).mapv(|c| c.norm());
    let mag_row = mag_now.view().insert_axis(Axis(0));

    let mut prev: Option<HiddenGrid> = None;
    for (i, (spec, p)) in config.blocks().iter().zip(params.blocks.iter()).enumerate() {
        let y: Array2<f64> = match spec.module {
            1 | 4 => {
                let x = if spec.module == 1 {
                    x1_from(normed.view())?
                } else {
                    let c = config.context;
                    let mut window = Array2::<f64>::zeros((c + 1, f));
                    let pad = c - state.history.len();
                    for (k, row) in state.history.iter().enumerate() {
                        window.row_mut(pad + k).assign(row);
                    }
                    window.row_mut(c).assign(&mag_now);
                    let dim = x4_dim(c, Mode::Online, prev.as_ref().map(HiddenGrid::width));
                    let mut data = Array3::zeros((1, f, dim));
                    fill_x4_frame(
                        data.index_axis_mut(Axis(0), 0),
                        window.view(),
                        prev.as_ref().map(|h| h.data.index_axis(Axis(0), 0)),
                        c,
                        c,
                        Mode::Online,
                    );
                    FeatureSequence {
                        data,
                        axis: SequenceAxis::FrequencyMajor,
                    }
                };
                let (y, _) = run_block(spec, p, &x)?;
                y.index_axis(Axis(0), 0).to_owned()
            }
            _ => {
                let x = if spec.module == 2 {
                    x2_from(normed.view(), prev.as_ref())?
                } else {
                    assemble_x3(mag_row, prev.as_ref(), config.n1, config.n2)?
                };
                if x.dim() != spec.input_dim {
                    return Err(shape_err(format!(
                        "module {} expects width {}, got {}",
                        spec.module,
                        spec.input_dim,
                        x.dim()
                    )));
                }
                let (h, c) = state.carries[i].as_mut().expect("time-recurrent block has a carry");
                lstm_step(&p.forward, x.data.index_axis(Axis(1), 0), h, c);
                p.projection.forward(h.view())
            }
        };
        prev = Some(HiddenGrid {
            data: y.insert_axis(Axis(0)),
        });
    }

    if config.context > 0 {
        if state.history.len() == config.context {
            state.history.pop_front();
        }
        state.history.push_back(mag_now);
    }
    state.frames += 1;
    Ok(prev.expect("validated: at least one module").data.index_axis_move(Axis(0), 0))
}
