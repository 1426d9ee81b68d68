//! End-to-end enhancement of multichannel waveforms with a trained model.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{shape_err, Error, Result};
use crate::mask::{apply_mask, decompress, Compression, MaskGrid};
use crate::model::{forward, streaming_step, CheckpointMeta, McNetParams, StreamState};
use crate::normalize::{offline_normalize, online_normalize};
use crate::stft::{istft, stft, ComplexSpectrogram};
use crate::{Complex, Mode};

/// How a model is run over an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// Whole-utterance forward pass.
    Batch,
    /// Frame-by-frame through [`streaming_step`]; online models only.
    Streaming,
}

/// A loaded checkpoint ready for inference.
#[derive(Debug, Clone)]
pub struct Enhancer {
    pub meta: CheckpointMeta,
    pub params: McNetParams,
}

impl Enhancer {
    pub fn new(meta: CheckpointMeta, params: McNetParams) -> Result<Self> {
        meta.model.validate()?;
        meta.stft.validate()?;
        params.check_against(&meta.model)?;
        Ok(Self { meta, params })
    }

    fn spectrogram(&self, noisy: ArrayView2<'_, f64>) -> Result<ComplexSpectrogram> {
        let m = noisy.ncols();
        if m != self.meta.model.channels {
            return Err(shape_err(format!(
                "input has {m} channels, model was trained for {}",
                self.meta.model.channels
            )));
        }
        stft(noisy, &self.meta.stft, self.meta.model.reference_channel)
    }

    /// Compressed-mask prediction `[T, F, 2]` for the noisy STFT.
    pub fn predict(&self, spec: &ComplexSpectrogram, exec: Execution) -> Result<Array2<Complex>> {
        let model = &self.meta.model;
        match exec {
            Execution::Batch => {
                let (normed, _) = match model.mode {
                    Mode::Online => online_normalize(spec, self.meta.smoothing_len)?,
                    Mode::Offline => offline_normalize(spec)?,
                };
                Ok(forward(&normed, model, &self.params)?.data)
            }
            Execution::Streaming => {
                if model.mode != Mode::Online {
                    return Err(Error::Config("streaming execution requires an online-mode checkpoint".into()));
                }
                let (t_n, f_n, _) = spec.data.dim();
                let mut state = StreamState::new(model, f_n, self.meta.smoothing_len)?;
                let mut out = Array2::zeros((t_n, f_n));
                for (t, frame) in spec.data.axis_iter(Axis(0)).enumerate() {
                    let y = streaming_step(&mut state, frame, model, &self.params)?;
                    for f in 0..f_n {
                        out[[t, f]] = Complex::new(y[[f, 0]], y[[f, 1]]);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Enhanced reference-channel waveform of the same length as `noisy`.
    pub fn enhance(&self, noisy: ArrayView2<'_, f64>, exec: Execution) -> Result<Vec<f64>> {
        let spec = self.spectrogram(noisy)?;
        let compressed = MaskGrid::compressed(self.predict(&spec, exec)?, Compression::default());
        let mask = decompress(&compressed)?;
        resynthesize(&spec, &mask, noisy.nrows())
    }
}

/// Applies a raw mask to the un-normalized reference channel of `noisy` and
/// returns `len` samples.
pub fn resynthesize(noisy: &ComplexSpectrogram, mask: &MaskGrid, len: usize) -> Result<Vec<f64>> {
    let est = apply_mask(noisy.reference(), mask)?;
    let spec = ComplexSpectrogram::new(est.insert_axis(Axis(2)), noisy.config, 1)?;
    Ok(istft(&spec, len)?.column(0).to_vec())
}
