use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{x1_dim, x2_dim, x3_dim, x4_dim, SequenceAxis};

/// Causal frame-by-frame operation versus whole-utterance operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Online,
    Offline,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(Mode::Online),
            "offline" => Ok(Mode::Offline),
            other => Err(Error::Config(format!("unknown mode `{other}` (online|offline)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Online => "online",
            Mode::Offline => "offline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of microphones `M`.
    pub channels: usize,
    /// Width `D` of the per-bin outputs passed between modules.
    pub hidden_width: usize,
    /// Recurrent units per direction for modules 1..=4.
    pub lstm_hidden: [usize; 4],
    /// Adjacent magnitude bins on each side fed to module 3.
    pub n1: usize,
    /// Adjacent module-2 outputs on each side fed to module 3.
    pub n2: usize,
    /// Context frames for module 4.
    pub context: usize,
    pub mode: Mode,
    /// Enabled modules, strictly increasing, drawn from 1..=4.
    pub enabled_modules: Vec<usize>,
    /// 1-based reference microphone.
    pub reference_channel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 6,
            hidden_width: 64,
            lstm_hidden: [128, 256, 384, 128],
            n1: 3,
            n2: 2,
            context: 5,
            mode: Mode::Online,
            enabled_modules: vec![1, 2, 3, 4],
            reference_channel: 5,
        }
    }
}

/// Resolved layout of one enabled module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub module: usize,
    pub axis: SequenceAxis,
    pub bidirectional: bool,
    pub input_dim: usize,
    pub lstm_hidden: usize,
    pub output_dim: usize,
    /// Whether the input carries the previous enabled module's output.
    pub takes_hidden: bool,
}

impl BlockSpec {
    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be >= 1".into()));
        }
        if self.lstm_hidden.contains(&0) {
            return Err(Error::Config("LSTM hidden sizes must be positive".into()));
        }
        if self.enabled_modules.is_empty() {
            return Err(Error::Config("at least one module must be enabled".into()));
        }
        if self
            .enabled_modules
            .iter()
            .any(|&m| !(1..=4).contains(&m))
            || self.enabled_modules.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(format!(
                "enabled_modules must be a strictly increasing subset of 1..=4, got {:?}",
                self.enabled_modules
            )));
        }
        if self.reference_channel == 0 || self.reference_channel > self.channels {
            return Err(Error::Config(format!(
                "reference_channel {} outside 1..={}",
                self.reference_channel, self.channels
            )));
        }
        Ok(())
    }

    /// Returns a copy with module `module` removed.
    pub fn ablate(&self, module: usize) -> Result<Self> {
        if !self.enabled_modules.contains(&module) {
            return Err(Error::Config(format!("module {module} is not enabled")));
        }
        let mut out = self.clone();
        out.enabled_modules.retain(|&m| m != module);
        out.validate()?;
        Ok(out)
    }

    /// Per-module layout. A module consumes the output of the nearest enabled
    /// upstream module; the last enabled module projects to the two mask
    /// components.
    pub fn blocks(&self) -> Vec<BlockSpec> {
        let n = self.enabled_modules.len();
        self.enabled_modules
            .iter()
            .enumerate()
            .map(|(i, &module)| {
                let takes_hidden = i > 0;
                let h = takes_hidden.then_some(self.hidden_width);
                let (axis, input_dim) = match module {
                    1 => (SequenceAxis::FrequencyMajor, x1_dim(self.channels)),
                    2 => (SequenceAxis::TimeMajor, x2_dim(self.channels, h)),
                    3 => (SequenceAxis::TimeMajor, x3_dim(self.n1, self.n2, h)),
                    _ => (SequenceAxis::FrequencyMajor, x4_dim(self.context, self.mode, h)),
                };
                let bidirectional = match axis {
                    SequenceAxis::FrequencyMajor => true,
                    SequenceAxis::TimeMajor => self.mode == Mode::Offline,
                };
                BlockSpec {
                    module,
                    axis,
                    bidirectional,
                    input_dim,
                    lstm_hidden: self.lstm_hidden[module - 1],
                    output_dim: if i + 1 == n { 2 } else { self.hidden_width },
                    takes_hidden,
                }
            })
            .collect()
    }
}

/// Parameter count implied by a configuration.
pub fn count_parameters(config: &ModelConfig) -> usize {
    config
        .blocks()
        .iter()
        .map(|b| {
            let h = b.lstm_hidden;
            let lstm = 4 * h * b.input_dim + 4 * h * h + 4 * h;
            b.directions() * lstm + b.output_dim * h * b.directions() + b.output_dim
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_blocks() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        let b = c.blocks();
        let dims: Vec<usize> = b.iter().map(|b| b.input_dim).collect();
        assert_eq!(dims, vec![12, 76, 327, 70]);
        assert_eq!(
            b.iter().map(|b| b.bidirectional).collect::<Vec<_>>(),
            vec![true, false, false, true]
        );
        assert_eq!(b.last().unwrap().output_dim, 2);
        let off = ModelConfig {
            mode: Mode::Offline,
            ..c
        };
        assert!(off.blocks().iter().all(|b| b.bidirectional));
        assert_eq!(off.blocks()[3].input_dim, 75);
    }

    #[test]
    fn ablations_rewire_inputs() {
        let c = ModelConfig::default();
        let no1 = c.ablate(1).unwrap();
        assert_eq!(no1.blocks()[0].input_dim, 12);
        let no3 = c.ablate(3).unwrap();
        assert_eq!(no3.enabled_modules, vec![1, 2, 4]);
        assert_eq!(no3.blocks()[2].input_dim, 70);
        let no4 = c.ablate(4).unwrap();
        assert_eq!(no4.blocks()[2].output_dim, 2);
        let nb = ModelConfig {
            enabled_modules: vec![2],
            ..c.clone()
        };
        assert_eq!(nb.blocks()[0].input_dim, 12);
        assert!(c.ablate(1).unwrap().ablate(1).is_err());
    }

    #[test]
    fn invalid_configs() {
        let base = ModelConfig::default();
        for bad in [
            ModelConfig { enabled_modules: vec![], ..base.clone() },
            ModelConfig { enabled_modules: vec![2, 1], ..base.clone() },
            ModelConfig { enabled_modules: vec![5], ..base.clone() },
            ModelConfig { reference_channel: 7, ..base.clone() },
            ModelConfig { lstm_hidden: [1, 0, 1, 1], ..base.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn parameter_count_monotone() {
        let c = ModelConfig::default();
        let wider = ModelConfig {
            hidden_width: 128,
            ..c.clone()
        };
        assert!(count_parameters(&wider) > count_parameters(&c));
        let nb = ModelConfig {
            enabled_modules: vec![2],
            ..c.clone()
        };
        assert!(count_parameters(&nb) < count_parameters(&c));
    }
}
