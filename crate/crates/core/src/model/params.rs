use rand::Rng;

use super::config::{BlockSpec, ModelConfig};
use super::lstm::{LinearParams, LstmParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub module: usize,
    pub forward: LstmParams,
    /// Present for bidirectional blocks; runs in reverse step order.
    pub backward: Option<LstmParams>,
    pub projection: LinearParams,
}

impl BlockParams {
    fn init<R: Rng>(spec: &BlockSpec, rng: &mut R) -> Self {
        let forward = LstmParams::init(spec.input_dim, spec.lstm_hidden, rng);
        let backward = spec
            .bidirectional
            .then(|| LstmParams::init(spec.input_dim, spec.lstm_hidden, rng));
        let projection = LinearParams::init(spec.lstm_hidden * spec.directions(), spec.output_dim, rng);
        Self {
            module: spec.module,
            forward,
            backward,
            projection,
        }
    }

    fn zeros(spec: &BlockSpec) -> Self {
        Self {
            module: spec.module,
            forward: LstmParams::zeros(spec.input_dim, spec.lstm_hidden),
            backward: spec
                .bidirectional
                .then(|| LstmParams::zeros(spec.input_dim, spec.lstm_hidden)),
            projection: LinearParams::zeros(spec.lstm_hidden * spec.directions(), spec.output_dim),
        }
    }
}

/// Trainable weights of all enabled modules.
#[derive(Debug, Clone, PartialEq)]
pub struct McNetParams {
    pub blocks: Vec<BlockParams>,
}

/// A named view of one parameter grid.
pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl McNetParams {
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            blocks: config.blocks().iter().map(|b| BlockParams::init(b, rng)).collect(),
        })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            blocks: config.blocks().iter().map(BlockParams::zeros).collect(),
        }
    }

    /// Fails unless every grid has the shape `config` implies.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(config);
        let a: Vec<(String, Vec<usize>)> = self.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        let b: Vec<(String, Vec<usize>)> = expected.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if a != b {
            return Err(Error::Shape(
                "parameter layout does not match the model configuration (module set, widths or recurrence directions)".into(),
            ));
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<Tensor<'_>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let lstms = std::iter::once(("fwd", &b.forward)).chain(b.backward.as_ref().map(|p| ("bwd", p)));
            for (dir, p) in lstms {
                out.push(tensor(format!("m{}.{dir}.w_ih", b.module), p.w_ih.shape(), p.w_ih.as_slice()));
                out.push(tensor(format!("m{}.{dir}.w_hh", b.module), p.w_hh.shape(), p.w_hh.as_slice()));
                out.push(tensor(format!("m{}.{dir}.bias", b.module), p.bias.shape(), p.bias.as_slice()));
            }
            let q = &b.projection;
            out.push(tensor(format!("m{}.proj.weight", b.module), q.weight.shape(), q.weight.as_slice()));
            out.push(tensor(format!("m{}.proj.bias", b.module), q.bias.shape(), q.bias.as_slice()));
        }
        out
    }

    /// Mutable flat views in the same order as [`McNetParams::tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            let lstms = std::iter::once(&mut b.forward).chain(b.backward.as_mut());
            for p in lstms {
                out.push(p.w_ih.as_slice_mut().expect("standard layout"));
                out.push(p.w_hh.as_slice_mut().expect("standard layout"));
                out.push(p.bias.as_slice_mut().expect("standard layout"));
            }
            out.push(b.projection.weight.as_slice_mut().expect("standard layout"));
            out.push(b.projection.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, a: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= a);
        }
    }

    pub fn add_assign(&mut self, other: &McNetParams) {
        let src: Vec<Vec<f64>> = other.tensors().iter().map(|t| t.data.to_vec()).collect();
        for (dst, src) in self.slices_mut().into_iter().zip(src.iter()) {
            dst.iter_mut().zip(src.iter()).for_each(|(d, s)| *d += s);
        }
    }

    /// All values concatenated in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }
}

fn tensor<'a>(name: String, shape: &[usize], data: Option<&'a [f64]>) -> Tensor<'a> {
    Tensor {
        name,
        shape: shape.to_vec(),
        data: data.expect("standard layout"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::count_parameters;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn count_matches_allocated_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut configs = vec![ModelConfig::default()];
        for m in 1..=4 {
            configs.push(ModelConfig::default().ablate(m).unwrap());
        }
        configs.push(ModelConfig {
            mode: crate::Mode::Offline,
            enabled_modules: vec![1, 2],
            ..ModelConfig::default()
        });
        for c in configs {
            let p = McNetParams::init(&c, &mut rng).unwrap();
            let brute: usize = p
                .tensors()
                .iter()
                .map(|t| t.shape.iter().product::<usize>())
                .sum();
            assert_eq!(brute, count_parameters(&c));
            assert_eq!(p.num_params(), brute);
        }
    }

    #[test]
    fn names_and_layout_check() {
        let c = ModelConfig {
            channels: 2,
            hidden_width: 3,
            lstm_hidden: [2, 2, 2, 2],
            ..ModelConfig::default()
        };
        let c = ModelConfig { reference_channel: 1, ..c };
        let p = McNetParams::zeros(&c);
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names[0], "m1.fwd.w_ih");
        assert!(names.contains(&"m1.bwd.w_hh".to_string()));
        assert!(!names.contains(&"m2.bwd.w_hh".to_string()));
        p.check_against(&c).unwrap();
        let off = ModelConfig {
            mode: crate::Mode::Offline,
            ..c
        };
        assert!(p.check_against(&off).is_err());
    }

    #[test]
    fn arithmetic_helpers() {
        let c = ModelConfig {
            channels: 1,
            hidden_width: 2,
            lstm_hidden: [1, 1, 1, 1],
            reference_channel: 1,
            enabled_modules: vec![2],
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = McNetParams::init(&c, &mut rng).unwrap();
        let mut q = p.clone();
        q.add_assign(&p);
        q.scale(0.5);
        assert_eq!(p.flatten(), q.flatten());
        assert!((q.l2_norm() - p.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()).abs() < 1e-15);
    }
}
