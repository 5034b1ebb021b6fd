use std::collections::BTreeMap;

use rand::Rng;

use super::arch::{layers, Init, Part};
use super::config::NetworkConfig;
use crate::error::{invalid, shape_err, Result};
use crate::seeds::rng_for;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 0x1A17;

/// Named parameter tensors plus the optimiser step they were produced at.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    pub tensors: BTreeMap<String, Tensor<f32>>,
    pub step: u64,
}

/// `logit(p)`.
fn prior_logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}

impl NetworkWeights {
    /// Seeded initialisation: He-uniform for hidden convolutions, small
    /// weights with prior biases for the prediction layers.
    pub fn init(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        let gain = 2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope);
        for (i, l) in layers(cfg).into_iter().enumerate() {
            let mut rng = rng_for(seed, INIT_STREAM, i as u64);
            let fan_in = (l.cin * l.kernel * l.kernel) as f64;
            let bound = match l.init {
                Init::Hidden => (3.0 * gain / fan_in).sqrt() as f32,
                Init::Output { std } => std * 3f32.sqrt(),
            };
            let w = Tensor::from_fn(&l.weight_shape(), |_| rng.random_range(-bound..bound));
            let mut b = Tensor::zeros(&[l.cout]);
            if l.part == Part::Det && matches!(l.init, Init::Output { .. }) {
                let stride: usize = l.name["det.s".len()..l.name.len() - ".pred".len()].parse().expect("det layer name");
                let grid = cfg.grid_size(stride);
                let a = cfg.anchors_per_cell();
                let obj = prior_logit(2.0 / (grid * grid * a) as f32);
                let cls = prior_logit(1.0 / cfg.class_count.max(2) as f32);
                let per = 5 + cfg.class_count;
                for (j, v) in b.data_mut().iter_mut().enumerate() {
                    match j % per {
                        4 => *v = obj,
                        k if k >= 5 => *v = cls,
                        _ => {}
                    }
                }
            }
            tensors.insert(l.weight_name(), w);
            tensors.insert(l.bias_name(), b);
        }
        Ok(NetworkWeights { tensors, step: 0 })
    }

    /// Every kernel and bias zero.
    pub fn zeros(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for l in layers(cfg) {
            tensors.insert(l.weight_name(), Tensor::zeros(&l.weight_shape()));
            tensors.insert(l.bias_name(), Tensor::zeros(&[l.cout]));
        }
        Ok(NetworkWeights { tensors, step: 0 })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.get(name)
    }

    /// Names and shapes must match the layer table of `cfg` exactly, and
    /// every value must be finite.
    pub fn validate(&self, cfg: &NetworkConfig) -> Result<()> {
        let specs = layers(cfg);
        if self.tensors.len() != 2 * specs.len() {
            return shape_err(format!("expected {} tensors, found {}", 2 * specs.len(), self.tensors.len()));
        }
        for l in specs {
            for (name, shape) in [(l.weight_name(), l.weight_shape().to_vec()), (l.bias_name(), vec![l.cout])] {
                let t = self.tensors.get(&name).ok_or_else(|| crate::Error::Shape(format!("missing tensor {name}")))?;
                if t.shape() != shape.as_slice() {
                    return shape_err(format!("{name}: shape {:?}, expected {shape:?}", t.shape()));
                }
                if !t.is_finite() {
                    return invalid(format!("{name} contains non-finite values"));
                }
            }
        }
        Ok(())
    }

    /// Number of scalars in tensors belonging to `part`.
    pub fn count(&self, part: Part) -> u64 {
        self.tensors
            .iter()
            .filter(|(n, _)| Part::of_name(n) == Some(part))
            .map(|(_, t)| t.numel() as u64)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.tensors.values().map(|t| t.numel() as u64).sum()
    }
}
