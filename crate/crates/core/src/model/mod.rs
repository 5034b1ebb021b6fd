//! Shared-backbone network with a detection head and an enhancement head.
//!
//! The heads never exchange features: each reads only backbone outputs, so
//! running both on one backbone pass gives the same numbers as running them
//! separately.

mod arch;
mod checkpoint;
mod config;
mod decode;
pub mod network;
mod weights;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use arch::{layers, ConvSpec, Part};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::NetworkConfig;
pub use decode::{decode_detections, nms, DecodeConfig, Detection};
pub use network::{Bound, FeatureVars};
pub use weights::NetworkWeights;

use crate::error::{shape_err, Result};
use crate::image::{stack, Image};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Detect,
    Enhance,
    Dual,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Detect, Mode::Enhance, Mode::Dual];

    pub fn parts(self) -> &'static [Part] {
        match self {
            Mode::Detect => &[Part::Backbone, Part::Det],
            Mode::Enhance => &[Part::Backbone, Part::Uie],
            Mode::Dual => &[Part::Backbone, Part::Det, Part::Uie],
        }
    }

    pub fn detects(self) -> bool {
        self != Mode::Enhance
    }

    pub fn enhances(self) -> bool {
        self != Mode::Detect
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Detect => "det",
            Mode::Enhance => "enh",
            Mode::Dual => "dual",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "det" | "detect" => Ok(Mode::Detect),
            "enh" | "enhance" => Ok(Mode::Enhance),
            "dual" => Ok(Mode::Dual),
            _ => Err(format!("unknown mode {s:?} (expected det, enh or dual)")),
        }
    }
}

/// Parameter and multiply-add counts of the layers a mode executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub params: u64,
    pub mult_adds: u64,
}

/// Analytic counts from layer shapes (convolutions only; upsampling, adds
/// and activations are not counted).
pub fn count_params_flops(cfg: &NetworkConfig, mode: Mode) -> Result<Cost> {
    cfg.validate()?;
    Ok(cost_of(cfg, mode.parts()))
}

pub fn cost_of(cfg: &NetworkConfig, parts: &[Part]) -> Cost {
    layers(cfg).iter().filter(|l| parts.contains(&l.part)).fold(Cost { params: 0, mult_adds: 0 }, |c, l| Cost {
        params: c.params + l.params(),
        mult_adds: c.mult_adds + l.mult_adds(),
    })
}

/// Features of a single image.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneFeatures {
    pub p3: Tensor<f32>,
    pub p4: Tensor<f32>,
    pub embedding: Tensor<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardOutput {
    pub detections: Option<Vec<Detection>>,
    pub enhanced: Option<Image>,
}

/// Frozen network for inference. Counts backbone executions so callers can
/// confirm the shared trunk runs once per forward.
#[derive(Debug)]
pub struct Model {
    config: NetworkConfig,
    weights: NetworkWeights,
    backbone_calls: AtomicUsize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model::new(self.config.clone(), self.weights.clone()).expect("already validated")
    }
}

fn split_batch(t: &Tensor<f32>) -> Vec<Tensor<f32>> {
    let shape = t.shape();
    let per: usize = shape[1..].iter().product();
    t.data()
        .chunks_exact(per)
        .map(|c| Tensor::new(shape[1..].to_vec(), c.to_vec()).expect("chunk shape"))
        .collect()
}

impl Model {
    pub fn new(config: NetworkConfig, weights: NetworkWeights) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        Ok(Model { config, weights, backbone_calls: AtomicUsize::new(0) })
    }

    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        let weights = NetworkWeights::init(&config, seed)?;
        Model::new(config, weights)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn into_weights(self) -> NetworkWeights {
        self.weights
    }

    pub fn backbone_calls(&self) -> usize {
        self.backbone_calls.load(Ordering::Relaxed)
    }

    pub fn cost(&self, mode: Mode) -> Cost {
        cost_of(&self.config, mode.parts())
    }

    fn check_images(&self, images: &[&Image]) -> Result<()> {
        let s = self.config.input_size;
        if let Some(bad) = images.iter().find(|i| i.width() != s || i.height() != s) {
            return shape_err(format!("image is {}x{}, network expects {s}x{s}", bad.width(), bad.height()));
        }
        Ok(())
    }

    fn run_backbone(&self, g: &mut Graph<f32>, p: &Bound, images: &[&Image]) -> Result<FeatureVars> {
        self.check_images(images)?;
        let x = g.constant(stack(images)?);
        self.backbone_calls.fetch_add(1, Ordering::Relaxed);
        network::backbone(g, &self.config, p, x)
    }

    fn bind(&self, g: &mut Graph<f32>, parts: &[Part]) -> Bound {
        let only: NetworkWeights = NetworkWeights {
            tensors: self
                .weights
                .tensors
                .iter()
                .filter(|(n, _)| Part::of_name(n).is_some_and(|p| parts.contains(&p)))
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect(),
            step: self.weights.step,
        };
        Bound::new(g, &only, |_| false)
    }

    pub fn backbone_forward(&self, image: &Image) -> Result<BackboneFeatures> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, &[Part::Backbone]);
        let f = self.run_backbone(&mut g, &p, &[image])?;
        let [p3, p4, e] = [f.p3, f.p4, f.embedding].map(|v| split_batch(g.value(v)).remove(0));
        Ok(BackboneFeatures { p3, p4, embedding: e })
    }

    /// Embedding rows `[n, d]` for a list of images, one backbone pass.
    pub fn embeddings(&self, images: &[&Image]) -> Result<Tensor<f32>> {
        if images.is_empty() {
            return shape_err("no images to embed");
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, &[Part::Backbone]);
        let f = self.run_backbone(&mut g, &p, images)?;
        Ok(g.value(f.embedding).clone())
    }

    fn feature_vars(&self, g: &mut Graph<f32>, f: &BackboneFeatures) -> Result<FeatureVars> {
        let batch = |t: &Tensor<f32>| {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.clone().reshape(&s)
        };
        Ok(FeatureVars {
            p3: g.constant(batch(&f.p3)?),
            p4: g.constant(batch(&f.p4)?),
            embedding: g.constant(batch(&f.embedding)?),
        })
    }

    pub fn uie_forward(&self, features: &BackboneFeatures) -> Result<Image> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, &[Part::Uie]);
        let f = self.feature_vars(&mut g, features)?;
        let u = network::uie_head(&mut g, &self.config, &p, &f)?;
        Image::from_tensor(&split_batch(g.value(u)).remove(0))
    }

    /// Raw grids `[A(5+K), S, S]`, one per detection stride.
    pub fn det_forward(&self, features: &BackboneFeatures) -> Result<Vec<Tensor<f32>>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, &[Part::Det]);
        let f = self.feature_vars(&mut g, features)?;
        let grids = network::det_head(&mut g, &self.config, &p, &f)?;
        Ok(grids.iter().map(|&v| split_batch(g.value(v)).remove(0)).collect())
    }

    pub fn forward(&self, image: &Image, mode: Mode, dc: &DecodeConfig) -> Result<ForwardOutput> {
        Ok(self.forward_batch(&[image], mode, dc)?.remove(0))
    }

    /// One backbone pass over the whole batch, then the heads `mode` asks for.
    pub fn forward_batch(&self, images: &[&Image], mode: Mode, dc: &DecodeConfig) -> Result<Vec<ForwardOutput>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, mode.parts());
        let f = self.run_backbone(&mut g, &p, images)?;
        let mut out = vec![ForwardOutput::default(); images.len()];
        if mode.detects() {
            let grids = network::det_head(&mut g, &self.config, &p, &f)?;
            let per_scale: Vec<Vec<Tensor<f32>>> = grids.iter().map(|&v| split_batch(g.value(v))).collect();
            for (i, o) in out.iter_mut().enumerate() {
                let mine: Vec<Tensor<f32>> = per_scale.iter().map(|s| s[i].clone()).collect();
                o.detections = Some(decode_detections(&mine, &self.config, dc)?);
            }
        }
        if mode.enhances() {
            let u = network::uie_head(&mut g, &self.config, &p, &f)?;
            for (o, t) in out.iter_mut().zip(split_batch(g.value(u))) {
                o.enhanced = Some(Image::from_tensor(&t)?);
            }
        }
        Ok(out)
    }
}
