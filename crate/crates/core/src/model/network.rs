//! Graph-building forward passes. Everything here is generic over the
//! scalar type so the same code drives f32 training and f64 gradient checks.

use std::collections::HashMap;

use super::arch::{layers, Part};
use super::config::NetworkConfig;
use super::weights::NetworkWeights;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// Network parameters placed on a graph, keyed by tensor name.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    /// Places every tensor on `g`; trainable ones become parameters.
    pub fn new<T: Scalar>(g: &mut Graph<T>, weights: &NetworkWeights, trainable: impl Fn(Part) -> bool) -> Self {
        let mut vars = HashMap::with_capacity(weights.tensors.len());
        for (name, t) in &weights.tensors {
            let value = t.cast::<T>();
            let train = Part::of_name(name).is_some_and(&trainable);
            let v = if train { g.param(value) } else { g.constant(value) };
            vars.insert(name.clone(), v);
        }
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Shape(format!("unbound parameter {name}")))
    }

    /// `(name, var)` pairs in unspecified order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, &v)| (n.as_str(), v))
    }
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Bound { vars: iter.into_iter().collect() }
    }
}

/// Backbone outputs on the graph: the two detection scales and the pooled
/// embedding `[N, d]` of the deepest stage.
#[derive(Debug, Clone, Copy)]
pub struct FeatureVars {
    pub p3: Var,
    pub p4: Var,
    pub embedding: Var,
}

struct Ctx<'a, T: Scalar> {
    g: &'a mut Graph<T>,
    p: &'a Bound,
    slope: f64,
}

impl<T: Scalar> Ctx<'_, T> {
    fn conv(&mut self, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.p.var(&format!("{name}.weight"))?;
        let b = self.p.var(&format!("{name}.bias"))?;
        let k = self.g.value(w).shape()[2];
        self.g.conv2d(x, w, b, stride, k / 2)
    }

    fn conv_act(&mut self, name: &str, x: Var, stride: usize) -> Result<Var> {
        let y = self.conv(name, x, stride)?;
        Ok(self.g.leaky_relu(y, self.slope))
    }

    /// Split channels in half, run a residual 1x1-3x3-1x1 bottleneck on one
    /// half, concatenate with the untouched half and fuse with a 1x1.
    fn csp(&mut self, name: &str, x: Var) -> Result<Var> {
        let c = self.g.value(x).shape()[1];
        let h = c / 2;
        let keep = self.g.slice_channels(x, 0, h)?;
        let work = self.g.slice_channels(x, h, h)?;
        let t = self.conv_act(&format!("{name}.cv1"), work, 1)?;
        let t = self.conv_act(&format!("{name}.cv2"), t, 1)?;
        let t = self.conv_act(&format!("{name}.cv3"), t, 1)?;
        let t = self.g.add(work, t)?;
        let cat = self.g.concat_channels(&[keep, t])?;
        self.conv_act(&format!("{name}.fuse"), cat, 1)
    }
}

/// `x: [N,3,H,W]` to multi-scale features.
pub fn backbone<T: Scalar>(g: &mut Graph<T>, cfg: &NetworkConfig, p: &Bound, x: Var) -> Result<FeatureVars> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1] != 3 || shape[2] != cfg.input_size || shape[3] != cfg.input_size {
        return Err(Error::Shape(format!(
            "backbone expects [N,3,{s},{s}], got {shape:?}",
            s = cfg.input_size
        )));
    }
    let mut c = Ctx { g, p, slope: cfg.leaky_slope };
    let mut h = c.conv_act("backbone.stem", x, 2)?;
    let mut stages = Vec::with_capacity(cfg.stage_channels.len());
    for i in 0..cfg.stage_channels.len() {
        h = c.conv_act(&format!("backbone.stage{i}.down"), h, 2)?;
        h = c.csp(&format!("backbone.stage{i}.csp"), h)?;
        stages.push(h);
    }
    let p3 = stages[cfg.stage_for_stride(cfg.det_strides[0]).expect("validated")];
    let p4 = *stages.last().expect("validated");
    let embedding = c.g.spatial_mean(p4)?;
    Ok(FeatureVars { p3, p4, embedding })
}

/// Raw prediction grids, one `[N, A(5+K), S, S]` tensor per stride.
pub fn det_head<T: Scalar>(g: &mut Graph<T>, cfg: &NetworkConfig, p: &Bound, f: &FeatureVars) -> Result<Vec<Var>> {
    let mut c = Ctx { g, p, slope: cfg.leaky_slope };
    let inputs = [f.p3, f.p4];
    cfg.det_strides
        .iter()
        .zip(inputs)
        .map(|(&s, x)| {
            let h = c.conv_act(&format!("det.s{s}.conv"), x, 1)?;
            c.conv(&format!("det.s{s}.pred"), h, 1)
        })
        .collect()
}

/// Enhanced image `[N,3,H,W]` with values in (0,1).
pub fn uie_head<T: Scalar>(g: &mut Graph<T>, cfg: &NetworkConfig, p: &Bound, f: &FeatureVars) -> Result<Var> {
    let mut c = Ctx { g, p, slope: cfg.leaky_slope };
    let factor = cfg.det_strides[1] / cfg.det_strides[0];
    let deep = c.conv_act("uie.reduce", f.p4, 1)?;
    let deep = c.g.upsample(deep, factor)?;
    let skip = c.conv_act("uie.skip", f.p3, 1)?;
    let mut h = c.g.add(deep, skip)?;
    h = c.csp("uie.level0.csp", h)?;
    for i in 1..cfg.uie_channels.len() {
        h = c.conv_act(&format!("uie.level{i}.reduce"), h, 1)?;
        h = c.g.upsample(h, 2)?;
        h = c.csp(&format!("uie.level{i}.csp"), h)?;
    }
    let out = c.conv("uie.out", h, 1)?;
    let out = c.g.upsample(out, 2)?;
    Ok(c.g.sigmoid(out))
}

/// Names of every tensor the forward passes above read, for consistency
/// checks against the layer table.
pub fn layer_names(cfg: &NetworkConfig) -> Vec<String> {
    layers(cfg).into_iter().map(|l| l.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn run(cfg: &NetworkConfig, w: &NetworkWeights, n: usize) -> (Graph<f32>, Bound, FeatureVars, Vec<Var>, Var) {
        let mut g = Graph::new();
        let p = Bound::new(&mut g, w, |_| true);
        let s = cfg.input_size;
        let x = g.constant(Tensor::from_fn(&[n, 3, s, s], |i| ((i * 7919) % 101) as f32 / 100.0));
        let f = backbone(&mut g, cfg, &p, x).unwrap();
        let d = det_head(&mut g, cfg, &p, &f).unwrap();
        let u = uie_head(&mut g, cfg, &p, &f).unwrap();
        (g, p, f, d, u)
    }

    #[test]
    fn output_shapes() {
        let cfg = NetworkConfig::default();
        let w = NetworkWeights::init(&cfg, 1).unwrap();
        let (g, _, f, d, u) = run(&cfg, &w, 2);
        assert_eq!(g.value(f.embedding).shape(), &[2, 128]);
        assert_eq!(g.value(d[0]).shape(), &[2, 27, 12, 12]);
        assert_eq!(g.value(d[1]).shape(), &[2, 27, 6, 6]);
        assert_eq!(g.value(u).shape(), &[2, 3, 96, 96]);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let cfg = NetworkConfig::default();
        let w = NetworkWeights::init(&cfg, 1).unwrap();
        let (mut g, p, f, d, u) = run(&cfg, &w, 1);
        let mut terms = vec![g.mean(u), g.mean(f.embedding)];
        for v in d {
            terms.push(g.mean(v));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t).unwrap();
        }
        let grads = g.backward(total).unwrap();
        for (name, v) in p.iter() {
            assert!(grads.get(v).is_some(), "{name} got no gradient");
        }
        assert_eq!(layer_names(&cfg).len() * 2, w.tensors.len());
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let cfg = NetworkConfig::default();
        let w = NetworkWeights::zeros(&cfg).unwrap();
        let mut g = Graph::<f32>::new();
        let p = Bound::new(&mut g, &w, |_| false);
        let x = g.constant(Tensor::zeros(&[1, 3, 64, 64]));
        assert!(matches!(backbone(&mut g, &cfg, &p, x), Err(Error::Shape(_))));
    }
}
