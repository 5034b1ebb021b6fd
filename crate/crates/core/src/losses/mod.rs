//! Training objectives: L1 enhancement, gray-world prior, detection
//! (classification + CIoU box + objectness) and embedding alignment.
//!
//! Every function records onto a [`Graph`] so the trainer can sum terms
//! and run a single backward pass.

mod ciou;
mod det;

pub use ciou::{ciou, ciou_graph, BoxVars};
pub use det::{assign_targets, det_loss, AssignedTargets, Assignment, DetLoss, ANCHOR_RATIO_GATE};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::image::Image;
use crate::tensor::{Graph, Scalar, Var};

/// Mean absolute difference between two same-shaped tensors.
pub fn enh_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, reference: Var) -> Result<Var> {
    let d = g.sub(pred, reference)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// `(1/3) sum_c (mean_c - 0.5)^2`, averaged over the batch of `[N,3,H,W]`.
pub fn gray_world_loss<T: Scalar>(g: &mut Graph<T>, pred: Var) -> Result<Var> {
    let shape = g.value(pred).shape();
    if shape.len() != 4 || shape[1] != 3 {
        return shape_err(format!("gray-world loss needs [N,3,H,W], got {shape:?}"));
    }
    let m = g.spatial_mean(pred)?;
    let d = g.add_scalar(m, -0.5);
    let d = g.square(d);
    Ok(g.mean(d))
}

/// Mean squared error plus squared Frobenius distance between covariances.
///
/// Rows of `real` and `enhanced` are paired. `enhanced` is detached, so the
/// gradient reaches only the real-image embeddings.
pub fn da_loss<T: Scalar>(g: &mut Graph<T>, real: Var, enhanced: Var) -> Result<Var> {
    let (rs, es) = (g.value(real).shape(), g.value(enhanced).shape());
    if rs != es || rs.len() != 2 {
        return shape_err(format!("embedding sets must be equal [n,d], got {rs:?} and {es:?}"));
    }
    if rs[0] < 2 {
        return invalid(format!("covariance needs at least 2 rows, got {}", rs[0]));
    }
    let fixed = g.detach(enhanced);
    let d = g.sub(real, fixed)?;
    let d = g.square(d);
    let mse = g.mean(d);
    let cr = g.covariance(real)?;
    let ce = g.covariance(fixed)?;
    let dc = g.sub(cr, ce)?;
    let dc = g.square(dc);
    let fro = g.sum(dc);
    g.add(mse, fro)
}

fn image_var(g: &mut Graph<f64>, img: &Image) -> Var {
    let t = img.to_tensor().cast::<f64>();
    let shape = [1, 3, img.height(), img.width()];
    g.constant(t.reshape(&shape).expect("image tensor is [3,H,W]"))
}

/// L1 distance between two images, evaluated in 64-bit.
pub fn enh_loss_value(pred: &Image, reference: &Image) -> Result<f64> {
    if !pred.same_size(reference) {
        return shape_err("images differ in size");
    }
    let mut g = Graph::<f64>::new();
    let (a, b) = (image_var(&mut g, pred), image_var(&mut g, reference));
    let l = enh_loss(&mut g, a, b)?;
    Ok(g.value(l).item())
}

/// Gray-world deviation of one image, evaluated in 64-bit.
pub fn gray_world_value(img: &Image) -> f64 {
    let mut g = Graph::<f64>::new();
    let x = image_var(&mut g, img);
    let l = gray_world_loss(&mut g, x).expect("three-channel image");
    g.value(l).item()
}

/// Per-term multipliers; all one by default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub enh: f64,
    pub det_r: f64,
    pub uns: f64,
    pub det_e: f64,
    pub da: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { enh: 1.0, det_r: 1.0, uns: 1.0, det_e: 1.0, da: 1.0 }
    }
}

/// Loss values of one step. Absent terms were not computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub enh: Option<f64>,
    pub det_r: Option<f64>,
    pub uns: Option<f64>,
    pub det_e: Option<f64>,
    pub da: Option<f64>,
    pub total: f64,
}

impl LossReport {
    pub const NAMES: [&'static str; 5] = ["enh", "det_r", "uns", "det_e", "da"];

    pub fn terms(&self) -> [Option<f64>; 5] {
        [self.enh, self.det_r, self.uns, self.det_e, self.da]
    }

    /// Names of the terms that are present.
    pub fn present(&self) -> Vec<&'static str> {
        Self::NAMES.iter().zip(self.terms()).filter(|(_, v)| v.is_some()).map(|(n, _)| *n).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms().iter().flatten().all(|v| v.is_finite())
    }

    /// CSV cells `enh,det_r,uns,det_e,da,total`; absent terms are empty.
    pub fn csv_cells(&self) -> String {
        let mut cells: Vec<String> = self.terms().iter().map(|t| t.map(|v| format!("{v:.6e}")).unwrap_or_default()).collect();
        cells.push(format!("{:.6e}", self.total));
        cells.join(",")
    }
}
