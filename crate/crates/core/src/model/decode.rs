use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use crate::boxes::{iou, BBox};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{sigmoid, Tensor};

/// One detected object in input-pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box", with = "box_array")]
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_id: usize,
    pub confidence: f32,
}

mod box_array {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::boxes::BBox;

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
        b.to_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
        let [x1, y1, x2, y2] = <[f32; 4]>::deserialize(d)?;
        Ok(BBox::new(x1, y1, x2, y2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub conf_thresh: f32,
    pub nms_iou: f32,
    /// Cap on detections kept per image after suppression.
    pub max_detections: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { conf_thresh: 0.25, nms_iou: 0.45, max_detections: 100 }
    }
}

impl DecodeConfig {
    /// Low threshold used when ranking for average precision.
    pub fn for_evaluation() -> Self {
        DecodeConfig { conf_thresh: 0.001, nms_iou: 0.6, max_detections: 100 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.conf_thresh > 0.0 && self.conf_thresh < 1.0) || !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return invalid("decode thresholds must lie in (0,1)");
        }
        Ok(())
    }
}

/// Decodes one image's raw grids (`[A(5+K), S, S]` per stride).
pub fn decode_detections(grids: &[Tensor<f32>], cfg: &NetworkConfig, dc: &DecodeConfig) -> Result<Vec<Detection>> {
    dc.validate()?;
    if grids.len() != cfg.det_strides.len() {
        return shape_err(format!("expected {} grids, got {}", cfg.det_strides.len(), grids.len()));
    }
    let k = cfg.class_count;
    let per = 5 + k;
    let limit = cfg.input_size as f32;
    let mut cands = Vec::new();
    for ((grid, &stride), anchors) in grids.iter().zip(&cfg.det_strides).zip(&cfg.anchors) {
        let s = cfg.grid_size(stride);
        if grid.shape() != [anchors.len() * per, s, s] {
            return shape_err(format!("grid at stride {stride} has shape {:?}", grid.shape()));
        }
        let d = grid.data();
        let at = |a: usize, j: usize, y: usize, x: usize| d[((a * per + j) * s + y) * s + x];
        for (a, &[aw, ah]) in anchors.iter().enumerate() {
            for y in 0..s {
                for x in 0..s {
                    let obj = sigmoid(at(a, 4, y, x));
                    if obj < dc.conf_thresh {
                        continue;
                    }
                    let (mut best, mut best_p) = (0, f32::NEG_INFINITY);
                    for c in 0..k {
                        let p = sigmoid(at(a, 5 + c, y, x));
                        if p > best_p {
                            best = c;
                            best_p = p;
                        }
                    }
                    let conf = obj * best_p;
                    if !(conf >= dc.conf_thresh) {
                        continue;
                    }
                    let st = stride as f32;
                    let cx = (x as f32 + 2.0 * sigmoid(at(a, 0, y, x)) - 0.5) * st;
                    let cy = (y as f32 + 2.0 * sigmoid(at(a, 1, y, x)) - 0.5) * st;
                    let w = aw * (2.0 * sigmoid(at(a, 2, y, x))).powi(2);
                    let h = ah * (2.0 * sigmoid(at(a, 3, y, x))).powi(2);
                    let b = BBox::from_center(cx, cy, w, h);
                    let clamped = BBox::new(b.x1.clamp(0.0, limit), b.y1.clamp(0.0, limit), b.x2.clamp(0.0, limit), b.y2.clamp(0.0, limit));
                    if clamped.is_valid() {
                        cands.push(Detection { bbox: clamped, class_id: best, confidence: conf });
                    }
                }
            }
        }
    }
    Ok(nms(cands, dc.nms_iou, dc.max_detections))
}

/// Greedy per-class suppression. Output is sorted by confidence, highest
/// first; ties keep generation order.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f32, max_detections: usize) -> Vec<Detection> {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.len() >= max_detections {
            break;
        }
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox).unwrap_or(0.0) > iou_thresh as f64);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}
