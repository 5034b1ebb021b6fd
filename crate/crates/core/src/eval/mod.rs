//! Detection and enhancement metrics, and a per-water-type report for a
//! trained model.

mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use metrics::{
    average_precision, coco_thresholds, evaluate_map, gray_world_deviation, mse, psnr, ApResult, MatchCounts, PSNR_CAP,
};
pub use crate::boxes::iou;

use crate::aquasynth::{Datasets, EvalSample, EvalSplit};
use crate::error::Result;
use crate::image::Image;
use crate::model::{DecodeConfig, Detection, Mode, Model};

const CHUNK: usize = 32;

/// Mean enhancement quality over one split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnhancementStats {
    pub psnr_enhanced: f64,
    pub psnr_degraded: f64,
    pub gray_world_enhanced: f64,
    pub gray_world_degraded: f64,
    pub images: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub detection: ApResult,
    pub enhancement: EnhancementStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub splits: BTreeMap<EvalSplit, SplitReport>,
    /// All shifted splits pooled together.
    pub shifted: SplitReport,
}

/// Dual-mode outputs for a list of images, in chunks.
pub fn predict(model: &Model, images: &[&Image], dc: &DecodeConfig) -> Result<(Vec<Vec<Detection>>, Vec<Image>)> {
    let mut dets = Vec::with_capacity(images.len());
    let mut enhanced = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        for out in model.forward_batch(chunk, Mode::Dual, dc)? {
            dets.push(out.detections.unwrap_or_default());
            enhanced.push(out.enhanced.expect("dual mode enhances"));
        }
    }
    Ok((dets, enhanced))
}

/// Enhanced images only, in chunks.
pub fn enhance_all(model: &Model, images: &[&Image]) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        for o in model.forward_batch(chunk, Mode::Enhance, &DecodeConfig::default())? {
            out.push(o.enhanced.expect("enhance mode"));
        }
    }
    Ok(out)
}

fn split_report(model: &Model, samples: &[&EvalSample], dc: &DecodeConfig) -> Result<SplitReport> {
    let images: Vec<&Image> = samples.iter().map(|s| &s.degraded).collect();
    let (dets, enhanced) = predict(model, &images, dc)?;
    let gts: Vec<_> = samples.iter().map(|s| s.gts.clone()).collect();
    let detection = evaluate_map(&dets, &gts, model.config().class_count)?;
    let mut e = EnhancementStats { images: samples.len(), ..Default::default() };
    for (s, enh) in samples.iter().zip(&enhanced) {
        e.psnr_enhanced += psnr(enh, &s.clear)?;
        e.psnr_degraded += psnr(&s.degraded, &s.clear)?;
        e.gray_world_enhanced += gray_world_deviation(enh);
        e.gray_world_degraded += gray_world_deviation(&s.degraded);
    }
    let n = samples.len().max(1) as f64;
    e.psnr_enhanced /= n;
    e.psnr_degraded /= n;
    e.gray_world_enhanced /= n;
    e.gray_world_degraded /= n;
    Ok(SplitReport { detection, enhancement: e })
}

/// Detection and enhancement metrics on every evaluation split.
pub fn evaluate_model(model: &Model, data: &Datasets, dc: &DecodeConfig) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for split in EvalSplit::ALL {
        let samples: Vec<&EvalSample> = data.eval_split(split).iter().collect();
        if !samples.is_empty() {
            report.splits.insert(split, split_report(model, &samples, dc)?);
        }
    }
    let pooled: Vec<&EvalSample> = EvalSplit::SHIFTED.iter().flat_map(|&s| data.eval_split(s)).collect();
    if !pooled.is_empty() {
        report.shifted = split_report(model, &pooled, dc)?;
    }
    Ok(report)
}

/// Mean gray-world deviation of the enhanced unpaired images.
pub fn unpaired_gray_world(model: &Model, data: &Datasets) -> Result<f64> {
    let images: Vec<&Image> = data.unpaired().collect();
    let enhanced = enhance_all(model, &images)?;
    Ok(enhanced.iter().map(gray_world_deviation).sum::<f64>() / enhanced.len().max(1) as f64)
}
