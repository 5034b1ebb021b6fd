use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::boxes::{iou, GtBox};
use crate::error::{shape_err, Result};
use crate::image::Image;
use crate::model::Detection;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// Matching counts at one IoU threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    /// Ground truths left without a detection.
    pub unmatched: usize,
}

/// Greedy matching of every detection (highest confidence first) to the
/// best-overlapping unmatched ground truth of the same class and image.
/// Returns one TP flag per detection in processing order, plus counts.
fn match_detections(dets: &[Vec<Detection>], gts: &[Vec<GtBox>], thr: f64) -> (Vec<bool>, MatchCounts) {
    let mut order: Vec<(usize, usize)> = dets.iter().enumerate().flat_map(|(i, d)| (0..d.len()).map(move |j| (i, j))).collect();
    order.sort_by(|a, b| {
        let (ca, cb) = (dets[a.0][a.1].confidence, dets[b.0][b.1].confidence);
        cb.partial_cmp(&ca).unwrap_or(Ordering::Equal).then(a.cmp(b))
    });
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut flags = Vec::with_capacity(order.len());
    let mut counts = MatchCounts::default();
    for (i, j) in order {
        let d = &dets[i][j];
        let mut best: Option<(f64, usize)> = None;
        for (k, gt) in gts.get(i).map(Vec::as_slice).unwrap_or_default().iter().enumerate() {
            if taken[i][k] || gt.class_id != d.class_id {
                continue;
            }
            let Ok(o) = iou(&d.bbox, &gt.bbox) else { continue };
            if o >= thr && best.is_none_or(|(b, _)| o > b) {
                best = Some((o, k));
            }
        }
        match best {
            Some((_, k)) => {
                taken[i][k] = true;
                counts.tp += 1;
                flags.push(true);
            }
            None => {
                counts.fp += 1;
                flags.push(false);
            }
        }
    }
    counts.unmatched = taken.iter().flatten().filter(|t| !**t).count();
    (flags, counts)
}

/// Area under the all-point interpolated precision/recall curve.
fn area_under_pr(flags: &[bool], gt_count: usize) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len()).map(|i| (recall[i] - recall[i - 1]) * precision[i]).sum()
}

/// Average precision of `dets` against `gts` (indexed by image), matching
/// only same-class pairs.
pub fn average_precision(dets: &[Vec<Detection>], gts: &[Vec<GtBox>], iou_thr: f64) -> f64 {
    let (flags, _) = match_detections(dets, gts, iou_thr);
    area_under_pr(&flags, gts.iter().map(Vec::len).sum())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub per_class_ap50: BTreeMap<usize, f64>,
    pub per_class_ap5095: BTreeMap<usize, f64>,
    pub map50: f64,
    pub map5095: f64,
    /// Counts at IoU 0.5.
    pub counts: BTreeMap<usize, MatchCounts>,
    /// Classes with neither detections nor ground truth.
    pub excluded_classes: Vec<usize>,
    pub images: usize,
}

fn filter_class<T: Clone>(lists: &[Vec<T>], class_id: usize, class_of: impl Fn(&T) -> usize) -> Vec<Vec<T>> {
    lists.iter().map(|l| l.iter().filter(|x| class_of(x) == class_id).cloned().collect()).collect()
}

/// mAP at IoU 0.5 and averaged over 0.5:0.95, class by class.
pub fn evaluate_map(dets: &[Vec<Detection>], gts: &[Vec<GtBox>], class_count: usize) -> Result<ApResult> {
    if dets.len() != gts.len() {
        return shape_err(format!("{} detection lists for {} images", dets.len(), gts.len()));
    }
    let mut out = ApResult { images: gts.len(), ..Default::default() };
    for c in 0..class_count {
        let d = filter_class(dets, c, |d: &Detection| d.class_id);
        let g = filter_class(gts, c, |g: &GtBox| g.class_id);
        if d.iter().all(Vec::is_empty) && g.iter().all(Vec::is_empty) {
            out.excluded_classes.push(c);
            continue;
        }
        let gt_count = g.iter().map(Vec::len).sum();
        let mut sum = 0.0;
        for (k, thr) in coco_thresholds().into_iter().enumerate() {
            let (flags, counts) = match_detections(&d, &g, thr);
            let ap = area_under_pr(&flags, gt_count);
            if k == 0 {
                out.per_class_ap50.insert(c, ap);
                out.counts.insert(c, counts);
            }
            sum += ap;
        }
        out.per_class_ap5095.insert(c, sum / 10.0);
    }
    let mean = |m: &BTreeMap<usize, f64>| if m.is_empty() { 0.0 } else { m.values().sum::<f64>() / m.len() as f64 };
    out.map50 = mean(&out.per_class_ap50);
    out.map5095 = mean(&out.per_class_ap5095);
    Ok(out)
}

/// Mean squared error over all pixels and channels, in `f64`.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return shape_err("images differ in size");
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    Ok(s / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` for unit peak; identical images give [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

/// Squared distance of channel means from mid-gray, averaged over channels.
pub fn gray_world_deviation(img: &Image) -> f64 {
    crate::losses::gray_world_value(img)
}
