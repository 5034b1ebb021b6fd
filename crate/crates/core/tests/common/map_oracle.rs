use enjoint::boxes::{BBox, GtBox};
use enjoint::model::Detection;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn overlap(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0) as f64;
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0) as f64;
    let inter = iw * ih;
    let area = |r: &BBox| (r.x2 - r.x1) as f64 * (r.y2 - r.y1) as f64;
    inter / (area(a) + area(b) - inter)
}

/// Straightforward reference: rank every detection, greedily claim the best
/// unclaimed same-class box, then integrate the monotone precision envelope
/// recall step by recall step.
pub fn oracle_ap(dets: &[Vec<Detection>], gts: &[Vec<GtBox>], class_id: usize, thr: f64) -> f64 {
    let total = gts.iter().flatten().filter(|g| g.class_id == class_id).count();
    if total == 0 {
        return 0.0;
    }
    let mut ranked = Vec::new();
    for (i, ds) in dets.iter().enumerate() {
        for (j, d) in ds.iter().enumerate() {
            if d.class_id == class_id {
                ranked.push((d.confidence, i, j));
            }
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut claimed = vec![Vec::new(); gts.len()];
    let mut hits = Vec::new();
    for &(_, i, j) in &ranked {
        let d = &dets[i][j];
        let mut best = None;
        let mut best_iou = thr;
        for (k, g) in gts[i].iter().enumerate() {
            if g.class_id != class_id || claimed[i].contains(&k) {
                continue;
            }
            let o = overlap(&d.bbox, &g.bbox);
            if o >= best_iou && (best.is_none() || o > best_iou) {
                best = Some(k);
                best_iou = o;
            }
        }
        if let Some(k) = best {
            claimed[i].push(k);
        }
        hits.push(best.is_some());
    }
    let n = hits.len();
    let prec: Vec<f64> = (0..n).map(|i| hits[..=i].iter().filter(|h| **h).count() as f64 / (i + 1) as f64).collect();
    let mut ap = 0.0;
    for i in 0..n {
        if hits[i] {
            let envelope = prec[i..].iter().cloned().fold(0.0, f64::max);
            ap += envelope / total as f64;
        }
    }
    ap
}

fn random_box(r: &mut ChaCha8Rng) -> BBox {
    let x = r.random_range(0.0..80.0f32);
    let y = r.random_range(0.0..80.0f32);
    BBox::new(x, y, x + r.random_range(4.0..30.0f32), y + r.random_range(4.0..30.0f32))
}

pub fn random_instance(r: &mut ChaCha8Rng, classes: usize) -> (Vec<Vec<Detection>>, Vec<Vec<GtBox>>) {
    let images = r.random_range(1..5);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let g: Vec<GtBox> =
            (0..r.random_range(0..=10)).map(|_| GtBox { bbox: random_box(r), class_id: r.random_range(0..classes) }).collect();
        let mut d = Vec::new();
        for gt in &g {
            if r.random_bool(0.7) {
                let j = |r: &mut ChaCha8Rng| r.random_range(-4.0..4.0f32);
                let b = BBox::new(gt.bbox.x1 + j(r), gt.bbox.y1 + j(r), gt.bbox.x2 + j(r), gt.bbox.y2 + j(r));
                if b.is_valid() {
                    let class_id = if r.random_bool(0.9) { gt.class_id } else { r.random_range(0..classes) };
                    d.push(Detection { bbox: b, class_id, confidence: r.random_range(0.01..1.0) });
                }
            }
        }
        for _ in 0..r.random_range(0..4) {
            d.push(Detection { bbox: random_box(r), class_id: r.random_range(0..classes), confidence: r.random_range(0.01..1.0) });
        }
        dets.push(d);
        gts.push(g);
    }
    (dets, gts)
}

/// Reference mAP at 0.5 and 0.5:0.95 over classes that have detections or
/// ground truth.
pub fn oracle_map(dets: &[Vec<Detection>], gts: &[Vec<GtBox>], classes: usize) -> (f64, f64) {
    let mut sum50 = 0.0;
    let mut sum5095 = 0.0;
    let mut present = 0;
    for c in 0..classes {
        let has = dets.iter().flatten().any(|d| d.class_id == c) || gts.iter().flatten().any(|g| g.class_id == c);
        if !has {
            continue;
        }
        present += 1;
        sum50 += oracle_ap(dets, gts, c, 0.5);
        sum5095 += (0..10).map(|k| oracle_ap(dets, gts, c, 0.5 + 0.05 * k as f64)).sum::<f64>() / 10.0;
    }
    if present == 0 {
        (0.0, 0.0)
    } else {
        (sum50 / present as f64, sum5095 / present as f64)
    }
}
