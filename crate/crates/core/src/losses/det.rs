use serde::Serialize;

use super::ciou::{ciou_graph, BoxVars};
use crate::boxes::{BBox, GtBox};
use crate::error::{shape_err, Result};
use crate::model::NetworkConfig;
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Anchor-to-box size ratios at or above this never become positives.
pub const ANCHOR_RATIO_GATE: f32 = 4.0;

/// One positive: anchor `anchor` of cell `(y, x)` in image `image` must
/// predict `target`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Assignment {
    pub image: usize,
    pub y: usize,
    pub x: usize,
    pub anchor: usize,
    pub target: BBox,
    pub class_id: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AssignedTargets {
    /// One list per detection stride, in canonical order.
    pub per_scale: Vec<Vec<Assignment>>,
    /// Ground-truth boxes that matched no anchor at any stride.
    pub unmatched: usize,
}

impl AssignedTargets {
    pub fn positives(&self) -> usize {
        self.per_scale.iter().map(Vec::len).sum()
    }
}

fn anchor_ratio(b: &BBox, anchor: [f32; 2]) -> f32 {
    let (rw, rh) = (b.width() / anchor[0], b.height() / anchor[1]);
    rw.max(1.0 / rw).max(rh).max(1.0 / rh)
}

fn canonical_key(a: &Assignment) -> (usize, usize, usize, usize, [u32; 4], usize) {
    (a.image, a.y, a.x, a.anchor, a.target.to_array().map(f32::to_bits), a.class_id)
}

/// Centre-cell assignment: at every stride, each anchor whose shape is
/// within the ratio gate of the box becomes a positive at the cell holding
/// the box centre.
pub fn assign_targets(gts: &[Vec<GtBox>], cfg: &NetworkConfig) -> AssignedTargets {
    let mut out = AssignedTargets { per_scale: vec![Vec::new(); cfg.det_strides.len()], unmatched: 0 };
    for (image, boxes) in gts.iter().enumerate() {
        for gt in boxes {
            let (cx, cy) = gt.bbox.center();
            let mut matched = false;
            for (si, (&stride, anchors)) in cfg.det_strides.iter().zip(&cfg.anchors).enumerate() {
                let side = cfg.grid_size(stride);
                let cell = |v: f32| ((v / stride as f32).floor().max(0.0) as usize).min(side - 1);
                for (anchor, &shape) in anchors.iter().enumerate() {
                    if anchor_ratio(&gt.bbox, shape) < ANCHOR_RATIO_GATE {
                        matched = true;
                        out.per_scale[si].push(Assignment {
                            image,
                            y: cell(cy),
                            x: cell(cx),
                            anchor,
                            target: gt.bbox,
                            class_id: gt.class_id,
                        });
                    }
                }
            }
            if !matched {
                out.unmatched += 1;
            }
        }
    }
    for scale in &mut out.per_scale {
        scale.sort_by(|a, b| canonical_key(a).cmp(&canonical_key(b)));
    }
    out
}

/// Detection loss terms on the graph, each a one-element tensor.
#[derive(Debug, Clone)]
pub struct DetLoss {
    pub cls: Var,
    pub bbox: Var,
    pub obj: Var,
    pub total: Var,
    pub targets: AssignedTargets,
}

fn constant<T: Scalar>(g: &mut Graph<T>, data: Vec<f64>) -> Result<Var> {
    let n = data.len();
    Ok(g.constant(Tensor::new(vec![n], data.into_iter().map(T::of_f64).collect())?))
}

fn zero<T: Scalar>(g: &mut Graph<T>) -> Var {
    g.constant(Tensor::scalar(T::zero()))
}

/// Sum of `terms`, each scaled by its weight; zero when empty.
fn weighted_sum<T: Scalar>(g: &mut Graph<T>, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let s = g.mul_scalar(v, w);
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    Ok(acc.unwrap_or_else(|| zero(g)))
}

/// Classification BCE and `1 - CIoU` at the positives, objectness BCE over
/// every cell with the (detached, clamped) CIoU as target at positives.
///
/// `grids[i]` is the raw `[N, A*(5+K), S, S]` output for `cfg.det_strides[i]`.
pub fn det_loss<T: Scalar>(g: &mut Graph<T>, grids: &[Var], gts: &[Vec<GtBox>], cfg: &NetworkConfig) -> Result<DetLoss> {
    if grids.len() != cfg.det_strides.len() {
        return shape_err(format!("{} grids for {} strides", grids.len(), cfg.det_strides.len()));
    }
    let a_count = cfg.anchors_per_cell();
    let per = 5 + cfg.class_count;
    let batch = gts.len();
    for (&grid, &stride) in grids.iter().zip(&cfg.det_strides) {
        let s = cfg.grid_size(stride);
        let want = [batch, a_count * per, s, s];
        if g.value(grid).shape() != want {
            return shape_err(format!("grid at stride {stride}: expected {want:?}, got {:?}", g.value(grid).shape()));
        }
    }
    let targets = assign_targets(gts, cfg);
    let total_pos = targets.positives();
    let total_cells: usize = cfg.det_strides.iter().map(|&s| batch * a_count * cfg.grid_size(s).pow(2)).sum();

    let mut cls_terms = Vec::new();
    let mut box_terms = Vec::new();
    let mut obj_terms = Vec::new();
    for (si, (&grid, &stride)) in grids.iter().zip(&cfg.det_strides).enumerate() {
        let side = cfg.grid_size(stride);
        let flat = |n: usize, a: usize, j: usize, y: usize, x: usize| ((n * a_count * per + a * per + j) * side + y) * side + x;
        let pos = &targets.per_scale[si];
        let mut obj_target = vec![0.0f64; batch * a_count * side * side];
        let obj_slot = |p: &Assignment| ((p.image * a_count + p.anchor) * side + p.y) * side + p.x;

        if !pos.is_empty() {
            let anchors = &cfg.anchors[si];
            let pick = |g: &mut Graph<T>, j: usize| g.gather(grid, pos.iter().map(|p| flat(p.image, p.anchor, j, p.y, p.x)).collect());
            let tx = pick(g, 0)?;
            let ty = pick(g, 1)?;
            let tw = pick(g, 2)?;
            let th = pick(g, 3)?;
            let stride_f = stride as f64;
            let centre = |g: &mut Graph<T>, t: Var, cells: Vec<f64>| -> Result<Var> {
                let s = g.sigmoid(t);
                let s = g.mul_scalar(s, 2.0 * stride_f);
                let off = constant(g, cells.into_iter().map(|c| (c - 0.5) * stride_f).collect())?;
                g.add(s, off)
            };
            let size = |g: &mut Graph<T>, t: Var, dims: Vec<f64>| -> Result<Var> {
                let s = g.sigmoid(t);
                let s = g.square(s);
                let k = constant(g, dims.into_iter().map(|d| 4.0 * d).collect())?;
                g.mul(s, k)
            };
            let cx = centre(g, tx, pos.iter().map(|p| p.x as f64).collect())?;
            let cy = centre(g, ty, pos.iter().map(|p| p.y as f64).collect())?;
            let w = size(g, tw, pos.iter().map(|p| anchors[p.anchor][0] as f64).collect())?;
            let h = size(g, th, pos.iter().map(|p| anchors[p.anchor][1] as f64).collect())?;
            let boxes: Vec<BBox> = pos.iter().map(|p| p.target).collect();
            let c = ciou_graph(g, &BoxVars { cx, cy, w, h }, &boxes)?;
            for (p, &v) in pos.iter().zip(g.value(c).data()) {
                let slot = &mut obj_target[obj_slot(p)];
                *slot = slot.max(v.as_f64().max(0.0));
            }
            let one_minus = g.affine(c, -1.0, 1.0);
            let s = g.sum(one_minus);
            box_terms.push((s, 1.0 / total_pos as f64));

            let mut idx = Vec::with_capacity(pos.len() * cfg.class_count);
            let mut onehot = Vec::with_capacity(idx.capacity());
            for p in pos {
                for k in 0..cfg.class_count {
                    idx.push(flat(p.image, p.anchor, 5 + k, p.y, p.x));
                    onehot.push(if k == p.class_id { T::one() } else { T::zero() });
                }
            }
            let logits = g.gather(grid, idx)?;
            let bce = g.bce_with_logits(logits, onehot)?;
            cls_terms.push((bce, pos.len() as f64 / total_pos as f64));
        }

        let mut idx = Vec::with_capacity(obj_target.len());
        for n in 0..batch {
            for a in 0..a_count {
                for y in 0..side {
                    for x in 0..side {
                        idx.push(flat(n, a, 4, y, x));
                    }
                }
            }
        }
        let cells = idx.len();
        let logits = g.gather(grid, idx)?;
        let bce = g.bce_with_logits(logits, obj_target.into_iter().map(T::of_f64).collect())?;
        obj_terms.push((bce, cells as f64 / total_cells as f64));
    }
    let cls = weighted_sum(g, &cls_terms)?;
    let bbox = weighted_sum(g, &box_terms)?;
    let obj = weighted_sum(g, &obj_terms)?;
    let total = g.add(cls, bbox)?;
    let total = g.add(total, obj)?;
    Ok(DetLoss { cls, bbox, obj, total, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ciou::ciou;
    use rand::{Rng, SeedableRng};

    fn gt(x1: f32, y1: f32, x2: f32, y2: f32, class_id: usize) -> GtBox {
        GtBox { bbox: BBox::new(x1, y1, x2, y2), class_id }
    }

    /// Input 16 gives a 2x2 grid at stride 8 and 1x1 at stride 16.
    fn tiny() -> NetworkConfig {
        NetworkConfig {
            input_size: 16,
            anchors: vec![vec![[6.0, 6.0]], vec![[40.0, 40.0]]],
            class_count: 2,
            ..Default::default()
        }
    }

    fn bce(z: f64, t: f64) -> f64 {
        let p = 1.0 / (1.0 + (-z).exp());
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    }

    fn sig(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn exact_anchor_match_is_assigned_at_its_cell() {
        let cfg = NetworkConfig::default();
        let b = BBox::from_center(8.0 * 5.5, 8.0 * 3.5, 10.0, 10.0);
        let t = assign_targets(&[vec![GtBox { bbox: b, class_id: 1 }]], &cfg);
        assert!(t.per_scale[0].iter().any(|p| p.anchor == 0 && p.x == 5 && p.y == 3));
        assert_eq!(t.unmatched, 0);
    }

    #[test]
    fn oversized_box_is_unmatched() {
        let mut cfg = NetworkConfig::default();
        cfg.anchors = vec![vec![[4.0, 4.0], [6.0, 5.0], [5.0, 7.0]], vec![[8.0, 8.0], [9.0, 7.0], [7.0, 9.0]]];
        let t = assign_targets(&[vec![gt(0.0, 0.0, 95.0, 95.0, 0)]], &cfg);
        assert_eq!(t.positives(), 0);
        assert_eq!(t.unmatched, 1);
    }

    #[test]
    fn assignment_matches_brute_force_enumeration() {
        let cfg = NetworkConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let boxes: Vec<GtBox> = (0..5)
                .map(|_| {
                    let (w, h) = (rng.random_range(3.0..70.0f32), rng.random_range(3.0..70.0f32));
                    let x = rng.random_range(0.0..96.0 - w);
                    let y = rng.random_range(0.0..96.0 - h);
                    gt(x, y, x + w, y + h, rng.random_range(0..4))
                })
                .collect();
            let got = assign_targets(&[boxes.clone()], &cfg);
            let mut unmatched = 0;
            for (si, &stride) in cfg.det_strides.iter().enumerate() {
                let side = cfg.grid_size(stride);
                let mut want = Vec::new();
                for b in &boxes {
                    let (cx, cy) = b.bbox.center();
                    for y in 0..side {
                        for x in 0..side {
                            for (a, an) in cfg.anchors[si].iter().enumerate() {
                                let in_cell = cx >= (x * stride) as f32
                                    && (cx < ((x + 1) * stride) as f32 || x == side - 1)
                                    && cy >= (y * stride) as f32
                                    && (cy < ((y + 1) * stride) as f32 || y == side - 1);
                                let r = [b.bbox.width() / an[0], an[0] / b.bbox.width(), b.bbox.height() / an[1], an[1] / b.bbox.height()];
                                if in_cell && r.iter().all(|&v| v < 4.0) {
                                    want.push((0, y, x, a, b.bbox.to_array().map(f32::to_bits), b.class_id));
                                }
                            }
                        }
                    }
                }
                want.sort();
                let have: Vec<_> = got.per_scale[si].iter().map(canonical_key).collect();
                assert_eq!(have, want);
            }
            for b in &boxes {
                let any = cfg.anchors.iter().flatten().any(|an| {
                    [b.bbox.width() / an[0], an[0] / b.bbox.width(), b.bbox.height() / an[1], an[1] / b.bbox.height()]
                        .iter()
                        .all(|&v| v < 4.0)
                });
                unmatched += usize::from(!any);
            }
            assert_eq!(got.unmatched, unmatched);
        }
    }

    fn run(grids: &[Tensor<f64>], gts: &[Vec<GtBox>], cfg: &NetworkConfig) -> (f64, f64, f64, f64) {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = grids.iter().map(|t| g.param(t.clone())).collect();
        let l = det_loss(&mut g, &vars, gts, cfg).unwrap();
        let v = |x: Var| g.value(x).item();
        (v(l.cls), v(l.bbox), v(l.obj), v(l.total))
    }

    fn grids_for(cfg: &NetworkConfig, batch: usize, mut f: impl FnMut(usize) -> f64) -> Vec<Tensor<f64>> {
        cfg.det_strides
            .iter()
            .map(|&s| {
                let side = cfg.grid_size(s);
                Tensor::from_fn(&[batch, cfg.pred_channels(), side, side], &mut f)
            })
            .collect()
    }

    #[test]
    fn empty_scene_is_objectness_only() {
        let cfg = tiny();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let grids = grids_for(&cfg, 1, |_| rng.random_range(-2.0..2.0));
        let (cls, bbox, obj, total) = run(&grids, &[vec![]], &cfg);
        assert_eq!((cls, bbox), (0.0, 0.0));
        let per = 5 + cfg.class_count;
        let logits: Vec<f64> = grids.iter().flat_map(|t| t.data().chunks(t.shape()[2] * t.shape()[3]).skip(4).step_by(per).flatten().copied().collect::<Vec<_>>()).collect();
        assert_eq!(logits.len(), 5);
        let want = logits.iter().map(|&z| bce(z, 0.0)).sum::<f64>() / 5.0;
        assert!((obj - want).abs() < 1e-12);
        assert_eq!(total, obj);
    }

    #[test]
    fn saturated_perfect_prediction_has_near_zero_loss() {
        let cfg = tiny();
        let target = gt(1.0, 9.0, 7.0, 15.0, 1);
        // cell (1, 0) at stride 8; tx = ty = tw = th = 0 decodes to the anchor at the cell centre
        let grids: Vec<Tensor<f64>> = grids_for(&cfg, 1, |_| 0.0)
            .into_iter()
            .enumerate()
            .map(|(si, mut t)| {
                let side = t.shape()[2];
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    let (c, y, x) = (i / (side * side), (i / side) % side, i % side);
                    let hit = si == 0 && y == 1 && x == 0;
                    *v = match c {
                        4 => if hit { 10.0 } else { -10.0 },
                        5 => -10.0,
                        6 => 10.0,
                        _ => 0.0,
                    };
                }
                t
            })
            .collect();
        let (_, bbox, _, total) = run(&grids, &[vec![target]], &cfg);
        assert!(bbox.abs() < 1e-6, "{bbox}");
        assert!(total < 1e-3, "{total}");
    }

    #[test]
    fn tiny_grid_matches_hand_rolled_oracle() {
        let cfg = tiny();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let grids = grids_for(&cfg, 1, |_| rng.random_range(-1.5..1.5));
        let target = gt(9.0, 1.0, 15.0, 8.0, 0);
        let (cls, bbox, obj, total) = run(&grids, &[vec![target]], &cfg);

        // positive: stride 8, cell (y 0, x 1), the only anchor
        let g0 = grids[0].data();
        let at = |c: usize| g0[c * 4 + 1];
        let cx = (1.0 + 2.0 * sig(at(0)) - 0.5) * 8.0;
        let cy = (0.0 + 2.0 * sig(at(1)) - 0.5) * 8.0;
        let w = 6.0 * (2.0 * sig(at(2))).powi(2);
        let h = 6.0 * (2.0 * sig(at(3))).powi(2);
        let pred = BBox::from_center(cx as f32, cy as f32, w as f32, h as f32);
        let c = ciou(&pred, &target.bbox).unwrap();
        let want_box = 1.0 - c;
        let want_cls = (bce(at(5), 1.0) + bce(at(6), 0.0)) / 2.0;
        let mut obj_sum = 0.0;
        for cell in 0..4 {
            obj_sum += bce(g0[16 + cell], if cell == 1 { c.max(0.0) } else { 0.0 });
        }
        obj_sum += bce(grids[1].data()[4], 0.0);
        let want_obj = obj_sum / 5.0;
        assert!((bbox - want_box).abs() < 1e-5, "{bbox} {want_box}");
        assert!((cls - want_cls).abs() < 1e-12);
        assert!((obj - want_obj).abs() < 1e-6);
        assert!((total - (want_box + want_cls + want_obj)).abs() < 1e-5);
    }

    #[test]
    fn shuffling_ground_truth_changes_nothing() {
        let cfg = NetworkConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let grids = grids_for(&cfg, 2, |_| rng.random_range(-2.0..2.0));
        let boxes: Vec<GtBox> = (0..6)
            .map(|i| {
                let (x, y) = (rng.random_range(0.0..60.0f32), rng.random_range(0.0..60.0f32));
                // two boxes share a centre cell and anchor to exercise collisions
                let x = if i == 5 { 0.0 } else { x };
                let y = if i == 5 { 0.0 } else { y };
                gt(x, y, x + 12.0 + i as f32, y + 14.0, i % 4)
            })
            .chain([gt(0.5, 0.5, 13.0, 14.5, 2)])
            .collect();
        let a = run(&grids, &[boxes.clone(), boxes[..3].to_vec()], &cfg);
        let mut rev = boxes.clone();
        rev.reverse();
        rev.rotate_left(2);
        let b = run(&grids, &[rev, boxes[..3].iter().rev().copied().collect()], &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_check_on_random_scene() {
        let cfg = tiny();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let grids = grids_for(&cfg, 2, |_| rng.random_range(-1.0..1.0));
        let gts = vec![vec![gt(1.0, 2.0, 7.0, 9.0, 1), gt(8.0, 8.0, 15.0, 14.0, 0)], vec![gt(4.0, 4.0, 9.0, 10.0, 1)]];
        let report = crate::tensor::grad_check(
            |g, v| {
                let l = det_loss(g, v, &gts, &cfg)?;
                g.add(l.cls, l.bbox)
            },
            &grids,
            1e-5,
            None,
        )
        .unwrap();
        assert!(report.passes(1e-5), "{report:?}");

        // objectness targets are detached, so only the objectness logits are
        // probed against finite differences of the full loss
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = grids.iter().map(|t| g.param(t.clone())).collect();
        let l = det_loss(&mut g, &vars, &gts, &cfg).unwrap();
        let grads = g.backward(l.total).unwrap();
        let per = 5 + cfg.class_count;
        for (si, t) in grids.iter().enumerate() {
            let plane = t.shape()[2] * t.shape()[3];
            let analytic = grads.get_or_zeros(vars[si]);
            for i in (0..t.numel()).filter(|i| (i / plane) % per == 4) {
                let probe = |d: f64| {
                    let mut moved = grids.clone();
                    moved[si].data_mut()[i] += d;
                    run(&moved, &gts, &cfg).3
                };
                let fd = (probe(1e-5) - probe(-1e-5)) / 2e-5;
                let a = analytic.data()[i];
                assert!((fd - a).abs() <= 1e-5 * fd.abs().max(1e-6) + 1e-9, "{fd} vs {a}");
            }
        }
    }

    #[test]
    fn wrong_grid_shape_is_rejected() {
        let cfg = tiny();
        let mut g = Graph::<f32>::new();
        let a = g.param(Tensor::zeros(&[1, 14, 2, 2]));
        let b = g.param(Tensor::zeros(&[1, 14, 2, 2]));
        assert!(det_loss(&mut g, &[a, b], &[vec![]], &cfg).is_err());
    }
}
