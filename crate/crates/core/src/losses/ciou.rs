use crate::boxes::BBox;
use crate::error::{invalid, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub(crate) const CIOU_EPS: f64 = 1e-7;

/// Predicted boxes on a graph, as centre/size vectors of equal length.
#[derive(Debug, Clone, Copy)]
pub struct BoxVars {
    pub cx: Var,
    pub cy: Var,
    pub w: Var,
    pub h: Var,
}

fn column<T: Scalar>(g: &mut Graph<T>, v: impl Iterator<Item = f64>) -> Result<Var> {
    let data: Vec<T> = v.map(T::of_f64).collect();
    Ok(g.constant(Tensor::new(vec![data.len()], data)?))
}

/// Complete-IoU between predicted boxes and fixed targets, elementwise.
///
/// `iou - rho^2 / c^2 - alpha * v`, where `rho` is the centre distance, `c`
/// the diagonal of the smallest enclosing box and `v` the aspect-ratio
/// discrepancy. `alpha` is differentiated through like every other term.
pub fn ciou_graph<T: Scalar>(g: &mut Graph<T>, pred: &BoxVars, targets: &[BBox]) -> Result<Var> {
    let f = |b: &BBox, k: usize| [b.x1, b.y1, b.x2, b.y2][k] as f64;
    let tx1 = column(g, targets.iter().map(|b| f(b, 0)))?;
    let ty1 = column(g, targets.iter().map(|b| f(b, 1)))?;
    let tx2 = column(g, targets.iter().map(|b| f(b, 2)))?;
    let ty2 = column(g, targets.iter().map(|b| f(b, 3)))?;
    let tcx = column(g, targets.iter().map(|b| (f(b, 0) + f(b, 2)) / 2.0))?;
    let tcy = column(g, targets.iter().map(|b| (f(b, 1) + f(b, 3)) / 2.0))?;
    let tarea = column(g, targets.iter().map(|b| (f(b, 2) - f(b, 0)) * (f(b, 3) - f(b, 1))))?;
    let tatan = column(g, targets.iter().map(|b| ((f(b, 2) - f(b, 0)) / (f(b, 3) - f(b, 1))).atan()))?;

    let hw = g.mul_scalar(pred.w, 0.5);
    let hh = g.mul_scalar(pred.h, 0.5);
    let px1 = g.sub(pred.cx, hw)?;
    let px2 = g.add(pred.cx, hw)?;
    let py1 = g.sub(pred.cy, hh)?;
    let py2 = g.add(pred.cy, hh)?;

    let ix2 = g.minimum(px2, tx2)?;
    let ix1 = g.maximum(px1, tx1)?;
    let iy2 = g.minimum(py2, ty2)?;
    let iy1 = g.maximum(py1, ty1)?;
    let iw = g.sub(ix2, ix1)?;
    let iw = g.relu(iw);
    let ih = g.sub(iy2, iy1)?;
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih)?;
    let parea = g.mul(pred.w, pred.h)?;
    let union = g.add(parea, tarea)?;
    let union = g.sub(union, inter)?;
    let union = g.add_scalar(union, CIOU_EPS);
    let iou = g.div(inter, union)?;

    let ex2 = g.maximum(px2, tx2)?;
    let ex1 = g.minimum(px1, tx1)?;
    let ey2 = g.maximum(py2, ty2)?;
    let ey1 = g.minimum(py1, ty1)?;
    let cw = g.sub(ex2, ex1)?;
    let ch = g.sub(ey2, ey1)?;
    let cw2 = g.square(cw);
    let ch2 = g.square(ch);
    let c2 = g.add(cw2, ch2)?;
    let c2 = g.add_scalar(c2, CIOU_EPS);
    let dx = g.sub(pred.cx, tcx)?;
    let dy = g.sub(pred.cy, tcy)?;
    let dx2 = g.square(dx);
    let dy2 = g.square(dy);
    let rho2 = g.add(dx2, dy2)?;
    let dist = g.div(rho2, c2)?;

    let ratio = g.div(pred.w, pred.h)?;
    let patan = g.atan(ratio);
    let dv = g.sub(tatan, patan)?;
    let v = g.square(dv);
    let v = g.mul_scalar(v, 4.0 / (std::f64::consts::PI * std::f64::consts::PI));
    let denom = g.sub(v, iou)?;
    let denom = g.add_scalar(denom, 1.0 + CIOU_EPS);
    let alpha = g.div(v, denom)?;
    let av = g.mul(alpha, v)?;

    let out = g.sub(iou, dist)?;
    g.sub(out, av)
}

/// CIoU of two boxes. Degenerate boxes are rejected.
pub fn ciou(a: &BBox, b: &BBox) -> Result<f64> {
    if !a.is_valid() || !b.is_valid() {
        return invalid(format!("ciou needs positive-area boxes, got {a:?} and {b:?}"));
    }
    let mut g = Graph::<f64>::new();
    let (cx, cy) = a.center();
    let one = |g: &mut Graph<f64>, v: f32| g.constant(Tensor::scalar(v as f64).reshape(&[1]).expect("one element"));
    let pred = BoxVars { cx: one(&mut g, cx), cy: one(&mut g, cy), w: one(&mut g, a.width()), h: one(&mut g, a.height()) };
    let out = ciou_graph(&mut g, &pred, &[*b])?;
    Ok(g.value(out).data()[0])
}
