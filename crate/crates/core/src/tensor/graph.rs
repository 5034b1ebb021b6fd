use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Upsample { x: Var, factor: usize, planes: usize, h: usize, w: usize },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    Abs { x: Var },
    Square { x: Var },
    Sqrt { x: Var },
    Atan { x: Var },
    Affine { x: Var, scale: T },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Min { a: Var, b: Var },
    Max { a: Var, b: Var },
    Sum { x: Var },
    Mean { x: Var },
    SpatialMean { x: Var, hw: usize },
    Concat { parts: Vec<Var>, batch: usize, hw: usize },
    SliceChannels { x: Var, start: usize, len: usize, batch: usize, channels: usize, hw: usize },
    Gather { x: Var, index: Vec<usize> },
    BceWithLogits { x: Var, targets: Vec<T> },
    Covariance { x: Var, n: usize, d: usize },
    Reshape { x: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Nodes live in an arena in creation order, which is a valid topological
/// order, so the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar w.r.t. every node that required one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient buffer of `v`, if any gradient reached it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => Tensor::new(self.shapes[v.0].clone(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn nchw(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => shape_err(format!("expected [N,C,H,W], got {shape:?}")),
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `log(1 + exp(v))`.
fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x), self.value(w), self.value(b));
        let geom = ConvGeom::new(xs.shape(), ws.shape(), bs.shape(), stride, padding)?;
        let out = kernels::conv2d_forward(xs.data(), ws.data(), bs.data(), &geom);
        let value = Tensor::new(geom.out_shape(xs.shape().len() == 4), out)?;
        Ok(self.push(value, Op::Conv { x, w, b, geom }, &[x, w, b]))
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let value = kernels::bilinear_upsample(self.value(x), factor)?;
        let shape = self.value(x).shape();
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes = self.value(x).numel() / (h * w);
        Ok(self.push(value, Op::Upsample { x, factor, planes, h, w }, &[x]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("unary preserves shape");
        self.push(value, op, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of_f64(slope);
        self.unary(x, |v| if v > T::zero() { v } else { v * s }, Op::LeakyRelu { x, slope: s })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square { x })
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt { x })
    }

    pub fn atan(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.atan(), Op::Atan { x })
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::of_f64(scale), T::of_f64(shift));
        self.unary(x, |v| v * s + t, Op::Affine { x, scale: s })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, 1.0, c)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, what)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div { a, b })
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", |x, y| if x <= y { x } else { y }, Op::Min { a, b })
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "maximum", |x, y| if x >= y { x } else { y }, Op::Max { a, b })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = T::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut s = T::zero();
        for &v in src.data() {
            s += v;
        }
        let m = s / T::of_f64(src.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean { x }, &[x])
    }

    /// `[N,C,H,W] -> [N,C]` average over spatial positions.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let (n, c, hw) = nchw(self.value(x).shape())?;
        let inv = T::one() / T::of_f64(hw as f64);
        let data = self
            .value(x)
            .data()
            .chunks_exact(hw)
            .map(|plane| {
                let mut s = T::zero();
                for &v in plane {
                    s += v;
                }
                s * inv
            })
            .collect();
        let value = Tensor::new(vec![n, c], data)?;
        Ok(self.push(value, Op::SpatialMean { x, hw }, &[x]))
    }

    /// Concatenate `[N,Ci,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of zero tensors");
        };
        let fs = self.value(first).shape().to_vec();
        let (batch, _, hw) = nchw(&fs)?;
        let mut total_c = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 4 || s[0] != fs[0] || s[2] != fs[2] || s[3] != fs[3] {
                return shape_err(format!("concat: incompatible shapes {fs:?} and {s:?}"));
            }
            total_c += s[1];
        }
        let mut data = Vec::with_capacity(batch * total_c * hw);
        for n in 0..batch {
            for &p in parts {
                let v = self.value(p);
                let len = v.shape()[1] * hw;
                data.extend_from_slice(&v.data()[n * len..(n + 1) * len]);
            }
        }
        let value = Tensor::new(vec![batch, total_c, fs[2], fs[3]], data)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), batch, hw }, parts))
    }

    /// Channels `start..start+len` of an `[N,C,H,W]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (batch, channels, hw) = nchw(&shape)?;
        if len == 0 || start + len > channels {
            return shape_err(format!("channel slice {start}..{} out of range for {channels}", start + len));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(batch * len * hw);
        for n in 0..batch {
            let base = (n * channels + start) * hw;
            data.extend_from_slice(&src[base..base + len * hw]);
        }
        let value = Tensor::new(vec![batch, len, shape[2], shape[3]], data)?;
        Ok(self.push(value, Op::SliceChannels { x, start, len, batch, channels, hw }, &[x]))
    }

    /// Flat gather of elements at `index`, producing a `[index.len()]` vector.
    pub fn gather(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let src = self.value(x);
        if index.is_empty() {
            return shape_err("gather with empty index");
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.numel()) {
            return shape_err(format!("gather index {bad} out of range {}", src.numel()));
        }
        let data = index.iter().map(|&i| src.data()[i]).collect();
        let value = Tensor::new(vec![index.len()], data)?;
        Ok(self.push(value, Op::Gather { x, index }, &[x]))
    }

    /// Mean binary cross-entropy between `sigmoid(x)` and constant targets.
    pub fn bce_with_logits(&mut self, x: Var, targets: Vec<T>) -> Result<Var> {
        let src = self.value(x);
        if targets.len() != src.numel() {
            return shape_err(format!("bce: {} targets for {} logits", targets.len(), src.numel()));
        }
        let mut s = T::zero();
        for (&z, &t) in src.data().iter().zip(&targets) {
            s += softplus(z) - t * z;
        }
        let value = Tensor::scalar(s / T::of_f64(targets.len() as f64));
        Ok(self.push(value, Op::BceWithLogits { x, targets }, &[x]))
    }

    pub fn covariance(&mut self, x: Var) -> Result<Var> {
        let value = kernels::covariance(self.value(x))?;
        let [n, d] = *self.value(x).shape() else { unreachable!() };
        Ok(self.push(value, Op::Covariance { x, n, d }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return shape_err(format!("backward needs a scalar, got {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn elementwise(&self, x: Var, gy: &[T], f: impl Fn(T, T, T) -> T, out: &Tensor<T>) -> Vec<T> {
        self.value(x)
            .data()
            .iter()
            .zip(out.data())
            .zip(gy)
            .map(|((&xv, &yv), &g)| f(xv, yv, g))
            .collect()
    }

    fn propagate(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let out = &node.value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy,
                    geom,
                    rg(*x),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::Upsample { x, factor, planes, h, w } => {
                let dx = kernels::upsample_backward(gy, *planes, *h, *w, *factor);
                self.accumulate(grads, *x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                let dx = self.elementwise(*x, gy, |xv, _, g| if xv > T::zero() { g } else { g * s }, out);
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let dx = self.elementwise(*x, gy, |_, y, g| g * y * (T::one() - y), out);
                self.accumulate(grads, *x, dx);
            }
            Op::Abs { x } => {
                let dx = self.elementwise(
                    *x,
                    gy,
                    |xv, _, g| {
                        if xv > T::zero() {
                            g
                        } else if xv < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    },
                    out,
                );
                self.accumulate(grads, *x, dx);
            }
            Op::Square { x } => {
                let two = T::of_f64(2.0);
                let dx = self.elementwise(*x, gy, |xv, _, g| g * two * xv, out);
                self.accumulate(grads, *x, dx);
            }
            Op::Sqrt { x } => {
                let half = T::of_f64(0.5);
                let dx = self.elementwise(*x, gy, |_, y, g| g * half / y, out);
                self.accumulate(grads, *x, dx);
            }
            Op::Atan { x } => {
                let dx = self.elementwise(*x, gy, |xv, _, g| g / (T::one() + xv * xv), out);
                self.accumulate(grads, *x, dx);
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(grads, *x, gy.iter().map(|&g| g * s).collect());
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, gy.to_vec());
                self.accumulate(grads, *b, gy.to_vec());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, gy.to_vec());
                self.accumulate(grads, *b, gy.iter().map(|&g| -g).collect());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if rg(*a) {
                    self.accumulate(grads, *a, gy.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                }
                if rg(*b) {
                    self.accumulate(grads, *b, gy.iter().zip(va).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Div { a, b } => {
                let vb = self.value(*b).data();
                if rg(*a) {
                    self.accumulate(grads, *a, gy.iter().zip(vb).map(|(&g, &y)| g / y).collect());
                }
                if rg(*b) {
                    let d = gy.iter().zip(out.data()).zip(vb).map(|((&g, &q), &y)| -g * q / y).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Min { a, b } | Op::Max { a, b } => {
                let is_min = matches!(node.op, Op::Min { .. });
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let pick_a: Vec<bool> =
                    va.iter().zip(vb).map(|(&x, &y)| if is_min { x <= y } else { x >= y }).collect();
                let ga = gy.iter().zip(&pick_a).map(|(&g, &p)| if p { g } else { T::zero() }).collect();
                let gb = gy.iter().zip(&pick_a).map(|(&g, &p)| if p { T::zero() } else { g }).collect();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![gy[0]; n]);
            }
            Op::Mean { x } => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![gy[0] / T::of_f64(n as f64); n]);
            }
            Op::SpatialMean { x, hw } => {
                let inv = T::one() / T::of_f64(*hw as f64);
                let mut dx = Vec::with_capacity(gy.len() * hw);
                for &g in gy {
                    dx.extend(std::iter::repeat_n(g * inv, *hw));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { parts, batch, hw } => {
                let total_c = out.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    if rg(p) {
                        let mut dp = Vec::with_capacity(batch * c * hw);
                        for n in 0..*batch {
                            let base = (n * total_c + offset) * hw;
                            dp.extend_from_slice(&gy[base..base + c * hw]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += c;
                }
            }
            Op::SliceChannels { x, start, len, batch, channels, hw } => {
                let mut dx = vec![T::zero(); batch * channels * hw];
                for n in 0..*batch {
                    let dst = (n * channels + start) * hw;
                    let src = n * len * hw;
                    dx[dst..dst + len * hw].copy_from_slice(&gy[src..src + len * hw]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Gather { x, index } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&i, &g) in index.iter().zip(gy) {
                    dx[i] += g;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::BceWithLogits { x, targets } => {
                let scale = gy[0] / T::of_f64(targets.len() as f64);
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Covariance { x, n, d } => {
                let dx = kernels::covariance_backward(self.value(*x).data(), gy, *n, *d);
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, gy.to_vec());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let d = g.detach(a);
        let p = g.mul(a, d).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        // d(a * stop(a))/da = stop(a)
        assert_eq!(grads.get(a).unwrap(), &[1.0, 2.0]);
        assert!(grads.get(d).is_none());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::scalar(3.0));
        let p = g.mul(a, a).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[6.0]);
    }

    #[test]
    fn binary_shape_mismatch_is_rejected() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.add(a, b), Err(crate::error::Error::Shape(_))));
    }

    #[test]
    fn bce_matches_closed_form() {
        let mut g = Graph::<f64>::new();
        let z = g.param(Tensor::new(vec![2], vec![0.3, -2.0]).unwrap());
        let l = g.bce_with_logits(z, vec![1.0, 0.25]).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let want = (-(s(0.3)).ln() - (0.25 * s(-2.0).ln() + 0.75 * (1.0 - s(-2.0)).ln())) / 2.0;
        assert!((g.value(l).item() - want).abs() < 1e-12);
        let grads = g.backward(l).unwrap();
        let gz = grads.get(z).unwrap();
        assert!((gz[0] - (s(0.3) - 1.0) / 2.0).abs() < 1e-12);
        assert!((gz[1] - (s(-2.0) - 0.25) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn concat_then_slice_roundtrips() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f32));
        let b = g.constant(Tensor::from_fn(&[2, 2, 2, 2], |i| 100.0 + i as f32));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 3, 2, 2]);
        let back = g.slice_channels(c, 1, 2).unwrap();
        assert_eq!(g.value(back), g.value(b));
    }
}
