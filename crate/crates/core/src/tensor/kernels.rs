//! Raw forward/backward kernels for the heavier ops. The graph in
//! `graph.rs` wires these up; the free functions at the bottom are the
//! plain (non-recording) entry points.

use super::{gemm, MatRef, Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Output extent of a convolution along one axis.
pub fn output_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Validates a `[N,Cin,H,W]` input against a `[Cout,Cin,kh,kw]` kernel.
    pub fn new(input: &[usize], kernel: &[usize], bias: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (batch, cin, h, w) = match *input {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return shape_err(format!("conv2d input must be [C,H,W] or [N,C,H,W], got {input:?}")),
        };
        let [cout, kcin, kh, kw] = *kernel else {
            return shape_err(format!("conv2d kernel must be [Cout,Cin,kh,kw], got {kernel:?}"));
        };
        if kcin != cin {
            return shape_err(format!("conv2d channel mismatch: input has {cin}, kernel expects {kcin}"));
        }
        if bias != [cout] {
            return shape_err(format!("conv2d bias must be [{cout}], got {bias:?}"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return shape_err(format!("conv2d kernel extent must be odd, got {kh}x{kw}"));
        }
        if stride == 0 {
            return shape_err("conv2d stride must be >= 1");
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return shape_err(format!("conv2d input {h}x{w} smaller than kernel {kh}x{kw}"));
        }
        let oh = output_dim(h, kh, stride, padding);
        let ow = output_dim(w, kw, stride, padding);
        Ok(ConvGeom { batch, cin, h, w, cout, kh, kw, stride, padding, oh, ow })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    pub fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.batch, self.cout, self.oh, self.ow]
        } else {
            vec![self.cout, self.oh, self.ow]
        }
    }
}

/// Writes the patch matrix of one image into columns
/// `col0..col0 + oh*ow` of a `patch_len x stride` buffer.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T], col0: usize, stride: usize) {
    let ohw = g.oh * g.ow;
    let (s, p) = (g.stride as isize, g.padding as isize);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * stride + col0..row * stride + col0 + ohw];
                for oy in 0..g.oh {
                    let iy = oy as isize * s - p + ky as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *v = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto one image.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T], col0: usize, stride: usize) {
    let ohw = g.oh * g.ow;
    let (s, p) = (g.stride as isize, g.padding as isize);
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * stride + col0..row * stride + col0 + ohw];
                for oy in 0..g.oh {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `[N, C, L] -> [C, N*L]`.
fn fold_batch<T: Scalar>(x: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * l + b * l..ch * n * l + (b + 1) * l].copy_from_slice(&x[(b * c + ch) * l..(b * c + ch + 1) * l]);
        }
    }
    out
}

/// `[C, N*L] -> [N, C, L]`.
fn unfold_batch<T: Scalar>(x: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * l..(b * c + ch + 1) * l].copy_from_slice(&x[ch * n * l + b * l..ch * n * l + (b + 1) * l]);
        }
    }
    out
}

/// Images per GEMM: as many as keep the patch matrix near cache size.
const COLS_BUDGET: usize = 1 << 18;

fn chunk_images(g: &ConvGeom) -> usize {
    (COLS_BUDGET / (g.patch_len() * g.oh * g.ow).max(1)).clamp(1, g.batch)
}

/// Patch matrix of images `b0..b1`, `patch_len x ((b1-b0)*oh*ow)`.
fn chunk_cols<T: Scalar>(x: &[T], g: &ConvGeom, b0: usize, b1: usize) -> Vec<T> {
    let ohw = g.oh * g.ow;
    let xs = &x[b0 * g.in_len()..b1 * g.in_len()];
    if g.is_pointwise() {
        return fold_batch(xs, b1 - b0, g.cin, ohw);
    }
    let width = (b1 - b0) * ohw;
    let mut cols = vec![T::zero(); g.patch_len() * width];
    for n in 0..b1 - b0 {
        im2col(&xs[n * g.in_len()..(n + 1) * g.in_len()], g, &mut cols, n * ohw, width);
    }
    cols
}

/// Images are grouped so that each group goes through one GEMM,
/// `W [Cout, K] @ cols [K, n*oh*ow]`.
pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let ohw = g.oh * g.ow;
    let step = chunk_images(g);
    let mut out = Vec::with_capacity(g.batch * g.cout * ohw);
    for b0 in (0..g.batch).step_by(step) {
        let b1 = (b0 + step).min(g.batch);
        let width = (b1 - b0) * ohw;
        let cols = chunk_cols(x, g, b0, b1);
        let mut yt = vec![T::zero(); g.cout * width];
        for (co, row) in yt.chunks_exact_mut(width).enumerate() {
            row.fill(bias[co]);
        }
        gemm(MatRef::new(weight, g.cout, g.patch_len()), MatRef::new(&cols, g.patch_len(), width), T::one(), &mut yt);
        out.extend(unfold_batch(&yt, b1 - b0, g.cout, ohw));
    }
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when not requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeom,
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let ohw = g.oh * g.ow;
    let k = g.patch_len();
    let mut dw = vec![T::zero(); g.cout * k];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = want_dx.then(|| Vec::with_capacity(g.batch * g.in_len()));
    let step = chunk_images(g);
    for b0 in (0..g.batch).step_by(step) {
        let b1 = (b0 + step).min(g.batch);
        let width = (b1 - b0) * ohw;
        let dyt = fold_batch(&dy[b0 * g.cout * ohw..b1 * g.cout * ohw], b1 - b0, g.cout, ohw);
        for (acc, row) in db.iter_mut().zip(dyt.chunks_exact(width)) {
            for &v in row {
                *acc += v;
            }
        }
        let cols = chunk_cols(x, g, b0, b1);
        gemm(MatRef::new(&dyt, g.cout, width), MatRef::new(&cols, k, width).t(), T::one(), &mut dw);
        drop(cols);
        if let Some(dx) = dx.as_mut() {
            let mut dcols = vec![T::zero(); k * width];
            gemm(MatRef::new(weight, g.cout, k).t(), MatRef::new(&dyt, g.cout, width), T::zero(), &mut dcols);
            if g.is_pointwise() {
                dx.extend(unfold_batch(&dcols, b1 - b0, g.cin, ohw));
            } else {
                let mut part = vec![T::zero(); (b1 - b0) * g.in_len()];
                for n in 0..b1 - b0 {
                    col2im(&dcols, g, &mut part[n * g.in_len()..(n + 1) * g.in_len()], n * ohw, width);
                }
                dx.extend(part);
            }
        }
    }
    (dx, dw, db)
}

/// Per-axis sampling table for half-pixel-centre bilinear upsampling.
pub(crate) fn upsample_taps(src: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..src * factor)
        .map(|i| {
            let s = ((i as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// `x` holds `planes` contiguous `h x w` planes.
pub(crate) fn upsample_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, factor: usize) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let ty = upsample_taps(h, factor);
    let tx: Vec<(usize, usize, T)> =
        upsample_taps(w, factor).into_iter().map(|(a, b, l)| (a, b, T::of_f64(l))).collect();
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::of_f64(ly);
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = r0[x0] * (T::one() - lx) + r0[x1] * lx;
                let bot = r1[x0] * (T::one() - lx) + r1[x1] * lx;
                dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize, factor: usize) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let ty = upsample_taps(h, factor);
    let tx: Vec<(usize, usize, T)> =
        upsample_taps(w, factor).into_iter().map(|(a, b, l)| (a, b, T::of_f64(l))).collect();
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::of_f64(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (T::one() - ly);
                let bot = v * ly;
                d[y0 * w + x0] += top * (T::one() - lx);
                d[y0 * w + x1] += top * lx;
                d[y1 * w + x0] += bot * (T::one() - lx);
                d[y1 * w + x1] += bot * lx;
            }
        }
    }
    dx
}

/// Column-centred copy of an `n x d` matrix.
pub(crate) fn center_columns<T: Scalar>(x: &[T], n: usize, d: usize) -> Vec<T> {
    let mut mean = vec![T::zero(); d];
    for row in x.chunks_exact(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv_n = T::one() / T::of_f64(n as f64);
    for m in &mut mean {
        *m *= inv_n;
    }
    let mut xc = x.to_vec();
    for row in xc.chunks_exact_mut(d) {
        for (v, &m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    xc
}

pub(crate) fn covariance_forward<T: Scalar>(x: &[T], n: usize, d: usize) -> Vec<T> {
    let xc = center_columns(x, n, d);
    let mut c = vec![T::zero(); d * d];
    gemm(MatRef::new(&xc, n, d).t(), MatRef::new(&xc, n, d), T::zero(), &mut c);
    let scale = T::one() / T::of_f64((n - 1) as f64);
    for v in &mut c {
        *v *= scale;
    }
    c
}

/// `dX = Xc (G + G^T) / (n - 1)`; the centring projector drops out because
/// the columns of `Xc` already sum to zero.
pub(crate) fn covariance_backward<T: Scalar>(x: &[T], dc: &[T], n: usize, d: usize) -> Vec<T> {
    let xc = center_columns(x, n, d);
    let scale = T::one() / T::of_f64((n - 1) as f64);
    let mut sym = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = (dc[i * d + j] + dc[j * d + i]) * scale;
        }
    }
    let mut dx = vec![T::zero(); n * d];
    gemm(MatRef::new(&xc, n, d), MatRef::new(&sym, d, d), T::zero(), &mut dx);
    dx
}

/// Plain 2-D convolution of a `[Cin,H,W]` (or batched `[N,Cin,H,W]`) input.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    let out = conv2d_forward(input.data(), kernel.data(), bias.data(), &g);
    Tensor::new(g.out_shape(input.shape().len() == 4), out)
}

/// Bilinear upsampling by an integer factor with half-pixel centres.
pub fn bilinear_upsample<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return shape_err("upsample factor must be >= 1");
    }
    let shape = input.shape();
    if shape.len() < 2 {
        return shape_err(format!("upsample needs at least [H,W], got {shape:?}"));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = input.numel() / (h * w);
    let out = upsample_forward(input.data(), planes, h, w, factor);
    let mut out_shape = shape.to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = h * factor;
    out_shape[r - 1] = w * factor;
    Tensor::new(out_shape, out)
}

/// Unbiased feature covariance `(X - mean)^T (X - mean) / (n - 1)`.
pub fn covariance<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, d] = *x.shape() else {
        return shape_err(format!("covariance expects an [n,d] matrix, got {:?}", x.shape()));
    };
    if n < 2 {
        return shape_err(format!("covariance needs at least 2 rows, got {n}"));
    }
    Tensor::new(vec![d, d], covariance_forward(x.data(), n, d))
}
