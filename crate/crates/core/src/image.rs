//! RGB images in `[0,1]` stored as planar `[3,H,W]` floats, plus binary
//! PPM (P6, 8-bit) input/output.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return shape_err(format!("image {width}x{height} needs {} values, got {}", 3 * width * height, data.len()));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, width * height));
        }
        Image { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.set(c, y, x, v);
        }
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.width * self.height) as f64;
        [0, 1, 2].map(|c| self.channel(c).iter().map(|&v| v as f64).sum::<f64>() / n)
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Snap every value onto the 8-bit grid `k / 255`.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = to_u8(*v) as f32 / 255.0;
        }
    }

    pub fn hflip(&self) -> Image {
        let mut out = self.clone();
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Bilinear resample of the source window `(x0, y0, w, h)` onto an
    /// `out_w x out_h` grid (half-pixel centres, edge clamped).
    pub fn resample(&self, x0: f32, y0: f32, w: f32, h: f32, out_w: usize, out_h: usize) -> Image {
        let mut out = Image::filled(out_w, out_h, [0.0; 3]);
        let tap = |o: usize, start: f32, extent: f32, n_out: usize, n_src: usize| {
            let s = (start + (o as f32 + 0.5) * extent / n_out as f32 - 0.5).clamp(0.0, (n_src - 1) as f32);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_src - 1);
            (i0, i1, s - i0 as f32)
        };
        let xs: Vec<_> = (0..out_w).map(|o| tap(o, x0, w, out_w, self.width)).collect();
        let ys: Vec<_> = (0..out_h).map(|o| tap(o, y0, h, out_h, self.height)).collect();
        for c in 0..3 {
            let src = self.channel(c);
            let dst = out.channel_mut(c);
            for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                    let top = src[y0 * self.width + x0] * (1.0 - lx) + src[y0 * self.width + x1] * lx;
                    let bot = src[y1 * self.width + x0] * (1.0 - lx) + src[y1 * self.width + x1] * lx;
                    dst[oy * out_w + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        out
    }

    /// Separable Gaussian blur, edge-clamped; `sigma <= 0` is a no-op.
    pub fn gaussian_blur(&self, sigma: f32) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f32> = (-radius..=radius).map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f32 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= norm);
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = self.clone();
        let mut out = self.clone();
        for c in 0..3 {
            let src = self.channel(c);
            let t = tmp.channel_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let xx = (x + k as isize - radius).clamp(0, w - 1);
                        acc += kv * src[(y * w + xx) as usize];
                    }
                    t[(y * w + x) as usize] = acc;
                }
            }
            let t = tmp.channel(c);
            let o = out.channel_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let yy = (y + k as isize - radius).clamp(0, h - 1);
                        acc += kv * t[(yy * w + x) as usize];
                    }
                    o[(y * w + x) as usize] = acc;
                }
            }
        }
        out
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![3, self.height, self.width], self.data.clone()).expect("image tensor")
    }

    /// Accepts `[3,H,W]` or a single-image `[1,3,H,W]` tensor.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Image> {
        match *t.shape() {
            [3, h, w] | [1, 3, h, w] => Image::new(w, h, t.data().to_vec()),
            _ => shape_err(format!("expected a [3,H,W] tensor, got {:?}", t.shape())),
        }
    }

    /// Interleaved 8-bit RGB bytes.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                out.push(to_u8(self.data[c * n + i]));
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Image> {
        let n = width * height;
        if bytes.len() != 3 * n {
            return shape_err(format!("rgb buffer of {} bytes for {width}x{height}", bytes.len()));
        }
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[c * n + i] = bytes[3 * i + c] as f32 / 255.0;
            }
        }
        Image::new(width, height, data)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8());
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PPM header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(format!("unsupported magic {:?}, expected P6", fields[0]));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(format!("only 8-bit PPM supported, maxval {maxval}"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != 3 * w * h {
            return Err(format!("raster has {} bytes, expected {}", raster.len(), 3 * w * h));
        }
        Image::from_rgb8(w, h, raster).map_err(|e| e.to_string())
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path)?;
        Image::from_ppm(&bytes).map_err(|message| Error::Format { path: path.to_path_buf(), message })
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stack equally sized images into an `[N,3,H,W]` tensor.
pub fn stack(images: &[&Image]) -> Result<Tensor<f32>> {
    let Some(first) = images.first() else {
        return shape_err("cannot stack zero images");
    };
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        if !img.same_size(first) {
            return shape_err("stacked images differ in size");
        }
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![images.len(), 3, first.height, first.width], data)
}

/// Split an `[N,3,H,W]` tensor back into images.
pub fn unstack(t: &Tensor<f32>) -> Result<Vec<Image>> {
    let [n, 3, h, w] = *t.shape() else {
        return shape_err(format!("expected [N,3,H,W], got {:?}", t.shape()));
    };
    let len = 3 * h * w;
    (0..n).map(|i| Image::new(w, h, t.data()[i * len..(i + 1) * len].to_vec())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_on_u8_grid() {
        let mut img = Image::new(3, 2, (0..18).map(|i| i as f32 / 17.0).collect()).unwrap();
        img.quantize_u8();
        let back = Image::from_ppm(&img.to_ppm()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 51]);
        let img = Image::from_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.2]);
        assert!(Image::from_ppm(b"P3\n1 1\n255\n").is_err());
    }

    #[test]
    fn identity_resample_and_flip() {
        let img = Image::new(4, 3, (0..36).map(|i| (i as f32 * 0.37).sin().abs()).collect()).unwrap();
        let same = img.resample(0.0, 0.0, 4.0, 3.0, 4, 3);
        for (a, b) in same.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(img.hflip().hflip(), img);
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::filled(7, 5, [0.2, 0.4, 0.9]);
        let b = img.gaussian_blur(1.5);
        for (a, b) in b.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
