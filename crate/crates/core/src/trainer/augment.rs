//! Weak (flip + crop) and strong (mosaic + jitter + blur + flip + crop)
//! augmentation. Every function is a pure function of its inputs and the
//! RNG it is handed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aquasynth::LabeledSample;
use crate::boxes::BBox;
use crate::error::{invalid, Result};
use crate::image::Image;

/// Boxes keeping less than this fraction of their area after a crop are dropped.
pub const MIN_VISIBLE_FRACTION: f32 = 0.25;
/// Boxes thinner than this (pixels) after remapping are dropped.
pub const MIN_BOX_SIDE: f32 = 2.0;
const CROP_TRIES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    /// Smallest crop, as a fraction of the image area.
    pub min_crop_area: f64,
    /// Probability that a detection sample is a 4-way mosaic.
    pub mosaic_prob: f64,
    /// Brightness and saturation are scaled by a factor in `1 +- jitter`.
    pub jitter: f64,
    pub blur_prob: f64,
    pub blur_sigma: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip_prob: 0.5,
            min_crop_area: 0.8,
            mosaic_prob: 0.5,
            jitter: 0.2,
            blur_prob: 0.3,
            blur_sigma: [0.5, 1.2],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.hflip_prob) && unit(self.mosaic_prob) && unit(self.blur_prob)) {
            return invalid("augmentation probabilities must lie in [0, 1]");
        }
        if !(self.min_crop_area > 0.0 && self.min_crop_area <= 1.0) {
            return invalid("min_crop_area must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return invalid("jitter must lie in [0, 1)");
        }
        if !(self.blur_sigma[0] >= 0.0 && self.blur_sigma[0] <= self.blur_sigma[1]) {
            return invalid("blur_sigma must be an ordered non-negative range");
        }
        Ok(())
    }
}

/// Source window `(x0, y0, w, h)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub x0: f32,
    pub y0: f32,
    pub w: f32,
    pub h: f32,
}

impl Window {
    pub fn full(img: &Image) -> Self {
        Window { x0: 0.0, y0: 0.0, w: img.width() as f32, h: img.height() as f32 }
    }
}

/// Map boxes through `window -> [0,out_w] x [0,out_h]` and drop those that
/// end up mostly outside or too thin.
pub fn remap_boxes(boxes: &[BBox], classes: &[usize], win: Window, out_w: f32, out_h: f32) -> (Vec<BBox>, Vec<usize>) {
    let (sx, sy) = (out_w / win.w, out_h / win.h);
    let mut kept = (Vec::new(), Vec::new());
    for (b, &c) in boxes.iter().zip(classes) {
        let m = b.affine(sx, sy, -win.x0 * sx, -win.y0 * sy);
        let Some(clipped) = m.clip(out_w, out_h) else { continue };
        if clipped.area() < MIN_VISIBLE_FRACTION * m.area() || clipped.width() < MIN_BOX_SIDE || clipped.height() < MIN_BOX_SIDE {
            continue;
        }
        kept.0.push(clipped);
        kept.1.push(c);
    }
    kept
}

fn random_window<R: Rng>(rng: &mut R, w: f32, h: f32, min_area: f64) -> Window {
    let area = rng.random_range(min_area..=1.0);
    let aspect = rng.random_range((3.0f64 / 4.0).ln()..=(4.0f64 / 3.0).ln()).exp();
    let fw = (area * aspect).sqrt().min(1.0) as f32;
    let fh = (area / aspect).sqrt().min(1.0) as f32;
    let (cw, ch) = (fw * w, fh * h);
    Window { x0: rng.random_range(0.0..=w - cw), y0: rng.random_range(0.0..=h - ch), w: cw, h: ch }
}

/// Flip and crop shared by every image of `images` (for example a degraded
/// image and its clear reference), with the labels of `labels` remapped.
///
/// A crop that would remove every box of a labelled sample is redrawn up to
/// ten times, then skipped.
pub fn weak_augment<R: Rng>(
    rng: &mut R,
    images: &[&Image],
    boxes: &[BBox],
    classes: &[usize],
    cfg: &AugmentConfig,
) -> (Vec<Image>, Vec<BBox>, Vec<usize>) {
    let first = images[0];
    let (w, h) = (first.width() as f32, first.height() as f32);
    let flip = rng.random_bool(cfg.hflip_prob);
    let mut boxes: Vec<BBox> = if flip { boxes.iter().map(|b| b.hflip(w)).collect() } else { boxes.to_vec() };
    let mut classes = classes.to_vec();
    let mut win = Window::full(first);
    if cfg.min_crop_area < 1.0 {
        for _ in 0..CROP_TRIES {
            let cand = random_window(rng, w, h, cfg.min_crop_area);
            let (b, c) = remap_boxes(&boxes, &classes, cand, w, h);
            if boxes.is_empty() || !b.is_empty() {
                win = cand;
                (boxes, classes) = (b, c);
                break;
            }
        }
    }
    let out = images
        .iter()
        .map(|img| {
            let img = if flip { img.hflip() } else { (*img).clone() };
            if win == Window::full(&img) {
                img
            } else {
                img.resample(win.x0, win.y0, win.w, win.h, img.width(), img.height())
            }
        })
        .collect();
    (out, boxes, classes)
}

/// Tile four samples on a canvas the size of the first, split at
/// `(split_x, split_y)`; each sample is rescaled whole into its quadrant.
pub fn mosaic(samples: [&LabeledSample; 4], split_x: usize, split_y: usize) -> LabeledSample {
    let (w, h) = (samples[0].image.width(), samples[0].image.height());
    let mut canvas = Image::filled(w, h, [0.0; 3]);
    let mut boxes = Vec::new();
    let mut classes = Vec::new();
    let rects = [(0, 0, split_x, split_y), (split_x, 0, w - split_x, split_y), (0, split_y, split_x, h - split_y), (split_x, split_y, w - split_x, h - split_y)];
    for (s, &(ox, oy, qw, qh)) in samples.iter().zip(&rects) {
        if qw == 0 || qh == 0 {
            continue;
        }
        let src = &s.image;
        let tile = src.resample(0.0, 0.0, src.width() as f32, src.height() as f32, qw, qh);
        for y in 0..qh {
            for x in 0..qw {
                canvas.set_pixel(ox + x, oy + y, tile.pixel(x, y));
            }
        }
        let (b, c) = remap_boxes(&s.boxes, &s.classes, Window::full(src), qw as f32, qh as f32);
        boxes.extend(b.iter().map(|b| b.affine(1.0, 1.0, ox as f32, oy as f32)));
        classes.extend(c);
    }
    LabeledSample { image: canvas, boxes, classes }
}

/// Brightness and saturation scaling about the per-pixel gray value.
pub fn color_jitter(img: &Image, brightness: f32, saturation: f32) -> Image {
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(x, y);
            let gray = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            out.set_pixel(x, y, p.map(|v| ((gray + saturation * (v - gray)) * brightness).clamp(0.0, 1.0)));
        }
    }
    out
}

/// Mosaic (with probability `mosaic_prob`, otherwise `samples[0]` alone),
/// then colour jitter, optional blur, flip and crop.
pub fn strong_augment<R: Rng>(rng: &mut R, samples: [&LabeledSample; 4], cfg: &AugmentConfig) -> LabeledSample {
    let base = if rng.random_bool(cfg.mosaic_prob) {
        let (w, h) = (samples[0].image.width(), samples[0].image.height());
        let sx = rng.random_range(w / 4..=3 * w / 4);
        let sy = rng.random_range(h / 4..=3 * h / 4);
        mosaic(samples, sx, sy)
    } else {
        samples[0].clone()
    };
    let j = cfg.jitter as f32;
    let (b, s) = if j > 0.0 { (rng.random_range(1.0 - j..=1.0 + j), rng.random_range(1.0 - j..=1.0 + j)) } else { (1.0, 1.0) };
    let mut img = color_jitter(&base.image, b, s);
    if rng.random_bool(cfg.blur_prob) {
        let sigma = rng.random_range(cfg.blur_sigma[0]..=cfg.blur_sigma[1]);
        img = img.gaussian_blur(sigma as f32);
    }
    let (mut imgs, boxes, classes) = weak_augment(rng, &[&img], &base.boxes, &base.classes, cfg);
    LabeledSample { image: imgs.remove(0), boxes, classes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aquasynth::{render_scene, SceneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> LabeledSample {
        render_scene(&SceneConfig::default(), seed).unwrap()
    }

    fn in_bounds(s: &LabeledSample) -> bool {
        let (w, h) = (s.image.width() as f32, s.image.height() as f32);
        s.boxes.iter().all(|b| b.is_valid() && b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h) && s.boxes.len() == s.classes.len()
    }

    #[test]
    fn weak_is_deterministic_in_seed() {
        let s = sample(1);
        let cfg = AugmentConfig::default();
        let run = |seed| weak_augment(&mut ChaCha8Rng::seed_from_u64(seed), &[&s.image], &s.boxes, &s.classes, &cfg);
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample(2);
        let cfg = AugmentConfig { hflip_prob: 1.0, min_crop_area: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b, c) = weak_augment(&mut rng, &[&s.image], &s.boxes, &s.classes, &cfg);
        let (a2, b2, c2) = weak_augment(&mut rng, &[&a[0]], &b, &c, &cfg);
        assert_eq!(a2[0], s.image);
        assert_eq!(b2, s.boxes);
        assert_eq!(c2, s.classes);
    }

    #[test]
    fn paired_images_get_the_same_geometry() {
        let s = sample(3);
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (out, _, _) = weak_augment(&mut rng, &[&s.image, &s.image], &[], &[], &cfg);
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn weak_boxes_stay_in_bounds() {
        let cfg = AugmentConfig::default();
        for i in 0..1000u64 {
            let s = sample(i % 50);
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let (img, boxes, classes) = weak_augment(&mut rng, &[&s.image], &s.boxes, &s.classes, &cfg);
            let out = LabeledSample { image: img.into_iter().next().unwrap(), boxes, classes };
            assert!(in_bounds(&out));
            assert!(s.boxes.is_empty() || !out.boxes.is_empty());
        }
    }

    #[test]
    fn centred_mosaic_of_identical_samples_tiles_shrunk_copies() {
        let s = sample(4);
        let m = mosaic([&s, &s, &s, &s], 48, 48);
        let shrunk = s.image.resample(0.0, 0.0, 96.0, 96.0, 48, 48);
        for (ox, oy) in [(0, 0), (48, 0), (0, 48), (48, 48)] {
            for y in 0..48 {
                for x in 0..48 {
                    assert_eq!(m.image.pixel(ox + x, oy + y), shrunk.pixel(x, y));
                }
            }
        }
        assert_eq!(m.boxes.len(), 4 * s.boxes.len());
        assert_eq!(m.boxes[0], s.boxes[0].affine(0.5, 0.5, 0.0, 0.0));
    }

    #[test]
    fn strong_outputs_are_in_canvas_and_deterministic() {
        let cfg = AugmentConfig { mosaic_prob: 1.0, ..Default::default() };
        let mut sources = 0;
        for i in 0..300u64 {
            let s: Vec<LabeledSample> = (0..4).map(|k| sample(i * 4 + k)).collect();
            let run = || strong_augment(&mut ChaCha8Rng::seed_from_u64(i), [&s[0], &s[1], &s[2], &s[3]], &cfg);
            let out = run();
            assert_eq!(out, run());
            assert!(in_bounds(&out));
            assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            sources = sources.max(out.boxes.len());
        }
        assert!(sources > 4, "mosaic should gather boxes from several sources");
    }

    #[test]
    fn jitter_identity_is_noop() {
        let s = sample(5);
        assert_eq!(color_jitter(&s.image, 1.0, 1.0).data().len(), s.image.data().len());
        let d = color_jitter(&s.image, 1.0, 1.0);
        assert!(d.data().iter().zip(s.image.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}
