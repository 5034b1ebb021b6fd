use std::f32::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{BBox, GtBox};
use crate::error::{invalid, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: usize,
    /// Inclusive `[min, max]` object count per scene.
    pub object_count_range: [usize; 2],
    pub class_count: usize,
    pub min_object_size: usize,
    pub max_object_size: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 96,
            object_count_range: [1, 4],
            class_count: 4,
            min_object_size: 12,
            max_object_size: 30,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.object_count_range;
        if lo > hi {
            return invalid(format!("object count range [{lo},{hi}] is reversed"));
        }
        if self.min_object_size < 4 {
            return invalid(format!("min_object_size must be >= 4, got {}", self.min_object_size));
        }
        if self.max_object_size < self.min_object_size {
            return invalid("max_object_size below min_object_size");
        }
        if self.class_count == 0 {
            return invalid("class_count must be >= 1");
        }
        Ok(())
    }
}

/// An image with its object annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    pub boxes: Vec<BBox>,
    pub classes: Vec<usize>,
}

impl LabeledSample {
    pub fn gts(&self) -> Vec<GtBox> {
        self.boxes.iter().zip(&self.classes).map(|(&bbox, &class_id)| GtBox { bbox, class_id }).collect()
    }
}

/// Base colours per class slot; classes past four reuse slots with a hue shift.
const CLASS_COLORS: [[f32; 3]; 4] = [
    [0.86, 0.22, 0.18], // disc
    [0.96, 0.78, 0.16], // star
    [0.58, 0.26, 0.78], // ellipse
    [0.20, 0.13, 0.10], // blob
];

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disc { r: f32 },
    Star { outer: f32, inner: f32, phase: f32 },
    Ellipse { a: f32, b: f32, angle: f32 },
    Blob { r: f32, amp: [f32; 2], phase: [f32; 2] },
}

impl Shape {
    fn sample(class_id: usize, size: f32, rng: &mut impl Rng) -> Shape {
        let half = size / 2.0;
        match class_id % 4 {
            0 => Shape::Disc { r: half },
            1 => Shape::Star { outer: half, inner: half * rng.random_range(0.42..0.55), phase: rng.random_range(0.0..TAU) },
            2 => Shape::Ellipse { a: half, b: half * rng.random_range(0.5..0.7), angle: rng.random_range(0.0..PI) },
            _ => Shape::Blob {
                r: half / 1.3,
                amp: [rng.random_range(0.12..0.2), rng.random_range(0.05..0.1)],
                phase: [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)],
            },
        }
    }

    /// Bounding radius around the centre.
    fn reach(&self) -> f32 {
        match *self {
            Shape::Disc { r } => r,
            Shape::Star { outer, .. } => outer,
            Shape::Ellipse { a, .. } => a,
            Shape::Blob { r, amp, .. } => r * (1.0 + amp[0] + amp[1]),
        }
    }

    /// Signed-ish radial position: `< 1` inside, `>= 1` outside.
    fn level(&self, dx: f32, dy: f32) -> f32 {
        match *self {
            Shape::Disc { r } => (dx * dx + dy * dy).sqrt() / r,
            Shape::Star { outer, inner, phase } => {
                let rho = (dx * dx + dy * dy).sqrt();
                let theta = dy.atan2(dx) - phase;
                let sector = TAU / 5.0;
                let local = (theta.rem_euclid(sector) - sector / 2.0).abs() / (sector / 2.0);
                let edge = inner + (outer - inner) * (1.0 - local);
                rho / edge
            }
            Shape::Ellipse { a, b, angle } => {
                let (s, c) = angle.sin_cos();
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                ((u / a).powi(2) + (v / b).powi(2)).sqrt()
            }
            Shape::Blob { r, amp, phase } => {
                let rho = (dx * dx + dy * dy).sqrt();
                let theta = dy.atan2(dx);
                let edge = r * (1.0 + amp[0] * (3.0 * theta + phase[0]).sin() + amp[1] * (5.0 * theta + phase[1]).sin());
                rho / edge
            }
        }
    }
}

const SUPERSAMPLE: usize = 4;

/// Paints `shape` at `(cx, cy)` and returns its tight pixel box, if any
/// pixel received coverage.
fn paint(img: &mut Image, shape: &Shape, cx: f32, cy: f32, color: [f32; 3]) -> Option<BBox> {
    let reach = shape.reach() + 1.0;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let x_lo = ((cx - reach).floor() as isize).max(0);
    let x_hi = ((cx + reach).ceil() as isize).min(w - 1);
    let y_lo = ((cy - reach).floor() as isize).max(0);
    let y_hi = ((cy + reach).ceil() as isize).min(h - 1);
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    let step = 1.0 / SUPERSAMPLE as f32;
    for py in y_lo..=y_hi {
        for px in x_lo..=x_hi {
            let mut hits = 0;
            let mut level_sum = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f32 + (sx as f32 + 0.5) * step;
                    let y = py as f32 + (sy as f32 + 0.5) * step;
                    let l = shape.level(x - cx, y - cy);
                    if l < 1.0 {
                        hits += 1;
                        level_sum += l;
                    }
                }
            }
            if hits == 0 {
                continue;
            }
            let alpha = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
            // mild shading: brighter towards the centre
            let shade = 0.85 + 0.15 * (1.0 - level_sum / hits as f32);
            let (x, y) = (px as usize, py as usize);
            let old = img.pixel(x, y);
            let new = [0, 1, 2].map(|c| (old[c] * (1.0 - alpha) + color[c] * shade * alpha).clamp(0.0, 1.0));
            img.set_pixel(x, y, new);
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            });
        }
    }
    bounds.map(|(x1, y1, x2, y2)| BBox::new(x1 as f32, y1 as f32, (x2 + 1) as f32, (y2 + 1) as f32))
}

fn seabed(size: usize, rng: &mut impl Rng) -> Image {
    let base = [
        0.62 + rng.random_range(-0.06..0.06),
        0.56 + rng.random_range(-0.06..0.06),
        0.45 + rng.random_range(-0.06..0.06),
    ];
    let waves: Vec<(f32, f32, f32, f32)> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..TAU);
            let freq = rng.random_range(0.02..0.07) * TAU;
            (angle.cos() * freq, angle.sin() * freq, rng.random_range(0.0..TAU), rng.random_range(0.02..0.045))
        })
        .collect();
    let tilt = rng.random_range(0.03..0.09);
    let mut img = Image::filled(size, size, base);
    for y in 0..size {
        for x in 0..size {
            let mut v = tilt * (0.5 - y as f32 / size as f32);
            for &(kx, ky, ph, amp) in &waves {
                v += amp * (kx * x as f32 + ky * y as f32 + ph).sin();
            }
            let grain = rng.random_range(-0.012..0.012);
            let px = base.map(|b| (b + v + grain).clamp(0.0, 1.0));
            img.set_pixel(x, y, px);
        }
    }
    img
}

fn overlaps(b: &BBox, others: &[BBox], gap: f32) -> bool {
    others.iter().any(|o| b.x1 < o.x2 + gap && o.x1 < b.x2 + gap && b.y1 < o.y2 + gap && o.y1 < b.y2 + gap)
}

const PLACEMENT_TRIES: usize = 60;

/// Renders one clear-water scene. Deterministic in `(cfg, seed)`.
pub fn render_scene(cfg: &SceneConfig, seed: u64) -> Result<LabeledSample> {
    cfg.validate()?;
    let size = cfg.image_size;
    let [lo, hi] = cfg.object_count_range;
    if lo > 0 && size < cfg.min_object_size + 2 {
        return invalid(format!("image size {size} cannot hold a {}px object", cfg.min_object_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = seabed(size, &mut rng);
    let target = rng.random_range(lo..=hi);
    let max_size = cfg.max_object_size.min(size - 2).max(cfg.min_object_size);
    let min_area = (cfg.min_object_size * cfg.min_object_size) as f32;

    let mut boxes = Vec::with_capacity(target);
    let mut classes = Vec::with_capacity(target);
    for _ in 0..target {
        let class_id = rng.random_range(0..cfg.class_count);
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let obj = rng.random_range(cfg.min_object_size as f32..=max_size as f32);
            let shape = Shape::sample(class_id, obj, &mut rng);
            let reach = shape.reach();
            let margin = reach + 1.0;
            if 2.0 * margin >= size as f32 {
                continue;
            }
            let cx = rng.random_range(margin..size as f32 - margin);
            let cy = rng.random_range(margin..size as f32 - margin);
            let rough = BBox::new(cx - reach, cy - reach, cx + reach, cy + reach);
            if overlaps(&rough, &boxes, 2.0) {
                continue;
            }
            // paint on a scratch copy so a rejected shape leaves no trace
            let mut trial = img.clone();
            let color = class_color(class_id, cfg.class_count, &mut rng);
            match paint(&mut trial, &shape, cx, cy, color) {
                Some(b) if b.area() >= min_area && b.width() >= 4.0 && b.height() >= 4.0 => {
                    img = trial;
                    boxes.push(b);
                    classes.push(class_id);
                    placed = true;
                    break;
                }
                _ => continue,
            }
        }
        if !placed && boxes.len() < lo {
            return invalid(format!("could not place {lo} objects in a {size}px image"));
        }
    }
    Ok(LabeledSample { image: img, boxes, classes })
}

fn class_color(class_id: usize, class_count: usize, rng: &mut impl Rng) -> [f32; 3] {
    let mut base = CLASS_COLORS[class_id % 4];
    if class_count > 4 {
        // rotate channels for classes beyond the four canonical slots
        base.rotate_left((class_id / 4) % 3);
    }
    base.map(|c| (c + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0))
}
