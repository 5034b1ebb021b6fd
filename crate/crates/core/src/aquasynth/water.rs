use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaterType {
    Clear,
    Greenish,
    Bluish,
    Turbid,
}

impl WaterType {
    pub const SHIFTED: [WaterType; 3] = [WaterType::Greenish, WaterType::Bluish, WaterType::Turbid];

    pub fn name(self) -> &'static str {
        match self {
            WaterType::Clear => "clear",
            WaterType::Greenish => "greenish",
            WaterType::Bluish => "bluish",
            WaterType::Turbid => "turbid",
        }
    }
}

impl fmt::Display for WaterType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaterType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "clear" => Ok(WaterType::Clear),
            "greenish" => Ok(WaterType::Greenish),
            "bluish" => Ok(WaterType::Bluish),
            "turbid" => Ok(WaterType::Turbid),
            _ => Err(format!("unknown water type {s:?}")),
        }
    }
}

/// Physical parameters of one degradation: `I = J t + B (1 - t)`,
/// `t = exp(-beta * depth)` per channel, then optional haze blur.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub beta: [f32; 3],
    pub background: [f32; 3],
    pub depth: f32,
    #[serde(default)]
    pub haze_sigma: f32,
}

impl DegradationParams {
    pub fn identity() -> Self {
        DegradationParams { beta: [0.0; 3], background: [0.0; 3], depth: 0.0, haze_sigma: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|&b| !(b >= 0.0)) {
            return invalid(format!("attenuation must be non-negative, got {:?}", self.beta));
        }
        if self.background.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
            return invalid(format!("veiling light must lie in [0,1], got {:?}", self.background));
        }
        if !(self.depth >= 0.0) || !(self.haze_sigma >= 0.0) {
            return invalid("depth and haze sigma must be non-negative");
        }
        Ok(())
    }

    pub fn transmission(&self) -> [f32; 3] {
        self.beta.map(|b| (-b * self.depth).exp())
    }
}

/// A water type's attenuation, veiling light and haze.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterPreset {
    pub beta: [f32; 3],
    pub background: [f32; 3],
    #[serde(default)]
    pub haze_sigma: f32,
}

impl WaterPreset {
    pub fn at_depth(&self, depth: f32) -> DegradationParams {
        DegradationParams { beta: self.beta, background: self.background, depth, haze_sigma: self.haze_sigma }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterPresets {
    pub greenish: WaterPreset,
    pub bluish: WaterPreset,
    pub turbid: WaterPreset,
}

impl Default for WaterPresets {
    fn default() -> Self {
        WaterPresets {
            greenish: WaterPreset { beta: [0.8, 0.2, 0.6], background: [0.25, 0.55, 0.35], haze_sigma: 0.0 },
            bluish: WaterPreset { beta: [1.2, 0.6, 0.15], background: [0.10, 0.30, 0.60], haze_sigma: 0.0 },
            turbid: WaterPreset { beta: [0.5, 0.5, 0.5], background: [0.45, 0.45, 0.40], haze_sigma: 1.5 },
        }
    }
}

impl WaterPresets {
    pub fn params(&self, water: WaterType, depth: f32) -> DegradationParams {
        match water {
            WaterType::Clear => DegradationParams::identity(),
            WaterType::Greenish => self.greenish.at_depth(depth),
            WaterType::Bluish => self.bluish.at_depth(depth),
            WaterType::Turbid => self.turbid.at_depth(depth),
        }
    }

    pub fn sample(&self, water: WaterType, depth_range: [f32; 2], rng: &mut impl Rng) -> DegradationParams {
        let depth = if depth_range[1] > depth_range[0] {
            rng.random_range(depth_range[0]..depth_range[1])
        } else {
            depth_range[0]
        };
        self.params(water, depth)
    }
}

/// Apply the attenuation/backscatter formation model to a clear image.
pub fn degrade(clear: &Image, params: &DegradationParams) -> Image {
    let t = params.transmission();
    let mut out = clear.clone();
    for c in 0..3 {
        let (tc, bc) = (t[c], params.background[c]);
        for v in out.channel_mut(c) {
            *v = *v * tc + bc * (1.0 - tc);
        }
    }
    if params.haze_sigma > 0.0 {
        out = out.gaussian_blur(params.haze_sigma);
    }
    out.clamp01();
    out
}

/// Exact inverse of [`degrade`] for blur-free parameters.
pub fn invert_degrade(degraded: &Image, params: &DegradationParams) -> Result<Image> {
    if params.haze_sigma > 0.0 {
        return invalid("cannot invert a blurred degradation");
    }
    let t = params.transmission();
    if let Some(c) = t.iter().position(|&tc| tc <= 1e-6) {
        return invalid(format!("transmission {} on channel {c} is too small to invert", t[c]));
    }
    let mut out = degraded.clone();
    for c in 0..3 {
        let (tc, bc) = (t[c], params.background[c]);
        for v in out.channel_mut(c) {
            *v = (*v - bc * (1.0 - tc)) / tc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_depth_is_identity() {
        let img = Image::new(2, 2, (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
        let p = WaterPresets::default().greenish.at_depth(0.0);
        assert_eq!(degrade(&img, &p), img);
        assert_eq!(invert_degrade(&img, &p).unwrap(), img);
    }

    #[test]
    fn opaque_water_shows_background() {
        let img = Image::new(2, 2, (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
        let p = DegradationParams { beta: [100.0; 3], background: [0.1, 0.5, 0.7], depth: 1.0, haze_sigma: 0.0 };
        let out = degrade(&img, &p);
        for c in 0..3 {
            assert!(out.channel(c).iter().all(|&v| (v - p.background[c]).abs() < 1e-6));
        }
    }

    #[test]
    fn analytic_pixel() {
        let img = Image::filled(1, 1, [1.0; 3]);
        let p = DegradationParams { beta: [std::f32::consts::LN_2; 3], background: [0.5; 3], depth: 1.0, haze_sigma: 0.0 };
        let out = degrade(&img, &p);
        assert!(out.data().iter().all(|&v| (v - 0.75).abs() < 1e-6));
    }

    #[test]
    fn inversion_rejects_blur_and_opacity() {
        let img = Image::filled(1, 1, [0.5; 3]);
        let mut p = WaterPresets::default().turbid.at_depth(1.0);
        assert!(invert_degrade(&img, &p).is_err());
        p.haze_sigma = 0.0;
        p.beta = [20.0; 3];
        assert!(invert_degrade(&img, &p).is_err());
    }
}
