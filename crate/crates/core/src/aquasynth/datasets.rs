use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::render::{render_scene, LabeledSample, SceneConfig};
use super::water::{degrade, DegradationParams, WaterPresets, WaterType};
use crate::boxes::GtBox;
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::seeds::{derive_seed, rng_for};

/// Degraded image with its clear reference.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub degraded: Image,
    pub clear: Image,
    pub water: WaterType,
}

/// Evaluation sample: degraded input, clear reference and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub degraded: Image,
    pub clear: Image,
    pub gts: Vec<GtBox>,
    pub water: WaterType,
}

/// Evaluation splits: the training ("home") distribution plus one split per
/// shifted water type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Home,
    Greenish,
    Bluish,
    Turbid,
}

impl EvalSplit {
    pub const ALL: [EvalSplit; 4] = [EvalSplit::Home, EvalSplit::Greenish, EvalSplit::Bluish, EvalSplit::Turbid];
    pub const SHIFTED: [EvalSplit; 3] = [EvalSplit::Greenish, EvalSplit::Bluish, EvalSplit::Turbid];

    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Home => "home",
            EvalSplit::Greenish => "greenish",
            EvalSplit::Bluish => "bluish",
            EvalSplit::Turbid => "turbid",
        }
    }

    fn stream(self) -> u64 {
        match self {
            EvalSplit::Home => 3,
            EvalSplit::Greenish => 4,
            EvalSplit::Bluish => 5,
            EvalSplit::Turbid => 6,
        }
    }
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        EvalSplit::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown eval split {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub paired: usize,
    pub labeled: usize,
    pub eval_per_split: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        DatasetSizes { paired: 512, labeled: 512, eval_per_split: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    #[serde(default)]
    pub presets: WaterPresets,
    #[serde(default)]
    pub sizes: DatasetSizes,
    /// Water type used to degrade the labelled training set.
    #[serde(default = "default_home")]
    pub home_water: WaterType,
    #[serde(default = "default_home_depth")]
    pub home_depth: [f32; 2],
    /// Depth range for the paired set and the shifted evaluation splits.
    #[serde(default = "default_depth")]
    pub depth_range: [f32; 2],
    /// Explicit first global sample index per split; contiguous when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_offsets: Option<BTreeMap<String, u64>>,
}

fn default_home() -> WaterType {
    WaterType::Greenish
}

fn default_home_depth() -> [f32; 2] {
    [0.5, 1.0]
}

fn default_depth() -> [f32; 2] {
    [0.5, 2.0]
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneConfig::default(),
            presets: WaterPresets::default(),
            sizes: DatasetSizes::default(),
            home_water: default_home(),
            home_depth: default_home_depth(),
            depth_range: default_depth(),
            split_offsets: None,
        }
    }
}

/// Half-open range of global sample indices owned by one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedRange {
    pub split: String,
    pub start: u64,
    pub len: u64,
}

/// Validates that split seed ranges are pairwise disjoint.
pub fn partition_seeds(ranges: &[SeedRange]) -> Result<()> {
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            if a.len > 0 && b.len > 0 && a.start < b.start + b.len && b.start < a.start + a.len {
                return invalid(format!(
                    "seed ranges of {} [{}, {}) and {} [{}, {}) overlap",
                    a.split,
                    a.start,
                    a.start + a.len,
                    b.split,
                    b.start,
                    b.start + b.len
                ));
            }
        }
    }
    Ok(())
}

const SCENE_STREAM: u64 = 0x5ce7e;
const WATER_STREAM: u64 = 0x3a7e;

/// Every split of a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub config: DatasetConfig,
    /// Paired synthetic set over mixed water types.
    pub paired: Vec<PairedSample>,
    /// Labelled set degraded with the home water type.
    pub labeled: Vec<LabeledSample>,
    pub eval: BTreeMap<EvalSplit, Vec<EvalSample>>,
}

impl Datasets {
    /// The unpaired set: the labelled images without their labels.
    pub fn unpaired(&self) -> impl Iterator<Item = &Image> {
        self.labeled.iter().map(|s| &s.image)
    }

    pub fn eval_split(&self, split: EvalSplit) -> &[EvalSample] {
        self.eval.get(&split).map(Vec::as_slice).unwrap_or_default()
    }

    /// SHA-256 over the exported byte representation of every split.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"d_ps");
        for s in &self.paired {
            h.update(s.water.name().as_bytes());
            h.update(s.degraded.to_rgb8());
            h.update(s.clear.to_rgb8());
        }
        h.update(b"d_lr");
        for (i, s) in self.labeled.iter().enumerate() {
            h.update(s.image.to_rgb8());
            h.update(label_rows(i, &s.gts()).as_bytes());
        }
        for (split, samples) in &self.eval {
            h.update(split.name().as_bytes());
            for (i, s) in samples.iter().enumerate() {
                h.update(s.water.name().as_bytes());
                h.update(s.degraded.to_rgb8());
                h.update(s.clear.to_rgb8());
                h.update(label_rows(i, &s.gts).as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// CSV label rows `index,x1,y1,x2,y2,class` for one image.
pub(crate) fn label_rows(index: usize, gts: &[GtBox]) -> String {
    gts.iter()
        .map(|g| format!("{index},{},{},{},{},{}\n", g.bbox.x1, g.bbox.y1, g.bbox.x2, g.bbox.y2, g.class_id))
        .collect()
}

fn ranges_for(cfg: &DatasetConfig) -> Vec<SeedRange> {
    let mut lens: Vec<(String, u64)> = vec![
        ("d_ps".into(), cfg.sizes.paired as u64),
        ("d_lr".into(), cfg.sizes.labeled as u64),
    ];
    for split in EvalSplit::ALL {
        lens.push((format!("eval_{split}"), cfg.sizes.eval_per_split as u64));
    }
    let mut next = 0;
    lens.into_iter()
        .map(|(split, len)| {
            let start = match cfg.split_offsets.as_ref().and_then(|m| m.get(&split)) {
                Some(&s) => s,
                None => next,
            };
            next = next.max(start + len);
            SeedRange { split, start, len }
        })
        .collect()
}

fn quantized(mut img: Image) -> Image {
    img.quantize_u8();
    img
}

fn degrade_with(clear: &Image, params: &DegradationParams) -> Image {
    quantized(degrade(clear, params))
}

/// Generates every split. Deterministic in the config, independent of thread count.
pub fn build_datasets(cfg: &DatasetConfig) -> Result<Datasets> {
    cfg.scene.validate()?;
    let sizes = cfg.sizes;
    if sizes.paired == 0 || sizes.labeled == 0 || sizes.eval_per_split == 0 {
        return invalid("dataset sizes must be >= 1");
    }
    for range in [cfg.home_depth, cfg.depth_range] {
        if !(range[0] >= 0.0 && range[1] >= range[0]) {
            return invalid(format!("bad depth range {range:?}"));
        }
    }
    if cfg.home_water == WaterType::Clear {
        return invalid("home water type must be a degrading one");
    }
    let ranges = ranges_for(cfg);
    partition_seeds(&ranges)?;
    let seed = cfg.scene.seed;
    let scene = |global: u64| {
        render_scene(&cfg.scene, derive_seed(seed, SCENE_STREAM, global)).map(|mut s| {
            s.image.quantize_u8();
            s
        })
    };

    let paired = (0..sizes.paired as u64)
        .into_par_iter()
        .map(|i| {
            let global = ranges[0].start + i;
            let clear = scene(global)?.image;
            let mut rng = rng_for(seed, WATER_STREAM, global);
            let water = WaterType::SHIFTED[rng.random_range(0..3)];
            let params = cfg.presets.sample(water, cfg.depth_range, &mut rng);
            Ok(PairedSample { degraded: degrade_with(&clear, &params), clear, water })
        })
        .collect::<Result<Vec<_>>>()?;

    let labeled = (0..sizes.labeled as u64)
        .into_par_iter()
        .map(|i| {
            let global = ranges[1].start + i;
            let s = scene(global)?;
            let mut rng = rng_for(seed, WATER_STREAM, global);
            let params = cfg.presets.sample(cfg.home_water, cfg.home_depth, &mut rng);
            Ok(LabeledSample { image: degrade_with(&s.image, &params), ..s })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut eval = BTreeMap::new();
    for (k, split) in EvalSplit::ALL.into_iter().enumerate() {
        let range = &ranges[2 + k];
        let (water, depth) = match split {
            EvalSplit::Home => (cfg.home_water, cfg.home_depth),
            EvalSplit::Greenish => (WaterType::Greenish, cfg.depth_range),
            EvalSplit::Bluish => (WaterType::Bluish, cfg.depth_range),
            EvalSplit::Turbid => (WaterType::Turbid, cfg.depth_range),
        };
        let samples = (0..sizes.eval_per_split as u64)
            .into_par_iter()
            .map(|i| {
                let global = range.start + i;
                let s = scene(global)?;
                let mut rng = rng_for(seed, WATER_STREAM ^ split.stream(), global);
                let params = cfg.presets.sample(water, depth, &mut rng);
                let gts = s.gts();
                Ok(EvalSample { degraded: degrade_with(&s.image, &params), clear: s.image, gts, water })
            })
            .collect::<Result<Vec<_>>>()?;
        eval.insert(split, samples);
    }

    Ok(Datasets { config: cfg.clone(), paired, labeled, eval })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            sizes: DatasetSizes { paired: 8, labeled: 8, eval_per_split: 4 },
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn deterministic_hash() {
        let a = build_datasets(&small()).unwrap();
        let b = build_datasets(&small()).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let mut other = small();
        other.scene.seed = 1;
        assert_ne!(build_datasets(&other).unwrap().content_hash(), a.content_hash());
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let mut cfg = small();
        cfg.split_offsets = Some([("d_ps".to_string(), 0), ("d_lr".to_string(), 4)].into_iter().collect());
        assert!(build_datasets(&cfg).is_err());
    }

    #[test]
    fn partition_detects_overlap() {
        let r = |s: &str, start, len| SeedRange { split: s.into(), start, len };
        assert!(partition_seeds(&[r("a", 0, 4), r("b", 4, 4)]).is_ok());
        assert!(partition_seeds(&[r("a", 0, 5), r("b", 4, 4)]).is_err());
        assert!(partition_seeds(&[r("a", 0, 0), r("b", 0, 4)]).is_ok());
    }

    #[test]
    fn pairs_are_degraded_and_labels_survive() {
        let d = build_datasets(&small()).unwrap();
        assert_eq!(d.paired.len(), 8);
        assert_eq!(d.labeled.len(), 8);
        for p in &d.paired {
            assert!(p.degraded.same_size(&p.clear));
            assert_ne!(p.degraded, p.clear);
        }
        assert_eq!(d.unpaired().count(), 8);
        // geometry is untouched by degradation: labels equal the clear render's
        let cfg = small();
        let scene = render_scene(&cfg.scene, derive_seed(cfg.scene.seed, SCENE_STREAM, 8)).unwrap();
        assert_eq!(d.labeled[0].boxes, scene.boxes);
        assert_eq!(d.labeled[0].classes, scene.classes);
    }
}
