//! On-disk dataset layout:
//!
//! ```text
//! manifest.json
//! d_ps/{degraded,clear}/NNNNNN.ppm   d_ps/water.csv
//! d_lr/images/NNNNNN.ppm             d_lr/labels.csv
//! d_ur/images/NNNNNN.ppm
//! eval_<split>/{degraded,clear}/NNNNNN.ppm  eval_<split>/labels.csv  eval_<split>/water.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::datasets::{label_rows, DatasetConfig, Datasets, EvalSample, EvalSplit, PairedSample};
use super::render::LabeledSample;
use super::water::{WaterPresets, WaterType};
use crate::boxes::{BBox, GtBox};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "enjoint-dataset-v1";
const LABEL_HEADER: &str = "index,x1,y1,x2,y2,class\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub presets: WaterPresets,
    pub config: DatasetConfig,
    pub counts: BTreeMap<String, usize>,
    pub content_hash: String,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<DatasetManifest> {
        let path = dir.join(MANIFEST_FILE);
        let m: DatasetManifest = serde_json::from_slice(&fs::read(&path)?)?;
        if m.format != FORMAT {
            return Err(format_err(&path, format!("unsupported dataset format {:?}", m.format)));
        }
        Ok(m)
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

fn image_name(i: usize) -> String {
    format!("{i:06}.ppm")
}

fn write_images<'a>(dir: &Path, images: impl Iterator<Item = &'a Image>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, img) in images.enumerate() {
        img.write_ppm(&dir.join(image_name(i)))?;
    }
    Ok(())
}

fn read_images(dir: &Path, count: usize) -> Result<Vec<Image>> {
    (0..count).map(|i| Image::read_ppm(&dir.join(image_name(i)))).collect()
}

fn write_labels(path: &Path, per_image: impl Iterator<Item = Vec<GtBox>>) -> Result<()> {
    let mut out = String::from(LABEL_HEADER);
    for (i, gts) in per_image.enumerate() {
        out.push_str(&label_rows(i, &gts));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_labels(path: &Path, count: usize) -> Result<Vec<Vec<GtBox>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(|h| format!("{h}\n")) != Some(LABEL_HEADER.to_string()) {
        return Err(format_err(path, "missing label header"));
    }
    let mut out = vec![Vec::new(); count];
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(format_err(path, format!("line {}: expected 6 fields", n + 2)));
        }
        let bad = || format_err(path, format!("line {}: unparsable field", n + 2));
        let index: usize = fields[0].parse().map_err(|_| bad())?;
        let c: Vec<f32> = fields[1..5].iter().map(|f| f.parse::<f32>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let class_id: usize = fields[5].parse().map_err(|_| bad())?;
        let slot = out.get_mut(index).ok_or_else(|| format_err(path, format!("image index {index} out of range")))?;
        slot.push(GtBox { bbox: BBox::new(c[0], c[1], c[2], c[3]), class_id });
    }
    Ok(out)
}

fn write_water(path: &Path, water: impl Iterator<Item = WaterType>) -> Result<()> {
    let mut out = String::from("index,water\n");
    for (i, w) in water.enumerate() {
        out.push_str(&format!("{i},{w}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_water(path: &Path, count: usize) -> Result<Vec<WaterType>> {
    let text = fs::read_to_string(path)?;
    let rows: Vec<WaterType> = text
        .lines()
        .skip(1)
        .map(|l| l.split_once(',').and_then(|(_, w)| w.parse().ok()))
        .collect::<Option<_>>()
        .ok_or_else(|| format_err(path, "unparsable water row"))?;
    if rows.len() != count {
        return Err(format_err(path, format!("{} rows, expected {count}", rows.len())));
    }
    Ok(rows)
}

fn eval_dir(root: &Path, split: EvalSplit) -> PathBuf {
    root.join(format!("eval_{split}"))
}

/// Writes every split plus `manifest.json` below `out`.
pub fn export_datasets(data: &Datasets, out: &Path) -> Result<DatasetManifest> {
    let ps = out.join("d_ps");
    write_images(&ps.join("degraded"), data.paired.iter().map(|p| &p.degraded))?;
    write_images(&ps.join("clear"), data.paired.iter().map(|p| &p.clear))?;
    write_water(&ps.join("water.csv"), data.paired.iter().map(|p| p.water))?;

    let lr = out.join("d_lr");
    write_images(&lr.join("images"), data.labeled.iter().map(|s| &s.image))?;
    write_labels(&lr.join("labels.csv"), data.labeled.iter().map(|s| s.gts()))?;
    write_images(&out.join("d_ur").join("images"), data.unpaired())?;

    let mut counts = BTreeMap::new();
    counts.insert("d_ps".to_string(), data.paired.len());
    counts.insert("d_lr".to_string(), data.labeled.len());
    counts.insert("d_ur".to_string(), data.labeled.len());
    for (split, samples) in &data.eval {
        let dir = eval_dir(out, *split);
        write_images(&dir.join("degraded"), samples.iter().map(|s| &s.degraded))?;
        write_images(&dir.join("clear"), samples.iter().map(|s| &s.clear))?;
        write_labels(&dir.join("labels.csv"), samples.iter().map(|s| s.gts.clone()))?;
        write_water(&dir.join("water.csv"), samples.iter().map(|s| s.water))?;
        counts.insert(format!("eval_{split}"), samples.len());
    }

    let manifest = DatasetManifest {
        format: FORMAT.to_string(),
        seed: data.config.scene.seed,
        presets: data.config.presets,
        config: data.config.clone(),
        counts,
        content_hash: data.content_hash(),
    };
    crate::io::write_json_atomic(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads an exported corpus and checks it against its manifest hash.
pub fn load_datasets(dir: &Path) -> Result<Datasets> {
    let manifest = DatasetManifest::read(dir)?;
    let count = |key: &str| {
        manifest.counts.get(key).copied().ok_or_else(|| format_err(&dir.join(MANIFEST_FILE), format!("no count for {key}")))
    };

    let ps = dir.join("d_ps");
    let n_ps = count("d_ps")?;
    let degraded = read_images(&ps.join("degraded"), n_ps)?;
    let clear = read_images(&ps.join("clear"), n_ps)?;
    let water = read_water(&ps.join("water.csv"), n_ps)?;
    let paired = degraded
        .into_iter()
        .zip(clear)
        .zip(water)
        .map(|((degraded, clear), water)| PairedSample { degraded, clear, water })
        .collect();

    let lr = dir.join("d_lr");
    let n_lr = count("d_lr")?;
    let images = read_images(&lr.join("images"), n_lr)?;
    let labels = read_labels(&lr.join("labels.csv"), n_lr)?;
    let labeled = images
        .into_iter()
        .zip(labels)
        .map(|(image, gts)| LabeledSample {
            image,
            boxes: gts.iter().map(|g| g.bbox).collect(),
            classes: gts.iter().map(|g| g.class_id).collect(),
        })
        .collect();

    let mut eval = BTreeMap::new();
    for split in EvalSplit::ALL {
        let key = format!("eval_{split}");
        let Some(&n) = manifest.counts.get(&key) else { continue };
        let d = eval_dir(dir, split);
        let degraded = read_images(&d.join("degraded"), n)?;
        let clear = read_images(&d.join("clear"), n)?;
        let labels = read_labels(&d.join("labels.csv"), n)?;
        let water = read_water(&d.join("water.csv"), n)?;
        let samples: Vec<EvalSample> = degraded
            .into_iter()
            .zip(clear)
            .zip(labels)
            .zip(water)
            .map(|(((degraded, clear), gts), water)| EvalSample { degraded, clear, gts, water })
            .collect();
        eval.insert(split, samples);
    }

    let data = Datasets { config: manifest.config.clone(), paired, labeled, eval };
    let hash = data.content_hash();
    if hash != manifest.content_hash {
        return Err(format_err(
            &dir.join(MANIFEST_FILE),
            format!("content hash {hash} does not match manifest {}", manifest.content_hash),
        ));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aquasynth::{build_datasets, DatasetSizes};

    #[test]
    fn export_then_load_is_lossless() {
        let cfg = DatasetConfig {
            sizes: DatasetSizes { paired: 3, labeled: 4, eval_per_split: 2 },
            ..DatasetConfig::default()
        };
        let data = build_datasets(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_datasets(&data, dir.path()).unwrap();
        assert_eq!(manifest.content_hash, data.content_hash());
        let back = load_datasets(dir.path()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn tampered_label_is_detected() {
        let cfg = DatasetConfig {
            sizes: DatasetSizes { paired: 1, labeled: 2, eval_per_split: 1 },
            ..DatasetConfig::default()
        };
        let data = build_datasets(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_datasets(&data, dir.path()).unwrap();
        let labels = dir.path().join("d_lr/labels.csv");
        let mut text = fs::read_to_string(&labels).unwrap();
        text.push_str("0,1,1,9,9,0\n");
        fs::write(&labels, text).unwrap();
        assert!(matches!(load_datasets(dir.path()), Err(Error::Format { .. })));
    }
}
