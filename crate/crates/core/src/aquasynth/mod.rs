//! Procedural underwater scenes: clear labelled seabed images, their
//! attenuated/backscattered counterparts, and the dataset splits built
//! from them.

mod datasets;
mod export;
mod render;
mod water;

pub use datasets::{
    build_datasets, partition_seeds, DatasetConfig, DatasetSizes, Datasets, EvalSample, EvalSplit, PairedSample,
    SeedRange,
};
pub use export::{export_datasets, load_datasets, DatasetManifest, MANIFEST_FILE};
pub use render::{render_scene, LabeledSample, SceneConfig};
pub use water::{degrade, invert_degrade, DegradationParams, WaterPreset, WaterPresets, WaterType};
