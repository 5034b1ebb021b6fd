#![allow(dead_code)]

pub mod map_oracle;

use enjoint::aquasynth::{DatasetConfig, DatasetSizes};
use enjoint::model::NetworkConfig;
use enjoint::trainer::{StageSchedule, TrainConfig};

/// 32 px scenes with a handful of samples per split.
pub fn small_data_config() -> DatasetConfig {
    let mut dc = DatasetConfig::default();
    dc.scene.image_size = 32;
    dc.scene.min_object_size = 6;
    dc.scene.max_object_size = 12;
    dc.sizes = DatasetSizes { paired: 6, labeled: 6, eval_per_split: 3 };
    dc
}

pub fn small_network() -> NetworkConfig {
    NetworkConfig {
        input_size: 32,
        stem_channels: 4,
        stage_channels: vec![8, 8, 16],
        uie_channels: vec![8, 4, 4],
        anchors: vec![vec![[6.0, 6.0], [9.0, 7.0], [7.0, 9.0]], vec![[12.0, 12.0], [16.0, 12.0], [12.0, 16.0]]],
        ..Default::default()
    }
}

pub fn small_train_config() -> TrainConfig {
    TrainConfig {
        network: small_network(),
        schedule: StageSchedule::new(2, 4, 6).unwrap(),
        det_batch: 3,
        enh_batch: 2,
        seed: 5,
        checkpoint_every: 2,
        ..Default::default()
    }
}
