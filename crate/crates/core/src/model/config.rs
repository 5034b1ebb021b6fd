use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Architecture schedule: channel widths, strides, anchors and head sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    /// One entry per backbone stage; stage `i` runs at stride `4 << i`.
    pub stage_channels: Vec<usize>,
    pub det_strides: Vec<usize>,
    /// `(w, h)` in pixels, one list of anchors per detection stride.
    pub anchors: Vec<Vec<[f32; 2]>>,
    pub class_count: usize,
    /// Decoder widths; the first runs at the shallower detection stride and
    /// each further entry doubles the resolution. The last level sits at
    /// half the input resolution; a final x2 upsample restores it.
    pub uie_channels: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 96,
            stem_channels: 16,
            stage_channels: vec![32, 64, 128],
            det_strides: vec![8, 16],
            anchors: vec![
                vec![[10.0, 10.0], [18.0, 14.0], [14.0, 22.0]],
                vec![[28.0, 28.0], [44.0, 32.0], [34.0, 52.0]],
            ],
            class_count: 4,
            uie_channels: vec![32, 16, 8],
            leaky_slope: 0.1,
        }
    }
}

impl NetworkConfig {
    pub fn stage_strides(&self) -> Vec<usize> {
        (0..self.stage_channels.len()).map(|i| 4 << i).collect()
    }

    /// Index of the backbone stage that feeds detection stride `stride`.
    pub fn stage_for_stride(&self, stride: usize) -> Option<usize> {
        self.stage_strides().iter().position(|&s| s == stride)
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchors.first().map_or(0, Vec::len)
    }

    /// Channels of each raw detection grid: `A * (5 + K)`.
    pub fn pred_channels(&self) -> usize {
        self.anchors_per_cell() * (5 + self.class_count)
    }

    pub fn grid_size(&self, stride: usize) -> usize {
        self.input_size / stride
    }

    pub fn embedding_dim(&self) -> usize {
        self.stage_channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 || self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return invalid("channel counts must be positive");
        }
        let deepest = *self.stage_strides().last().expect("non-empty");
        if self.input_size == 0 || self.input_size % deepest != 0 {
            return invalid(format!("input size {} must be a multiple of {deepest}", self.input_size));
        }
        if self.det_strides.len() != 2 {
            return invalid("exactly two detection strides are supported (shallow skip + deepest)");
        }
        if self.det_strides.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!("detection strides must ascend, got {:?}", self.det_strides));
        }
        for &s in &self.det_strides {
            if self.stage_for_stride(s).is_none() {
                return invalid(format!("no backbone stage at stride {s}"));
            }
        }
        if self.det_strides[1] != deepest {
            return invalid("the deepest detection stride must be the last backbone stage");
        }
        if self.anchors.len() != self.det_strides.len() {
            return invalid("need one anchor list per detection stride");
        }
        let a = self.anchors_per_cell();
        if a == 0 || self.anchors.iter().any(|l| l.len() != a) {
            return invalid("every stride needs the same positive number of anchors");
        }
        if self.anchors.iter().flatten().any(|&[w, h]| !(w > 0.0 && h > 0.0)) {
            return invalid("anchors must be positive");
        }
        if self.class_count == 0 {
            return invalid("class_count must be at least 1");
        }
        if self.uie_channels.is_empty() || self.uie_channels.contains(&0) {
            return invalid("decoder channels must be positive");
        }
        if self.uie_channels.iter().any(|c| c % 2 != 0) || self.stage_channels.iter().any(|c| c % 2 != 0) {
            return invalid("block widths must be even (channels are split in half)");
        }
        if 1usize << self.uie_channels.len() != self.det_strides[0] {
            return invalid(format!(
                "{} decoder levels cannot climb from stride {} to full resolution",
                self.uie_channels.len(),
                self.det_strides[0]
            ));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return invalid("leaky slope must lie in [0, 1)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = NetworkConfig::default();
        c.validate().unwrap();
        assert_eq!(c.pred_channels(), 27);
        assert_eq!(c.grid_size(8), 12);
        assert_eq!(c.stage_for_stride(16), Some(2));
    }

    #[test]
    fn rejects_bad_schedules() {
        let mut c = NetworkConfig { det_strides: vec![16, 8], ..Default::default() };
        assert!(c.validate().is_err());
        c = NetworkConfig { input_size: 100, ..Default::default() };
        assert!(c.validate().is_err());
        c = NetworkConfig { uie_channels: vec![16, 8, 8, 8], ..Default::default() };
        assert!(c.validate().is_err());
        c = NetworkConfig::default();
        c.anchors[1][0] = [0.0, 3.0];
        assert!(c.validate().is_err());
    }
}
