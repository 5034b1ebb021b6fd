//! Static layer table derived from a [`NetworkConfig`]. Weight
//! initialisation, parameter/FLOP accounting and the checkpoint loader all
//! read from this one list, so they cannot drift apart.

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Backbone,
    Det,
    Uie,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Backbone, Part::Det, Part::Uie];

    pub fn prefix(self) -> &'static str {
        match self {
            Part::Backbone => "backbone.",
            Part::Det => "det.",
            Part::Uie => "uie.",
        }
    }

    pub fn of_name(name: &str) -> Option<Part> {
        Part::ALL.into_iter().find(|p| name.starts_with(p.prefix()))
    }
}

/// How a layer's weights are initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// He-uniform for a leaky activation that follows.
    Hidden,
    /// Small weights and a constant bias (prediction layers).
    Output { std: f32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub part: Part,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Output spatial side length at the configured input size.
    pub out_side: usize,
    pub init: Init,
}

impl ConvSpec {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin, self.kernel, self.kernel]
    }

    pub fn params(&self) -> u64 {
        (self.cout * self.cin * self.kernel * self.kernel + self.cout) as u64
    }

    pub fn mult_adds(&self) -> u64 {
        (self.cout * self.cin * self.kernel * self.kernel * self.out_side * self.out_side) as u64
    }
}

struct Builder {
    part: Part,
    layers: Vec<ConvSpec>,
}

impl Builder {
    fn conv(&mut self, name: String, cin: usize, cout: usize, kernel: usize, stride: usize, out_side: usize) {
        self.layers.push(ConvSpec { name, part: self.part, cin, cout, kernel, stride, out_side, init: Init::Hidden });
    }

    fn csp(&mut self, name: &str, c: usize, side: usize) {
        let h = c / 2;
        self.conv(format!("{name}.cv1"), h, h, 1, 1, side);
        self.conv(format!("{name}.cv2"), h, h, 3, 1, side);
        self.conv(format!("{name}.cv3"), h, h, 1, 1, side);
        self.conv(format!("{name}.fuse"), c, c, 1, 1, side);
    }
}

/// Every convolution of the network, in forward order.
pub fn layers(cfg: &NetworkConfig) -> Vec<ConvSpec> {
    let s = cfg.input_size;
    let mut b = Builder { part: Part::Backbone, layers: Vec::new() };
    b.conv("backbone.stem".into(), 3, cfg.stem_channels, 3, 2, s / 2);
    let mut prev = cfg.stem_channels;
    for (i, (&c, stride)) in cfg.stage_channels.iter().zip(cfg.stage_strides()).enumerate() {
        b.conv(format!("backbone.stage{i}.down"), prev, c, 3, 2, s / stride);
        b.csp(&format!("backbone.stage{i}.csp"), c, s / stride);
        prev = c;
    }

    b.part = Part::Det;
    for (&stride, anchors) in cfg.det_strides.iter().zip(&cfg.anchors) {
        let c = cfg.stage_channels[cfg.stage_for_stride(stride).expect("validated")];
        b.conv(format!("det.s{stride}.conv"), c, c, 3, 1, s / stride);
        b.layers.push(ConvSpec {
            name: format!("det.s{stride}.pred"),
            part: Part::Det,
            cin: c,
            cout: anchors.len() * (5 + cfg.class_count),
            kernel: 1,
            stride: 1,
            out_side: s / stride,
            init: Init::Output { std: 0.01 },
        });
    }

    b.part = Part::Uie;
    let (shallow, deep) = (cfg.det_strides[0], cfg.det_strides[1]);
    let c_shallow = cfg.stage_channels[cfg.stage_for_stride(shallow).expect("validated")];
    let u0 = cfg.uie_channels[0];
    b.conv("uie.reduce".into(), cfg.embedding_dim(), u0, 1, 1, s / deep);
    b.conv("uie.skip".into(), c_shallow, u0, 1, 1, s / shallow);
    b.csp("uie.level0.csp", u0, s / shallow);
    let mut side = s / shallow;
    for (i, w) in cfg.uie_channels.windows(2).enumerate() {
        b.conv(format!("uie.level{}.reduce", i + 1), w[0], w[1], 1, 1, side);
        side *= 2;
        b.csp(&format!("uie.level{}.csp", i + 1), w[1], side);
    }
    // the 3-channel output is predicted at half resolution, then upsampled
    b.layers.push(ConvSpec {
        name: "uie.out".into(),
        part: Part::Uie,
        cin: *cfg.uie_channels.last().expect("validated"),
        cout: 3,
        kernel: 1,
        stride: 1,
        out_side: side,
        init: Init::Output { std: 0.05 },
    });
    b.layers
}
