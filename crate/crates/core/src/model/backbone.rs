//! Convolutional backbones with top-down lateral fusion to stride-8 (and stride-4) maps.

use candle_core::{Module, Tensor};
use candle_nn::Conv2d;
use serde::{Deserialize, Serialize};

use super::layers::conv;
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// Plain strided CNN, one stage per halving.
    SmallCnn,
    /// 18-layer residual network without normalization layers.
    Resnet18,
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    down: Option<Conv2d>,
}

impl BasicBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(x)?.relu()?;
        let h = self.conv2.forward(&h)?;
        let skip = match &self.down {
            Some(d) => d.forward(x)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

#[derive(Debug, Clone)]
enum Body {
    Small { stages: Vec<Vec<Conv2d>> },
    Resnet { stem: Conv2d, stages: Vec<Vec<BasicBlock>> },
}

/// Feature pyramid outputs for one batch of images.
pub struct Pyramid {
    /// Stride 8 map, `lateral` channels.
    pub p8: Tensor,
    /// Stride 4 map when requested.
    pub p4: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    body: Body,
    strides: Vec<usize>,
    /// One 1x1 lateral per stage of stride <= 16 (or the deepest stage), deepest first.
    laterals: Vec<(usize, Conv2d)>,
    lateral_channels: usize,
}

impl Backbone {
    pub fn new(
        p: &mut ParamStore,
        name: &str,
        kind: BackboneKind,
        in_channels: usize,
        channels: &[usize],
        convs_per_stage: usize,
        lateral_channels: usize,
    ) -> Result<Self> {
        let (body, strides, stage_channels) = match kind {
            BackboneKind::SmallCnn => {
                if channels.len() < 3 {
                    return Err(Error::Config("small backbone needs at least three stages".into()));
                }
                let mut stages = Vec::new();
                let mut cin = in_channels;
                for (i, &c) in channels.iter().enumerate() {
                    let mut convs = vec![conv(p, &format!("{name}.stage{i}.0"), cin, c, 3, 2, 1)?];
                    for j in 1..convs_per_stage.max(1) {
                        convs.push(conv(p, &format!("{name}.stage{i}.{j}"), c, c, 3, 1, 1)?);
                    }
                    stages.push(convs);
                    cin = c;
                }
                let strides = (0..channels.len()).map(|i| 2usize << i).collect();
                (Body::Small { stages }, strides, channels.to_vec())
            }
            BackboneKind::Resnet18 => {
                let widths = [64, 128, 256, 512];
                let stem = conv(p, &format!("{name}.stem"), in_channels, 64, 7, 2, 3)?;
                let mut stages = Vec::new();
                let mut cin = 64;
                for (i, &c) in widths.iter().enumerate() {
                    let mut blocks = Vec::new();
                    for j in 0..2 {
                        let stride = if i > 0 && j == 0 { 2 } else { 1 };
                        let bn = format!("{name}.layer{i}.{j}");
                        let down = if stride != 1 || cin != c {
                            Some(conv(p, &format!("{bn}.down"), cin, c, 1, stride, 0)?)
                        } else {
                            None
                        };
                        blocks.push(BasicBlock {
                            conv1: conv(p, &format!("{bn}.conv1"), cin, c, 3, stride, 1)?,
                            conv2: conv(p, &format!("{bn}.conv2"), c, c, 3, 1, 1)?,
                            down,
                        });
                        cin = c;
                    }
                    stages.push(blocks);
                }
                (Body::Resnet { stem, stages }, vec![4, 8, 16, 32], widths.to_vec())
            }
        };
        let mut laterals = Vec::new();
        for (i, (&s, &c)) in strides.iter().zip(stage_channels.iter()).enumerate().rev() {
            if s >= 4 {
                laterals.push((i, conv(p, &format!("{name}.lateral{i}"), c, lateral_channels, 1, 1, 0)?));
            }
        }
        if !strides.contains(&8) || !strides.contains(&4) {
            return Err(Error::Config("backbone must produce stride-4 and stride-8 stages".into()));
        }
        Ok(Backbone {
            body,
            strides,
            laterals,
            lateral_channels,
        })
    }

    pub fn lateral_channels(&self) -> usize {
        self.lateral_channels
    }

    fn stages(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut outs = Vec::new();
        match &self.body {
            Body::Small { stages } => {
                let mut h = x.clone();
                for convs in stages {
                    for c in convs {
                        h = c.forward(&h)?.relu()?;
                    }
                    outs.push(h.clone());
                }
            }
            Body::Resnet { stem, stages } => {
                let h = stem.forward(x)?.relu()?;
                // zero padding is neutral after a relu
                let mut h = h.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?.max_pool2d_with_stride(3, 2)?;
                for blocks in stages {
                    for b in blocks {
                        h = b.forward(&h)?;
                    }
                    outs.push(h.clone());
                }
            }
        }
        Ok(outs)
    }

    /// Top-down fusion: upsample the running map and add each shallower lateral.
    pub fn forward(&self, x: &Tensor, want_p4: bool) -> Result<Pyramid> {
        let feats = self.stages(x)?;
        let mut top: Option<Tensor> = None;
        let (mut p8, mut p4) = (None, None);
        for (i, lat) in &self.laterals {
            let stride = self.strides[*i];
            if stride < 8 && !want_p4 {
                break;
            }
            let l = lat.forward(&feats[*i])?;
            let cur = match top {
                None => l,
                Some(t) => {
                    let (_, _, h, w) = l.dims4()?;
                    (t.upsample_nearest2d(h, w)? + l)?
                }
            };
            if stride == 8 {
                p8 = Some(cur.clone());
            }
            if stride == 4 {
                p4 = Some(cur.clone());
            }
            top = Some(cur);
        }
        Ok(Pyramid {
            p8: p8.ok_or_else(|| Error::Config("missing stride-8 map".into()))?,
            p4,
        })
    }
}
