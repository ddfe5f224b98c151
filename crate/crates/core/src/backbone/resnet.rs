//! ResNet-50 (bottleneck v1.5: stride on the 3×3 convolution), torchvision parameter names.

use candle_core::{Module, Tensor};

use super::layers::{global_avg_pool, max_pool_3x3_s2, BatchNorm2d, Conv2d, ConvConfig};
use super::params::ParamBuilder;
use crate::error::Result;

pub(crate) const FEATURES: usize = 2048;
const EXPANSION: usize = 4;

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    fn new(pb: &ParamBuilder, c_in: usize, width: usize, stride: usize) -> Result<Self> {
        let c_out = width * EXPANSION;
        let downsample = if stride != 1 || c_in != c_out {
            let ds = pb.pp("downsample");
            Some((
                Conv2d::new(
                    &ds.pp("0"),
                    c_in,
                    c_out,
                    1,
                    ConvConfig {
                        stride,
                        ..Default::default()
                    },
                )?,
                BatchNorm2d::new(&ds.pp("1"), c_out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(&pb.pp("conv1"), c_in, width, 1, ConvConfig::default())?,
            bn1: BatchNorm2d::new(&pb.pp("bn1"), width)?,
            conv2: Conv2d::new(
                &pb.pp("conv2"),
                width,
                width,
                3,
                ConvConfig {
                    stride,
                    padding: 1,
                    ..Default::default()
                },
            )?,
            bn2: BatchNorm2d::new(&pb.pp("bn2"), width)?,
            conv3: Conv2d::new(&pb.pp("conv3"), width, c_out, 1, ConvConfig::default())?,
            bn3: BatchNorm2d::new(&pb.pp("bn3"), c_out)?,
            downsample,
        })
    }
}

impl Module for Bottleneck {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?)?.relu()?;
        let y = self.bn3.forward(&self.conv3.forward(&y)?)?;
        let shortcut = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?)?,
            None => x.clone(),
        };
        (y + shortcut)?.relu()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ResNet50 {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    blocks: Vec<Bottleneck>,
}

impl ResNet50 {
    pub fn new(pb: &ParamBuilder) -> Result<Self> {
        let conv1 = Conv2d::new(
            &pb.pp("conv1"),
            3,
            64,
            7,
            ConvConfig {
                stride: 2,
                padding: 3,
                ..Default::default()
            },
        )?;
        let bn1 = BatchNorm2d::new(&pb.pp("bn1"), 64)?;
        let mut blocks = Vec::new();
        let mut c_in = 64;
        for (stage, (&depth, &width)) in [3usize, 4, 6, 3]
            .iter()
            .zip(&[64usize, 128, 256, 512])
            .enumerate()
        {
            let layer = pb.pp(format!("layer{}", stage + 1));
            for i in 0..depth {
                let stride = if i == 0 && stage > 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(&layer.pp(i.to_string()), c_in, width, stride)?);
                c_in = width * EXPANSION;
            }
        }
        Ok(Self { conv1, bn1, blocks })
    }
}

impl Module for ResNet50 {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut x = self.bn1.forward(&self.conv1.forward(x)?)?.relu()?;
        x = max_pool_3x3_s2(&x)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        global_avg_pool(&x)
    }
}
