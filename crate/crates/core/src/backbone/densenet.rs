//! DenseNet-121 (growth 32, bottleneck width 4×growth), torchvision parameter names.

use candle_core::{Module, Tensor};

use super::layers::{global_avg_pool, max_pool_3x3_s2, BatchNorm2d, Conv2d, ConvConfig};
use super::params::ParamBuilder;
use crate::error::Result;

pub(crate) const FEATURES: usize = 1024;
const GROWTH: usize = 32;
const BN_SIZE: usize = 4;
const BLOCKS: [usize; 4] = [6, 12, 24, 16];

#[derive(Debug, Clone)]
struct DenseLayer {
    norm1: BatchNorm2d,
    conv1: Conv2d,
    norm2: BatchNorm2d,
    conv2: Conv2d,
}

impl DenseLayer {
    fn new(pb: &ParamBuilder, c_in: usize) -> Result<Self> {
        let inner = BN_SIZE * GROWTH;
        Ok(Self {
            norm1: BatchNorm2d::new(&pb.pp("norm1"), c_in)?,
            conv1: Conv2d::new(&pb.pp("conv1"), c_in, inner, 1, ConvConfig::default())?,
            norm2: BatchNorm2d::new(&pb.pp("norm2"), inner)?,
            conv2: Conv2d::new(
                &pb.pp("conv2"),
                inner,
                GROWTH,
                3,
                ConvConfig {
                    padding: 1,
                    ..Default::default()
                },
            )?,
        })
    }
}

impl Module for DenseLayer {
    /// Returns only the `GROWTH` new channels; the caller concatenates.
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = self.conv1.forward(&self.norm1.forward(x)?.relu()?)?;
        self.conv2.forward(&self.norm2.forward(&y)?.relu()?)
    }
}

#[derive(Debug, Clone)]
struct Transition {
    norm: BatchNorm2d,
    conv: Conv2d,
}

impl Module for Transition {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.conv
            .forward(&self.norm.forward(x)?.relu()?)?
            .avg_pool2d_with_stride(2, 2)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DenseNet121 {
    conv0: Conv2d,
    norm0: BatchNorm2d,
    blocks: Vec<(Vec<DenseLayer>, Option<Transition>)>,
    norm5: BatchNorm2d,
}

impl DenseNet121 {
    pub fn new(pb: &ParamBuilder) -> Result<Self> {
        let f = pb.pp("features");
        let conv0 = Conv2d::new(
            &f.pp("conv0"),
            3,
            64,
            7,
            ConvConfig {
                stride: 2,
                padding: 3,
                ..Default::default()
            },
        )?;
        let norm0 = BatchNorm2d::new(&f.pp("norm0"), 64)?;
        let mut channels = 64;
        let mut blocks = Vec::new();
        for (b, &depth) in BLOCKS.iter().enumerate() {
            let block = f.pp(format!("denseblock{}", b + 1));
            let mut layers = Vec::with_capacity(depth);
            for l in 0..depth {
                layers.push(DenseLayer::new(
                    &block.pp(format!("denselayer{}", l + 1)),
                    channels,
                )?);
                channels += GROWTH;
            }
            let transition = if b + 1 < BLOCKS.len() {
                let t = f.pp(format!("transition{}", b + 1));
                let out = channels / 2;
                let tr = Transition {
                    norm: BatchNorm2d::new(&t.pp("norm"), channels)?,
                    conv: Conv2d::new(&t.pp("conv"), channels, out, 1, ConvConfig::default())?,
                };
                channels = out;
                Some(tr)
            } else {
                None
            };
            blocks.push((layers, transition));
        }
        debug_assert_eq!(channels, FEATURES);
        let norm5 = BatchNorm2d::new(&f.pp("norm5"), channels)?;
        Ok(Self {
            conv0,
            norm0,
            blocks,
            norm5,
        })
    }
}

impl Module for DenseNet121 {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut x = self.norm0.forward(&self.conv0.forward(x)?)?.relu()?;
        x = max_pool_3x3_s2(&x)?;
        for (layers, transition) in &self.blocks {
            for layer in layers {
                let new = layer.forward(&x)?;
                x = Tensor::cat(&[&x, &new], 1)?;
            }
            if let Some(t) = transition {
                x = t.forward(&x)?;
            }
        }
        global_avg_pool(&self.norm5.forward(&x)?.relu()?)
    }
}
