//! Tiny two-convolution network with the same contract as the real backbones.
//! Used for desk-scale runs where no pretrained weights are available.

use candle_core::{Module, Tensor};

use super::layers::{global_avg_pool, Conv2d, ConvConfig};
use super::params::ParamBuilder;
use crate::error::Result;

pub(crate) const FEATURES: usize = 16;

#[derive(Debug, Clone)]
pub(crate) struct StubNet {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl StubNet {
    pub fn new(pb: &ParamBuilder) -> Result<Self> {
        let cfg = ConvConfig {
            stride: 2,
            padding: 1,
            bias: true,
            ..Default::default()
        };
        Ok(Self {
            conv1: Conv2d::new(&pb.pp("conv1"), 3, 8, 3, cfg)?,
            conv2: Conv2d::new(&pb.pp("conv2"), 8, FEATURES, 3, cfg)?,
        })
    }
}

impl Module for StubNet {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let x = self.conv1.forward(x)?.relu()?;
        let x = self.conv2.forward(&x)?.relu()?;
        global_avg_pool(&x)
    }
}
