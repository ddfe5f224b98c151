//! MobileNet v1, width multiplier 1.0.
//!
//! Parameter names: `stem.{conv,bn}`, then `blocks.<i>.dw.{conv,bn}` and
//! `blocks.<i>.pw.{conv,bn}` for the 13 depthwise-separable blocks.

use candle_core::{Module, Tensor};

use super::layers::{global_avg_pool, BatchNorm2d, Conv2d, ConvConfig};
use super::params::ParamBuilder;
use crate::error::Result;

pub(crate) const FEATURES: usize = 1024;

/// `(output channels, stride)` of each depthwise-separable block.
const BLOCKS: [(usize, usize); 13] = [
    (64, 1),
    (128, 2),
    (128, 1),
    (256, 2),
    (256, 1),
    (512, 2),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (1024, 2),
    (1024, 1),
];

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    fn new(pb: &ParamBuilder, c_in: usize, c_out: usize, kernel: usize, cfg: ConvConfig) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&pb.pp("conv"), c_in, c_out, kernel, cfg)?,
            bn: BatchNorm2d::new(&pb.pp("bn"), c_out)?,
        })
    }
}

impl Module for ConvBn {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?)?.relu()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MobileNetV1 {
    stem: ConvBn,
    blocks: Vec<(ConvBn, ConvBn)>,
}

impl MobileNetV1 {
    pub fn new(pb: &ParamBuilder) -> Result<Self> {
        let stem = ConvBn::new(
            &pb.pp("stem"),
            3,
            32,
            3,
            ConvConfig {
                stride: 2,
                padding: 1,
                ..Default::default()
            },
        )?;
        let mut c_in = 32;
        let mut blocks = Vec::with_capacity(BLOCKS.len());
        for (i, &(c_out, stride)) in BLOCKS.iter().enumerate() {
            let b = pb.pp("blocks").pp(i.to_string());
            let dw = ConvBn::new(
                &b.pp("dw"),
                c_in,
                c_in,
                3,
                ConvConfig {
                    stride,
                    padding: 1,
                    groups: c_in,
                    bias: false,
                },
            )?;
            let pw = ConvBn::new(&b.pp("pw"), c_in, c_out, 1, ConvConfig::default())?;
            blocks.push((dw, pw));
            c_in = c_out;
        }
        Ok(Self { stem, blocks })
    }
}

impl Module for MobileNetV1 {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut x = self.stem.forward(x)?;
        for (dw, pw) in &self.blocks {
            x = pw.forward(&dw.forward(&x)?)?;
        }
        global_avg_pool(&x)
    }
}
