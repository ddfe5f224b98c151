use candle_core::{Module, Tensor};

use super::params::{Init, ParamBuilder};
use crate::error::Result;

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvConfig {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl Default for ConvConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
            bias: false,
        }
    }
}

impl Conv2d {
    pub fn new(pb: &ParamBuilder, c_in: usize, c_out: usize, kernel: usize, cfg: ConvConfig) -> Result<Self> {
        let fan_in = (c_in / cfg.groups) * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = pb.weight(
            "weight",
            &[c_out, c_in / cfg.groups, kernel, kernel],
            Init::Uniform(bound),
        )?;
        let bias = if cfg.bias {
            Some(pb.weight("bias", &[c_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride: cfg.stride,
            padding: cfg.padding,
            groups: cfg.groups,
        })
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, self.groups)?;
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?),
            None => Ok(y),
        }
    }
}

/// Batch normalization with frozen running statistics (inference form).
/// The affine weight and bias stay trainable.
#[derive(Debug, Clone)]
pub(crate) struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
}

const BN_EPS: f64 = 1e-5;

impl BatchNorm2d {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.weight("weight", &[channels], Init::Ones)?,
            bias: pb.weight("bias", &[channels], Init::Zeros)?,
            running_mean: pb.buffer("running_mean", &[channels], Init::Zeros)?,
            running_var: pb.buffer("running_var", &[channels], Init::Ones)?,
        })
    }
}

impl Module for BatchNorm2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let c = self.weight.dim(0)?;
        let scale = self
            .weight
            .div(&(self.running_var.affine(1.0, BN_EPS)?.sqrt()?))?;
        let shift = self.bias.sub(&self.running_mean.mul(&scale)?)?;
        x.broadcast_mul(&scale.reshape((1, c, 1, 1))?)?
            .broadcast_add(&shift.reshape((1, c, 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// Weights `U(±1/√fan_in)`, bias zero.
    pub fn new(pb: &ParamBuilder, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Ok(Self {
            weight: pb.weight("weight", &[d_out, d_in], Init::Uniform(bound))?,
            bias: pb.weight("bias", &[d_out], Init::Zeros)?,
        })
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)
    }
}

/// `(N, C, H, W)` → `(N, C)`.
pub(crate) fn global_avg_pool(x: &Tensor) -> candle_core::Result<Tensor> {
    x.mean(3)?.mean(2)
}

/// 3×3 max pool, stride 2, padding 1. Only valid on non-negative input
/// (after ReLU), where zero padding behaves like -∞ padding.
pub(crate) fn max_pool_3x3_s2(x: &Tensor) -> candle_core::Result<Tensor> {
    x.pad_with_zeros(2, 1, 1)?
        .pad_with_zeros(3, 1, 1)?
        .max_pool2d_with_stride(3, 2)
}
