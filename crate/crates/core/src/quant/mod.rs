//! Post-training 8-bit quantization.
//!
//! Activations use per-tensor affine int8 (`r = (q - zero_point) * scale`)
//! with ranges that always contain zero. Kernels use per-tensor symmetric
//! int8 (zero point 0) and biases are int32 at scale `s_in * s_w`. Every
//! rounding step rounds half away from zero.

use alloc::vec::Vec;

use crate::error::shape_err;
use crate::{round_half_away, Result, Tensor};

pub mod kernels;
pub mod model;

pub use kernels::{qconcat, qconv2d, qmaxpool2, qrelu, qupconv2, requantize, QConvParams, SigmoidLut};
pub use model::{calibrate, fold_batchnorm, quantize_weights, ActivationRange, QuantLayer, QuantWeightSet};

/// Affine int8 mapping.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantParams {
    pub const fn new(scale: f64, zero_point: i32) -> Self {
        Self { scale, zero_point }
    }

    /// Covers `[min(0, min), max(0, max)]` with the full int8 range. An
    /// all-zero range widens to `[0, 1]`.
    pub fn from_range(min: f32, max: f32) -> Self {
        let lo = (min as f64).min(0.0);
        let mut hi = (max as f64).max(0.0);
        if hi - lo <= 0.0 {
            hi = lo + 1.0;
        }
        let scale = (hi - lo) / 255.0;
        let zero_point = round_half_away(-128.0 - lo / scale).clamp(-128.0, 127.0) as i32;
        Self { scale, zero_point }
    }

    #[inline]
    pub fn quantize(&self, r: f32) -> i8 {
        let q = round_half_away(r as f64 / self.scale) + self.zero_point as f64;
        q.clamp(-128.0, 127.0) as i8
    }

    #[inline]
    pub fn dequantize(&self, q: i8) -> f32 {
        ((q as i32 - self.zero_point) as f64 * self.scale) as f32
    }

    /// Smallest and largest representable real values.
    pub fn range(&self) -> (f32, f32) {
        (self.dequantize(i8::MIN), self.dequantize(i8::MAX))
    }

    pub fn is_valid(&self) -> bool {
        self.scale > 0.0 && self.scale.is_finite() && (-128..=127).contains(&self.zero_point)
    }
}

/// Int8 tensor with one set of affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub dims: [usize; 4],
    pub data: Vec<i8>,
    pub qp: QuantParams,
}

impl QuantTensor {
    pub fn new(dims: [usize; 4], data: Vec<i8>, qp: QuantParams) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(shape_err!("int8 data length {} does not match dims {:?}", data.len(), dims));
        }
        Ok(Self { dims, data, qp })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[3]
    }
}

pub fn quantize(t: &Tensor, qp: QuantParams) -> QuantTensor {
    QuantTensor {
        dims: t.dims(),
        data: t.data().iter().map(|&r| qp.quantize(r)).collect(),
        qp,
    }
}

pub fn dequantize(q: &QuantTensor) -> Tensor {
    let data = q.data.iter().map(|&v| q.qp.dequantize(v)).collect();
    Tensor::new(q.dims, data).expect("QuantTensor dims are consistent")
}

/// Largest accepted convolution fan-in: 3 x 3 x 1024 taps keeps
/// `taps * 255 * 127` plus a bounded bias inside an i32.
pub const MAX_FAN_IN: usize = 9 * 1024;

/// Biases are clamped to this magnitude so the accumulator cannot overflow.
pub const MAX_BIAS: i32 = 1 << 30;

/// Per-tensor symmetric quantization: `scale = max|w| / 127`, zero point 0.
/// An all-zero tensor gets scale 1.
pub fn quantize_symmetric(values: &[f32]) -> (Vec<i8>, f64) {
    let max_abs = values.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 };
    let q = values
        .iter()
        .map(|&v| round_half_away(v as f64 / scale).clamp(-127.0, 127.0) as i8)
        .collect();
    (q, scale)
}

/// `round(bias / scale)`, clamped to `±MAX_BIAS`.
pub fn quantize_bias(bias: &[f32], scale: f64) -> Vec<i32> {
    bias.iter()
        .map(|&b| round_half_away(b as f64 / scale).clamp(-(MAX_BIAS as f64), MAX_BIAS as f64) as i32)
        .collect()
}
