//! Calibration and assembly of a quantized model.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{kernels::QConvParams, quantize_bias, quantize_symmetric, QuantParams, MAX_FAN_IN};
use crate::engine::{self, HEAD_LOGITS};
use crate::tensor::Padding;
use crate::unet::{param_name, Graph, Op, ParamRole};
use crate::{Error, Result, Tensor, WeightSet};

/// Observed value range of one activation tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationRange {
    pub min: f32,
    pub max: f32,
}

impl ActivationRange {
    fn update(&mut self, t: &Tensor) {
        for &v in t.data() {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }
}

/// Observed ranges over the calibration images, per activation name.
pub fn observe_ranges(graph: &Graph, weights: &WeightSet, images: &[Tensor]) -> Result<BTreeMap<String, ActivationRange>> {
    if images.is_empty() {
        return Err(Error::Calibration("calibration set is empty".into()));
    }
    let mut ranges: BTreeMap<String, ActivationRange> = BTreeMap::new();
    let mut bad: Option<String> = None;
    for image in images {
        engine::run_float_observed(graph, weights, image, &mut |name, t| {
            if bad.is_none() && !t.is_finite() {
                bad = Some(name.to_string());
            }
            ranges
                .entry(name.to_string())
                .or_insert(ActivationRange {
                    min: f32::INFINITY,
                    max: f32::NEG_INFINITY,
                })
                .update(t);
        })?;
        if let Some(name) = bad.take() {
            return Err(Error::NonFinite(name));
        }
    }
    Ok(ranges)
}

/// Runs the float engine over `images` and converts each activation's
/// observed (min, max) into affine parameters.
pub fn calibrate(graph: &Graph, weights: &WeightSet, images: &[Tensor]) -> Result<BTreeMap<String, QuantParams>> {
    Ok(observe_ranges(graph, weights, images)?
        .into_iter()
        .map(|(name, r)| (name, QuantParams::from_range(r.min, r.max)))
        .collect())
}

/// A convolution with its normalization folded in: kernel (kh, kw, c_in, c_out)
/// and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedConv {
    pub kernel: Vec<f32>,
    pub kernel_dims: [usize; 4],
    pub bias: Vec<f32>,
}

/// Folds inference batch norm into the preceding convolution:
/// `w' = w * g / sqrt(v + eps)`, `b' = (b - m) * g / sqrt(v + eps) + beta`.
pub fn fold_batchnorm(graph: &Graph, weights: &WeightSet) -> Result<BTreeMap<String, FoldedConv>> {
    let mut out = BTreeMap::new();
    for node in &graph.nodes {
        let (layer, norm) = match &node.op {
            Op::Conv { layer, norm, .. } => (layer, *norm),
            Op::UpConv { layer, .. } | Op::Head { layer, .. } => (layer, false),
            _ => continue,
        };
        let k = weights.get(&param_name(layer, ParamRole::Kernel))?;
        let b = weights.get(&param_name(layer, ParamRole::Bias))?;
        let kernel_dims = k.kernel_dims()?;
        let mut kernel = k.data.clone();
        let mut bias = b.data.clone();
        if norm {
            let (scale, shift) = engine::norm_params(weights, layer)?.affine()?;
            let cout = kernel_dims[3];
            for row in kernel.chunks_exact_mut(cout) {
                for (v, s) in row.iter_mut().zip(&scale) {
                    *v *= s;
                }
            }
            for ((v, s), t) in bias.iter_mut().zip(&scale).zip(&shift) {
                *v = *v * s + t;
            }
        }
        out.insert(
            layer.clone(),
            FoldedConv {
                kernel,
                kernel_dims,
                bias,
            },
        );
    }
    Ok(out)
}

/// One quantized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub kernel: Vec<i8>,
    pub kernel_dims: [usize; 4],
    pub kernel_scale: f64,
    pub bias: Vec<i32>,
    /// `s_in * kernel_scale`.
    pub bias_scale: f64,
}

impl QuantLayer {
    pub fn params(&self) -> QConvParams<'_> {
        QConvParams {
            kernel: &self.kernel,
            kernel_dims: self.kernel_dims,
            kernel_scale: self.kernel_scale,
            bias: &self.bias,
            stride: 1,
            padding: Padding::Same,
        }
    }
}

/// Quantized parameters plus per-activation affine parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantWeightSet {
    pub spec: String,
    pub note: String,
    pub layers: BTreeMap<String, QuantLayer>,
    pub activations: BTreeMap<String, QuantParams>,
}

impl QuantWeightSet {
    pub fn layer(&self, name: &str) -> Result<&QuantLayer> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::MissingParam(param_name(name, ParamRole::Kernel)))
    }

    /// Every layer and every activation of `graph` must be present.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        for node in &graph.nodes {
            if !self.activations.contains_key(&node.name) {
                return Err(Error::Uncalibrated(node.name.clone()));
            }
            if let Some(layer) = node.op.layer() {
                let l = self.layer(layer)?;
                let expect = graph
                    .params()
                    .into_iter()
                    .find(|p| p.layer == layer && p.role == ParamRole::Kernel)
                    .map(|p| p.shape)
                    .unwrap_or_default();
                if l.kernel_dims[..] != expect[..] || l.bias.len() != l.kernel_dims[3] {
                    return Err(Error::Shape(alloc::format!(
                        "quantized layer `{}` has kernel {:?}, graph expects {:?}",
                        layer,
                        l.kernel_dims,
                        expect
                    )));
                }
            }
        }
        if !self.activations.contains_key(HEAD_LOGITS) {
            return Err(Error::Uncalibrated(HEAD_LOGITS.into()));
        }
        Ok(())
    }
}

/// Builds the quantized model from float weights and calibrated activation
/// parameters. Normalization is folded first; kernels are per-tensor
/// symmetric; biases are int32 at `s_in * s_w`. Pool outputs inherit their
/// input's parameters.
pub fn quantize_weights(
    graph: &Graph,
    weights: &WeightSet,
    activations: &BTreeMap<String, QuantParams>,
) -> Result<QuantWeightSet> {
    if !weights.is_finite() {
        return Err(Error::NonFinite("weights".into()));
    }
    let folded = fold_batchnorm(graph, weights)?;
    let act = |name: &str| {
        activations
            .get(name)
            .copied()
            .ok_or_else(|| Error::Uncalibrated(name.to_string()))
    };

    let mut acts = BTreeMap::new();
    let mut layers = BTreeMap::new();
    for node in &graph.nodes {
        let qp = match node.op {
            Op::MaxPool => acts[&graph.nodes[node.inputs[0]].name],
            _ => act(&node.name)?,
        };
        acts.insert(node.name.clone(), qp);

        let Some(layer) = node.op.layer() else { continue };
        let f = &folded[layer];
        let taps = f.kernel_dims[..3].iter().product::<usize>();
        if taps > MAX_FAN_IN {
            return Err(Error::FanIn {
                layer: layer.to_string(),
                taps,
                limit: MAX_FAN_IN,
            });
        }
        let s_in: QuantParams = acts[&graph.nodes[node.inputs[0]].name];
        let (kernel, kernel_scale) = quantize_symmetric(&f.kernel);
        let bias_scale = s_in.scale * kernel_scale;
        layers.insert(
            layer.to_string(),
            QuantLayer {
                kernel,
                kernel_dims: f.kernel_dims,
                kernel_scale,
                bias: quantize_bias(&f.bias, bias_scale),
                bias_scale,
            },
        );
    }
    acts.insert(HEAD_LOGITS.to_string(), act(HEAD_LOGITS)?);

    Ok(QuantWeightSet {
        spec: weights.spec.clone(),
        note: weights.note.clone(),
        layers,
        activations: acts,
    })
}
