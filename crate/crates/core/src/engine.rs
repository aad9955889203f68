//! Graph execution over float or quantized weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::quant::{self, kernels, QuantParams, QuantTensor, QuantWeightSet};
use crate::tensor::{self, BatchNorm, ConvParams, Padding};
use crate::unet::{param_name, Graph, Op, ParamRole};
use crate::{Error, Mask, Result, Tensor, WeightSet};

/// Batch-norm epsilon used by every normalization layer.
pub const NORM_EPS: f32 = 1e-3;

/// Activation name of the head's pre-sigmoid logits.
pub const HEAD_LOGITS: &str = "head_logits";

fn check_input(graph: &Graph, image: &Tensor) -> Result<()> {
    let shape = graph.nodes[graph.input].shape;
    if image.dims()[1..] != shape || image.batch() == 0 {
        return Err(shape_err!(
            "image dims {:?} do not match model input (N, {}, {}, {})",
            image.dims(),
            shape[0],
            shape[1],
            shape[2]
        ));
    }
    Ok(())
}

fn kernel<'a>(weights: &'a WeightSet, layer: &str) -> Result<(&'a [f32], [usize; 4], &'a [f32])> {
    let k = weights.get(&param_name(layer, ParamRole::Kernel))?;
    let b = weights.get(&param_name(layer, ParamRole::Bias))?;
    Ok((&k.data, k.kernel_dims()?, &b.data))
}

pub(crate) fn norm_params<'a>(weights: &'a WeightSet, layer: &str) -> Result<BatchNorm<'a>> {
    let p = |role| weights.get(&param_name(layer, role)).map(|p| &p.data[..]);
    Ok(BatchNorm {
        mean: p(ParamRole::Mean)?,
        var: p(ParamRole::Var)?,
        gamma: p(ParamRole::Gamma)?,
        beta: p(ParamRole::Beta)?,
        eps: NORM_EPS,
    })
}

/// Runs the float path, calling `observe(name, tensor)` on every node output
/// and on the head logits (as [`HEAD_LOGITS`]).
pub fn run_float_observed(
    graph: &Graph,
    weights: &WeightSet,
    image: &Tensor,
    observe: &mut dyn FnMut(&str, &Tensor),
) -> Result<Tensor> {
    check_input(graph, image)?;
    let last_use = graph.last_uses();
    let mut values: Vec<Option<Tensor>> = vec![None; graph.nodes.len()];
    for (i, node) in graph.nodes.iter().enumerate() {
        let out = match &node.op {
            Op::Input => image.clone(),
            Op::Conv { layer, norm, .. } => {
                let x = values[node.inputs[0]].as_ref().expect("topological order");
                let (k, kd, b) = kernel(weights, layer)?;
                let mut y = tensor::conv2d(x, &ConvParams::new(k, kd, b))?;
                if *norm {
                    y = tensor::batchnorm_infer(&y, &norm_params(weights, layer)?)?;
                }
                tensor::relu(&y)
            }
            Op::MaxPool => tensor::maxpool2(values[node.inputs[0]].as_ref().expect("topological order"))?,
            Op::UpConv { layer, .. } => {
                let (k, kd, b) = kernel(weights, layer)?;
                let x = values[node.inputs[0]].as_ref().expect("topological order");
                tensor::upconv2(x, &ConvParams::new(k, kd, b))?
            }
            Op::Concat => {
                let a = values[node.inputs[0]].as_ref().expect("topological order");
                let b = values[node.inputs[1]].as_ref().expect("topological order");
                tensor::concat_channels(a, b)?
            }
            Op::Head { layer, .. } => {
                let x = values[node.inputs[0]].as_ref().expect("topological order");
                let (k, kd, b) = kernel(weights, layer)?;
                let logits = tensor::conv2d(x, &ConvParams::new(k, kd, b).with_padding(Padding::Valid))?;
                observe(HEAD_LOGITS, &logits);
                tensor::sigmoid(&logits)
            }
        };
        observe(&node.name, &out);
        values[i] = Some(out);
        for &inp in &node.inputs {
            if last_use[inp] == i {
                values[inp] = None;
            }
        }
    }
    values[graph.output]
        .take()
        .ok_or_else(|| shape_err!("graph output was not produced"))
}

/// Float forward pass. Returns the (N, H, W, 1) probability map.
pub fn run_float(graph: &Graph, weights: &WeightSet, image: &Tensor) -> Result<Tensor> {
    run_float_observed(graph, weights, image, &mut |_, _| {})
}

fn activation(q: &QuantWeightSet, name: &str) -> Result<QuantParams> {
    q.activations
        .get(name)
        .copied()
        .ok_or_else(|| Error::Uncalibrated(name.into()))
}

/// Int8 forward pass: quantizes the input with the recorded input
/// parameters, runs int8 kernels and dequantizes the sigmoid output.
pub fn run_quant(graph: &Graph, qweights: &QuantWeightSet, image: &Tensor) -> Result<Tensor> {
    run_quant_observed(graph, qweights, image, None)
}

/// [`run_quant`] that also hands every node output (and the head logits)
/// to `observe` in quantized form.
pub fn run_quant_observed(
    graph: &Graph,
    qweights: &QuantWeightSet,
    image: &Tensor,
    mut observe: Option<&mut dyn FnMut(&str, &QuantTensor)>,
) -> Result<Tensor> {
    check_input(graph, image)?;
    let last_use = graph.last_uses();
    let mut values: Vec<Option<QuantTensor>> = vec![None; graph.nodes.len()];

    for (i, node) in graph.nodes.iter().enumerate() {
        let input = |k: usize| values[node.inputs[k]].as_ref().expect("topological order");
        let out = match &node.op {
            Op::Input => quant::quantize(image, activation(qweights, &node.name)?),
            Op::Conv { layer, .. } => {
                let l = qweights.layer(layer)?;
                let y = kernels::qconv2d(input(0), &l.params(), activation(qweights, &node.name)?)?;
                kernels::qrelu(&y)
            }
            Op::MaxPool => kernels::qmaxpool2(input(0))?,
            Op::UpConv { layer, .. } => {
                let l = qweights.layer(layer)?;
                kernels::qupconv2(input(0), &l.params(), activation(qweights, &node.name)?)?
            }
            Op::Concat => kernels::qconcat(input(0), input(1), activation(qweights, &node.name)?)?,
            Op::Head { layer, .. } => {
                let l = qweights.layer(layer)?;
                let mut p = l.params();
                p.padding = Padding::Valid;
                let logits = kernels::qconv2d(input(0), &p, activation(qweights, HEAD_LOGITS)?)?;
                if let Some(f) = observe.as_mut() {
                    f(HEAD_LOGITS, &logits);
                }
                let lut = kernels::SigmoidLut::new(logits.qp, activation(qweights, &node.name)?);
                lut.apply(&logits)?
            }
        };
        if let Some(f) = observe.as_mut() {
            f(&node.name, &out);
        }
        values[i] = Some(out);
        for &inp in &node.inputs {
            if last_use[inp] == i {
                values[inp] = None;
            }
        }
    }
    let out = values[graph.output]
        .take()
        .ok_or_else(|| shape_err!("graph output was not produced"))?;
    Ok(quant::dequantize(&out))
}

/// Turns a random-weight model into one whose output separates image
/// regions: the head kernel is made non-negative, then its bias is shifted so
/// that the Otsu threshold of the head logits over `images` sits at logit 0
/// (probability 0.5). Returns the applied bias shift.
pub fn fit_head(graph: &Graph, weights: &mut WeightSet, images: &[Tensor]) -> Result<f32> {
    if images.is_empty() {
        return Err(Error::Calibration("no images to fit the head on".into()));
    }
    let layer = graph
        .nodes
        .iter()
        .find_map(|n| match &n.op {
            Op::Head { layer, .. } => Some(layer.clone()),
            _ => None,
        })
        .ok_or_else(|| shape_err!("graph has no head"))?;
    let kernel = param_name(&layer, ParamRole::Kernel);
    weights.get(&kernel)?;
    for v in &mut weights.params.get_mut(&kernel).expect("checked").data {
        *v = libm::fabsf(*v);
    }
    let mut logits = Vec::new();
    for image in images {
        run_float_observed(graph, weights, image, &mut |name, t| {
            if name == HEAD_LOGITS {
                logits.extend_from_slice(t.data());
            }
        })?;
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(HEAD_LOGITS.into()));
    }
    let shift = -crate::metrics::otsu_threshold(&logits).unwrap_or(0.0);
    let bias = param_name(&layer, ParamRole::Bias);
    weights.get(&bias)?;
    for v in &mut weights.params.get_mut(&bias).expect("checked").data {
        *v += shift;
    }
    weights.note = format!("{}; head fitted on {} images", weights.note, images.len());
    Ok(shift)
}

/// Runs each batch item independently and restacks the results.
pub fn run_batch(images: &Tensor, mut run: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let outs = (0..images.batch())
        .map(|b| run(&images.batch_item(b)?))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&outs)
}

/// Binary mask `prob > threshold` from a (1, H, W, 1) probability map.
pub fn predict_mask(prob: &Tensor, threshold: f32) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {} outside (0, 1)", threshold)));
    }
    let [b, h, w, c] = prob.dims();
    if b != 1 || c != 1 {
        return Err(shape_err!("expected a (1, H, W, 1) probability map, got {:?}", prob.dims()));
    }
    Mask::new(h, w, prob.data().iter().map(|&p| (p > threshold) as u8).collect())
}
