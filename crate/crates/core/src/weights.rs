//! Named parameter tensors bound to a [`Graph`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::shape_err;
use crate::unet::{Graph, ParamRole};
use crate::{Error, Result};

/// A parameter tensor of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(shape_err!("parameter shape {:?} holds {} values", shape, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn kernel_dims(&self) -> Result<[usize; 4]> {
        <[usize; 4]>::try_from(&self.shape[..])
            .map_err(|_| shape_err!("expected a rank-4 kernel, got shape {:?}", self.shape))
    }
}

/// Float parameters for one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    /// Spec string of the model, e.g. `6/64/Y/1.1`.
    pub spec: String,
    /// Free-form provenance.
    pub note: String,
    pub params: BTreeMap<String, Param>,
}

impl WeightSet {
    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn scalar_count(&self) -> u64 {
        self.params.values().map(|p| p.data.len() as u64).sum()
    }

    /// Scalars excluding normalization running statistics.
    pub fn trainable_scalar_count(&self) -> u64 {
        self.params
            .iter()
            .filter(|(name, _)| !name.ends_with(".mean") && !name.ends_with(".var"))
            .map(|(_, p)| p.data.len() as u64)
            .sum()
    }

    /// Checks that the set binds exactly the graph's parameters with the
    /// expected shapes.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        let expected = graph.params();
        for info in &expected {
            let p = self.get(&info.name)?;
            if p.shape != info.shape {
                return Err(shape_err!(
                    "parameter `{}` has shape {:?}, graph expects {:?}",
                    info.name,
                    p.shape,
                    info.shape
                ));
            }
        }
        if self.params.len() != expected.len() {
            let known: Vec<&str> = expected.iter().map(|p| p.name.as_str()).collect();
            if let Some(extra) = self.params.keys().find(|k| !known.contains(&k.as_str())) {
                return Err(Error::UnexpectedParam(extra.clone()));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

/// Random parameters for testing without a trained model.
///
/// Kernels are He-normal (`std = sqrt(2 / fan_in)`). Biases are small
/// normals; normalization layers get mildly perturbed affine parameters and
/// running statistics so folding and bias quantization are exercised.
pub fn generate_random_weights(graph: &Graph, seed: u64) -> WeightSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f32 { rng.sample(StandardNormal) };
    let mut params = BTreeMap::new();
    for info in graph.params() {
        let n = info.len();
        let data: Vec<f32> = match info.role {
            ParamRole::Kernel => {
                let fan_in: usize = info.shape[..3].iter().product();
                let std = libm::sqrtf(2.0 / fan_in as f32);
                (0..n).map(|_| normal() * std).collect()
            }
            ParamRole::Bias => (0..n).map(|_| 0.05 * normal()).collect(),
            ParamRole::Gamma => (0..n).map(|_| 1.0 + 0.1 * normal()).collect(),
            ParamRole::Beta => (0..n).map(|_| 0.05 * normal()).collect(),
            ParamRole::Mean => (0..n).map(|_| 0.05 * normal()).collect(),
            ParamRole::Var => (0..n).map(|_| 1.0 + 0.2 * libm::fabsf(normal())).collect(),
        };
        params.insert(info.name, Param { shape: info.shape, data });
    }
    WeightSet {
        spec: graph.spec.to_string(),
        note: alloc::format!("random he-normal weights, seed {seed}"),
        params,
    }
}

/// All parameters zero, except normalization variances, which are one.
pub fn zero_weights(graph: &Graph) -> WeightSet {
    let params = graph
        .params()
        .into_iter()
        .map(|info| {
            let fill = if info.role == ParamRole::Var { 1.0 } else { 0.0 };
            let data = alloc::vec![fill; info.len()];
            (info.name, Param { shape: info.shape, data })
        })
        .collect();
    WeightSet {
        spec: graph.spec.to_string(),
        note: "zero weights".into(),
        params,
    }
}
