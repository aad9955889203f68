//! Generalized U-Net architectures: `L/F/Y|N/IR` model specs, the layer DAG
//! they expand to, and trainable-parameter accounting.
//!
//! Block definition (all convolutions 3x3 / same / stride 1 unless noted):
//!
//! * encoder level `l` in `0..L-1`: `[conv, (norm), relu] x 2`, then 2x2 max pool
//! * bottleneck (level `L-1`): `[conv, (norm), relu] x 2`
//! * decoder level `l` in `(0..L-1).rev()`: 2x2 stride-2 transposed conv to
//!   width `w_l`, concat with the encoder output of level `l` (encoder first),
//!   `[conv, (norm), relu] x 2`
//! * head: 1x1 conv to one channel, sigmoid
//!
//! Level `l` has `round_half_up(F * IR^l)` channels.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InputSize {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for InputSize {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            channels: 3,
        }
    }
}

/// Architecture parameters of a generalized U-Net.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    /// Depth of the "U", bottleneck included.
    pub levels: usize,
    /// Channels in the first stage.
    pub base_filters: usize,
    /// Layer-to-layer filter increment ratio.
    pub increment_ratio: f64,
    pub use_norm: bool,
    pub input_size: InputSize,
}

impl ModelSpec {
    pub fn new(levels: usize, base_filters: usize, increment_ratio: f64, use_norm: bool) -> Result<Self> {
        Self {
            levels,
            base_filters,
            increment_ratio,
            use_norm,
            input_size: InputSize::default(),
        }
        .validated()
    }

    pub fn with_input_size(mut self, height: usize, width: usize, channels: usize) -> Result<Self> {
        self.input_size = InputSize {
            height,
            width,
            channels,
        };
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Spec(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.base_filters == 0 {
            return Err(Error::Spec("base filters must be >= 1".into()));
        }
        if !(self.increment_ratio >= 1.0) || !self.increment_ratio.is_finite() {
            return Err(Error::Spec(format!(
                "increment ratio must be a finite value >= 1.0, got {}",
                self.increment_ratio
            )));
        }
        let InputSize {
            height,
            width,
            channels,
        } = self.input_size;
        if channels == 0 {
            return Err(Error::Spec("input must have at least one channel".into()));
        }
        let div = 1usize
            .checked_shl(self.levels as u32 - 1)
            .filter(|&d| d <= height.max(width).max(1))
            .ok_or_else(|| Error::Spec(format!("{} levels is too deep for the input", self.levels)))?;
        if height == 0 || width == 0 || height % div != 0 || width % div != 0 {
            return Err(Error::Spec(format!(
                "input {}x{} is not divisible by 2^{} = {}",
                height,
                width,
                self.levels - 1,
                div
            )));
        }
        Ok(())
    }
}

/// Parses `L/F/Y|N/IR`, e.g. `6/64/Y/1.1`. The input size defaults to 128x128x3.
impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Spec(format!("expected L/F/Y|N/IR, got `{}`", s));
        let parts: Vec<&str> = s.trim().split('/').collect();
        let [l, f, n, ir] = parts[..] else {
            return Err(bad());
        };
        let levels = l.parse().map_err(|_| bad())?;
        let base_filters = f.parse().map_err(|_| bad())?;
        let use_norm = match n {
            "Y" | "y" => true,
            "N" | "n" => false,
            _ => return Err(bad()),
        };
        let increment_ratio = ir.parse().map_err(|_| bad())?;
        ModelSpec::new(levels, base_filters, increment_ratio, use_norm)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/",
            self.levels,
            self.base_filters,
            if self.use_norm { "Y" } else { "N" }
        )?;
        if libm::trunc(self.increment_ratio) == self.increment_ratio {
            write!(f, "{:.1}", self.increment_ratio)
        } else {
            write!(f, "{}", self.increment_ratio)
        }
    }
}

/// Channel width of every level: `round_half_up(F * IR^l)`.
pub fn channel_widths(spec: &ModelSpec) -> Vec<usize> {
    (0..spec.levels)
        .map(|l| {
            let w = spec.base_filters as f64 * libm::pow(spec.increment_ratio, l as f64);
            libm::floor(w + 0.5) as usize
        })
        .collect()
}

/// Named model presets.
pub fn preset(name: &str) -> Result<ModelSpec> {
    let filters = match name {
        "disc" | "thyroid_simple" => 40,
        "cup" | "thyroid_complex" => 64,
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    ModelSpec::new(6, filters, 1.1, true)
}

pub const PRESETS: [&str; 4] = ["disc", "cup", "thyroid_simple", "thyroid_complex"];

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    /// 3x3 same convolution, optional batch norm, relu.
    Conv {
        layer: String,
        c_in: usize,
        c_out: usize,
        norm: bool,
    },
    MaxPool,
    /// 2x2 stride-2 transposed convolution.
    UpConv {
        layer: String,
        c_in: usize,
        c_out: usize,
    },
    Concat,
    /// 1x1 convolution to a single channel, sigmoid.
    Head { layer: String, c_in: usize },
}

impl Op {
    pub fn layer(&self) -> Option<&str> {
        match self {
            Op::Conv { layer, .. } | Op::UpConv { layer, .. } | Op::Head { layer, .. } => Some(layer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
    /// Output (height, width, channels) for a batch of one.
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Kernel,
    Bias,
    Gamma,
    Beta,
    /// Running mean, not trainable.
    Mean,
    /// Running variance, not trainable.
    Var,
}

impl ParamRole {
    pub fn suffix(self) -> &'static str {
        match self {
            ParamRole::Kernel => "kernel",
            ParamRole::Bias => "bias",
            ParamRole::Gamma => "gamma",
            ParamRole::Beta => "beta",
            ParamRole::Mean => "mean",
            ParamRole::Var => "var",
        }
    }

    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::Mean | ParamRole::Var)
    }
}

/// A parameter tensor the graph expects to be bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub layer: String,
    pub role: ParamRole,
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn param_name(layer: &str, role: ParamRole) -> String {
    format!("{}.{}", layer, role.suffix())
}

/// Compiled layer DAG in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub spec: ModelSpec,
    pub nodes: Vec<Node>,
    pub input: usize,
    pub output: usize,
}

impl Graph {
    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Every parameter tensor, in node order.
    pub fn params(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let mut push = |layer: &str, role: ParamRole, shape: Vec<usize>| {
                out.push(ParamInfo {
                    name: param_name(layer, role),
                    layer: layer.to_string(),
                    role,
                    shape,
                })
            };
            match &node.op {
                Op::Conv {
                    layer,
                    c_in,
                    c_out,
                    norm,
                } => {
                    push(layer, ParamRole::Kernel, vec![3, 3, *c_in, *c_out]);
                    push(layer, ParamRole::Bias, vec![*c_out]);
                    if *norm {
                        for role in [ParamRole::Gamma, ParamRole::Beta, ParamRole::Mean, ParamRole::Var] {
                            push(layer, role, vec![*c_out]);
                        }
                    }
                }
                Op::UpConv { layer, c_in, c_out } => {
                    push(layer, ParamRole::Kernel, vec![2, 2, *c_in, *c_out]);
                    push(layer, ParamRole::Bias, vec![*c_out]);
                }
                Op::Head { layer, c_in } => {
                    push(layer, ParamRole::Kernel, vec![1, 1, *c_in, 1]);
                    push(layer, ParamRole::Bias, vec![1]);
                }
                Op::Input | Op::MaxPool | Op::Concat => {}
            }
        }
        out
    }

    /// Trainable scalars summed over the emitted graph.
    pub fn trainable_param_count(&self) -> u64 {
        self.params()
            .iter()
            .filter(|p| p.role.trainable())
            .map(|p| p.len() as u64)
            .sum()
    }

    /// For each node, the index of the last node that reads its output.
    pub fn last_uses(&self) -> Vec<usize> {
        let mut last: Vec<usize> = (0..self.nodes.len()).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            for &inp in &node.inputs {
                last[inp] = last[inp].max(i);
            }
        }
        last[self.output] = usize::MAX;
        last
    }
}

struct GraphBuilder {
    nodes: Vec<Node>,
}

impl GraphBuilder {
    fn push(&mut self, name: String, op: Op, inputs: Vec<usize>, shape: [usize; 3]) -> usize {
        self.nodes.push(Node {
            name,
            op,
            inputs,
            shape,
        });
        self.nodes.len() - 1
    }

    fn conv(&mut self, layer: String, from: usize, c_out: usize, norm: bool) -> usize {
        let [h, w, c_in] = self.nodes[from].shape;
        self.push(
            layer.clone(),
            Op::Conv {
                layer,
                c_in,
                c_out,
                norm,
            },
            vec![from],
            [h, w, c_out],
        )
    }
}

pub fn build_graph(spec: &ModelSpec) -> Result<Graph> {
    spec.validate()?;
    let widths = channel_widths(spec);
    let levels = spec.levels;
    let norm = spec.use_norm;
    let InputSize {
        height,
        width,
        channels,
    } = spec.input_size;

    let mut g = GraphBuilder { nodes: Vec::new() };
    let input = g.push("input".into(), Op::Input, vec![], [height, width, channels]);

    let mut cur = input;
    let mut skips = Vec::with_capacity(levels - 1);
    for (l, &wl) in widths.iter().enumerate().take(levels - 1) {
        cur = g.conv(format!("enc{l}_conv1"), cur, wl, norm);
        cur = g.conv(format!("enc{l}_conv2"), cur, wl, norm);
        skips.push(cur);
        let [h, w, c] = g.nodes[cur].shape;
        cur = g.push(format!("enc{l}_pool"), Op::MaxPool, vec![cur], [h / 2, w / 2, c]);
    }
    cur = g.conv("bott_conv1".into(), cur, widths[levels - 1], norm);
    cur = g.conv("bott_conv2".into(), cur, widths[levels - 1], norm);

    for l in (0..levels - 1).rev() {
        let [h, w, c_in] = g.nodes[cur].shape;
        let layer = format!("dec{l}_up");
        cur = g.push(
            layer.clone(),
            Op::UpConv {
                layer,
                c_in,
                c_out: widths[l],
            },
            vec![cur],
            [2 * h, 2 * w, widths[l]],
        );
        let skip = skips[l];
        let [sh, sw, sc] = g.nodes[skip].shape;
        cur = g.push(format!("dec{l}_concat"), Op::Concat, vec![skip, cur], [sh, sw, sc + widths[l]]);
        cur = g.conv(format!("dec{l}_conv1"), cur, widths[l], norm);
        cur = g.conv(format!("dec{l}_conv2"), cur, widths[l], norm);
    }
    let c_in = g.nodes[cur].shape[2];
    let output = g.push(
        "head".into(),
        Op::Head {
            layer: "head".into(),
            c_in,
        },
        vec![cur],
        [height, width, 1],
    );

    Ok(Graph {
        spec: *spec,
        nodes: g.nodes,
        input,
        output,
    })
}

/// Trainable parameter totals.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ParamCount {
    pub total: u64,
    pub per_layer: BTreeMap<String, u64>,
    /// Millions of trainable parameters.
    pub mtp: f64,
}

/// Closed-form trainable-parameter count from the block definition.
pub fn count_params(spec: &ModelSpec) -> Result<ParamCount> {
    spec.validate()?;
    let w: Vec<u64> = channel_widths(spec).into_iter().map(|v| v as u64).collect();
    let levels = spec.levels;
    let norm = if spec.use_norm { 2 } else { 0 };
    let conv3 = |ci: u64, co: u64| 9 * ci * co + co + norm * co;

    let mut per_layer = BTreeMap::new();
    let mut c = spec.input_size.channels as u64;
    for l in 0..levels - 1 {
        per_layer.insert(format!("enc{l}_conv1"), conv3(c, w[l]));
        per_layer.insert(format!("enc{l}_conv2"), conv3(w[l], w[l]));
        c = w[l];
    }
    let wb = w[levels - 1];
    per_layer.insert("bott_conv1".into(), conv3(c, wb));
    per_layer.insert("bott_conv2".into(), conv3(wb, wb));
    for l in 0..levels - 1 {
        per_layer.insert(format!("dec{l}_up"), 4 * w[l + 1] * w[l] + w[l]);
        per_layer.insert(format!("dec{l}_conv1"), conv3(2 * w[l], w[l]));
        per_layer.insert(format!("dec{l}_conv2"), conv3(w[l], w[l]));
    }
    per_layer.insert("head".into(), w[0] + 1);

    let total = per_layer.values().sum();
    Ok(ParamCount {
        total,
        per_layer,
        mtp: total as f64 / 1e6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(s: &str) -> ModelSpec {
        s.parse().unwrap()
    }

    #[test]
    fn widths_examples() {
        assert_eq!(channel_widths(&spec("6/64/Y/1.1")), vec![64, 70, 77, 85, 94, 103]);
        assert_eq!(channel_widths(&spec("4/13/N/1.0")), vec![13; 4]);
        assert_eq!(channel_widths(&spec("5/64/Y/2.0")), vec![64, 128, 256, 512, 1024]);
    }

    #[test]
    fn spec_string_round_trip() {
        for s in ["6/64/Y/1.1", "6/40/Y/1.1", "5/64/N/2.0", "2/1/N/1.0", "3/8/Y/1.25"] {
            assert_eq!(spec(s).to_string(), s);
        }
        for bad in ["6/64/Y", "6/64/Q/1.1", "1/64/Y/1.1", "6/0/Y/1.1", "6/64/Y/0.9", "x/64/Y/1.1"] {
            assert!(bad.parse::<ModelSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn input_must_divide_through_all_levels() {
        let s = spec("6/8/N/1.0");
        assert!(s.with_input_size(96, 96, 3).is_ok());
        assert!(matches!(s.with_input_size(100, 96, 3), Err(Error::Spec(_))));
        assert!(spec("3/8/N/1.0").with_input_size(6, 8, 1).is_err());
    }

    #[test]
    fn three_level_topology() {
        let g = build_graph(&spec("3/4/N/1.0").with_input_size(8, 8, 1).unwrap()).unwrap();
        let names: Vec<&str> = g.nodes.iter().map(|n| n.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "input", "enc0_conv1", "enc0_conv2", "enc0_pool", "enc1_conv1", "enc1_conv2", "enc1_pool",
                "bott_conv1", "bott_conv2", "dec1_up", "dec1_concat", "dec1_conv1", "dec1_conv2", "dec0_up",
                "dec0_concat", "dec0_conv1", "dec0_conv2", "head"
            ]
        );
        let pools = g.nodes.iter().filter(|n| n.op == Op::MaxPool).count();
        let ups = g.nodes.iter().filter(|n| matches!(n.op, Op::UpConv { .. })).count();
        assert_eq!((pools, ups), (2, 2));
        // skip connections: encoder output first
        let cat = g.node("dec1_concat").unwrap();
        assert_eq!(g.nodes[cat.inputs[0]].name, "enc1_conv2");
        assert_eq!(g.nodes[cat.inputs[1]].name, "dec1_up");
    }

    #[test]
    fn toy_graph_is_hand_enumerable() {
        let s = spec("2/1/N/1.0").with_input_size(4, 4, 1).unwrap();
        let g = build_graph(&s).unwrap();
        assert_eq!(g.nodes.len() - 1, 10);
        // enc0: 2 * (9 + 1); bott: 2 * (9 + 1); up: 4 + 1; dec0_conv1: 18 + 1; dec0_conv2: 9 + 1; head: 1 + 1
        let hand = 10 + 10 + 10 + 10 + 5 + 19 + 10 + 2;
        assert_eq!(hand, 76);
        assert_eq!(count_params(&s).unwrap().total, hand);
        assert_eq!(g.trainable_param_count(), hand);
        assert_eq!(g.nodes[g.output].shape, [4, 4, 1]);
    }

    #[test]
    fn graph_invariants() {
        for s in ["6/64/Y/1.1", "6/40/Y/1.1", "3/5/N/1.3", "4/16/Y/2.0"] {
            let s = spec(s);
            let g = build_graph(&s).unwrap();
            let InputSize { height, width, .. } = s.input_size;
            assert_eq!(g.nodes[g.output].shape, [height, width, 1]);
            for (i, n) in g.nodes.iter().enumerate() {
                assert!(n.inputs.iter().all(|&j| j < i), "not topological at {}", n.name);
            }
            let params = g.params();
            let mut names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), params.len());
            assert_eq!(count_params(&s).unwrap().total, g.trainable_param_count());
        }
    }

    #[test]
    fn closed_form_matches_graph_walk_per_layer() {
        let s = spec("6/40/Y/1.1");
        let count = count_params(&s).unwrap();
        let g = build_graph(&s).unwrap();
        let mut walk: BTreeMap<String, u64> = BTreeMap::new();
        for p in g.params().iter().filter(|p| p.role.trainable()) {
            *walk.entry(p.layer.clone()).or_default() += p.len() as u64;
        }
        assert_eq!(walk, count.per_layer);
        assert_eq!(count.total, count.per_layer.values().sum::<u64>());
        assert!((count.mtp - count.total as f64 / 1e6).abs() < 1e-12);
    }

    #[test]
    fn count_ratios() {
        let big = count_params(&spec("6/64/Y/1.1")).unwrap().total as f64;
        let small = count_params(&spec("6/40/Y/1.1")).unwrap().total as f64;
        let orig = count_params(&spec("6/64/Y/2.0")).unwrap().total as f64;
        let r = big / small;
        assert!((2.3..=2.9).contains(&r), "{r}");
        assert!(orig / big > 50.0);
    }

    #[test]
    fn count_is_monotone() {
        let c = |s: &str| count_params(&spec(s)).unwrap().total;
        assert!(c("5/32/Y/1.1") < c("5/33/Y/1.1"));
        assert!(c("5/32/Y/1.1") < c("5/32/Y/1.2"));
        assert!(c("5/32/Y/1.1") < c("6/32/Y/1.1"));
        assert!(c("5/32/N/1.1") < c("5/32/Y/1.1"));
    }

    #[test]
    fn presets() {
        assert_eq!(preset("disc").unwrap().to_string(), "6/40/Y/1.1");
        assert_eq!(preset("thyroid_simple").unwrap().to_string(), "6/40/Y/1.1");
        assert_eq!(preset("cup").unwrap().to_string(), "6/64/Y/1.1");
        assert_eq!(preset("thyroid_complex").unwrap().to_string(), "6/64/Y/1.1");
        assert_eq!(preset("xyz"), Err(Error::UnknownPreset("xyz".into())));
    }

    proptest::proptest! {
        #[test]
        fn widths_non_decreasing(levels in 2usize..8, f in 1usize..128, ir in 1.0f64..2.5) {
            let s = ModelSpec::new(levels, f, ir, true).unwrap();
            let w = channel_widths(&s);
            proptest::prop_assert_eq!(w.len(), levels);
            proptest::prop_assert!(w.windows(2).all(|p| p[0] <= p[1]));
            proptest::prop_assert_eq!(w[0], f);
        }
    }
}
