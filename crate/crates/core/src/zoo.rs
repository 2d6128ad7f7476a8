//! The three network families: the coarse first-stage classifier, the
//! multi-branch moving-activity network and its ablations, and the stationary
//! classifier that reuses the first stage's backbone.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frontend::{Branch, CHANNELS, WINDOW_LEN};
use crate::graph::{GraphBuilder, InputKind, LayerKind, ModelGraph};
use crate::kernels::{eca_kernel_size, Padding};

pub const FIRST_LAYER_FILTERS: [usize; 2] = [8, 16];
pub const FIRST_LAYER_HIDDEN: usize = 32;
pub const PLMN_HIDDEN: usize = 64;
pub const PLMN_CLASSES: usize = 4;
pub const STATIONARY_CLASSES: usize = 2;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

/// Names of the first-stage layers that carry parameters and are shared with
/// the stationary classifier.
pub const BACKBONE_LAYERS: [&str; 5] = ["conv1", "bn1", "conv2", "bn2", "lstm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlmnVariant {
    Full,
    NoAttention,
    SingleBranch(Branch),
    Plcn,
}

impl PlmnVariant {
    /// Ablation order: single branches first, full model last.
    pub const ALL: [PlmnVariant; 6] = [
        PlmnVariant::SingleBranch(Branch::Fft),
        PlmnVariant::SingleBranch(Branch::Wt),
        PlmnVariant::SingleBranch(Branch::Gt),
        PlmnVariant::NoAttention,
        PlmnVariant::Plcn,
        PlmnVariant::Full,
    ];

    pub fn branches(self) -> Vec<Branch> {
        match self {
            PlmnVariant::SingleBranch(b) => vec![b],
            _ => Branch::ALL.to_vec(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PlmnVariant::Full => "full",
            PlmnVariant::NoAttention => "no_attention",
            PlmnVariant::SingleBranch(Branch::Fft) => "fft",
            PlmnVariant::SingleBranch(Branch::Wt) => "wt",
            PlmnVariant::SingleBranch(Branch::Gt) => "gt",
            PlmnVariant::Plcn => "plcn",
        }
    }
}

impl fmt::Display for PlmnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlmnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let v = match lower.as_str() {
            "full" => PlmnVariant::Full,
            "no_attention" => PlmnVariant::NoAttention,
            "plcn" => PlmnVariant::Plcn,
            "fft" | "single_branch(fft)" => PlmnVariant::SingleBranch(Branch::Fft),
            "wt" | "single_branch(wt)" => PlmnVariant::SingleBranch(Branch::Wt),
            "gt" | "gb" | "single_branch(gt)" => PlmnVariant::SingleBranch(Branch::Gt),
            _ => return Err(Error::InvalidArgument(format!("unknown PLMN variant `{s}`"))),
        };
        Ok(v)
    }
}

fn first_stage_body(b: &mut GraphBuilder) -> Result<usize> {
    let [f1, f2] = FIRST_LAYER_FILTERS;
    let x = b.input("fft", InputKind::Fft, &[WINDOW_LEN, CHANNELS, 1]);
    let x = b.layer("conv1", conv(1, f1), &[x])?;
    let x = b.layer("bn1", bn(f1), &[x])?;
    let x = b.layer("relu1", LayerKind::Relu, &[x])?;
    let x = b.layer("pool1", LayerKind::MaxPool2d { pool: 2 }, &[x])?;
    let x = b.layer("conv2", conv(f1, f2), &[x])?;
    let x = b.layer("bn2", bn(f2), &[x])?;
    let x = b.layer("relu2", LayerKind::Relu, &[x])?;
    let x = b.layer("pool2", LayerKind::MaxPool2d { pool: 2 }, &[x])?;
    b.layer("frame_pool", LayerKind::FramePool, &[x])
}

fn conv(cin: usize, cout: usize) -> LayerKind {
    LayerKind::Conv2d { kernel: 3, cin, cout, padding: Padding::Same }
}

fn bn(channels: usize) -> LayerKind {
    LayerKind::BatchNorm { channels, eps: BN_EPS, momentum: BN_MOMENTUM }
}

/// Coarse classifier over the FFT pseudo-image: two conv/BN/ReLU/pool blocks,
/// per-frame pooling, an LSTM over the frames and a softmax head.
pub fn build_first_layer(num_classes: usize, seed: u64) -> Result<ModelGraph> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    let mut b = GraphBuilder::new(seed);
    let x = first_stage_body(&mut b)?;
    let frame_width = b.shape(x)[1];
    let x = b.layer("lstm", LayerKind::Lstm { input: frame_width, hidden: FIRST_LAYER_HIDDEN }, &[x])?;
    let x = b.layer("dense", LayerKind::Dense { inputs: FIRST_LAYER_HIDDEN, outputs: num_classes }, &[x])?;
    b.layer("softmax", LayerKind::Softmax, &[x])?;
    b.finish()
}

/// Stationary classifier: the first stage's backbone with parameters aliased
/// (not copied) and a fresh two-way head.
pub fn build_stationary(first_layer: &ModelGraph, seed: u64) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new(seed);
    let mut last = None;
    for node in first_layer.nodes() {
        if node.name == "dense" {
            break;
        }
        let inputs: Vec<usize> = node.inputs.clone();
        last = Some(match &node.kind {
            LayerKind::Input { kind, shape } => b.input(&node.name, *kind, shape),
            _ if BACKBONE_LAYERS.contains(&node.name.as_str()) => b.shared_layer(node, &inputs)?,
            kind => b.layer(&node.name, kind.clone(), &inputs)?,
        });
    }
    let x = last.ok_or(Error::Empty("first-layer graph"))?;
    if b.shape(x) != [FIRST_LAYER_HIDDEN] {
        return Err(Error::InvalidArgument("first-layer graph has an unexpected backbone".into()));
    }
    let x = b.layer("head", LayerKind::Dense { inputs: FIRST_LAYER_HIDDEN, outputs: STATIONARY_CLASSES }, &[x])?;
    b.layer("softmax", LayerKind::Softmax, &[x])?;
    b.finish()
}

/// Moving-activity network: per-branch LSTM encoders, concatenation, channel
/// attention, two separable-conv blocks, pooling and a four-way head.
pub fn build_plmn(variant: PlmnVariant, seed: u64) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new(seed);
    let inputs: Vec<usize> = variant
        .branches()
        .into_iter()
        .map(|br| b.input(&br.as_str().to_ascii_lowercase(), InputKind::from_branch(br), &[WINDOW_LEN, CHANNELS]))
        .collect();
    let mut encoded = Vec::new();
    for (&inp, br) in inputs.iter().zip(variant.branches()) {
        let name = format!("lstm_{}", br.as_str().to_ascii_lowercase());
        encoded.push(b.layer(&name, LayerKind::Lstm { input: CHANNELS, hidden: PLMN_HIDDEN }, &[inp])?);
    }
    let mut x = if encoded.len() == 1 { encoded[0] } else { b.layer("concat", LayerKind::Concat, &encoded)? };
    let width = b.shape(x)[0];
    if variant != PlmnVariant::NoAttention {
        x = b.layer("eca", LayerKind::Eca { kernel: eca_kernel_size(width) }, &[x])?;
    }
    x = b.layer("reshape", LayerKind::Reshape { shape: vec![1, 1, width] }, &[x])?;
    for i in 1..=2 {
        let kind = match variant {
            PlmnVariant::Plcn => conv(width, width),
            _ => LayerKind::Dsc { kernel: 3, cin: width, cout: width },
        };
        let name = if variant == PlmnVariant::Plcn { format!("conv{i}") } else { format!("dsc{i}") };
        x = b.layer(&name, kind, &[x])?;
        x = b.layer(&format!("relu{i}"), LayerKind::Relu, &[x])?;
    }
    x = b.layer("gap", LayerKind::GlobalAvgPool, &[x])?;
    x = b.layer("dense", LayerKind::Dense { inputs: width, outputs: PLMN_CLASSES }, &[x])?;
    b.layer("softmax", LayerKind::Softmax, &[x])?;
    b.finish()
}
