//! Executable model graphs: ordered layer nodes, a parameter store with
//! shareable tensors, shape inference and batched forward execution.

use std::sync::Arc;

use parking_lot::RwLock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};
use crate::frontend::{grid_tensor, Branch, PseudoImageSet};
use crate::kernels::{self, LstmParams, LstmTrace, Padding};
use crate::tensor::Tensor;

/// A parameter tensor. Cloning the handle shares the tensor.
pub type SharedTensor = Arc<RwLock<Tensor>>;

pub fn shared(t: Tensor) -> SharedTensor {
    Arc::new(RwLock::new(t))
}

/// What feeds an input node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Fft,
    Wt,
    Gt,
    /// Free-form feature vector (used by the attribution regressor).
    Vector,
}

impl InputKind {
    pub fn branch(self) -> Option<Branch> {
        match self {
            InputKind::Fft => Some(Branch::Fft),
            InputKind::Wt => Some(Branch::Wt),
            InputKind::Gt => Some(Branch::Gt),
            InputKind::Vector => None,
        }
    }

    pub fn from_branch(b: Branch) -> Self {
        match b {
            Branch::Fft => InputKind::Fft,
            Branch::Wt => InputKind::Wt,
            Branch::Gt => InputKind::Gt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input { kind: InputKind, shape: Vec<usize> },
    /// Stride-1 convolution.
    Conv2d { kernel: usize, cin: usize, cout: usize, padding: Padding },
    BatchNorm { channels: usize, eps: f64, momentum: f64 },
    Relu,
    MaxPool2d { pool: usize },
    /// `H×W×C → H×C`, averaging over `W`.
    FramePool,
    GlobalAvgPool,
    /// Outputs the final hidden state.
    Lstm { input: usize, hidden: usize },
    Concat,
    Eca { kernel: usize },
    Reshape { shape: Vec<usize> },
    Dsc { kernel: usize, cin: usize, cout: usize },
    Dense { inputs: usize, outputs: usize },
    Softmax,
}

impl LayerKind {
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Conv2d { kernel: k, cin, cout, .. } => vec![vec![k, k, cin, cout], vec![cout]],
            LayerKind::BatchNorm { channels: c, .. } => vec![vec![c]; 4],
            LayerKind::Lstm { input, hidden } => {
                vec![vec![input, 4 * hidden], vec![hidden, 4 * hidden], vec![4 * hidden]]
            }
            LayerKind::Eca { kernel } => vec![vec![kernel]],
            LayerKind::Dsc { kernel: k, cin, cout } => {
                vec![vec![k, k, cin], vec![cin], vec![cin, cout], vec![cout]]
            }
            LayerKind::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    /// Which of the layer's parameters receive gradient updates (batch-norm
    /// running statistics do not).
    pub fn trainable_mask(&self) -> Vec<bool> {
        match self {
            LayerKind::BatchNorm { .. } => vec![true, true, false, false],
            other => vec![true; other.param_shapes().len()],
        }
    }

    pub fn infer_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let one = || -> Result<&[usize]> {
            match inputs {
                [s] => Ok(s),
                _ => Err(shape_err(format!("{self:?} takes exactly one input, got {}", inputs.len()))),
            }
        };
        let map = |s: &[usize]| -> Result<(usize, usize, usize)> {
            match s {
                [h, w, c] => Ok((*h, *w, *c)),
                _ => Err(shape_err(format!("{self:?} expects an H×W×C map, got {s:?}"))),
            }
        };
        match self {
            LayerKind::Input { shape, .. } => {
                if !inputs.is_empty() {
                    return Err(shape_err("input nodes take no inputs"));
                }
                Ok(shape.clone())
            }
            LayerKind::Conv2d { kernel, cin, cout, padding } => {
                let (h, w, c) = map(one()?)?;
                if c != *cin {
                    return Err(shape_err(format!("conv expects {cin} channels, got {c}")));
                }
                Ok(vec![
                    kernels::conv_out_dim(h, *kernel, 1, *padding)?,
                    kernels::conv_out_dim(w, *kernel, 1, *padding)?,
                    *cout,
                ])
            }
            LayerKind::BatchNorm { channels, .. } => {
                let s = one()?;
                if s.last() != Some(channels) {
                    return Err(shape_err(format!("batchnorm expects {channels} channels, got {s:?}")));
                }
                Ok(s.to_vec())
            }
            LayerKind::Relu | LayerKind::Softmax => Ok(one()?.to_vec()),
            LayerKind::MaxPool2d { pool } => {
                let (h, w, c) = map(one()?)?;
                if h < *pool || w < *pool {
                    return Err(shape_err(format!("map {h}×{w} smaller than pool {pool}")));
                }
                Ok(vec![h / pool, w / pool, c])
            }
            LayerKind::FramePool => {
                let (h, _, c) = map(one()?)?;
                Ok(vec![h, c])
            }
            LayerKind::GlobalAvgPool => Ok(vec![*one()?.last().unwrap_or(&1)]),
            LayerKind::Lstm { input, hidden } => match one()? {
                [_, f] if f == input => Ok(vec![*hidden]),
                s => Err(shape_err(format!("lstm expects T×{input}, got {s:?}"))),
            },
            LayerKind::Concat => {
                if inputs.is_empty() || inputs.iter().any(|s| s.len() != 1) {
                    return Err(shape_err("concat joins one or more vectors"));
                }
                Ok(vec![inputs.iter().map(|s| s[0]).sum()])
            }
            LayerKind::Eca { kernel } => {
                if kernel % 2 == 0 {
                    return Err(Error::InvalidArgument(format!("eca kernel must be odd, got {kernel}")));
                }
                Ok(one()?.to_vec())
            }
            LayerKind::Reshape { shape } => {
                let s = one()?;
                if s.iter().product::<usize>() != shape.iter().product::<usize>() {
                    return Err(shape_err(format!("cannot reshape {s:?} into {shape:?}")));
                }
                Ok(shape.clone())
            }
            LayerKind::Dsc { kernel, cin, cout } => {
                let (h, w, c) = map(one()?)?;
                if c != *cin || kernel % 2 == 0 {
                    return Err(shape_err(format!("dsc {kernel}×{kernel} {cin}→{cout} on {c} channels")));
                }
                Ok(vec![h, w, *cout])
            }
            LayerKind::Dense { inputs: n, outputs } => {
                let s = one()?;
                if s.iter().product::<usize>() != *n {
                    return Err(shape_err(format!("dense expects {n} inputs, got {s:?}")));
                }
                Ok(vec![*outputs])
            }
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::FramePool => "frame_pool",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Lstm { .. } => "lstm",
            LayerKind::Concat => "concat",
            LayerKind::Eca { .. } => "eca",
            LayerKind::Reshape { .. } => "reshape",
            LayerKind::Dsc { .. } => "dsc",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    pub params: Vec<SharedTensor>,
    /// Name of the layer in a base graph whose parameters this node shares.
    /// Aliased layers are frozen during training.
    pub alias: Option<String>,
}

impl Node {
    pub fn is_frozen(&self) -> bool {
        self.alias.is_some()
    }
}

/// A topologically ordered layer graph. Not `Clone`: use
/// [`ModelGraph::deep_copy`] for an independent copy.
#[derive(Debug)]
pub struct ModelGraph {
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses per-batch statistics.
    Train,
    Eval,
}

/// Per-node state retained by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    None,
    BatchNorm {
        xhat: Vec<Tensor>,
        inv_std: Vec<f64>,
        batch_stats: bool,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    MaxPool(Vec<Vec<usize>>),
    Lstm(Vec<LstmTrace>),
    Eca { weights: Vec<Vec<f64>>, pooled: Vec<Vec<f64>> },
    Dsc { mid: Vec<Tensor> },
}

/// Activations of every node for a batch, `acts[node][sample]`.
#[derive(Debug)]
pub struct Trace {
    pub acts: Vec<Vec<Tensor>>,
    pub(crate) caches: Vec<Cache>,
    pub mode: Mode,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.acts.first().map_or(0, Vec::len)
    }

    pub fn output(&self) -> &[Tensor] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Per-channel batch mean/var of a batch-norm node run with batch
    /// statistics.
    pub fn batch_stats(&self, node: usize) -> Option<(&[f64], &[f64])> {
        match &self.caches[node] {
            Cache::BatchNorm { batch_stats: true, mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }
}

impl ModelGraph {
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("graph has no layers"));
        }
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.inputs.iter().any(|&j| j >= i) {
                return Err(shape_err(format!("layer `{}` consumes a later layer", n.name)));
            }
            let ins: Vec<&[usize]> = n.inputs.iter().map(|&j| shapes[j].as_slice()).collect();
            let out = n.kind.infer_shape(&ins)?;
            let expected = n.kind.param_shapes();
            if expected.len() != n.params.len() {
                return Err(shape_err(format!(
                    "layer `{}` needs {} parameter tensors, has {}",
                    n.name,
                    expected.len(),
                    n.params.len()
                )));
            }
            for (p, s) in n.params.iter().zip(&expected) {
                if p.read().shape() != s.as_slice() {
                    return Err(shape_err(format!(
                        "layer `{}` parameter shape {:?} != {s:?}",
                        n.name,
                        p.read().shape()
                    )));
                }
            }
            shapes.push(out);
        }
        Ok(Self { nodes, shapes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty graph")
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn input_kinds(&self) -> Vec<InputKind> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                LayerKind::Input { kind, .. } => Some(*kind),
                _ => None,
            })
            .collect()
    }

    /// Total scalar parameter count, counting shared tensors too.
    pub fn param_count(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|n| &n.params)
            .map(|p| p.read().len())
            .sum()
    }

    /// Independent copy with fresh parameter storage and no aliases.
    pub fn deep_copy(&self) -> ModelGraph {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                name: n.name.clone(),
                kind: n.kind.clone(),
                inputs: n.inputs.clone(),
                params: n.params.iter().map(|p| shared(p.read().clone())).collect(),
                alias: None,
            })
            .collect();
        ModelGraph {
            nodes,
            shapes: self.shapes.clone(),
        }
    }

    /// Same graph with every aliased layer re-pointed at the parameters of the
    /// identically named layer in `base`. Other layers keep their handles.
    pub fn rebase(&self, base: &ModelGraph) -> Result<ModelGraph> {
        let nodes = self.nodes.iter().cloned().map(|mut n| {
            if n.alias.is_some() {
                n.params = resolve_alias(&n, base)?;
            }
            Ok(n)
        });
        ModelGraph::from_nodes(nodes.collect::<Result<_>>()?)
    }

    /// Snapshot of every parameter tensor, `[node][param]`.
    pub fn snapshot(&self) -> Vec<Vec<Tensor>> {
        self.nodes
            .iter()
            .map(|n| n.params.iter().map(|p| p.read().clone()).collect())
            .collect()
    }

    pub fn restore(&self, snapshot: &[Vec<Tensor>]) {
        for (n, s) in self.nodes.iter().zip(snapshot) {
            for (p, t) in n.params.iter().zip(s) {
                *p.write() = t.clone();
            }
        }
    }

    /// Builds the input tensors for this graph from a pseudo-image set.
    pub fn inputs_from_images(&self, images: &PseudoImageSet) -> Result<Vec<Tensor>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                LayerKind::Input { kind, shape } => Some((kind, shape)),
                _ => None,
            })
            .map(|(kind, shape)| {
                let b = kind.branch().ok_or_else(|| {
                    Error::InvalidArgument("vector inputs cannot be fed from pseudo-images".into())
                })?;
                grid_tensor(images.branch(b)).reshape(shape)
            })
            .collect()
    }

    /// Eval-mode forward for one sample; returns the output vector.
    pub fn predict(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        let trace = self.forward(std::slice::from_ref(&inputs.to_vec()), Mode::Eval)?;
        Ok(trace.acts.last().expect("non-empty")[0].data().to_vec())
    }

    pub fn predict_images(&self, images: &PseudoImageSet) -> Result<Vec<f64>> {
        self.predict(&self.inputs_from_images(images)?)
    }

    /// Forward pass over a batch; `batch[sample][input_slot]`.
    pub fn forward(&self, batch: &[Vec<Tensor>], mode: Mode) -> Result<Trace> {
        if batch.is_empty() {
            return Err(Error::Empty("forward batch"));
        }
        let mut acts: Vec<Vec<Tensor>> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut slot = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            let guards: Vec<_> = node.params.iter().map(|p| p.read()).collect();
            let ps: Vec<&Tensor> = guards.iter().map(|g| &**g).collect();
            let input = |k: usize| -> &Vec<Tensor> { &acts[node.inputs[k]] };
            let (out, cache): (Vec<Tensor>, Cache) = match &node.kind {
                LayerKind::Input { shape, .. } => {
                    let out = batch
                        .iter()
                        .map(|s| {
                            let t = s.get(slot).ok_or_else(|| {
                                shape_err(format!("sample is missing input slot {slot}"))
                            })?;
                            t.clone().reshape(shape)
                        })
                        .collect::<Result<_>>()?;
                    slot += 1;
                    (out, Cache::None)
                }
                LayerKind::Conv2d { padding, .. } => {
                    let out = input(0)
                        .iter()
                        .map(|x| kernels::conv2d_forward(x, ps[0], ps[1].data(), 1, *padding).map(|r| r.0))
                        .collect::<Result<_>>()?;
                    (out, Cache::None)
                }
                LayerKind::BatchNorm { eps, .. } => {
                    let use_batch = mode == Mode::Train && !node.is_frozen();
                    batchnorm_batch(input(0), &ps, *eps, use_batch)?
                }
                LayerKind::Relu => (input(0).iter().map(kernels::relu_forward).collect(), Cache::None),
                LayerKind::MaxPool2d { pool } => {
                    let (out, idx): (Vec<_>, Vec<_>) = input(0)
                        .iter()
                        .map(|x| kernels::maxpool2d_with_indices(x, *pool, *pool))
                        .collect::<Result<Vec<_>>>()?
                        .into_iter()
                        .unzip();
                    (out, Cache::MaxPool(idx))
                }
                LayerKind::FramePool => (
                    input(0).iter().map(|x| kernels::frame_pool(x).map(|r| r.0)).collect::<Result<_>>()?,
                    Cache::None,
                ),
                LayerKind::GlobalAvgPool => (
                    input(0)
                        .iter()
                        .map(|x| kernels::global_avg_pool(x).map(|r| Tensor::vector(r.0)))
                        .collect::<Result<_>>()?,
                    Cache::None,
                ),
                LayerKind::Lstm { hidden, .. } => {
                    let p = LstmParams { w_ih: ps[0], w_hh: ps[1], bias: ps[2] };
                    let zeros = vec![0.0; *hidden];
                    let traces = input(0)
                        .iter()
                        .map(|x| kernels::lstm_run(x, p, &zeros, &zeros))
                        .collect::<Result<Vec<_>>>()?;
                    let out = traces
                        .iter()
                        .map(|t| Tensor::vector(t.hidden.last().cloned().unwrap_or_else(|| zeros.clone())))
                        .collect();
                    (out, Cache::Lstm(traces))
                }
                LayerKind::Concat => {
                    let out = (0..batch.len())
                        .map(|s| {
                            Tensor::vector(
                                node.inputs.iter().flat_map(|&j| acts[j][s].data().iter().copied()).collect(),
                            )
                        })
                        .collect();
                    (out, Cache::None)
                }
                LayerKind::Eca { .. } => {
                    let mut out = Vec::with_capacity(batch.len());
                    let mut weights = Vec::with_capacity(batch.len());
                    let mut pooled = Vec::with_capacity(batch.len());
                    for x in input(0) {
                        let (y, w, _) = kernels::eca_forward(x, ps[0].data())?;
                        pooled.push(kernels::global_avg_pool(x)?.0);
                        out.push(y);
                        weights.push(w);
                    }
                    (out, Cache::Eca { weights, pooled })
                }
                LayerKind::Reshape { shape } => (
                    input(0).iter().map(|x| x.clone().reshape(shape)).collect::<Result<_>>()?,
                    Cache::None,
                ),
                LayerKind::Dsc { .. } => {
                    let mut out = Vec::with_capacity(batch.len());
                    let mut mid = Vec::with_capacity(batch.len());
                    for x in input(0) {
                        let m = kernels::depthwise_conv(x, ps[0], ps[1].data())?;
                        out.push(kernels::pointwise_conv(&m, ps[2], ps[3].data())?.0);
                        mid.push(m);
                    }
                    (out, Cache::Dsc { mid })
                }
                LayerKind::Dense { .. } => (
                    input(0)
                        .iter()
                        .map(|x| kernels::dense_forward(x.data(), ps[0], ps[1].data()).map(|r| Tensor::vector(r.0)))
                        .collect::<Result<_>>()?,
                    Cache::None,
                ),
                LayerKind::Softmax => (
                    input(0).iter().map(|x| Tensor::vector(kernels::softmax(x.data()))).collect(),
                    Cache::None,
                ),
            };
            if let Some(bad) = out.iter().position(|t| !t.is_finite()) {
                return Err(Error::NonFinite(format!("layer `{}` output for sample {bad}", node.name)));
            }
            debug_assert!(out.iter().all(|t| t.shape() == self.shapes[i].as_slice()));
            acts.push(out);
            caches.push(cache);
        }
        Ok(Trace { acts, caches, mode })
    }

    /// Folds the per-batch statistics of a training pass into the running
    /// averages of every non-frozen batch-norm layer.
    pub fn update_running_stats(&self, trace: &Trace) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (LayerKind::BatchNorm { momentum, .. }, Some((mean, var))) =
                (&node.kind, trace.batch_stats(i))
            {
                if node.is_frozen() {
                    continue;
                }
                let mut rm = node.params[2].write();
                for (r, m) in rm.data_mut().iter_mut().zip(mean) {
                    *r = momentum * *r + (1.0 - momentum) * m;
                }
                drop(rm);
                let mut rv = node.params[3].write();
                for (r, v) in rv.data_mut().iter_mut().zip(var) {
                    *r = momentum * *r + (1.0 - momentum) * v;
                }
            }
        }
    }
}

fn batchnorm_batch(
    xs: &[Tensor],
    ps: &[&Tensor],
    eps: f64,
    use_batch: bool,
) -> Result<(Vec<Tensor>, Cache)> {
    let c = xs[0].channels();
    let (gamma, beta) = (ps[0].data(), ps[1].data());
    let (mean, var) = if use_batch {
        let mut mean = vec![0.0; c];
        let mut count = 0usize;
        for x in xs {
            for px in x.data().chunks_exact(c) {
                for (m, v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
                count += 1;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; c];
        for x in xs {
            for px in x.data().chunks_exact(c) {
                for ch in 0..c {
                    var[ch] += (px[ch] - mean[ch]).powi(2);
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        (mean, var)
    } else {
        (ps[2].data().to_vec(), ps[3].data().to_vec())
    };
    if var.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("batchnorm variance must be >= 0".into()));
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(xs.len());
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let mut xh = x.clone();
        let mut y = x.clone();
        for (h, o) in xh.data_mut().chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)) {
            for ch in 0..c {
                h[ch] = (h[ch] - mean[ch]) * inv_std[ch];
                o[ch] = h[ch] * gamma[ch] + beta[ch];
            }
        }
        xhat.push(xh);
        out.push(y);
    }
    Ok((
        out,
        Cache::BatchNorm {
            xhat,
            inv_std,
            batch_stats: use_batch,
            mean,
            var,
        },
    ))
}

/// Parameter handles of the layer in `base` that `node` aliases.
pub(crate) fn resolve_alias(node: &Node, base: &ModelGraph) -> Result<Vec<SharedTensor>> {
    let name = node.alias.as_deref().unwrap_or(&node.name);
    match base.node(name) {
        Some(src) if src.kind == node.kind => Ok(src.params.clone()),
        Some(_) => Err(Error::Malformed(format!("alias `{name}` resolves to a layer of another kind"))),
        None => Err(Error::UnresolvedAlias(name.to_string())),
    }
}

/// Incrementally assembles a [`ModelGraph`], initializing parameters from a
/// seeded generator.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl GraphBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            shapes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn input(&mut self, name: &str, kind: InputKind, shape: &[usize]) -> usize {
        self.push(name, LayerKind::Input { kind, shape: shape.to_vec() }, &[], Vec::new(), None)
            .expect("input nodes always infer")
    }

    /// Adds a layer with freshly initialized parameters.
    pub fn layer(&mut self, name: &str, kind: LayerKind, inputs: &[usize]) -> Result<usize> {
        let params = init_params(&kind, &mut self.rng);
        self.push(name, kind, inputs, params, None)
    }

    /// Adds a layer whose parameters are shared with `source` (a node of
    /// another graph with the same layer spec).
    pub fn shared_layer(&mut self, source: &Node, inputs: &[usize]) -> Result<usize> {
        self.push(
            &source.name,
            source.kind.clone(),
            inputs,
            source.params.clone(),
            Some(source.name.clone()),
        )
    }

    fn push(
        &mut self,
        name: &str,
        kind: LayerKind,
        inputs: &[usize],
        params: Vec<SharedTensor>,
        alias: Option<String>,
    ) -> Result<usize> {
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate layer name `{name}`")));
        }
        let ins: Vec<&[usize]> = inputs
            .iter()
            .map(|&j| self.shapes.get(j).map(Vec::as_slice).ok_or_else(|| shape_err("unknown input node")))
            .collect::<Result<_>>()?;
        let shape = kind.infer_shape(&ins)?;
        self.shapes.push(shape);
        self.nodes.push(Node {
            name: name.to_string(),
            kind,
            inputs: inputs.to_vec(),
            params,
            alias,
        });
        Ok(self.nodes.len() - 1)
    }

    pub fn shape(&self, node: usize) -> &[usize] {
        &self.shapes[node]
    }

    pub fn finish(self) -> Result<ModelGraph> {
        ModelGraph::from_nodes(self.nodes)
    }
}

fn lecun_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (3.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

/// `rows × cols` matrix with orthonormal columns (rows ≥ cols) or rows.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

pub(crate) fn init_params(kind: &LayerKind, rng: &mut ChaCha8Rng) -> Vec<SharedTensor> {
    let ts = match *kind {
        LayerKind::Conv2d { kernel: k, cin, cout, .. } => {
            vec![lecun_uniform(&[k, k, cin, cout], k * k * cin, rng), Tensor::zeros(&[cout])]
        }
        LayerKind::BatchNorm { channels: c, .. } => vec![
            Tensor::filled(&[c], 1.0),
            Tensor::zeros(&[c]),
            Tensor::zeros(&[c]),
            Tensor::filled(&[c], 1.0),
        ],
        LayerKind::Lstm { input, hidden: h } => {
            let w_ih = lecun_uniform(&[input, 4 * h], input, rng);
            let mut w_hh = Tensor::zeros(&[h, 4 * h]);
            for gate in 0..4 {
                let q = orthogonal(h, rng);
                for (r, row) in q.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        w_hh.data_mut()[r * 4 * h + gate * h + c] = *v;
                    }
                }
            }
            let mut bias = Tensor::zeros(&[4 * h]);
            bias.data_mut()[h..2 * h].fill(1.0);
            vec![w_ih, w_hh, bias]
        }
        LayerKind::Eca { kernel } => vec![lecun_uniform(&[kernel], kernel, rng)],
        LayerKind::Dsc { kernel: k, cin, cout } => vec![
            lecun_uniform(&[k, k, cin], k * k, rng),
            Tensor::zeros(&[cin]),
            lecun_uniform(&[cin, cout], cin, rng),
            Tensor::zeros(&[cout]),
        ],
        LayerKind::Dense { inputs, outputs } => {
            vec![lecun_uniform(&[inputs, outputs], inputs, rng), Tensor::zeros(&[outputs])]
        }
        _ => Vec::new(),
    };
    ts.into_iter().map(shared).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = orthogonal(8, &mut rng);
        for i in 0..8 {
            for j in 0..8 {
                let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn builder_rejects_bad_wiring() {
        let mut b = GraphBuilder::new(0);
        let x = b.input("x", InputKind::Vector, &[4]);
        assert!(b.layer("d", LayerKind::Dense { inputs: 5, outputs: 2 }, &[x]).is_err());
        assert!(b.layer("d", LayerKind::Dense { inputs: 4, outputs: 2 }, &[x]).is_ok());
        assert!(b.layer("d", LayerKind::Relu, &[x]).is_err());
    }

    #[test]
    fn deep_copy_is_independent() {
        let mut b = GraphBuilder::new(0);
        let x = b.input("x", InputKind::Vector, &[3]);
        b.layer("d", LayerKind::Dense { inputs: 3, outputs: 2 }, &[x]).unwrap();
        let g = b.finish().unwrap();
        let c = g.deep_copy();
        c.nodes()[1].params[0].write().data_mut()[0] = 42.0;
        assert_ne!(g.nodes()[1].params[0].read().data()[0], 42.0);
    }
}
