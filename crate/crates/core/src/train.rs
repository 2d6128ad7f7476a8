//! Adam optimization, the early-stopped training loop and evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{graph_backward, loss_value, Loss};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Mode, ModelGraph};
use crate::tensor::{argmax, Tensor};

/// One supervised example: input tensors (one per graph input slot) and a
/// target distribution.
#[derive(Debug, Clone)]
pub struct Sample {
    pub inputs: Vec<Tensor>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn labeled(inputs: Vec<Tensor>, class: usize, num_classes: usize) -> Self {
        let mut target = vec![0.0; num_classes];
        target[class] = 1.0;
        Self { inputs, target }
    }

    pub fn class(&self) -> usize {
        argmax(&self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 5,
            seed: 0,
            loss: Loss::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidArgument("training hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, t: u64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(shape_err(format!(
            "adam: {} params, {} grads, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if t == 0 {
        return Err(Error::InvalidArgument("adam step counter starts at 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every trainable, non-frozen parameter of a graph.
pub struct GraphOptimizer {
    cfg: AdamConfig,
    states: Vec<Vec<Option<AdamState>>>,
    t: u64,
}

impl GraphOptimizer {
    pub fn new(graph: &ModelGraph, cfg: AdamConfig) -> Self {
        let states = graph
            .nodes()
            .iter()
            .map(|n| {
                n.params
                    .iter()
                    .zip(n.kind.trainable_mask())
                    .map(|(p, tr)| (tr && !n.is_frozen()).then(|| AdamState::new(p.read().len())))
                    .collect()
            })
            .collect();
        Self { cfg, states, t: 0 }
    }

    pub fn step(&mut self, graph: &ModelGraph, grads: &[Vec<Tensor>]) -> Result<()> {
        self.t += 1;
        for ((node, states), g) in graph.nodes().iter().zip(&mut self.states).zip(grads) {
            for ((p, st), gp) in node.params.iter().zip(states).zip(g) {
                if let Some(st) = st {
                    adam_step(p.write().data_mut(), gp.data(), st, self.t, &self.cfg)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,val_acc")?;
        for i in 0..self.train_loss.len() {
            writeln!(w, "{},{},{},{}", i + 1, self.train_loss[i], self.val_loss[i], self.val_acc[i])?;
        }
        Ok(())
    }
}

/// Patience counter on validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, stale: 0 }
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// Mean loss and accuracy of `graph` on `samples` in inference mode.
pub fn validation_metrics(graph: &ModelGraph, samples: &[Sample], loss: Loss) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut total = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(64) {
        let batch: Vec<Vec<Tensor>> = chunk.iter().map(|s| s.inputs.clone()).collect();
        let targets: Vec<Vec<f64>> = chunk.iter().map(|s| s.target.clone()).collect();
        let trace = graph.forward(&batch, Mode::Eval)?;
        total += loss_value(&trace, &targets, loss)?;
        correct += trace
            .output()
            .iter()
            .zip(chunk)
            .filter(|(p, s)| p.argmax() == s.class())
            .count();
    }
    Ok((total / samples.len() as f64, correct as f64 / samples.len() as f64))
}

/// Trains `graph` in place with Adam and validation-loss early stopping; the
/// parameters with the lowest validation loss are restored before returning.
pub fn train_model(graph: &ModelGraph, train: &[Sample], val: &[Sample], config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = GraphOptimizer::new(graph, AdamConfig::with_lr(config.learning_rate));
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut history = TrainHistory::default();
    let mut best = graph.snapshot();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<Vec<Tensor>> = idx.iter().map(|&i| train[i].inputs.clone()).collect();
            let targets: Vec<Vec<f64>> = idx.iter().map(|&i| train[i].target.clone()).collect();
            let (loss, mut grads, trace) = graph_backward(graph, &batch, &targets, config.loss)?;
            grads.scale(1.0 / idx.len() as f64);
            opt.step(graph, &grads.params)?;
            graph.update_running_stats(&trace);
            epoch_loss += loss;
        }
        let (val_loss, val_acc) = validation_metrics(graph, val, config.loss)?;
        history.train_loss.push(epoch_loss / train.len() as f64);
        history.val_loss.push(val_loss);
        history.val_acc.push(val_acc);
        history.stopped_epoch = epoch;
        log::debug!("epoch {epoch}: train {:.5} val {val_loss:.5} acc {val_acc:.4}", epoch_loss / train.len() as f64);
        match stopper.observe(val_loss) {
            StopDecision::Improved => {
                best = graph.snapshot();
                history.best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    graph.restore(&best);
    Ok(history)
}

/// Anything that maps model inputs to class scores.
pub trait Predictor {
    fn predict_scores(&self, inputs: &[Tensor]) -> Result<Vec<f64>>;
}

impl Predictor for ModelGraph {
    fn predict_scores(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        self.predict(inputs)
    }
}

/// `confusion[i][j]` counts samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self { counts: vec![vec![0; n]; n] }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn write_csv(&self, mut w: impl Write, labels: &[&str]) -> std::io::Result<()> {
        write!(w, "true\\pred")?;
        for l in labels {
            write!(w, ",{l}")?;
        }
        writeln!(w)?;
        for (l, row) in labels.iter().zip(&self.counts) {
            write!(w, "{l}")?;
            for c in row {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn evaluate<P: Predictor + ?Sized>(model: &P, samples: &[Sample]) -> Result<(f64, ConfusionMatrix)> {
    let Some(first) = samples.first() else {
        return Err(Error::Empty("evaluation dataset"));
    };
    let mut cm = ConfusionMatrix::new(first.target.len());
    for s in samples {
        let scores = model.predict_scores(&s.inputs)?;
        cm.record(s.class(), argmax(&scores));
    }
    Ok((cm.accuracy(), cm))
}
