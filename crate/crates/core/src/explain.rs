//! Post-hoc attribution for the moving-activity network: occlusion branch
//! importance, a regressor from fused features to importance, per-axis
//! gradient×input profiles and cross-branch correlation.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, graph_backward, loss_value, Loss};
use crate::error::{Error, Result};
use crate::frontend::{Branch, PseudoImageSet, CHANNELS, CHANNEL_NAMES, WINDOW_LEN};
use crate::graph::{GraphBuilder, InputKind, LayerKind, Mode, ModelGraph};
use crate::labels::FineLabel;
use crate::tensor::Tensor;
use crate::train::{AdamConfig, GraphOptimizer};

const LOG_FLOOR: f64 = 1e-300;

/// Clamps negatives to zero and rescales to sum 1; all-zero input becomes
/// uniform.
pub fn normalize_simplex(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    let s: f64 = clipped.iter().sum();
    if s > 0.0 && s.is_finite() {
        clipped.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

fn zero_branch(images: &PseudoImageSet, b: Branch) -> PseudoImageSet {
    let mut out = images.clone();
    *out.branch_mut(b) = [[0.0; CHANNELS]; WINDOW_LEN];
    out
}

/// Importance of each branch (FFT, WT, GT order) for one window: the
/// cross-entropy increase when that branch's pseudo-image is zeroed,
/// clipped at zero and normalized.
pub fn occlusion_branch_importance(plmn: &ModelGraph, images: &PseudoImageSet, true_class: usize) -> Result<[f64; 3]> {
    if true_class >= plmn.num_classes() {
        return Err(Error::InvalidArgument(format!("class {true_class} out of range")));
    }
    let loss = |imgs: &PseudoImageSet| -> Result<f64> { Ok(-plmn.predict_images(imgs)?[true_class].max(LOG_FLOOR).ln()) };
    let base = loss(images)?;
    let mut deltas = [0.0; 3];
    for b in Branch::ALL {
        deltas[b.index()] = loss(&zero_branch(images, b))? - base;
    }
    let n = normalize_simplex(&deltas);
    Ok([n[0], n[1], n[2]])
}

/// Index of the attention-weighted fused vector (the input of the reshape).
fn fused_node(plmn: &ModelGraph) -> Result<usize> {
    plmn.node("reshape")
        .map(|n| n.inputs[0])
        .ok_or_else(|| Error::InvalidArgument("model has no fused representation".into()))
}

/// The fused feature vector of each image set.
pub fn fused_features(plmn: &ModelGraph, sets: &[&PseudoImageSet]) -> Result<Vec<Vec<f64>>> {
    let node = fused_node(plmn)?;
    let mut out = Vec::with_capacity(sets.len());
    for chunk in sets.chunks(64) {
        let batch = chunk.iter().map(|s| plmn.inputs_from_images(s)).collect::<Result<Vec<_>>>()?;
        let trace = plmn.forward(&batch, Mode::Eval)?;
        out.extend(trace.acts[node].iter().map(|t| t.data().to_vec()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: 32, epochs: 200, batch_size: 32, learning_rate: 1e-3, seed: 0 }
    }
}

/// Regressor from a fused feature vector to a point on the 3-simplex.
#[derive(Debug)]
pub struct AttributionMlp {
    pub graph: ModelGraph,
    /// Mean squared error over the training set after each epoch.
    pub mse_history: Vec<f64>,
    pub initial_mse: f64,
}

impl AttributionMlp {
    pub fn predict(&self, features: &[f64]) -> Result<[f64; 3]> {
        let p = self.graph.predict(&[Tensor::vector(features.to_vec())])?;
        Ok([p[0], p[1], p[2]])
    }
}

fn mean_squared_error(g: &ModelGraph, batch: &[Vec<Tensor>], targets: &[Vec<f64>]) -> Result<f64> {
    let trace = g.forward(batch, Mode::Eval)?;
    Ok(loss_value(&trace, targets, Loss::SquaredError)? / (batch.len() * 3) as f64)
}

/// Trains `d → hidden → 3` (ReLU, softmax output) with Adam on squared
/// error.
pub fn fit_attribution_mlp(features: &[Vec<f64>], targets: &[[f64; 3]], cfg: &MlpConfig) -> Result<AttributionMlp> {
    if features.is_empty() {
        return Err(Error::Empty("attribution training set"));
    }
    if features.len() != targets.len() {
        return Err(Error::Shape(format!("{} features vs {} targets", features.len(), targets.len())));
    }
    let d = features[0].len();
    let mut b = GraphBuilder::new(cfg.seed);
    let x = b.input("features", InputKind::Vector, &[d]);
    let x = b.layer("hidden", LayerKind::Dense { inputs: d, outputs: cfg.hidden }, &[x])?;
    let x = b.layer("relu", LayerKind::Relu, &[x])?;
    let x = b.layer("out", LayerKind::Dense { inputs: cfg.hidden, outputs: 3 }, &[x])?;
    b.layer("softmax", LayerKind::Softmax, &[x])?;
    let graph = b.finish()?;

    let batch: Vec<Vec<Tensor>> = features.iter().map(|f| vec![Tensor::vector(f.clone())]).collect();
    let ys: Vec<Vec<f64>> = targets.iter().map(|t| t.to_vec()).collect();
    let initial_mse = mean_squared_error(&graph, &batch, &ys)?;
    let mut opt = GraphOptimizer::new(&graph, AdamConfig::with_lr(cfg.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut mse_history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size.max(1)) {
            let xb: Vec<Vec<Tensor>> = idx.iter().map(|&i| batch[i].clone()).collect();
            let yb: Vec<Vec<f64>> = idx.iter().map(|&i| ys[i].clone()).collect();
            let (_, mut grads, _) = graph_backward(&graph, &xb, &yb, Loss::SquaredError)?;
            grads.scale(1.0 / idx.len() as f64);
            opt.step(&graph, &grads.params)?;
        }
        mse_history.push(mean_squared_error(&graph, &batch, &ys)?);
    }
    Ok(AttributionMlp { graph, mse_history, initial_mse })
}

/// Per-class mean regressor output, renormalized. Classes without samples
/// are left out.
pub fn branch_attribution_report(
    mlp: &AttributionMlp,
    features: &[Vec<f64>],
    labels: &[FineLabel],
) -> Result<Vec<(FineLabel, [f64; 3])>> {
    let mut sums = vec![([0.0; 3], 0usize); FineLabel::ALL.len()];
    for (f, l) in features.iter().zip(labels) {
        let p = mlp.predict(f)?;
        let e = &mut sums[l.index()];
        (0..3).for_each(|k| e.0[k] += p[k]);
        e.1 += 1;
    }
    let mut out = Vec::new();
    for (l, (s, n)) in FineLabel::ALL.iter().zip(sums) {
        if n == 0 {
            if FineLabel::MOVING.contains(l) {
                log::warn!("no samples of class {l}; omitted from the attribution report");
            }
            continue;
        }
        let v = normalize_simplex(&s);
        out.push((*l, [v[0], v[1], v[2]]));
    }
    Ok(out)
}

/// Per-branch, per-axis gradient×input attribution of the fused vector's
/// L2 norm, averaged over `sets` and normalized per branch.
pub fn axis_attention_profile(plmn: &ModelGraph, sets: &[&PseudoImageSet]) -> Result<Vec<(Branch, [f64; CHANNELS])>> {
    let node = fused_node(plmn)?;
    let branches: Vec<Branch> = plmn.input_kinds().iter().filter_map(|k| k.branch()).collect();
    let mut raw = vec![[0.0; CHANNELS]; branches.len()];
    for chunk in sets.chunks(64) {
        let batch = chunk.iter().map(|s| plmn.inputs_from_images(s)).collect::<Result<Vec<_>>>()?;
        let trace = plmn.forward(&batch, Mode::Eval)?;
        let seed: Vec<Tensor> = trace.acts[node]
            .iter()
            .map(|f| {
                let norm = f.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    f.map(|v| v / norm)
                } else {
                    Tensor::zeros(f.shape())
                }
            })
            .collect();
        let grads = backward(plmn, &trace, vec![(node, seed)])?;
        for (slot, acc) in raw.iter_mut().enumerate() {
            for (s, inputs) in batch.iter().enumerate() {
                let g = grads.inputs[slot][s].data();
                let x = inputs[slot].data();
                for (i, (gv, xv)) in g.iter().zip(x).enumerate() {
                    acc[i % CHANNELS] += (gv * xv).abs();
                }
            }
        }
    }
    Ok(branches
        .into_iter()
        .zip(raw)
        .map(|(b, r)| {
            let n = normalize_simplex(&r);
            (b, std::array::from_fn(|c| n[c]))
        })
        .collect())
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    let denom = (saa * sbb).sqrt();
    (denom > 0.0).then(|| (sab / denom).clamp(-1.0, 1.0))
}

/// Pearson correlation between the flattened FFT, WT and GT pseudo-images,
/// concatenated over all sets.
pub fn pearson_matrix(sets: &[&PseudoImageSet]) -> Result<[[f64; 3]; 3]> {
    if sets.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two samples".into()));
    }
    let flat: Vec<Vec<f64>> = Branch::ALL
        .iter()
        .map(|&b| sets.iter().flat_map(|s| s.branch(b).iter().flatten().copied()).collect())
        .collect();
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        m[i][i] = 1.0;
        for j in i + 1..3 {
            let r = pearson(&flat[i], &flat[j]).unwrap_or_else(|| {
                log::warn!("zero variance in {} or {}; correlation set to 0", Branch::ALL[i].as_str(), Branch::ALL[j].as_str());
                0.0
            });
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionReport {
    pub per_class: Vec<(FineLabel, [f64; 3])>,
    pub axis: Vec<(Branch, [f64; CHANNELS])>,
    pub pearson: [[f64; 3]; 3],
}

impl AttributionReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "branch importance per class");
        let _ = writeln!(s, "{:<6}{:>8}{:>8}{:>8}", "class", "FFT", "WT", "GT");
        for (l, v) in &self.per_class {
            let _ = writeln!(s, "{:<6}{:>7.2}%{:>7.2}%{:>7.2}%", l.as_str(), 100.0 * v[0], 100.0 * v[1], 100.0 * v[2]);
        }
        let _ = writeln!(s, "\naxis attribution per branch");
        let _ = write!(s, "{:<6}", "branch");
        CHANNEL_NAMES.iter().for_each(|c| {
            let _ = write!(s, "{c:>8}");
        });
        let _ = writeln!(s);
        for (b, v) in &self.axis {
            let _ = write!(s, "{:<6}", b.as_str());
            v.iter().for_each(|x| {
                let _ = write!(s, "{:>7.2}%", 100.0 * x);
            });
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "\nPearson correlation");
        for (i, row) in self.pearson.iter().enumerate() {
            let _ = writeln!(s, "{:<6}{:>8.4}{:>8.4}{:>8.4}", Branch::ALL[i].as_str(), row[0], row[1], row[2]);
        }
        s
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "class,fft,wt,gt")?;
        for (l, v) in &self.per_class {
            writeln!(w, "{l},{},{},{}", v[0], v[1], v[2])?;
        }
        writeln!(w)?;
        writeln!(w, "branch,{}", CHANNEL_NAMES.join(","))?;
        for (b, v) in &self.axis {
            let vals: Vec<String> = v.iter().map(f64::to_string).collect();
            writeln!(w, "{},{}", b.as_str(), vals.join(","))?;
        }
        writeln!(w)?;
        writeln!(w, "branch,FFT,WT,GT")?;
        for (i, row) in self.pearson.iter().enumerate() {
            writeln!(w, "{},{},{},{}", Branch::ALL[i].as_str(), row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_plmn, PlmnVariant};

    fn set(seed: u64) -> PseudoImageSet {
        let g = |k: f64| std::array::from_fn(|r| std::array::from_fn(|c| ((r * 7 + c * 3) as f64 * k + seed as f64).sin()));
        PseudoImageSet { fft: g(0.3), wt: g(0.7), gt: g(1.1), source_label: FineLabel::A1 }
    }

    #[test]
    fn ignorant_model_is_uniform() {
        let g = build_plmn(PlmnVariant::Full, 1).unwrap();
        for p in &g.node("dense").unwrap().params {
            p.write().data_mut().fill(0.0);
        }
        let v = occlusion_branch_importance(&g, &set(1), 2).unwrap();
        assert_eq!(v, [1.0 / 3.0; 3]);
    }

    #[test]
    fn simplex_fallback() {
        assert_eq!(normalize_simplex(&[-1.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(normalize_simplex(&[1.0, 3.0, -2.0]), vec![0.25, 0.75, 0.0]);
    }

    #[test]
    fn pearson_oracles() {
        let mut sets: Vec<PseudoImageSet> = (0..4).map(set).collect();
        let m = pearson_matrix(&sets.iter().collect::<Vec<_>>()).unwrap();
        for i in 0..3 {
            assert_eq!(m[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
        for s in &mut sets {
            s.wt = s.fft.map(|r| r.map(|v| 2.0 * v));
            s.gt = s.fft.map(|r| r.map(|v| -v));
        }
        let m = pearson_matrix(&sets.iter().collect::<Vec<_>>()).unwrap();
        assert!((m[0][1] - 1.0).abs() < 1e-12);
        assert!((m[0][2] + 1.0).abs() < 1e-12);
        assert!(pearson_matrix(&[&sets[0]]).is_err());
    }

    #[test]
    fn zero_inputs_give_uniform_axis_profile() {
        let g = build_plmn(PlmnVariant::Full, 2).unwrap();
        let z = PseudoImageSet { fft: [[0.0; 6]; 16], wt: [[0.0; 6]; 16], gt: [[0.0; 6]; 16], source_label: FineLabel::A1 };
        for (_, v) in axis_attention_profile(&g, &[&z]).unwrap() {
            assert_eq!(v, [1.0 / 6.0; 6]);
        }
    }

    #[test]
    fn constant_targets_are_learned() {
        let feats: Vec<Vec<f64>> = (0..20).map(|i| (0..8).map(|j| ((i * j) as f64).cos()).collect()).collect();
        let targets = vec![[0.2, 0.5, 0.3]; 20];
        let cfg = MlpConfig { epochs: 300, learning_rate: 1e-2, ..Default::default() };
        let mlp = fit_attribution_mlp(&feats, &targets, &cfg).unwrap();
        assert!(*mlp.mse_history.last().unwrap() < 1e-4);
        assert!(mlp.mse_history.last().unwrap() < &mlp.initial_mse);
        let p = mlp.predict(&feats[0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fit_attribution_mlp(&[], &[], &cfg).is_err());
    }
}
