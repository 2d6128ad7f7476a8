//! Analytic backward passes for every layer, losses, and a central
//! finite-difference gradient checker.

use crate::error::{shape_err, Error, Result};
use crate::graph::{Cache, LayerKind, Mode, ModelGraph, Trace};
use crate::kernels::{conv1d_same, LstmTrace};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    /// `−Σ y log p` on the softmax output, summed over the batch.
    #[default]
    CrossEntropy,
    /// `Σ (p − y)²` on the graph output, summed over the batch.
    SquaredError,
}

/// Gradients of a scalar objective.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// `[node][param]`, aligned with each node's parameter list.
    pub params: Vec<Vec<Tensor>>,
    /// `[input_slot][sample]`
    pub inputs: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn scale(&mut self, alpha: f64) {
        self.params.iter_mut().flatten().for_each(|g| g.scale(alpha));
        self.inputs.iter_mut().flatten().for_each(|g| g.scale(alpha));
    }
}

const LOG_FLOOR: f64 = 1e-300;

/// Summed loss of a forward trace against per-sample target vectors.
pub fn loss_value(trace: &Trace, targets: &[Vec<f64>], loss: Loss) -> Result<f64> {
    let out = trace.output();
    if out.len() != targets.len() {
        return Err(shape_err(format!("{} outputs vs {} targets", out.len(), targets.len())));
    }
    let mut total = 0.0;
    for (p, y) in out.iter().zip(targets) {
        if p.len() != y.len() {
            return Err(shape_err(format!("output width {} vs target width {}", p.len(), y.len())));
        }
        total += match loss {
            Loss::CrossEntropy => -p
                .data()
                .iter()
                .zip(y)
                .filter(|(_, &yv)| yv != 0.0)
                .map(|(pv, yv)| yv * pv.max(LOG_FLOOR).ln())
                .sum::<f64>(),
            Loss::SquaredError => p.data().iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum(),
        };
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(total)
}

/// Seed gradient for the loss. Cross-entropy on a softmax head is fused and
/// seeded at the logits node as `p·Σy − y`.
fn loss_seed(graph: &ModelGraph, trace: &Trace, targets: &[Vec<f64>], loss: Loss) -> (usize, Vec<Tensor>) {
    let last = graph.nodes().len() - 1;
    let out = trace.output();
    match (loss, &graph.nodes()[last].kind) {
        (Loss::CrossEntropy, LayerKind::Softmax) => {
            let g = out
                .iter()
                .zip(targets)
                .map(|(p, y)| {
                    let ysum: f64 = y.iter().sum();
                    Tensor::vector(p.data().iter().zip(y).map(|(pv, yv)| pv * ysum - yv).collect())
                })
                .collect();
            (graph.nodes()[last].inputs[0], g)
        }
        (Loss::CrossEntropy, _) => {
            let g = out
                .iter()
                .zip(targets)
                .map(|(p, y)| Tensor::vector(p.data().iter().zip(y).map(|(pv, yv)| -yv / pv.max(LOG_FLOOR)).collect()))
                .collect();
            (last, g)
        }
        (Loss::SquaredError, _) => {
            let g = out
                .iter()
                .zip(targets)
                .map(|(p, y)| Tensor::vector(p.data().iter().zip(y).map(|(pv, yv)| 2.0 * (pv - yv)).collect()))
                .collect();
            (last, g)
        }
    }
}

/// Forward in training mode, loss, and gradients of every parameter.
pub fn graph_backward(
    graph: &ModelGraph,
    batch: &[Vec<Tensor>],
    targets: &[Vec<f64>],
    loss: Loss,
) -> Result<(f64, Gradients, Trace)> {
    let trace = graph.forward(batch, Mode::Train)?;
    let value = loss_value(&trace, targets, loss)?;
    let seed = loss_seed(graph, &trace, targets, loss);
    let grads = backward(graph, &trace, vec![seed])?;
    Ok((value, grads, trace))
}

/// Backpropagates seed gradients (`(node, per-sample gradient)`) through a
/// recorded trace.
pub fn backward(graph: &ModelGraph, trace: &Trace, seeds: Vec<(usize, Vec<Tensor>)>) -> Result<Gradients> {
    let nodes = graph.nodes();
    let bsz = trace.batch_size();
    let mut grads: Vec<Option<Vec<Tensor>>> = vec![None; nodes.len()];
    for (n, g) in seeds {
        if g.len() != bsz {
            return Err(shape_err("seed gradient batch size mismatch"));
        }
        accumulate(&mut grads[n], g);
    }
    let mut params: Vec<Vec<Tensor>> = nodes
        .iter()
        .map(|n| n.params.iter().map(|p| Tensor::zeros(p.read().shape())).collect())
        .collect();
    let n_inputs = graph.input_kinds().len();
    let mut inputs: Vec<Vec<Tensor>> = vec![Vec::new(); n_inputs];
    let input_slots: Vec<Option<usize>> = {
        let mut slot = 0;
        nodes
            .iter()
            .map(|n| {
                matches!(n.kind, LayerKind::Input { .. }).then(|| {
                    slot += 1;
                    slot - 1
                })
            })
            .collect()
    };

    for i in (0..nodes.len()).rev() {
        let Some(dy) = grads[i].take() else { continue };
        let node = &nodes[i];
        let guards: Vec<_> = node.params.iter().map(|p| p.read()).collect();
        let ps: Vec<&Tensor> = guards.iter().map(|g| &**g).collect();
        let xs = |k: usize| &trace.acts[node.inputs[k]];
        let pg = &mut params[i];
        let dx: Vec<Vec<Tensor>> = match (&node.kind, &trace.caches[i]) {
            (LayerKind::Input { .. }, _) => {
                inputs[input_slots[i].expect("input node")] = dy;
                continue;
            }
            (LayerKind::Conv2d { padding, .. }, _) => {
                let mut dxs = Vec::with_capacity(bsz);
                for (x, g) in xs(0).iter().zip(&dy) {
                    dxs.push(conv2d_backward(x, ps[0], g, padding.amount(ps[0].shape()[0]), pg)?);
                }
                vec![dxs]
            }
            (LayerKind::BatchNorm { .. }, Cache::BatchNorm { xhat, inv_std, batch_stats, .. }) => {
                vec![batchnorm_backward(&dy, xhat, inv_std, *batch_stats, ps[0].data(), pg)]
            }
            (LayerKind::Relu, _) => vec![xs(0)
                .iter()
                .zip(&dy)
                .map(|(x, g)| {
                    let mut d = g.clone();
                    d.data_mut().iter_mut().zip(x.data()).for_each(|(dv, xv)| {
                        if *xv <= 0.0 {
                            *dv = 0.0
                        }
                    });
                    d
                })
                .collect()],
            (LayerKind::MaxPool2d { .. }, Cache::MaxPool(idx)) => vec![xs(0)
                .iter()
                .zip(&dy)
                .zip(idx)
                .map(|((x, g), ix)| {
                    let mut d = Tensor::zeros(x.shape());
                    for (gv, &j) in g.data().iter().zip(ix) {
                        d.data_mut()[j] += gv;
                    }
                    d
                })
                .collect()],
            (LayerKind::FramePool, _) => vec![xs(0)
                .iter()
                .zip(&dy)
                .map(|(x, g)| {
                    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                    let mut d = Tensor::zeros(x.shape());
                    for y in 0..h {
                        for xx in 0..w {
                            for ch in 0..c {
                                d.data_mut()[(y * w + xx) * c + ch] = g.data()[y * c + ch] / w as f64;
                            }
                        }
                    }
                    d
                })
                .collect()],
            (LayerKind::GlobalAvgPool, _) => vec![xs(0)
                .iter()
                .zip(&dy)
                .map(|(x, g)| broadcast_mean_grad(x.shape(), g.data()))
                .collect()],
            (LayerKind::Lstm { .. }, Cache::Lstm(traces)) => {
                let mut dxs = Vec::with_capacity(bsz);
                for ((x, g), tr) in xs(0).iter().zip(&dy).zip(traces) {
                    dxs.push(lstm_backward(x, tr, ps[0], ps[1], g.data(), pg));
                }
                vec![dxs]
            }
            (LayerKind::Concat, _) => {
                let mut parts: Vec<Vec<Tensor>> = vec![Vec::with_capacity(bsz); node.inputs.len()];
                for (s, g) in dy.iter().enumerate() {
                    let mut off = 0;
                    for (k, &j) in node.inputs.iter().enumerate() {
                        let n = trace.acts[j][s].len();
                        parts[k].push(Tensor::vector(g.data()[off..off + n].to_vec()));
                        off += n;
                    }
                }
                parts
            }
            (LayerKind::Eca { .. }, Cache::Eca { weights, pooled }) => {
                let mut dxs = Vec::with_capacity(bsz);
                for (((x, g), w), gp) in xs(0).iter().zip(&dy).zip(weights).zip(pooled) {
                    dxs.push(eca_backward(x, g, w, gp, ps[0].data(), pg));
                }
                vec![dxs]
            }
            (LayerKind::Reshape { .. }, _) => vec![xs(0)
                .iter()
                .zip(dy)
                .map(|(x, g)| g.reshape(x.shape()))
                .collect::<Result<_>>()?],
            (LayerKind::Dsc { .. }, Cache::Dsc { mid }) => {
                let mut dxs = Vec::with_capacity(bsz);
                for ((x, g), m) in xs(0).iter().zip(&dy).zip(mid) {
                    dxs.push(dsc_backward(x, m, g, ps[0], ps[2], pg)?);
                }
                vec![dxs]
            }
            (LayerKind::Dense { .. }, _) => vec![xs(0)
                .iter()
                .zip(&dy)
                .map(|(x, g)| {
                    let d = dense_backward(x.data(), ps[0], g.data(), pg);
                    Tensor::new(x.shape().to_vec(), d)
                })
                .collect::<Result<_>>()?],
            (LayerKind::Softmax, _) => vec![trace.acts[i]
                .iter()
                .zip(&dy)
                .map(|(p, g)| {
                    let dot: f64 = p.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                    Tensor::vector(p.data().iter().zip(g.data()).map(|(pv, gv)| pv * (gv - dot)).collect())
                })
                .collect()],
            (kind, _) => {
                return Err(Error::InvalidArgument(format!(
                    "missing forward cache for {} layer `{}`",
                    kind.type_name(),
                    node.name
                )))
            }
        };
        drop(guards);
        for (k, d) in dx.into_iter().enumerate() {
            accumulate(&mut grads[node.inputs[k]], d);
        }
    }
    for (slot, g) in inputs.iter_mut().enumerate() {
        if g.is_empty() {
            let node = nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| matches!(n.kind, LayerKind::Input { .. }))
                .nth(slot)
                .map(|(i, _)| i)
                .expect("slot exists");
            *g = trace.acts[node].iter().map(|t| Tensor::zeros(t.shape())).collect();
        }
    }
    Ok(Gradients { params, inputs })
}

fn accumulate(slot: &mut Option<Vec<Tensor>>, g: Vec<Tensor>) {
    match slot {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(&g) {
                e.axpy(1.0, d);
            }
        }
        None => *slot = Some(g),
    }
}

fn broadcast_mean_grad(shape: &[usize], g: &[f64]) -> Tensor {
    let mut d = Tensor::zeros(shape);
    let c = g.len();
    let positions = d.len() / c;
    for chunk in d.data_mut().chunks_exact_mut(c) {
        for (v, gv) in chunk.iter_mut().zip(g) {
            *v = gv / positions as f64;
        }
    }
    d
}

/// Stride-1 conv backward; accumulates `[dW, db]` into `pg`, returns `dx`.
fn conv2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor, pad: usize, pg: &mut [Tensor]) -> Result<Tensor> {
    let (h, wd, cin) = x.hwc()?;
    let (oh, ow, cout) = dy.hwc()?;
    let k = w.shape()[0];
    let pad = pad as isize;
    let mut dx = Tensor::zeros(x.shape());
    let (dw_t, db_t) = pg.split_at_mut(1);
    let dw = dw_t[0].data_mut();
    let db = db_t[0].data_mut();
    let wv = w.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &dy.data()[(oy * ow + ox) * cout..][..cout];
            for (b, gv) in db.iter_mut().zip(g) {
                *b += gv;
            }
            for ky in 0..k {
                let iy = oy as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = ox as isize + kx as isize - pad;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let xb = (iy as usize * wd + ix as usize) * cin;
                    for ci in 0..cin {
                        let woff = ((ky * k + kx) * cin + ci) * cout;
                        let xv = x.data()[xb + ci];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            dw[woff + co] += xv * g[co];
                            acc += wv[woff + co] * g[co];
                        }
                        dx.data_mut()[xb + ci] += acc;
                    }
                }
            }
        }
    }
    Ok(dx)
}

fn batchnorm_backward(
    dy: &[Tensor],
    xhat: &[Tensor],
    inv_std: &[f64],
    batch_stats: bool,
    gamma: &[f64],
    pg: &mut [Tensor],
) -> Vec<Tensor> {
    let c = gamma.len();
    let mut sum_dxh = vec![0.0; c];
    let mut sum_dxh_xh = vec![0.0; c];
    let mut count = 0usize;
    for (g, xh) in dy.iter().zip(xhat) {
        for (gp, hp) in g.data().chunks_exact(c).zip(xh.data().chunks_exact(c)) {
            for ch in 0..c {
                pg[0].data_mut()[ch] += gp[ch] * hp[ch];
                pg[1].data_mut()[ch] += gp[ch];
                let dxh = gp[ch] * gamma[ch];
                sum_dxh[ch] += dxh;
                sum_dxh_xh[ch] += dxh * hp[ch];
            }
            count += 1;
        }
    }
    let n = count as f64;
    dy.iter()
        .zip(xhat)
        .map(|(g, xh)| {
            let mut d = g.clone();
            for (dp, hp) in d.data_mut().chunks_exact_mut(c).zip(xh.data().chunks_exact(c)) {
                for ch in 0..c {
                    let dxh = dp[ch] * gamma[ch];
                    dp[ch] = if batch_stats {
                        inv_std[ch] / n * (n * dxh - sum_dxh[ch] - hp[ch] * sum_dxh_xh[ch])
                    } else {
                        dxh * inv_std[ch]
                    };
                }
            }
            d
        })
        .collect()
}

/// Backpropagation through time for a final-hidden-state output.
fn lstm_backward(x: &Tensor, tr: &LstmTrace, w_ih: &Tensor, w_hh: &Tensor, dh_final: &[f64], pg: &mut [Tensor]) -> Tensor {
    let h = w_hh.shape()[0];
    let f = w_ih.shape()[0];
    let t_len = tr.hidden.len();
    let mut dx = Tensor::zeros(x.shape());
    let mut dh = dh_final.to_vec();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..t_len).rev() {
        let z = &tr.gates[t];
        let c = &tr.cells[t];
        let c_prev = if t == 0 { &tr.c0 } else { &tr.cells[t - 1] };
        let h_prev = if t == 0 { &tr.h0 } else { &tr.hidden[t - 1] };
        for j in 0..h {
            let (ig, fg, gg, og) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
            let tc = c[j].tanh();
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * og * (1.0 - tc * tc);
            let d_i = dc[j] * gg;
            let d_g = dc[j] * ig;
            let d_f = dc[j] * c_prev[j];
            dz[j] = d_i * ig * (1.0 - ig);
            dz[h + j] = d_f * fg * (1.0 - fg);
            dz[2 * h + j] = d_g * (1.0 - gg * gg);
            dz[3 * h + j] = d_o * og * (1.0 - og);
            dc[j] *= fg;
        }
        let xt = &x.data()[t * f..(t + 1) * f];
        {
            let (a, rest) = pg.split_at_mut(1);
            let (b, cb) = rest.split_at_mut(1);
            let dwih = a[0].data_mut();
            for (i, &xv) in xt.iter().enumerate() {
                for (d, zv) in dwih[i * 4 * h..(i + 1) * 4 * h].iter_mut().zip(&dz) {
                    *d += xv * zv;
                }
            }
            let dwhh = b[0].data_mut();
            for (j, &hv) in h_prev.iter().enumerate() {
                for (d, zv) in dwhh[j * 4 * h..(j + 1) * 4 * h].iter_mut().zip(&dz) {
                    *d += hv * zv;
                }
            }
            for (d, zv) in cb[0].data_mut().iter_mut().zip(&dz) {
                *d += zv;
            }
        }
        for i in 0..f {
            let row = &w_ih.data()[i * 4 * h..(i + 1) * 4 * h];
            dx.data_mut()[t * f + i] = row.iter().zip(&dz).map(|(a, b)| a * b).sum();
        }
        for (j, d) in dh.iter_mut().enumerate() {
            let row = &w_hh.data()[j * 4 * h..(j + 1) * 4 * h];
            *d = row.iter().zip(&dz).map(|(a, b)| a * b).sum();
        }
    }
    dx
}

fn eca_backward(x: &Tensor, dy: &Tensor, w: &[f64], pooled: &[f64], kernel: &[f64], pg: &mut [Tensor]) -> Tensor {
    let c = w.len();
    let mut dx = dy.clone();
    let mut dw = vec![0.0; c];
    for ((dp, xp), gp) in dx.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)).zip(dy.data().chunks_exact(c)) {
        for ch in 0..c {
            dw[ch] += gp[ch] * xp[ch];
            dp[ch] = gp[ch] * w[ch];
        }
    }
    let da: Vec<f64> = dw.iter().zip(w).map(|(d, wv)| d * wv * (1.0 - wv)).collect();
    let half = (kernel.len() / 2) as isize;
    for (j, dk) in pg[0].data_mut().iter_mut().enumerate() {
        for (i, dav) in da.iter().enumerate() {
            let src = i as isize + j as isize - half;
            if src >= 0 && (src as usize) < c {
                *dk += dav * pooled[src as usize];
            }
        }
    }
    // transpose of a zero-padded correlation is correlation with the flipped kernel
    let flipped: Vec<f64> = kernel.iter().rev().copied().collect();
    let dpool = conv1d_same(&da, &flipped);
    dx.axpy(1.0, &broadcast_mean_grad(x.shape(), &dpool));
    dx
}

fn dsc_backward(x: &Tensor, mid: &Tensor, dy: &Tensor, dw_k: &Tensor, pw_k: &Tensor, pg: &mut [Tensor]) -> Result<Tensor> {
    let (h, w, c) = x.hwc()?;
    let cout = dy.channels();
    let mut dmid = Tensor::zeros(mid.shape());
    for (p, (mp, gp)) in mid.data().chunks_exact(c).zip(dy.data().chunks_exact(cout)).enumerate() {
        let d = dense_backward(mp, pw_k, gp, &mut pg[2..4]);
        dmid.data_mut()[p * c..(p + 1) * c].copy_from_slice(&d);
    }
    let k = dw_k.shape()[0];
    let pad = ((k - 1) / 2) as isize;
    let mut dx = Tensor::zeros(x.shape());
    for y in 0..h {
        for xx in 0..w {
            let g = &dmid.data()[(y * w + xx) * c..][..c];
            for (b, gv) in pg[1].data_mut().iter_mut().zip(g) {
                *b += gv;
            }
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = xx as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let xb = (iy as usize * w + ix as usize) * c;
                    let kb = (ky * k + kx) * c;
                    for ch in 0..c {
                        pg[0].data_mut()[kb + ch] += x.data()[xb + ch] * g[ch];
                        dx.data_mut()[xb + ch] += dw_k.data()[kb + ch] * g[ch];
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Accumulates `[dW, db]` into `pg` and returns `dx`.
fn dense_backward(x: &[f64], w: &Tensor, dy: &[f64], pg: &mut [Tensor]) -> Vec<f64> {
    let m = dy.len();
    for (b, g) in pg[1].data_mut().iter_mut().zip(dy) {
        *b += g;
    }
    let dw = pg[0].data_mut();
    x.iter()
        .enumerate()
        .map(|(i, &xv)| {
            let row = &w.data()[i * m..(i + 1) * m];
            let mut acc = 0.0;
            for j in 0..m {
                dw[i * m + j] += xv * dy[j];
                acc += row[j] * dy[j];
            }
            acc
        })
        .collect()
}

/// Relative error with the `max(|a|, |b|, 1e-6)` denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst gradient mismatch for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub node: String,
    pub param: usize,
    pub max_rel_err: f64,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares analytic gradients with central finite differences of step `h`
/// for every trainable parameter element, one entry per parameter tensor.
pub fn finite_diff_report(
    graph: &ModelGraph,
    batch: &[Vec<Tensor>],
    targets: &[Vec<f64>],
    loss: Loss,
    h: f64,
) -> Result<Vec<ParamCheck>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {h}")));
    }
    let (_, grads, _) = graph_backward(graph, batch, targets, loss)?;
    let eval = || -> Result<f64> {
        let t = graph.forward(batch, Mode::Train)?;
        loss_value(&t, targets, loss)
    };
    let mut out = Vec::new();
    for (ni, node) in graph.nodes().iter().enumerate() {
        for (pi, (param, trainable)) in node.params.iter().zip(node.kind.trainable_mask()).enumerate() {
            if !trainable || node.is_frozen() {
                continue;
            }
            let mut check = ParamCheck { node: node.name.clone(), param: pi, max_rel_err: 0.0, analytic: 0.0, numeric: 0.0 };
            let n = param.read().len();
            for e in 0..n {
                let orig = param.read().data()[e];
                param.write().data_mut()[e] = orig + h;
                let plus = eval();
                param.write().data_mut()[e] = orig - h;
                let minus = eval();
                param.write().data_mut()[e] = orig;
                let numeric = (plus? - minus?) / (2.0 * h);
                let analytic = grads.params[ni][pi].data()[e];
                let err = relative_error(analytic, numeric);
                if err > check.max_rel_err {
                    check = ParamCheck { max_rel_err: err, analytic, numeric, ..check };
                }
            }
            out.push(check);
        }
    }
    Ok(out)
}

/// Largest relative error between analytic gradients and central finite
/// differences with step `h`, over every trainable parameter element.
pub fn finite_diff_check(
    graph: &ModelGraph,
    batch: &[Vec<Tensor>],
    targets: &[Vec<f64>],
    loss: Loss,
    h: f64,
) -> Result<f64> {
    Ok(finite_diff_report(graph, batch, targets, loss, h)?.iter().map(|c| c.max_rel_err).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, InputKind};

    #[test]
    fn relative_error_is_symmetric() {
        for (a, b) in [(1.0, 1.1), (-3.0, 2.0), (1e-12, 0.0)] {
            assert_eq!(relative_error(a, b), relative_error(b, a));
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut b = GraphBuilder::new(1);
        let x = b.input("x", InputKind::Vector, &[2]);
        let d = b.layer("d", LayerKind::Dense { inputs: 2, outputs: 2 }, &[x]).unwrap();
        b.layer("p", LayerKind::Softmax, &[d]).unwrap();
        let g = b.finish().unwrap();
        let batch = vec![vec![Tensor::vector(vec![1.0, 2.0])]];
        let y = vec![vec![1.0, 0.0]];
        assert!(finite_diff_check(&g, &batch, &y, Loss::CrossEntropy, 0.0).is_err());
        assert!(finite_diff_check(&g, &batch, &y, Loss::CrossEntropy, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn exact_target_gives_zero_logit_gradient() {
        let mut b = GraphBuilder::new(2);
        let x = b.input("x", InputKind::Vector, &[3]);
        let d = b.layer("d", LayerKind::Dense { inputs: 3, outputs: 2 }, &[x]).unwrap();
        b.layer("p", LayerKind::Softmax, &[d]).unwrap();
        let g = b.finish().unwrap();
        let batch = vec![vec![Tensor::vector(vec![0.3, -0.2, 0.9])]];
        let p = g.predict(&batch[0]).unwrap();
        let (_, grads, _) = graph_backward(&g, &batch, &[p], Loss::CrossEntropy).unwrap();
        assert!(grads.params[1].iter().all(|t| t.max_abs() < 1e-15));
    }
}
