//! Forward kernels for every layer type, each reporting its multiply-accumulate
//! count (MACC) from the closed form for its shapes.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    pub(crate) fn amount(self, k: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => (k - 1) / 2,
        }
    }
}

pub(crate) fn conv_out_dim(n: usize, k: usize, stride: usize, padding: Padding) -> Result<usize> {
    let pad = padding.amount(k);
    if n + 2 * pad < k || stride == 0 {
        return Err(shape_err(format!("input extent {n} too small for kernel {k}")));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

pub fn conv2d_macc(k: usize, cin: usize, cout: usize, out_h: usize, out_w: usize) -> u64 {
    (k * k * cin * cout * out_h * out_w) as u64
}

pub fn dsc_macc(k: usize, cin: usize, cout: usize, h: usize, w: usize) -> u64 {
    ((k * k * cin + cin * cout) * h * w) as u64
}

pub fn lstm_macc(steps: usize, input: usize, hidden: usize) -> u64 {
    (steps * 4 * (input + hidden) * hidden) as u64
}

pub fn eca_macc(kernel: usize, channels: usize) -> u64 {
    (kernel * channels + channels) as u64
}

/// Cross-correlation of an `H×W×Cin` map with `k×k×Cin×Cout` kernels.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, u64)> {
    let (h, w, cin) = input.hwc()?;
    let [k, k2, kcin, cout] = kernels.shape() else {
        return Err(shape_err(format!("conv kernels must be 4-D, got {:?}", kernels.shape())));
    };
    let (k, cout) = (*k, *cout);
    if *k2 != k || *kcin != cin || bias.len() != cout {
        return Err(shape_err(format!(
            "conv kernels {:?} / bias {} incompatible with input {:?}",
            kernels.shape(),
            bias.len(),
            input.shape()
        )));
    }
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!("conv kernel size must be odd, got {k}")));
    }
    let oh = conv_out_dim(h, k, stride, padding)?;
    let ow = conv_out_dim(w, k, stride, padding)?;
    let pad = padding.amount(k) as isize;
    let x = input.data();
    let wt = kernels.data();
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            o.copy_from_slice(bias);
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let xbase = (iy as usize * w + ix as usize) * cin;
                    for ci in 0..cin {
                        let xv = x[xbase + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &wt[((ky * k + kx) * cin + ci) * cout..][..cout];
                        for (ov, wv) in o.iter_mut().zip(wrow) {
                            *ov += xv * wv;
                        }
                    }
                }
            }
        }
    }
    let macc = conv2d_macc(k, cin, cout, oh, ow);
    Ok((Tensor::new(vec![oh, ow, cout], out)?, macc))
}

/// Inference-mode batch normalization over the last axis.
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<(Tensor, u64)> {
    let c = input.channels();
    if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&n| n != c) {
        return Err(shape_err(format!("batchnorm parameters must have {c} channels")));
    }
    if var.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("batchnorm variance must be >= 0".into()));
    }
    let scale: Vec<f64> = (0..c).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
    let mut out = input.clone();
    for chunk in out.data_mut().chunks_exact_mut(c) {
        for i in 0..c {
            chunk[i] = (chunk[i] - mean[i]) * scale[i] + beta[i];
        }
    }
    Ok((out, 2 * input.len() as u64))
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Window maximum per channel, returning the flat argmax index of every
/// output cell alongside the pooled map.
pub(crate) fn maxpool2d_with_indices(
    input: &Tensor,
    pool: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (h, w, c) = input.hwc()?;
    if h < pool || w < pool || pool == 0 || stride == 0 {
        return Err(shape_err(format!("map {h}×{w} smaller than pool {pool}")));
    }
    let oh = (h - pool) / stride + 1;
    let ow = (w - pool) / stride + 1;
    let x = input.data();
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    let mut idx = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for py in 0..pool {
                for px in 0..pool {
                    let base = ((oy * stride + py) * w + ox * stride + px) * c;
                    for ch in 0..c {
                        let o = (oy * ow + ox) * c + ch;
                        if x[base + ch] > out[o] {
                            out[o] = x[base + ch];
                            idx[o] = base + ch;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, idx))
}

pub fn maxpool2d_macc(out_h: usize, out_w: usize, c: usize, pool: usize) -> u64 {
    (out_h * out_w * c * pool * pool) as u64
}

pub fn maxpool2d_forward(input: &Tensor, pool: usize, stride: usize) -> Result<(Tensor, u64)> {
    let (out, _) = maxpool2d_with_indices(input, pool, stride)?;
    let (oh, ow, c) = out.hwc()?;
    Ok((out, maxpool2d_macc(oh, ow, c, pool)))
}

/// Per-channel mean over all spatial positions; a vector input is returned
/// unchanged.
pub fn global_avg_pool(input: &Tensor) -> Result<(Vec<f64>, u64)> {
    let c = input.channels();
    if input.is_empty() {
        return Err(Error::Empty("global average pool input"));
    }
    let positions = input.len() / c;
    let mut out = vec![0.0; c];
    for chunk in input.data().chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= positions as f64);
    Ok((out, input.len() as u64))
}

/// Averages an `H×W×C` map over `W`, giving an `H×C` sequence (one frame per row).
pub fn frame_pool(input: &Tensor) -> Result<(Tensor, u64)> {
    let (h, w, c) = input.hwc()?;
    let mut out = vec![0.0; h * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[y * c + ch] += input.data()[(y * w + x) * c + ch];
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= w as f64);
    Ok((Tensor::new(vec![h, c], out)?, input.len() as u64))
}

/// `y = Wᵀx + b` with `W` stored `n×m`.
pub fn dense_forward(input: &[f64], weights: &Tensor, bias: &[f64]) -> Result<(Vec<f64>, u64)> {
    let [n, m] = weights.shape() else {
        return Err(shape_err(format!("dense weights must be 2-D, got {:?}", weights.shape())));
    };
    let (n, m) = (*n, *m);
    if input.len() != n || bias.len() != m {
        return Err(shape_err(format!(
            "dense {n}→{m} got input {} and bias {}",
            input.len(),
            bias.len()
        )));
    }
    let mut out = bias.to_vec();
    let w = weights.data();
    for (i, &x) in input.iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(&w[i * m..(i + 1) * m]) {
            *o += x * wv;
        }
    }
    Ok((out, (n * m) as u64))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// LSTM weights; gate blocks are laid out `[input, forget, cell, output]`
/// along the `4H` axis.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a> {
    /// `F × 4H`
    pub w_ih: &'a Tensor,
    /// `H × 4H`
    pub w_hh: &'a Tensor,
    /// `4H`
    pub bias: &'a Tensor,
}

impl LstmParams<'_> {
    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[0]
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.shape()[0]
    }

    fn validate(&self, features: usize) -> Result<usize> {
        let (ih, hh) = (self.w_ih.shape(), self.w_hh.shape());
        if hh.len() != 2 || ih.len() != 2 {
            return Err(shape_err("lstm weight matrices must be 2-D"));
        }
        let h = hh[0];
        if hh[1] != 4 * h || ih[1] != 4 * h || self.bias.len() != 4 * h {
            return Err(shape_err(format!(
                "inconsistent lstm gate dims: w_ih {ih:?}, w_hh {hh:?}, bias {}",
                self.bias.len()
            )));
        }
        if ih[0] != features {
            return Err(shape_err(format!(
                "lstm expects {} input features, got {features}",
                ih[0]
            )));
        }
        Ok(h)
    }
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    /// post-nonlinearity gates per step, `[i, f, g, o]` blocks of `H`
    pub gates: Vec<Vec<f64>>,
    /// cell state after each step
    pub cells: Vec<Vec<f64>>,
    /// hidden state after each step
    pub hidden: Vec<Vec<f64>>,
    pub h0: Vec<f64>,
    pub c0: Vec<f64>,
}

pub(crate) fn lstm_run(
    sequence: &Tensor,
    params: LstmParams<'_>,
    h0: &[f64],
    c0: &[f64],
) -> Result<LstmTrace> {
    let [t_len, f] = sequence.shape() else {
        return Err(shape_err(format!("lstm input must be T×F, got {:?}", sequence.shape())));
    };
    let (t_len, f) = (*t_len, *f);
    let h = params.validate(f)?;
    if h0.len() != h || c0.len() != h {
        return Err(shape_err(format!("lstm initial state must have {h} units")));
    }
    let (wih, whh, b) = (params.w_ih.data(), params.w_hh.data(), params.bias.data());
    let mut trace = LstmTrace {
        gates: Vec::with_capacity(t_len),
        cells: Vec::with_capacity(t_len),
        hidden: Vec::with_capacity(t_len),
        h0: h0.to_vec(),
        c0: c0.to_vec(),
    };
    let mut h_prev = h0.to_vec();
    let mut c_prev = c0.to_vec();
    for t in 0..t_len {
        let x = &sequence.data()[t * f..(t + 1) * f];
        let mut z = b.to_vec();
        for (i, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (zv, wv) in z.iter_mut().zip(&wih[i * 4 * h..(i + 1) * 4 * h]) {
                *zv += xv * wv;
            }
        }
        for (j, &hv) in h_prev.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            for (zv, wv) in z.iter_mut().zip(&whh[j * 4 * h..(j + 1) * 4 * h]) {
                *zv += hv * wv;
            }
        }
        for (idx, zv) in z.iter_mut().enumerate() {
            *zv = if idx / h == 2 { zv.tanh() } else { sigmoid(*zv) };
        }
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            let (ig, fg, gg, og) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
            c[j] = fg * c_prev[j] + ig * gg;
            hn[j] = og * c[j].tanh();
        }
        trace.gates.push(z);
        trace.cells.push(c.clone());
        trace.hidden.push(hn.clone());
        h_prev = hn;
        c_prev = c;
    }
    Ok(trace)
}

/// Runs the recurrence; returns every hidden state (`T×H`) and the final one.
pub fn lstm_forward(
    sequence: &Tensor,
    params: LstmParams<'_>,
    h0: &[f64],
    c0: &[f64],
) -> Result<(Tensor, Vec<f64>, u64)> {
    let trace = lstm_run(sequence, params, h0, c0)?;
    let h = params.hidden_size();
    let t_len = trace.hidden.len();
    let last = trace.hidden.last().cloned().unwrap_or_else(|| h0.to_vec());
    let all = Tensor::new(vec![t_len, h], trace.hidden.concat())?;
    Ok((all, last, lstm_macc(t_len, params.input_size(), h)))
}

/// Depthwise `k×k` convolution (same padding) followed by a `1×1` pointwise
/// mix.
pub fn dsc_forward(
    input: &Tensor,
    depthwise: &Tensor,
    dw_bias: &[f64],
    pointwise: &Tensor,
    pw_bias: &[f64],
) -> Result<(Tensor, u64)> {
    let (h, w, cin) = input.hwc()?;
    let [k, k2, dc] = depthwise.shape() else {
        return Err(shape_err(format!("depthwise kernel must be k×k×C, got {:?}", depthwise.shape())));
    };
    let k = *k;
    if *k2 != k || *dc != cin || dw_bias.len() != cin {
        return Err(shape_err(format!(
            "depthwise kernel {:?} incompatible with input {:?}",
            depthwise.shape(),
            input.shape()
        )));
    }
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!("dsc kernel size must be odd, got {k}")));
    }
    let mid = depthwise_conv(input, depthwise, dw_bias)?;
    let (out, _) = pointwise_conv(&mid, pointwise, pw_bias)?;
    let cout = out.channels();
    Ok((out, dsc_macc(k, cin, cout, h, w)))
}

pub(crate) fn depthwise_conv(input: &Tensor, kernel: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    let k = kernel.shape()[0];
    let pad = ((k - 1) / 2) as isize;
    let x = input.data();
    let kd = kernel.data();
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let o = &mut out[(y * w + xx) * c..(y * w + xx + 1) * c];
            o.copy_from_slice(bias);
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
                    let xb = &x[(iy as usize * w + ix as usize) * c..][..c];
                    let kb = &kd[(ky * k + kx) * c..][..c];
                    for ch in 0..c {
                        o[ch] += xb[ch] * kb[ch];
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, c], out)
}

pub(crate) fn pointwise_conv(input: &Tensor, kernel: &Tensor, bias: &[f64]) -> Result<(Tensor, u64)> {
    let (h, w, cin) = input.hwc()?;
    let [kin, cout] = kernel.shape() else {
        return Err(shape_err(format!("pointwise kernel must be Cin×Cout, got {:?}", kernel.shape())));
    };
    if *kin != cin || bias.len() != *cout {
        return Err(shape_err(format!(
            "pointwise kernel {:?} incompatible with {cin} input channels",
            kernel.shape()
        )));
    }
    let cout = *cout;
    let mut out = Vec::with_capacity(h * w * cout);
    for px in input.data().chunks_exact(cin) {
        let (o, _) = dense_forward(px, kernel, bias)?;
        out.extend(o);
    }
    Ok((Tensor::new(vec![h, w, cout], out)?, (h * w * cin * cout) as u64))
}

/// Odd kernel size from the channel count: nearest odd to `|log2(C)/2 + 1/2|`.
pub fn eca_kernel_size(channels: usize) -> usize {
    let t = ((channels as f64).log2() / 2.0 + 0.5).abs() as usize;
    if t % 2 == 1 {
        t
    } else {
        t + 1
    }
}

/// Zero-padded 1-D correlation along the channel axis.
pub(crate) fn conv1d_same(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let c = x.len();
    let half = (kernel.len() / 2) as isize;
    (0..c)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(j, kv)| {
                    let src = i as isize + j as isize - half;
                    (src >= 0 && src < c as isize).then(|| kv * x[src as usize])
                })
                .sum()
        })
        .collect()
}

/// Channel attention: `w = σ(conv1d(GAP(x)))`, output is `x` with channel
/// `c` scaled by `w_c`. Returns `(output, weights, macc)`.
pub fn eca_forward(input: &Tensor, kernel: &[f64]) -> Result<(Tensor, Vec<f64>, u64)> {
    if kernel.len() % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "eca kernel length must be odd, got {}",
            kernel.len()
        )));
    }
    let (pooled, _) = global_avg_pool(input)?;
    let weights: Vec<f64> = conv1d_same(&pooled, kernel).into_iter().map(sigmoid).collect();
    let c = weights.len();
    let mut out = input.clone();
    for chunk in out.data_mut().chunks_exact_mut(c) {
        for (v, w) in chunk.iter_mut().zip(&weights) {
            *v *= w;
        }
    }
    let macc = eca_macc(kernel.len(), c);
    Ok((out, weights, macc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn conv_identity_and_bias() {
        let x = Tensor::new(vec![3, 2, 2], (0..12).map(f64::from).collect()).unwrap();
        let mut k = Tensor::zeros(&[1, 1, 2, 2]);
        k.data_mut()[0] = 1.0;
        k.data_mut()[3] = 1.0;
        let (y, macc) = conv2d_forward(&x, &k, &[0.0, 0.0], 1, Padding::Valid).unwrap();
        assert_eq!(y, x);
        assert_eq!(macc, 4 * 6);
        let zk = Tensor::zeros(&[3, 3, 2, 2]);
        let (y, _) = conv2d_forward(&x, &zk, &[0.5, -1.0], 1, Padding::Same).unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.5, -1.0]);
        }
    }

    #[test]
    fn conv_patch_sums() {
        let x = Tensor::new(vec![4, 4, 1], (0..16).map(f64::from).collect()).unwrap();
        let k = Tensor::filled(&[3, 3, 1, 1], 1.0);
        let (y, _) = conv2d_forward(&x, &k, &[0.0], 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        for oy in 0..2 {
            for ox in 0..2 {
                let mut s = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += ((oy + dy) * 4 + ox + dx) as f64;
                    }
                }
                assert_eq!(y.data()[oy * 2 + ox], s);
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(&[4, 4, 2]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[3, 3, 3, 1]), &[0.0], 1, Padding::Same).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[2, 2, 2, 1]), &[0.0], 1, Padding::Same).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[3, 3, 2, 1]), &[0.0, 1.0], 1, Padding::Same).is_err());
    }

    #[test]
    fn batchnorm_examples() {
        let x = Tensor::new(vec![2, 1, 1], vec![4.0, -3.0]).unwrap();
        let (y, _) = batchnorm_forward(&x, &[1.0], &[0.0], &[0.0], &[1.0], 0.0).unwrap();
        assert_eq!(y, x);
        let (y, _) = batchnorm_forward(&x, &[3.0], &[1.0], &[2.0], &[4.0], 0.0).unwrap();
        assert_eq!(y.data()[0], 4.0);
        let m = Tensor::filled(&[2, 2, 1], 2.0);
        let (y, _) = batchnorm_forward(&m, &[5.0], &[0.7], &[2.0], &[3.0], 1e-3).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        assert!(batchnorm_forward(&x, &[1.0], &[0.0], &[0.0], &[-1.0], 0.0).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, macc) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(macc, 4);
        let c = Tensor::filled(&[4, 6, 3], 1.5);
        let (y, _) = maxpool2d_forward(&c, 2, 2).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn gap_and_dense_examples() {
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().0, vec![2.5]);
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let (y, macc) = dense_forward(&[1.0, 2.0], &w, &[0.0, 1.0]).unwrap();
        assert_eq!(y, vec![1.0, 5.0]);
        assert_eq!(macc, 4);
        assert!(dense_forward(&[1.0], &w, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.3; 4]), vec![0.25; 4]);
        let p = softmax(&[0.0, 2f64.ln()]);
        assert!(close(p[0], 1.0 / 3.0, 1e-15) && close(p[1], 2.0 / 3.0, 1e-15));
        let a = softmax(&[1.0, -2.0, 0.5]);
        let b = softmax(&[101.0, 98.0, 100.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn lstm_zero_weights_give_zero_state() {
        let (wih, whh, b) = (Tensor::zeros(&[6, 256]), Tensor::zeros(&[64, 256]), Tensor::zeros(&[256]));
        let p = LstmParams { w_ih: &wih, w_hh: &whh, bias: &b };
        let seq = Tensor::filled(&[16, 6], 0.7);
        let (all, last, macc) = lstm_forward(&seq, p, &[0.0; 64], &[0.0; 64]).unwrap();
        assert_eq!(all.shape(), &[16, 64]);
        assert_eq!(last.len(), 64);
        assert!(all.data().iter().all(|&v| v == 0.0));
        assert_eq!(macc, 16 * 4 * 70 * 64);
    }

    #[test]
    fn lstm_single_step_matches_hand_arithmetic() {
        // H = F = 1, gates [i, f, g, o]
        let wih = Tensor::new(vec![1, 4], vec![0.5, -0.3, 0.8, 0.1]).unwrap();
        let whh = Tensor::new(vec![1, 4], vec![0.2, 0.4, -0.6, 0.9]).unwrap();
        let b = Tensor::vector(vec![0.1, 1.0, 0.0, -0.2]);
        let p = LstmParams { w_ih: &wih, w_hh: &whh, bias: &b };
        let (x, h0, c0) = (1.5, 0.3, -0.4);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.5 * x + 0.2 * h0 + 0.1);
        let f = sig(-0.3 * x + 0.4 * h0 + 1.0);
        let g = (0.8 * x - 0.6 * h0).tanh();
        let o = sig(0.1 * x + 0.9 * h0 - 0.2);
        let c = f * c0 + i * g;
        let h = o * c.tanh();
        let seq = Tensor::new(vec![1, 1], vec![x]).unwrap();
        let (_, last, _) = lstm_forward(&seq, p, &[h0], &[c0]).unwrap();
        assert!(close(last[0], h, 1e-12));
    }

    #[test]
    fn lstm_rejects_bad_dims() {
        let (wih, whh, b) = (Tensor::zeros(&[5, 8]), Tensor::zeros(&[2, 8]), Tensor::zeros(&[8]));
        let p = LstmParams { w_ih: &wih, w_hh: &whh, bias: &b };
        assert!(lstm_forward(&Tensor::zeros(&[3, 6]), p, &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn dsc_identity_and_cost() {
        let x = Tensor::new(vec![2, 3, 2], (0..12).map(|v| v as f64 * 0.5 - 1.0).collect()).unwrap();
        let mut dw = Tensor::zeros(&[3, 3, 2]);
        dw.data_mut()[4 * 2] = 1.0;
        dw.data_mut()[4 * 2 + 1] = 1.0;
        let pw = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (y, _) = dsc_forward(&x, &dw, &[0.0; 2], &pw, &[0.0; 2]).unwrap();
        assert_eq!(y, x);
        assert_eq!(dsc_macc(3, 8, 16, 1, 1), 200);
        assert_eq!(conv2d_macc(3, 8, 16, 1, 1), 1152);
    }

    #[test]
    fn eca_examples() {
        assert_eq!(eca_kernel_size(192), 5);
        let g = vec![0.3, -1.2, 2.0, 0.0];
        let x = Tensor::vector(g.clone());
        let (y, w, _) = eca_forward(&x, &[0.0, 1.0, 0.0]).unwrap();
        for c in 0..4 {
            assert!(close(w[c], sigmoid(g[c]), 1e-15));
            assert!(close(y.data()[c], g[c] * sigmoid(g[c]), 1e-15));
        }
        let flat = Tensor::filled(&[9], 0.8);
        let (_, w, _) = eca_forward(&flat, &[0.1, 0.4, -0.3, 0.2, 0.5]).unwrap();
        for c in 2..7 {
            assert!(close(w[c], w[2], 1e-15));
        }
        assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(eca_forward(&flat, &[1.0, 1.0]).is_err());
    }
}
