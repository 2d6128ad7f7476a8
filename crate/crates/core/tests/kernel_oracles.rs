use hppi_core::kernels::{
    conv2d_forward, dsc_forward, dsc_macc, eca_forward, lstm_forward, sigmoid, LstmParams, Padding,
};
use hppi_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn at(t: &Tensor, idx: &[usize]) -> f64 {
    let s = t.shape();
    let mut flat = 0;
    for (i, &v) in idx.iter().enumerate() {
        flat = flat * s[i] + v;
    }
    t.data()[flat]
}

fn conv_oracle(x: &Tensor, k: &Tensor, bias: &[f64], pad: isize) -> Vec<f64> {
    let (h, w, cin) = (x.shape()[0] as isize, x.shape()[1] as isize, x.shape()[2]);
    let (ks, cout) = (k.shape()[0] as isize, k.shape()[3]);
    let (oh, ow) = (h + 2 * pad - ks + 1, w + 2 * pad - ks + 1);
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = bias[co];
                for ky in 0..ks {
                    for kx in 0..ks {
                        let (iy, ix) = (oy + ky - pad, ox + kx - pad);
                        if iy < 0 || ix < 0 || iy >= h || ix >= w {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += at(x, &[iy as usize, ix as usize, ci])
                                * at(k, &[ky as usize, kx as usize, ci, co]);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
    }
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (padding, pad) in [(Padding::Valid, 0), (Padding::Same, 1)] {
        let x = random(&[6, 5, 2], &mut rng);
        let k = random(&[3, 3, 2, 4], &mut rng);
        let b: Vec<f64> = (0..4).map(|i| i as f64 * 0.1).collect();
        let (y, macc) = conv2d_forward(&x, &k, &b, 1, padding).unwrap();
        assert_close(y.data(), &conv_oracle(&x, &k, &b, pad), 1e-12);
        assert_eq!(macc, (9 * 2 * 4 * y.shape()[0] * y.shape()[1]) as u64);
    }
}

#[test]
fn dsc_equals_depthwise_then_pointwise_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[4, 4, 3], &mut rng);
    let dw = random(&[3, 3, 3], &mut rng);
    let dwb = [0.1, -0.2, 0.3];
    let pw = random(&[3, 5], &mut rng);
    let pwb = [0.0, 0.5, -0.5, 1.0, 0.2];
    let (y, macc) = dsc_forward(&x, &dw, &dwb, &pw, &pwb).unwrap();

    // depthwise as a full conv with a diagonal kernel
    let mut full = Tensor::zeros(&[3, 3, 3, 3]);
    for ky in 0..3 {
        for kx in 0..3 {
            for c in 0..3 {
                full.data_mut()[((ky * 3 + kx) * 3 + c) * 3 + c] = at(&dw, &[ky, kx, c]);
            }
        }
    }
    let mid = Tensor::new(vec![4, 4, 3], conv_oracle(&x, &full, &dwb, 1)).unwrap();
    let pw4 = pw.clone().reshape(&[1, 1, 3, 5]).unwrap();
    assert_close(y.data(), &conv_oracle(&mid, &pw4, &pwb, 0), 1e-12);
    assert_eq!(macc, dsc_macc(3, 3, 5, 4, 4));
    assert_eq!(macc, (4 * 4 * 3 * (9 + 5)) as u64);
}

#[test]
fn lstm_matches_scalar_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t_len, f, h) = (5, 3, 2);
    let seq = random(&[t_len, f], &mut rng);
    let w_ih = random(&[f, 4 * h], &mut rng);
    let w_hh = random(&[h, 4 * h], &mut rng);
    let bias = random(&[4 * h], &mut rng);
    let params = LstmParams { w_ih: &w_ih, w_hh: &w_hh, bias: &bias };
    let (all, last, macc) = lstm_forward(&seq, params, &[0.0; 2], &[0.0; 2]).unwrap();

    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    let mut expected = Vec::new();
    for t in 0..t_len {
        let z: Vec<f64> = (0..4 * h)
            .map(|j| {
                bias.data()[j]
                    + (0..f).map(|i| at(&seq, &[t, i]) * at(&w_ih, &[i, j])).sum::<f64>()
                    + (0..h).map(|i| hs[i] * at(&w_hh, &[i, j])).sum::<f64>()
            })
            .collect();
        for u in 0..h {
            let (i, fg, g, o) = (sigmoid(z[u]), sigmoid(z[h + u]), z[2 * h + u].tanh(), sigmoid(z[3 * h + u]));
            cs[u] = fg * cs[u] + i * g;
            hs[u] = o * cs[u].tanh();
        }
        expected.extend(&hs);
    }
    assert_close(all.data(), &expected, 1e-12);
    assert_close(&last, &hs, 1e-12);
    assert_eq!(macc, (t_len * 4 * h * (f + h)) as u64);
}

#[test]
fn eca_scales_channels_by_attention_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[2, 2, 5], &mut rng);
    let kernel = [0.3, -0.7, 1.1];
    let (y, w, _) = eca_forward(&x, &kernel).unwrap();
    let mean: Vec<f64> = (0..5).map(|c| (0..4).map(|p| x.data()[p * 5 + c]).sum::<f64>() / 4.0).collect();
    for c in 0..5 {
        let mut z = 0.0;
        for (j, k) in kernel.iter().enumerate() {
            let src = c as isize + j as isize - 1;
            if (0..5).contains(&src) {
                z += k * mean[src as usize];
            }
        }
        assert!((w[c] - sigmoid(z)).abs() < 1e-12);
        for p in 0..4 {
            assert!((y.data()[p * 5 + c] - x.data()[p * 5 + c] * w[c]).abs() < 1e-12);
        }
    }
}
