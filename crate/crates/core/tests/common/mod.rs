#![allow(dead_code)]

use elmformer::attention::{lmsa, relative_position_bias, LmsaWeights, WmsaWeights};
use elmformer::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Rows of a row-major `[r × c]` slice times `[c × n]`, plain triple loop.
pub fn naive_matmul(a: &[f64], b: &[f64], r: usize, c: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * n];
    for i in 0..r {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..c {
                s += a[i * c + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn naive_linear(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / cin;
    let mut y = naive_matmul(x, w.data(), rows, cin, cout);
    for r in 0..rows {
        for j in 0..cout {
            y[r * cout + j] += b.data()[j];
        }
    }
    y
}

/// softmax(q kᵀ/√d + bias) v for one head; all `[len × d]`.
pub fn dense_attention(q: &[f64], k: &[f64], v: &[f64], bias: Option<&[f64]>, len: usize, d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; len * d];
    for i in 0..len {
        let mut s: Vec<f64> = (0..len)
            .map(|j| {
                let dot: f64 = (0..d).map(|t| q[i * d + t] * k[j * d + t]).sum();
                dot * scale + bias.map_or(0.0, |b| b[i * len + j])
            })
            .collect();
        let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for e in s.iter_mut() {
            *e = (*e - mx).exp();
            z += *e;
        }
        for j in 0..len {
            for t in 0..d {
                out[i * d + t] += s[j] / z * v[j * d + t];
            }
        }
    }
    out
}

/// Columns `h·d..(h+1)·d` of a `[rows × c]` matrix.
pub fn head_cols(x: &[f64], rows: usize, c: usize, h: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * d);
    for r in 0..rows {
        out.extend_from_slice(&x[r * c + h * d..r * c + (h + 1) * d]);
    }
    out
}

/// erf from its Maclaurin series; accurate to ~1e-15 for |x| ≤ 2.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

pub fn wmsa_oracle(x: &Tensor, w: &WmsaWeights<Tensor>) -> Vec<f64> {
    let (n, len, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = c / w.heads;
    let bias = relative_position_bias(w.window, &w.bias_table).unwrap();
    let mut out = Vec::new();
    for i in 0..n {
        let xi = &x.data()[i * len * c..(i + 1) * len * c];
        let q = naive_linear(xi, &w.query.weight, &w.query.bias);
        let k = naive_linear(xi, &w.key.weight, &w.key.bias);
        let v = naive_linear(xi, &w.value.weight, &w.value.bias);
        for h in 0..w.heads {
            let bh = &bias.data()[h * len * len..(h + 1) * len * len];
            out.extend(dense_attention(
                &head_cols(&q, len, c, h, d),
                &head_cols(&k, len, c, h, d),
                &head_cols(&v, len, c, h, d),
                Some(bh),
                len,
                d,
            ));
        }
    }
    out
}

pub fn lmsa_oracle_check(m: usize, windows: &Tensor, w: &LmsaWeights<Tensor>) -> f64 {
    let (n, len, c) = (windows.shape()[0], windows.shape()[1], windows.shape()[2]);
    let d = c / w.heads;
    let z = lmsa(windows, w).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for sy in 0..m / 2 {
            for sx in 0..m / 2 {
                let members: Vec<usize> = (0..4).map(|q| (2 * sy + q / 2) * m + 2 * sx + q % 2).collect();
                let x: Vec<f64> = members
                    .iter()
                    .flat_map(|&t| windows.data()[(i * len + t) * c..(i * len + t + 1) * c].to_vec())
                    .collect();
                let q = naive_linear(&x, &w.query.weight, &w.query.bias);
                let k = naive_linear(&x, &w.key.weight, &w.key.bias);
                let v = naive_linear(&x, &w.value.weight, &w.value.bias);
                for h in 0..w.heads {
                    let o = dense_attention(
                        &head_cols(&q, 4, c, h, d),
                        &head_cols(&k, 4, c, h, d),
                        &head_cols(&v, 4, c, h, d),
                        None,
                        4,
                        d,
                    );
                    for (slot, &t) in members.iter().enumerate() {
                        for e in 0..d {
                            let got = z.data()[((i * w.heads + h) * len + t) * d + e];
                            worst = worst.max((got - o[slot * d + e]).abs());
                        }
                    }
                }
            }
        }
    }
    worst
}

pub fn direct_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut se = 0.0;
    for i in 0..a.len() {
        se += (a[i] - b[i]).powi(2);
    }
    10.0 * (1.0 / (se / a.len() as f64)).log10()
}

/// Mean SSIM from an explicit 11×11 window at every valid position.
pub fn direct_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut k = [[0.0f64; 11]; 11];
    let mut z = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wv = k[i][j] / z;
                    let (p, q) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                    ma += wv * p;
                    mb += wv * q;
                    saa += wv * p * p;
                    sbb += wv * q * q;
                    sab += wv * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
