//! Straight-line scalar reimplementations used only to check the library.
//!
//! Nothing here calls into the tensor kernel or the tape: parameters are
//! read as flat slices by name and every formula is spelled out as loops.

#![allow(dead_code)]

use half_core::corpus::ReviewBundle;
use half_core::model::{Activation, ParamSet};

pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `input` D×T, `filters` K×D×w, `bias` K; zero "same" padding.
pub fn naive_conv1d(
    input: &[f64],
    filters: &[f64],
    bias: &[f64],
    d: usize,
    t: usize,
    k: usize,
    w: usize,
) -> Vec<f64> {
    let half = (w as isize - 1) / 2;
    let mut out = vec![0.0; k * t];
    for j in 0..k {
        for tt in 0..t {
            let mut s = bias[j];
            for c in 0..d {
                for o in 0..w {
                    let src = tt as isize + o as isize - half;
                    if src >= 0 && (src as usize) < t {
                        s += filters[(j * d + c) * w + o] * input[c * t + src as usize];
                    }
                }
            }
            out[j * t + tt] = s;
        }
    }
    out
}

pub fn naive_weighted_sum(weights: &[f64], vectors: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (j, &w) in weights.iter().enumerate() {
        for c in 0..k {
            out[c] += w * vectors[j * k + c];
        }
    }
    out
}

/// Softmax restricted to `keep` positions; the rest are zero.
pub fn masked_softmax(x: &[f64], keep: &[bool]) -> Vec<f64> {
    let max = x
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; x.len()];
    let mut total = 0.0;
    for i in 0..x.len() {
        if keep[i] {
            out[i] = (x[i] - max).exp();
            total += out[i];
        }
    }
    for v in &mut out {
        *v /= total;
    }
    out
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
    }
}

fn slice<'a>(p: &'a ParamSet, name: &str) -> &'a [f64] {
    let id = p.store.find(name).unwrap_or_else(|| panic!("no tensor {name}"));
    p.store.get(id).data()
}

pub struct OracleReview {
    pub d: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Word-level encoder for one review. `side` is "u" or "i".
pub fn encode_review(p: &ParamSet, tokens: &[u32], side: &str) -> OracleReview {
    let hp = &p.hp;
    let (dim, k, w, a) = (hp.embed_dim, hp.filters, hp.window, hp.attn_dim);
    let t = tokens.len();
    let e = slice(p, "E");
    let cw = slice(p, &format!("ConvW_{side}"));
    let cb = slice(p, &format!("ConvB_{side}"));
    let am = slice(p, &format!("A_{side}"));
    let qw = slice(p, &format!("qw_{side}"));

    let keep: Vec<bool> = tokens.iter().map(|&x| x != 0).collect();
    if !keep.iter().any(|&x| x) {
        return OracleReview {
            d: vec![0.0; k],
            alpha: vec![0.0; t],
        };
    }

    // embedded[c][t]
    let emb = |c: usize, pos: isize| -> f64 {
        if pos < 0 || pos as usize >= t {
            0.0
        } else {
            e[tokens[pos as usize] as usize * dim + c]
        }
    };
    let half = (w as isize - 1) / 2;
    let mut z = vec![vec![0.0; t]; k];
    for j in 0..k {
        for tt in 0..t {
            let mut s = cb[j];
            for c in 0..dim {
                for o in 0..w {
                    s += cw[(j * dim + c) * w + o] * emb(c, tt as isize + o as isize - half);
                }
            }
            z[j][tt] = act(hp.activation, s);
        }
    }
    let mut g = vec![0.0; t];
    for tt in 0..t {
        let mut s = 0.0;
        for r in 0..a {
            let mut inner = 0.0;
            for j in 0..k {
                inner += am[r * k + j] * z[j][tt];
            }
            s += qw[r] * inner;
        }
        g[tt] = s;
    }
    let alpha = masked_softmax(&g, &keep);
    let mut d = vec![0.0; k];
    for j in 0..k {
        for tt in 0..t {
            d[j] += alpha[tt] * z[j][tt];
        }
    }
    OracleReview { d, alpha }
}

/// Review attention over review vectors `ds` with an explicit query.
pub fn review_attention(p: &ParamSet, ds: &[Vec<f64>], mask: &[bool], query: &[f64], side: &str) -> (Vec<f64>, Vec<f64>) {
    let (k, f) = (p.hp.filters, p.hp.factor_dim);
    let a2 = slice(p, &format!("A2_{side}"));
    let mut e = vec![0.0; ds.len()];
    for (n, d) in ds.iter().enumerate() {
        let mut s = 0.0;
        for r in 0..f {
            let mut inner = 0.0;
            for j in 0..k {
                inner += a2[r * k + j] * d[j];
            }
            s += query[r] * inner;
        }
        e[n] = s;
    }
    let beta = masked_softmax(&e, mask);
    let mut m = vec![0.0; k];
    for (n, d) in ds.iter().enumerate() {
        for j in 0..k {
            m[j] += beta[n] * d[j];
        }
    }
    (m, beta)
}

pub struct OraclePrediction {
    pub rating: f64,
    pub pre_activation: f64,
    pub alpha_user: Vec<Vec<f64>>,
    pub alpha_item: Vec<Vec<f64>>,
    pub beta_user: Vec<f64>,
    pub beta_item: Vec<f64>,
}

fn side_features(p: &ParamSet, b: &ReviewBundle, query: &[f64], side: &str) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let mut ds = Vec::new();
    let mut alphas = Vec::new();
    for (tokens, &real) in b.reviews.iter().zip(&b.mask) {
        if real {
            let r = encode_review(p, tokens, side);
            ds.push(r.d);
            alphas.push(r.alpha);
        } else {
            ds.push(vec![0.0; p.hp.filters]);
            alphas.push(vec![0.0; tokens.len()]);
        }
    }
    let (m, beta) = review_attention(p, &ds, &b.mask, query, side);
    (m, beta, alphas)
}

pub fn lfm(p: &ParamSet, u: usize, i: usize) -> f64 {
    let f = p.hp.factor_dim;
    let q = &slice(p, "Q")[u * f..(u + 1) * f];
    let pi = &slice(p, "P")[i * f..(i + 1) * f];
    let dot: f64 = (0..f).map(|r| q[r] * pi[r]).sum();
    dot + slice(p, "Bu")[u] + slice(p, "Bi")[i] + slice(p, "mu")[0]
}

pub fn forward(p: &ParamSet, u: usize, i: usize, ub: &ReviewBundle, ib: &ReviewBundle) -> OraclePrediction {
    let (k, f) = (p.hp.filters, p.hp.factor_dim);
    let q = slice(p, "Q")[u * f..(u + 1) * f].to_vec();
    let pi = slice(p, "P")[i * f..(i + 1) * f].to_vec();
    let (mu_vec, beta_user, alpha_user) = side_features(p, ub, &q, "u");
    let (mi_vec, beta_item, alpha_item) = side_features(p, ib, &pi, "i");
    let w = slice(p, "Wfuse");
    let mut s = 0.0;
    for j in 0..k {
        s += w[j] * mu_vec[j] * mi_vec[j];
    }
    for r in 0..f {
        s += w[k + r] * q[r] * pi[r];
    }
    let pre = s + slice(p, "Bu")[u] + slice(p, "Bi")[i] + slice(p, "mu")[0];
    OraclePrediction {
        rating: pre.max(0.0),
        pre_activation: pre,
        alpha_user,
        alpha_item,
        beta_user,
        beta_item,
    }
}
