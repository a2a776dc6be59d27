//! Independent re-implementations shared by the oracle and acceptance
//! suites: plain nested loops over `Vec<Vec<f64>>`, no library helpers.
#![allow(dead_code)]

use clc_core::autodiff::Tensor;
use clc_core::ClcModel;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type M = Vec<Vec<f64>>;

pub fn to_m(t: &Tensor) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn param(model: &ClcModel, name: &str) -> M {
    let id = model.store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    to_m(model.store.get(id))
}

pub fn mm(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn tr(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn affine(x: &M, w: &M, b: &M) -> M {
    mm(x, w)
        .into_iter()
        .map(|r| r.iter().zip(&b[0]).map(|(v, c)| v + c).collect())
        .collect()
}

pub fn relu(x: &M) -> M {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn scale(x: &M, s: f64) -> M {
    x.iter().map(|r| r.iter().map(|v| v * s).collect()).collect()
}

pub fn softmax(x: &M) -> M {
    x.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn attention(q: &M, k: &M, v: &M, d: usize) -> M {
    mm(&softmax(&scale(&mm(q, &tr(k)), 1.0 / (d as f64).sqrt())), v)
}

pub fn concat(parts: &[&M]) -> M {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().cloned()).collect())
        .collect()
}

pub fn max_diff(a: &M, b: &Tensor) -> f64 {
    assert_eq!((a.len(), a[0].len()), b.shape());
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - b.get(i, j)).abs());
        }
    }
    worst
}

pub struct AcpOracle {
    pub v_bar: M,
    pub a_bar: M,
    pub c_visual: M,
    pub c_audio: M,
}

pub fn acp_oracle(model: &ClcModel, visual: &M, audio: &M) -> AcpOracle {
    let d = model.config.d_model;
    let p = |n: &str| param(model, n);
    let v = if model.config.d_visual != d {
        affine(visual, &p("acp.visual_in.weight"), &p("acp.visual_in.bias"))
    } else {
        visual.clone()
    };
    let a = relu(&affine(audio, &p("acp.audio_proj.weight"), &p("acp.audio_proj.bias")));
    let wv = |k: usize| p(&format!("acp.visual.w{k}"));
    let wa = |k: usize| p(&format!("acp.audio.w{k}"));

    let vs = attention(&mm(&v, &wv(1)), &mm(&v, &wv(2)), &mm(&v, &wv(3)), d);
    let as_ = attention(&mm(&a, &wa(1)), &mm(&a, &wa(2)), &mm(&a, &wa(3)), d);
    let vc = attention(&mm(&v, &wv(4)), &mm(&a, &wa(4)), &mm(&a, &wa(5)), d);
    let ac = attention(&mm(&a, &wa(6)), &mm(&v, &wv(5)), &mm(&v, &wv(6)), d);
    let inv = 1.0 / (d as f64).sqrt();
    let cv = relu(&scale(&mm(&v, &tr(&a)), inv));
    let ca = relu(&scale(&mm(&a, &tr(&v)), inv));
    let gate = |x: &M, c: &M| -> M {
        x.iter()
            .zip(c)
            .map(|(row, crow)| {
                let s: f64 = crow.iter().sum();
                row.iter().map(|e| e * s).collect()
            })
            .collect()
    };
    let fuse = |x: &M, xs: &M, g: &M, pre: &str| {
        let h = relu(&affine(
            &concat(&[x, xs, g]),
            &p(&format!("{pre}.first.weight")),
            &p(&format!("{pre}.first.bias")),
        ));
        affine(&h, &p(&format!("{pre}.second.weight")), &p(&format!("{pre}.second.bias")))
    };
    AcpOracle {
        v_bar: fuse(&v, &vs, &gate(&vc, &cv), "acp.fuse_visual"),
        a_bar: fuse(&a, &as_, &gate(&ac, &ca), "acp.fuse_audio"),
        c_visual: cv,
        c_audio: ca,
    }
}

pub fn random_m(rng: &mut ChaCha8Rng, r: usize, c: usize) -> M {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn tensor(m: &M) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gru_oracle(model: &ClcModel, prefix: &str, x: &M, reverse: bool) -> M {
    let h_dim = model.config.hidden;
    let wi = param(model, &format!("{prefix}.w_input"));
    let bi = param(model, &format!("{prefix}.b_input"));
    let wh = param(model, &format!("{prefix}.w_hidden"));
    let bh = param(model, &format!("{prefix}.b_hidden"));
    let t = x.len();
    let mut h = vec![0.0; h_dim];
    let mut out = vec![vec![0.0; h_dim]; t];
    let steps: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
    for s in steps {
        let lin = |w: &M, b: &M, inp: &[f64], col: usize| {
            b[0][col] + inp.iter().enumerate().map(|(p, v)| v * w[p][col]).sum::<f64>()
        };
        let mut next = vec![0.0; h_dim];
        for j in 0..h_dim {
            let r = sigmoid(lin(&wi, &bi, &x[s], j) + lin(&wh, &bh, &h, j));
            let z = sigmoid(lin(&wi, &bi, &x[s], h_dim + j) + lin(&wh, &bh, &h, h_dim + j));
            let n = (lin(&wi, &bi, &x[s], 2 * h_dim + j) + r * lin(&wh, &bh, &h, 2 * h_dim + j)).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
        }
        h = next;
        out[s] = h.clone();
    }
    out
}

pub fn head_oracle(model: &ClcModel, name: &str, x: &M) -> M {
    let f = gru_oracle(model, &format!("{name}.fwd"), x, false);
    let b = gru_oracle(model, &format!("{name}.bwd"), x, true);
    let logits = affine(
        &concat(&[&f, &b]),
        &param(model, &format!("{name}.classifier.weight")),
        &param(model, &format!("{name}.classifier.bias")),
    );
    softmax(&logits)
}

/// Counts, for each index, how many entries come strictly before it under
/// (loss, index) order; keeps those with rank below the quota.
pub fn selection_oracle(losses: &[f64], tau: f64) -> Vec<usize> {
    let n = losses.len();
    let exact = tau * n as f64;
    let quota = if (exact - exact.round()).abs() < 1e-9 { exact.round() } else { exact.ceil() } as usize;
    (0..n)
        .filter(|&i| {
            let rank = (0..n)
                .filter(|&j| losses[j] < losses[i] || (losses[j] == losses[i] && j < i))
                .count();
            rank < quota.max(1)
        })
        .collect()
}


/// Precision at each positive, ranks computed by pairwise comparison.
pub fn ap_oracle(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n = scores.len();
    let rank = |i: usize| {
        1 + (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    if pos.is_empty() {
        return None;
    }
    let total: f64 = pos
        .iter()
        .map(|&i| {
            let r = rank(i);
            let above = pos.iter().filter(|&&j| rank(j) <= r).count();
            above as f64 / r as f64
        })
        .sum();
    Some(total / pos.len() as f64)
}
