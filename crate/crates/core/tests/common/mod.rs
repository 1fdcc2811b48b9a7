//! Straight-line reference implementations used as test oracles. Nothing here
//! calls into the crate's numeric code.

#![allow(dead_code)]

use mlpl::model::ModelParams;

pub fn softmax(v: &[f64], tau: f64) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| ((x - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// `f = W·x + a`
pub fn features(p: &ModelParams, x: &[f64]) -> Vec<f64> {
    let mut f = vec![0.0; p.d];
    for i in 0..p.d {
        let mut s = p.adapter_b[i];
        for j in 0..p.d_in {
            s += p.adapter_w[i * p.d_in + j] * x[j];
        }
        f[i] = s;
    }
    f
}

/// Semantic head probabilities.
pub fn predict(p: &ModelParams, x: &[f64]) -> Vec<f64> {
    let f = features(p, x);
    let mut z = vec![0.0; p.k];
    for c in 0..p.k {
        let mut s = p.head_b[c];
        for i in 0..p.d {
            s += p.head_w[c * p.d + i] * f[i];
        }
        z[c] = s;
    }
    softmax(&z, 1.0)
}

pub struct Problem {
    pub labeled: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub strong: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub masks: Vec<bool>,
    pub anchors: Vec<Vec<f64>>,
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mean_text: bool,
    pub batch_axis: bool,
}

pub fn l_s(p: &ModelParams, pr: &Problem) -> f64 {
    let mut t = 0.0;
    for (x, &y) in pr.labeled.iter().zip(&pr.labels) {
        t -= predict(p, x)[y].ln();
    }
    t / pr.labeled.len() as f64
}

pub fn l_t(p: &ModelParams, pr: &Problem) -> f64 {
    let b = pr.labeled.len();
    let k = pr.anchors.len();
    let mut s = vec![vec![0.0; k]; b];
    for (i, x) in pr.labeled.iter().enumerate() {
        let f = features(p, x);
        for c in 0..k {
            s[i][c] = cos(&f, &pr.anchors[c]);
        }
    }
    let mut t = 0.0;
    for i in 0..b {
        let y = pr.labels[i];
        let prob = if pr.batch_axis {
            let col: Vec<f64> = (0..b).map(|j| s[j][y]).collect();
            softmax(&col, pr.tau)[i]
        } else {
            softmax(&s[i], pr.tau)[y]
        };
        t -= prob.ln();
    }
    if pr.mean_text {
        t / b as f64
    } else {
        t
    }
}

pub fn l_u(p: &ModelParams, pr: &Problem) -> f64 {
    let mut t = 0.0;
    for ((x, q), &m) in pr.strong.iter().zip(&pr.targets).zip(&pr.masks) {
        if m {
            let ps = predict(p, x);
            for c in 0..q.len() {
                if q[c] > 0.0 {
                    t -= q[c] * ps[c].ln();
                }
            }
        }
    }
    t / pr.strong.len() as f64
}

pub fn l_total(p: &ModelParams, pr: &Problem) -> f64 {
    l_s(p, pr) + pr.lambda1 * l_t(p, pr) + pr.lambda2 * l_u(p, pr)
}

/// Central-difference gradient of `loss` with respect to every parameter,
/// in the order W, a, H, c.
pub fn numeric_gradient(p: &ModelParams, h: f64, loss: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut q = p.clone();
    for block in 0..4 {
        let n = q.blocks()[block].len();
        for i in 0..n {
            let orig = q.blocks()[block][i];
            q.blocks_mut()[block][i] = orig + h;
            let up = loss(&q);
            q.blocks_mut()[block][i] = orig - h;
            let down = loss(&q);
            q.blocks_mut()[block][i] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

pub fn flatten(p: &ModelParams) -> Vec<f64> {
    p.blocks().iter().flat_map(|b| b.iter().copied()).collect()
}

/// Worst `|a − n| / max(|a|, |n|, floor)` over all coordinates.
pub fn worst_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
