//! Naive reference implementations used as test oracles. Written from the
//! model definition with plain loops, products and `exp`, sharing no code
//! with the library.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const ETA_FLOOR: f64 = 1e-6;
pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1e6;

/// Mixture parameters in plain nested vectors. `gate[k]` has one weight per
/// bit, plus a trailing bias when `intercept` is set.
#[derive(Debug, Clone)]
pub struct Params {
    pub gate: Vec<Vec<f64>>,
    pub intercept: bool,
    pub eta: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

pub type Rows = [(Vec<bool>, f64)];

pub fn gate_probs(gate: &[Vec<f64>], intercept: bool, s: &[bool]) -> Vec<f64> {
    let scores: Vec<f64> = gate
        .iter()
        .map(|w| {
            let mut a = 0.0;
            for (l, &bit) in s.iter().enumerate() {
                if bit {
                    a += w[l];
                }
            }
            if intercept {
                a += w[s.len()];
            }
            a
        })
        .collect();
    let e: Vec<f64> = scores.iter().map(|v| v.exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

fn clamp_eta(e: f64) -> f64 {
    e.clamp(ETA_FLOOR, 1.0 - ETA_FLOOR)
}

/// `p(s | eta) * N(z | mu, 1/lambda)` as a plain product.
pub fn density(eta: &[f64], mu: f64, lambda: f64, s: &[bool], z: f64) -> f64 {
    let mut p = 1.0;
    for (l, &bit) in s.iter().enumerate() {
        let e = clamp_eta(eta[l]);
        p *= if bit { e } else { 1.0 - e };
    }
    p * (lambda / (2.0 * std::f64::consts::PI)).sqrt() * (-0.5 * lambda * (z - mu) * (z - mu)).exp()
}

fn joint_terms(p: &Params, s: &[bool], z: f64) -> Vec<f64> {
    let g = gate_probs(&p.gate, p.intercept, s);
    (0..p.mu.len())
        .map(|k| g[k] * density(&p.eta[k], p.mu[k], p.lambda[k], s, z))
        .collect()
}

pub fn log_likelihood(p: &Params, rows: &Rows) -> f64 {
    rows.iter()
        .map(|(s, z)| joint_terms(p, s, z.to_owned()).iter().sum::<f64>().ln())
        .sum()
}

/// Bayes rule: `beta_k = g_k p_k / sum_j g_j p_j`.
pub fn posterior(p: &Params, s: &[bool], z: f64) -> Vec<f64> {
    let t = joint_terms(p, s, z);
    let total: f64 = t.iter().sum();
    t.iter().map(|v| v / total).collect()
}

/// `sum_n sum_k beta [log g_k + log p_k] - sum beta log beta`.
pub fn bound(p: &Params, beta: &[Vec<f64>], rows: &Rows) -> f64 {
    let mut total = 0.0;
    for ((s, z), b) in rows.iter().zip(beta) {
        let g = gate_probs(&p.gate, p.intercept, s);
        for k in 0..p.mu.len() {
            if b[k] > 0.0 {
                let d = density(&p.eta[k], p.mu[k], p.lambda[k], s, *z);
                total += b[k] * ((g[k] * d).ln() - b[k].ln());
            }
        }
    }
    total
}

/// `sum_n sum_k beta log softmax_k - ridge |w|^2 / 2`.
pub fn gate_value(
    gate: &[Vec<f64>],
    intercept: bool,
    beta: &[Vec<f64>],
    rows: &Rows,
    ridge: f64,
) -> f64 {
    let mut total = 0.0;
    for ((s, _), b) in rows.iter().zip(beta) {
        let g = gate_probs(gate, intercept, s);
        for k in 0..gate.len() {
            if b[k] > 0.0 {
                total += b[k] * g[k].ln();
            }
        }
    }
    let norm: f64 = gate.iter().flatten().map(|w| w * w).sum();
    total - 0.5 * ridge * norm
}

fn gate_gradient(
    gate: &[Vec<f64>],
    intercept: bool,
    beta: &[Vec<f64>],
    rows: &Rows,
    ridge: f64,
) -> Vec<Vec<f64>> {
    let mut grad: Vec<Vec<f64>> = gate
        .iter()
        .map(|w| w.iter().map(|v| -ridge * v).collect())
        .collect();
    for ((s, _), b) in rows.iter().zip(beta) {
        let g = gate_probs(gate, intercept, s);
        let m: f64 = b.iter().sum();
        for k in 0..gate.len() {
            let r = b[k] - m * g[k];
            for (l, &bit) in s.iter().enumerate() {
                if bit {
                    grad[k][l] += r;
                }
            }
            if intercept {
                grad[k][s.len()] += r;
            }
        }
    }
    grad
}

/// Plain gradient ascent with step halving.
fn improve_gate(
    gate: &mut Vec<Vec<f64>>,
    intercept: bool,
    beta: &[Vec<f64>],
    rows: &Rows,
    ridge: f64,
    steps: usize,
) {
    let mut value = gate_value(gate, intercept, beta, rows, ridge);
    let mut step = 1.0;
    for _ in 0..steps {
        let grad = gate_gradient(gate, intercept, beta, rows, ridge);
        let gnorm: f64 = grad.iter().flatten().map(|v| v * v).sum();
        if gnorm < 1e-24 {
            break;
        }
        step *= 2.0;
        loop {
            let cand: Vec<Vec<f64>> = gate
                .iter()
                .zip(&grad)
                .map(|(w, g)| w.iter().zip(g).map(|(a, b)| a + step * b).collect())
                .collect();
            let v = gate_value(&cand, intercept, beta, rows, ridge);
            if v > value {
                *gate = cand;
                value = v;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return;
            }
        }
    }
}

/// One EM run from random responsibilities. Returns the final log-likelihood.
pub fn naive_em(rows: &Rows, k: usize, intercept: bool, seed: u64, max_iters: usize) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let l = rows[0].0.len();
    let width = l + usize::from(intercept);
    let mut beta: Vec<Vec<f64>> = rows
        .iter()
        .map(|_| {
            let r: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let t: f64 = r.iter().sum();
            r.into_iter().map(|v| v / t).collect()
        })
        .collect();
    let mut p = Params {
        gate: vec![vec![0.0; width]; k],
        intercept,
        eta: vec![vec![0.5; l]; k],
        mu: vec![0.0; k],
        lambda: vec![1.0; k],
    };
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..max_iters {
        for c in 0..k {
            let mass: f64 = beta.iter().map(|b| b[c]).sum();
            for j in 0..l {
                p.eta[c][j] = rows
                    .iter()
                    .zip(&beta)
                    .filter(|((s, _), _)| s[j])
                    .map(|(_, b)| b[c])
                    .sum::<f64>()
                    / mass;
            }
            p.mu[c] = rows
                .iter()
                .zip(&beta)
                .map(|((_, z), b)| b[c] * z)
                .sum::<f64>()
                / mass;
            let sse: f64 = rows
                .iter()
                .zip(&beta)
                .map(|((_, z), b)| b[c] * (z - p.mu[c]).powi(2))
                .sum();
            p.lambda[c] = if sse > 0.0 {
                (mass / sse).clamp(LAMBDA_MIN, LAMBDA_MAX)
            } else {
                LAMBDA_MAX
            };
        }
        improve_gate(&mut p.gate, intercept, &beta, rows, 1e-8, 200);
        beta = rows.iter().map(|(s, z)| posterior(&p, s, *z)).collect();
        let ll = log_likelihood(&p, rows);
        if (ll - prev).abs() <= 1e-14 * ll.abs() {
            return ll;
        }
        prev = ll;
    }
    prev
}

/// Searches for `(eta, mu, lambda)` with a higher bound than `start` for
/// fixed gate and `beta`: a coordinate grid sweep from several random
/// points, then central-difference gradient ascent. Returns the best bound
/// found.
pub fn numeric_max_bound(start: &Params, beta: &[Vec<f64>], rows: &Rows, seed: u64) -> f64 {
    let k = start.mu.len();
    let l = start.eta[0].len();
    let zmin = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let zmax = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    // theta = [eta (k*l), mu (k), ln lambda (k)]
    let dim = k * l + 2 * k;
    let lo: Vec<f64> = (0..dim)
        .map(|i| {
            if i < k * l {
                0.0
            } else if i < k * l + k {
                zmin - 1.0
            } else {
                LAMBDA_MIN.ln()
            }
        })
        .collect();
    let hi: Vec<f64> = (0..dim)
        .map(|i| {
            if i < k * l {
                1.0
            } else if i < k * l + k {
                zmax + 1.0
            } else {
                LAMBDA_MAX.ln()
            }
        })
        .collect();
    let unpack = |t: &[f64]| -> Params {
        let mut p = start.clone();
        for c in 0..k {
            for j in 0..l {
                p.eta[c][j] = t[c * l + j];
            }
            p.mu[c] = t[k * l + c];
            p.lambda[c] = t[k * l + k + c].exp();
        }
        p
    };
    let f = |t: &[f64]| bound(&unpack(t), beta, rows);
    let pack = |p: &Params| -> Vec<f64> {
        let mut t: Vec<f64> = p.eta.iter().flatten().copied().collect();
        t.extend(&p.mu);
        t.extend(p.lambda.iter().map(|v| v.ln()));
        t
    };

    let mut rng = StdRng::seed_from_u64(seed);
    let mut starts = vec![pack(start)];
    for _ in 0..6 {
        starts.push(
            (0..dim)
                .map(|i| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>())
                .collect(),
        );
    }
    let mut best = f64::NEG_INFINITY;
    for mut t in starts {
        // coordinate grid sweeps
        for _ in 0..3 {
            for i in 0..dim {
                let mut bi = t[i];
                let mut bv = f(&t);
                for g in 0..=40 {
                    let mut c = t.clone();
                    c[i] = lo[i] + (hi[i] - lo[i]) * g as f64 / 40.0;
                    let v = f(&c);
                    if v > bv {
                        bv = v;
                        bi = c[i];
                    }
                }
                t[i] = bi;
            }
        }
        // projected ascent with numerical gradients
        let mut v = f(&t);
        let mut step = 1e-2;
        for _ in 0..400 {
            let h = 1e-6;
            let grad: Vec<f64> = (0..dim)
                .map(|i| {
                    let mut a = t.clone();
                    let mut b = t.clone();
                    a[i] = (a[i] + h).min(hi[i]);
                    b[i] = (b[i] - h).max(lo[i]);
                    (f(&a) - f(&b)) / (a[i] - b[i])
                })
                .collect();
            let mut moved = false;
            step *= 2.0;
            while step > 1e-14 {
                let c: Vec<f64> = (0..dim)
                    .map(|i| (t[i] + step * grad[i]).clamp(lo[i], hi[i]))
                    .collect();
                let cv = f(&c);
                if cv > v {
                    t = c;
                    v = cv;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        best = best.max(v);
    }
    best
}
