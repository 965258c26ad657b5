//! Gate M-step: weighted multinomial logistic regression of the
//! responsibilities on the split-rule bits.
//!
//! Maximises
//! `J(w) = sum_n sum_k beta_nk log softmax_k(w . s~_n) - ridge * |w|^2 / 2`
//! with L-BFGS and a backtracking (Armijo) line search. Steps are only
//! accepted if they increase `J` and do not decrease the unpenalised data
//! term below its starting value, so the EM bound never goes down.

use std::collections::VecDeque;

use crate::binarizer::BinaryDataset;
use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::mixture::GateWeights;

use super::{EmConfig, Responsibilities};

const HISTORY: usize = 7;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone)]
pub struct GateObjective {
    /// Penalised objective `J(w)`.
    pub value: f64,
    /// `J(w)` without the ridge term.
    pub data_term: f64,
    pub gradient: GateWeights,
}

/// Value and gradient of the gate objective.
///
/// `dJ/dw_k = sum_n (beta_nk - m_n softmax_k(w . s~_n)) s~_n - ridge * w_k`,
/// with `m_n = sum_k beta_nk`.
pub fn gate_objective(
    beta: &Responsibilities,
    data: &BinaryDataset,
    w: &GateWeights,
    ridge: f64,
) -> Result<GateObjective> {
    let k_count = w.components();
    let bits = data.bit_len();
    Error::check_dim(data.len(), beta.rows())?;
    Error::check_dim(k_count, beta.components())?;
    if w.width() != bits && w.width() != bits + 1 {
        return Err(Error::DimensionMismatch {
            expected: bits + 1,
            got: w.width(),
        });
    }
    let intercept = w.width() == bits + 1;
    let tables = w.prefix_tables(bits);
    let n = data.len();
    let mut residual = vec![vec![0.0; n]; k_count];
    let mut scores = vec![0.0; k_count];
    let mut data_term = 0.0;
    for row in 0..n {
        w.scores_for_row(&tables, data, row, &mut scores);
        let lse = log_sum_exp(&scores);
        let b = beta.row(row);
        let mass: f64 = b.iter().sum();
        for ((res, &score), &bk) in residual.iter_mut().zip(&scores).zip(b) {
            let log_p = score - lse;
            if bk > 0.0 {
                data_term += bk * log_p;
            }
            res[row] = bk - mass * log_p.exp();
        }
    }
    let mut gradient = GateWeights::zeros(k_count, w.width());
    for (k, res) in residual.iter().enumerate() {
        let g = gradient.row_mut(k);
        g[..bits].copy_from_slice(&data.weighted_bit_sums(res));
        if intercept {
            g[bits] = res.iter().sum();
        }
        for (gi, wi) in g.iter_mut().zip(w.row(k)) {
            *gi -= ridge * wi;
        }
    }
    let value = data_term - 0.5 * ridge * w.norm_sq();
    Ok(GateObjective {
        value,
        data_term,
        gradient,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ascent on the gate objective starting from `w_init`. The returned weights
/// satisfy `J(returned) >= J(w_init)`.
pub fn m_step_gate(
    beta: &Responsibilities,
    data: &BinaryDataset,
    w_init: &GateWeights,
    config: &EmConfig,
) -> Result<GateWeights> {
    let ridge = config.gate_ridge;
    let (k_count, width) = (w_init.components(), w_init.width());
    let eval = |x: &[f64]| -> Result<GateObjective> {
        let obj = gate_objective(
            beta,
            data,
            &GateWeights::from_flat(k_count, width, x.to_vec()),
            ridge,
        )?;
        if !obj.value.is_finite() {
            return Err(Error::NonFinite("gate objective during line search".into()));
        }
        Ok(obj)
    };

    let mut x = w_init.as_slice().to_vec();
    let mut cur = eval(&x)?;
    let floor = cur.data_term;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);

    for _ in 0..config.gate_max_iters {
        let g = cur.gradient.as_slice();
        let g_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if g_inf <= 1e-10 {
            break;
        }
        let mut dir = two_loop(g, &history);
        let mut slope = dot(g, &dir);
        if slope.is_nan() || slope <= 0.0 || history.is_empty() {
            dir = g.to_vec();
            slope = dot(g, g);
            history.clear();
        }
        let mut step = if history.is_empty() {
            (1.0 / g_inf).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let obj = eval(&cand)?;
            if obj.value >= cur.value + ARMIJO * step * slope && obj.data_term >= floor {
                accepted = Some((cand, obj));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, obj)) = accepted else { break };
        let s: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
        // curvature pair for the minimisation of -J
        let y: Vec<f64> = g
            .iter()
            .zip(obj.gradient.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let sy = dot(&s, &y);
        let gain = obj.value - cur.value;
        x = cand;
        cur = obj;
        if sy > 1e-12 {
            if history.len() == HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        if gain <= 1e-14 * (1.0 + cur.value.abs()) {
            break;
        }
    }
    Ok(GateWeights::from_flat(k_count, width, x))
}

/// L-BFGS two-loop recursion; returns an ascent direction for `J` from its gradient.
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += si * (a - b);
        }
    }
    q
}
