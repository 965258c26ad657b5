//! Fitting [`MixtureModel`] by EM.
//!
//! The objective is the log-likelihood `sum_n log q(z_n, s_n | x_n)`. For any
//! responsibilities `beta` (rows on the probability simplex),
//!
//! ```text
//! bound(beta, theta) = sum_n sum_k beta_nk [log q(k|x_n) + log q(s_n|k) + log q(z_n|k)]
//!                    - sum_n sum_k beta_nk log beta_nk
//! ```
//!
//! is a lower bound that is tight at the posterior. The E-step sets `beta`
//! to the posterior; the M-step maximises the bound in closed form for
//! `eta`, `mu`, `lambda` and by ascent for the gate weights.

mod gate;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gate::{gate_objective, m_step_gate, GateObjective};

use crate::binarizer::BinaryDataset;
use crate::error::{Error, Result};
use crate::math::{derive_seed, softmax_in_place, xlogx};
use crate::mixture::{GateWeights, MixtureModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub components: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub gate_ridge: f64,
    pub gate_max_iters: usize,
    pub lambda_bounds: (f64, f64),
    pub intercept: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            components: 4,
            max_iters: 100,
            rel_tol: 1e-6,
            restarts: 10,
            seed: 0,
            gate_ridge: 1e-8,
            gate_max_iters: 50,
            lambda_bounds: (1e-6, 1e6),
            intercept: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0
            || self.max_iters == 0
            || self.restarts == 0
            || self.gate_max_iters == 0
        {
            return Err(Error::invalid(
                "components, max_iters, restarts and gate_max_iters must be >= 1",
            ));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::invalid(format!(
                "rel_tol must be in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if !(self.gate_ridge >= 0.0 && self.gate_ridge.is_finite()) {
            return Err(Error::invalid("gate_ridge must be finite and non-negative"));
        }
        let (lo, hi) = self.lambda_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "invalid lambda bounds ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Posterior component memberships, `N x K`, rows on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    rows: usize,
    components: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    /// Checks entries lie in `[0, 1]` and rows sum to one within `1e-10`.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n == 0 || k == 0 {
            return Err(Error::invalid("responsibilities must be non-empty"));
        }
        for (i, r) in rows.iter().enumerate() {
            Error::check_dim(k, r.len())?;
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "responsibility row {i} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::invalid(format!(
                    "responsibility row {i} sums to {sum}"
                )));
            }
        }
        Ok(Responsibilities {
            rows: n,
            components: k,
            values: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.values[n * self.components + k]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.components..(n + 1) * self.components]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|n| self.get(n, k)).collect()
    }

    pub fn column_mass(&self, k: usize) -> f64 {
        (0..self.rows).map(|n| self.get(n, k)).sum()
    }

    fn check_shape(&self, rows: usize, components: usize) -> Result<()> {
        Error::check_dim(rows, self.rows)?;
        Error::check_dim(components, self.components)
    }
}

/// Closed-form part of the M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormParams {
    pub eta: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// E-step: `beta_nk` proportional to `q(k|x_n) q(s_n|k) q(z_n|k)`.
pub fn e_step(model: &MixtureModel, data: &BinaryDataset) -> Result<Responsibilities> {
    Ok(posterior(model, data)?.0)
}

/// Posterior responsibilities together with per-row log-likelihoods.
fn posterior(model: &MixtureModel, data: &BinaryDataset) -> Result<(Responsibilities, Vec<f64>)> {
    let k = model.components();
    let mut values = model.log_joint(data)?;
    let mut row_ll = Vec::with_capacity(data.len());
    for row in values.chunks_mut(k) {
        row_ll.push(softmax_in_place(row));
    }
    Ok((
        Responsibilities {
            rows: data.len(),
            components: k,
            values,
        },
        row_ll,
    ))
}

/// Closed-form maximisers of the bound over `eta`, `mu` and `lambda` for
/// fixed responsibilities. `lambda` is clamped to `lambda_bounds`.
pub fn m_step_closed_form(
    beta: &Responsibilities,
    data: &BinaryDataset,
    lambda_bounds: (f64, f64),
) -> Result<ClosedFormParams> {
    Error::check_dim(data.len(), beta.rows)?;
    let mut params = ClosedFormParams {
        eta: Vec::with_capacity(beta.components),
        mu: Vec::with_capacity(beta.components),
        lambda: Vec::with_capacity(beta.components),
    };
    for k in 0..beta.components {
        let weights = beta.column(k);
        let mass: f64 = weights.iter().sum();
        if mass.is_nan() || mass <= 0.0 {
            return Err(Error::DegenerateComponent { k });
        }
        let eta = data
            .weighted_bit_sums(&weights)
            .into_iter()
            .map(|v| (v / mass).clamp(0.0, 1.0))
            .collect();
        let mu = weights
            .iter()
            .zip(data.zs())
            .map(|(w, z)| w * z)
            .sum::<f64>()
            / mass;
        let sse: f64 = weights
            .iter()
            .zip(data.zs())
            .map(|(w, z)| w * (z - mu) * (z - mu))
            .sum();
        let lambda = if sse > 0.0 { mass / sse } else { f64::INFINITY };
        params.eta.push(eta);
        params.mu.push(mu);
        params
            .lambda
            .push(lambda.clamp(lambda_bounds.0, lambda_bounds.1));
    }
    Ok(params)
}

/// The EM lower bound at `(beta, model)`; `0 log 0 = 0`.
pub fn lower_bound(
    model: &MixtureModel,
    beta: &Responsibilities,
    data: &BinaryDataset,
) -> Result<f64> {
    beta.check_shape(data.len(), model.components())?;
    let lj = model.log_joint(data)?;
    Ok(beta
        .values
        .iter()
        .zip(&lj)
        .map(|(&b, &l)| if b > 0.0 { b * l - xlogx(b) } else { 0.0 })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub iters: usize,
    pub objective_trace: Vec<f64>,
    pub failed: bool,
    pub converged: bool,
    pub reseed_events: usize,
    /// Iterations (0-based) at which a component was re-seeded.
    pub reseed_iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub restarts: Vec<RestartReport>,
    pub best_restart: usize,
    pub best_objective: f64,
}

const MAX_RESEEDS: usize = 5;

/// Runs `config.restarts` independent EM runs and keeps the one with the
/// highest final log-likelihood.
pub fn fit(data: &BinaryDataset, config: &EmConfig) -> Result<(MixtureModel, FitReport)> {
    config.validate()?;
    if data.len() < config.components {
        return Err(Error::invalid(format!(
            "need at least as many rows ({}) as components ({})",
            data.len(),
            config.components
        )));
    }
    let runs: Vec<Result<(Option<MixtureModel>, RestartReport)>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_once(data, config, derive_seed(config.seed, r as u64)))
        .collect();
    let mut reports = Vec::with_capacity(runs.len());
    let mut best: Option<(usize, f64, MixtureModel)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let (model, report) = run?;
        if let (Some(model), false) = (model, report.failed) {
            let obj = *report
                .objective_trace
                .last()
                .expect("completed runs have a trace");
            if best.as_ref().is_none_or(|(_, b, _)| obj > *b) {
                best = Some((r, obj, model));
            }
        }
        reports.push(report);
    }
    let (best_restart, best_objective, model) = best.ok_or(Error::AllRestartsFailed)?;
    Ok((
        model,
        FitReport {
            restarts: reports,
            best_restart,
            best_objective,
        },
    ))
}

fn dirichlet_rows(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Responsibilities {
    let mut values = Vec::with_capacity(n * k);
    for _ in 0..n {
        let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        values.extend(draws.iter().map(|d| d / total));
    }
    Responsibilities {
        rows: n,
        components: k,
        values,
    }
}

/// Replaces component `k` by a one-hot assignment of the `ceil(N/K)` rows
/// with the lowest log-likelihood (row order when none is available yet).
fn reseed(beta: &mut Responsibilities, k: usize, row_ll: Option<&[f64]>) {
    let n = beta.rows;
    let take = n.div_ceil(beta.components);
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(ll) = row_ll {
        order.sort_by(|&a, &b| ll[a].total_cmp(&ll[b]).then(a.cmp(&b)));
    }
    for &row in &order[..take] {
        let r = &mut beta.values[row * beta.components..(row + 1) * beta.components];
        r.fill(0.0);
        r[k] = 1.0;
    }
}

fn run_once(
    data: &BinaryDataset,
    config: &EmConfig,
    seed: u64,
) -> Result<(Option<MixtureModel>, RestartReport)> {
    let k = config.components;
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beta = dirichlet_rows(n, k, &mut rng);
    let mut gate = GateWeights::zeros(k, data.bit_len() + usize::from(config.intercept));
    let mut model = None;
    let mut row_ll: Option<Vec<f64>> = None;
    let mut report = RestartReport {
        iters: 0,
        objective_trace: Vec::new(),
        failed: false,
        converged: false,
        reseed_events: 0,
        reseed_iterations: Vec::new(),
    };
    let mass_floor = 1e-10 * n as f64;

    for iter in 0..config.max_iters {
        for c in 0..k {
            if beta.column_mass(c) < mass_floor {
                reseed(&mut beta, c, row_ll.as_deref());
                report.reseed_events += 1;
                report.reseed_iterations.push(iter);
            }
        }
        if report.reseed_events > MAX_RESEEDS {
            report.failed = true;
            return Ok((None, report));
        }
        let params = m_step_closed_form(&beta, data, config.lambda_bounds)?;
        gate = m_step_gate(&beta, data, &gate, config)?;
        let next = MixtureModel::new(
            data.schema().clone(),
            config.intercept,
            gate.clone(),
            params.eta,
            params.mu,
            params.lambda,
        )?;
        let (post, ll) = posterior(&next, data)?;
        let objective: f64 = ll.iter().sum();
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!(
                "EM objective at iteration {iter}"
            )));
        }
        beta = post;
        row_ll = Some(ll);
        model = Some(next);
        report.iters = iter + 1;
        let previous = report.objective_trace.last().copied();
        report.objective_trace.push(objective);
        if let Some(prev) = previous {
            if (objective - prev).abs() <= config.rel_tol * prev.abs() {
                report.converged = true;
                break;
            }
        }
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binarizer::{SplitRule, SplitSchema};
    use crate::math::variance;

    fn schema(l: usize) -> SplitSchema {
        SplitSchema::new(
            (0..l)
                .map(|i| SplitRule {
                    feature: i,
                    threshold: 0.5,
                })
                .collect(),
        )
        .unwrap()
    }

    fn dataset(rows: &[(Vec<bool>, f64)]) -> BinaryDataset {
        BinaryDataset::from_bits(&schema(rows[0].0.len()), rows).unwrap()
    }

    fn small_data() -> BinaryDataset {
        dataset(&[
            (vec![true, false], 0.1),
            (vec![true, true], 0.4),
            (vec![false, false], 2.0),
            (vec![false, true], 2.2),
            (vec![true, false], -0.3),
        ])
    }

    #[test]
    fn single_component_moments() {
        let data = small_data();
        let beta = Responsibilities::new(vec![vec![1.0]; 5]).unwrap();
        let p = m_step_closed_form(&beta, &data, (1e-6, 1e6)).unwrap();
        assert!((p.eta[0][0] - 0.6).abs() < 1e-15);
        assert!((p.eta[0][1] - 0.4).abs() < 1e-15);
        let zs = data.zs();
        assert!((p.mu[0] - zs.iter().sum::<f64>() / 5.0).abs() < 1e-15);
        assert!((p.lambda[0] - 1.0 / variance(zs)).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_clamps_lambda() {
        let data = dataset(&[(vec![true], 1.0), (vec![false], 1.0)]);
        let beta = Responsibilities::new(vec![vec![1.0]; 2]).unwrap();
        let p = m_step_closed_form(&beta, &data, (1e-6, 1e6)).unwrap();
        assert_eq!(p.lambda[0], 1e6);
    }

    #[test]
    fn zero_mass_column_is_reported() {
        let data = small_data();
        let beta = Responsibilities::new(vec![vec![1.0, 0.0]; 5]).unwrap();
        assert!(matches!(
            m_step_closed_form(&beta, &data, (1e-6, 1e6)),
            Err(Error::DegenerateComponent { k: 1 })
        ));
    }

    #[test]
    fn responsibilities_validation() {
        assert!(Responsibilities::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(Responsibilities::new(vec![vec![1.5, -0.5]]).is_err());
        assert!(Responsibilities::new(vec![]).is_err());
    }

    #[test]
    fn identical_components_give_uniform_posterior() {
        let data = small_data();
        let m = MixtureModel::new(
            data.schema().clone(),
            true,
            GateWeights::from_rows(vec![vec![0.2, -0.1, 0.3]; 3]).unwrap(),
            vec![vec![0.3, 0.8]; 3],
            vec![1.0; 3],
            vec![2.0; 3],
        )
        .unwrap();
        let beta = e_step(&m, &data).unwrap();
        for n in 0..data.len() {
            for k in 0..3 {
                assert!((beta.get(n, k) - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dominant_component_gives_one_hot() {
        let data = dataset(&[(vec![true], 0.0)]);
        let m = MixtureModel::new(
            data.schema().clone(),
            true,
            GateWeights::zeros(2, 2),
            vec![vec![1.0], vec![0.0]],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let beta = e_step(&m, &data).unwrap();
        // both etas sit on the clamp, so the loser keeps exactly the floor
        assert!((beta.get(0, 1) - 1e-6).abs() < 1e-15);
        assert!((beta.get(0, 0) - (1.0 - 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn bound_is_tight_at_posterior() {
        let data = small_data();
        let m = MixtureModel::new(
            data.schema().clone(),
            true,
            GateWeights::from_rows(vec![vec![0.5, -1.0, 0.2], vec![-0.3, 0.4, 0.0]]).unwrap(),
            vec![vec![0.9, 0.2], vec![0.1, 0.6]],
            vec![0.0, 2.0],
            vec![4.0, 1.0],
        )
        .unwrap();
        let beta = e_step(&m, &data).unwrap();
        let jll = m.joint_log_likelihood(&data).unwrap();
        assert!((lower_bound(&m, &beta, &data).unwrap() - jll).abs() < 1e-8);
        let other = Responsibilities::new(vec![vec![0.5, 0.5]; 5]).unwrap();
        assert!(lower_bound(&m, &other, &data).unwrap() <= jll);
    }

    #[test]
    fn single_component_fit_converges_fast() {
        let data = small_data();
        let cfg = EmConfig {
            components: 1,
            restarts: 2,
            ..EmConfig::default()
        };
        let (model, report) = fit(&data, &cfg).unwrap();
        assert!(report.restarts.iter().all(|r| r.iters <= 2 && r.converged));
        let zs = data.zs();
        assert!((model.mu()[0] - zs.iter().sum::<f64>() / 5.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_too_few_rows() {
        let data = small_data();
        let cfg = EmConfig {
            components: 6,
            ..EmConfig::default()
        };
        assert!(fit(&data, &cfg).is_err());
        assert!(fit(
            &data,
            &EmConfig {
                rel_tol: 1.0,
                ..EmConfig::default()
            }
        )
        .is_err());
    }

    #[test]
    fn reseed_assigns_worst_rows() {
        let mut beta = Responsibilities::new(vec![vec![1.0, 0.0]; 4]).unwrap();
        reseed(&mut beta, 1, Some(&[-1.0, -5.0, -0.5, -3.0]));
        assert_eq!(beta.column(1), vec![0.0, 1.0, 0.0, 1.0]);
    }
}
