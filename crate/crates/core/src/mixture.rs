//! The interpretation model: a `K`-component mixture of experts over the
//! split-rule bits `s` and the ensemble output `z`.
//!
//! ```text
//! q(z, s | x) = sum_k  q(z | k) q(s | k) q(k | x)
//! q(k | x)    = softmax_k(w_k . s~)          s~ = s, plus a trailing 1 with an intercept
//! q(s | k)    = prod_l eta_kl^s_l (1 - eta_kl)^(1 - s_l)
//! q(z | k)    = N(z; mu_k, 1 / lambda_k)
//! ```
//!
//! Component indices are zero-based throughout.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::binarizer::{BinaryDataset, SplitSchema};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax};

/// `eta` is clamped to `[ETA_FLOOR, 1 - ETA_FLOOR]` when evaluating densities.
pub const ETA_FLOOR: f64 = 1e-6;

/// Gate weights, one row of length `width` per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct GateWeights {
    components: usize,
    width: usize,
    values: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for GateWeights {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        GateWeights::from_rows(rows)
    }
}

impl From<GateWeights> for Vec<Vec<f64>> {
    fn from(w: GateWeights) -> Self {
        (0..w.components).map(|k| w.row(k).to_vec()).collect()
    }
}

impl GateWeights {
    pub fn zeros(components: usize, width: usize) -> Self {
        GateWeights {
            components,
            width,
            values: vec![0.0; components * width],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let components = rows.len();
        if components == 0 {
            return Err(Error::invalid("gate needs at least one component"));
        }
        let width = rows[0].len();
        for r in &rows {
            Error::check_dim(width, r.len())?;
        }
        Ok(GateWeights {
            components,
            width,
            values: rows.concat(),
        })
    }

    pub(crate) fn from_flat(components: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), components * width);
        GateWeights {
            components,
            width,
            values,
        }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.width..(k + 1) * self.width]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.width..(k + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Gate scores `w_k . s~` for every component, for one dataset row.
    pub(crate) fn scores_for_row(
        &self,
        tables: &[Vec<f64>],
        data: &BinaryDataset,
        n: usize,
        out: &mut [f64],
    ) {
        let bits = data.bit_len();
        for (k, o) in out.iter_mut().enumerate() {
            let bias = if self.width > bits {
                self.row(k)[bits]
            } else {
                0.0
            };
            *o = data.dot_prefix(n, &tables[k]) + bias;
        }
    }

    /// Prefix sums of the bit part of each row, for [`BinaryDataset::dot_prefix`].
    pub(crate) fn prefix_tables(&self, bits: usize) -> Vec<Vec<f64>> {
        (0..self.components)
            .map(|k| prefix_sums(&self.row(k)[..bits]))
            .collect()
    }
}

pub(crate) fn prefix_sums(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for v in values {
        acc += v;
        out.push(acc);
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMixture {
    schema: SplitSchema,
    intercept: bool,
    gate: GateWeights,
    eta: Vec<Vec<f64>>,
    mu: Vec<f64>,
    lambda: Vec<f64>,
}

impl TryFrom<RawMixture> for MixtureModel {
    type Error = Error;

    fn try_from(r: RawMixture) -> Result<Self> {
        MixtureModel::new(r.schema, r.intercept, r.gate, r.eta, r.mu, r.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct MixtureModel {
    schema: SplitSchema,
    intercept: bool,
    gate: GateWeights,
    eta: Vec<Vec<f64>>,
    mu: Vec<f64>,
    lambda: Vec<f64>,
}

impl MixtureModel {
    pub fn new(
        schema: SplitSchema,
        intercept: bool,
        gate: GateWeights,
        eta: Vec<Vec<f64>>,
        mu: Vec<f64>,
        lambda: Vec<f64>,
    ) -> Result<Self> {
        let k = gate.components();
        if k == 0 {
            return Err(Error::InvalidModel(
                "mixture needs at least one component".into(),
            ));
        }
        let width = schema.len() + usize::from(intercept);
        Error::check_dim(width, gate.width())?;
        Error::check_dim(k, eta.len())?;
        Error::check_dim(k, mu.len())?;
        Error::check_dim(k, lambda.len())?;
        if gate.as_slice().iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("gate weights".into()));
        }
        for row in &eta {
            Error::check_dim(schema.len(), row.len())?;
            if row.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(Error::InvalidModel("eta outside [0, 1]".into()));
            }
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mu".into()));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidModel(
                "lambda must be positive and finite".into(),
            ));
        }
        Ok(MixtureModel {
            schema,
            intercept,
            gate,
            eta,
            mu,
            lambda,
        })
    }

    pub fn components(&self) -> usize {
        self.mu.len()
    }

    pub fn schema(&self) -> &SplitSchema {
        &self.schema
    }

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    pub fn gate_weights(&self) -> &GateWeights {
        &self.gate
    }

    pub fn eta(&self) -> &[Vec<f64>] {
        &self.eta
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    fn check_bits(&self, s: &[bool]) -> Result<()> {
        Error::check_dim(self.schema.len(), s.len())
    }

    pub(crate) fn check_data(&self, data: &BinaryDataset) -> Result<()> {
        if data.schema() != &self.schema {
            return Err(Error::invalid("dataset schema does not match model schema"));
        }
        Ok(())
    }

    fn check_component(&self, k: usize) -> Result<()> {
        if k >= self.components() {
            return Err(Error::invalid(format!(
                "component {k} out of range for {} components",
                self.components()
            )));
        }
        Ok(())
    }

    fn gate_scores(&self, s: &[bool]) -> Vec<f64> {
        (0..self.components())
            .map(|k| {
                let w = self.gate.row(k);
                let dot: f64 = s.iter().zip(w).filter(|(&b, _)| b).map(|(_, w)| w).sum();
                if self.intercept {
                    dot + w[s.len()]
                } else {
                    dot
                }
            })
            .collect()
    }

    /// Gate probabilities `q(k | x)` for the bit vector `s`.
    pub fn gate(&self, s: &[bool]) -> Result<Vec<f64>> {
        self.check_bits(s)?;
        Ok(softmax(&self.gate_scores(s)))
    }

    /// `log q(s | k)` with clamped `eta`.
    pub fn bernoulli_log_density(&self, k: usize, s: &[bool]) -> Result<f64> {
        self.check_component(k)?;
        self.check_bits(s)?;
        Ok(s.iter()
            .zip(&self.eta[k])
            .map(|(&bit, &e)| {
                let e = e.clamp(ETA_FLOOR, 1.0 - ETA_FLOOR);
                if bit {
                    e.ln()
                } else {
                    (1.0 - e).ln()
                }
            })
            .sum())
    }

    /// `log q(z | k)`.
    pub fn gaussian_log_density(&self, k: usize, z: f64) -> Result<f64> {
        self.check_component(k)?;
        Ok(gaussian_log_density(self.mu[k], self.lambda[k], z))
    }

    /// `log q(s | k) + log q(z | k)`.
    pub fn component_log_density(&self, k: usize, s: &[bool], z: f64) -> Result<f64> {
        Ok(self.bernoulli_log_density(k, s)? + self.gaussian_log_density(k, z)?)
    }

    /// Row-major `N x K` matrix of `log q(k | x_n) + log q(s_n | k) + log q(z_n | k)`.
    pub(crate) fn log_joint(&self, data: &BinaryDataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        let k_count = self.components();
        let bits = self.schema.len();
        let gate_tables = self.gate.prefix_tables(bits);
        // log q(s|k) = sum_l log(1 - e_kl) + sum_l s_l * logit(e_kl)
        let mut logit_tables = Vec::with_capacity(k_count);
        let mut bern_base = Vec::with_capacity(k_count);
        for eta in &self.eta {
            let clamped: Vec<f64> = eta
                .iter()
                .map(|e| e.clamp(ETA_FLOOR, 1.0 - ETA_FLOOR))
                .collect();
            bern_base.push(clamped.iter().map(|e| (1.0 - e).ln()).sum::<f64>());
            let logits: Vec<f64> = clamped.iter().map(|e| e.ln() - (1.0 - e).ln()).collect();
            logit_tables.push(prefix_sums(&logits));
        }
        let mut out = vec![0.0; data.len() * k_count];
        let mut scores = vec![0.0; k_count];
        for n in 0..data.len() {
            self.gate.scores_for_row(&gate_tables, data, n, &mut scores);
            let lse = log_sum_exp(&scores);
            let z = data.z(n);
            let row = &mut out[n * k_count..(n + 1) * k_count];
            for k in 0..k_count {
                let bern = bern_base[k] + data.dot_prefix(n, &logit_tables[k]);
                row[k] =
                    scores[k] - lse + bern + gaussian_log_density(self.mu[k], self.lambda[k], z);
            }
        }
        Ok(out)
    }

    /// `sum_n log q(z_n, s_n | x_n)`.
    pub fn joint_log_likelihood(&self, data: &BinaryDataset) -> Result<f64> {
        let k = self.components();
        let lj = self.log_joint(data)?;
        Ok(lj.chunks(k).map(log_sum_exp).sum())
    }

    /// Hard prediction: the most probable gate component (lowest index on
    /// ties) and its `mu`.
    pub fn predict_point(&self, s: &[bool]) -> Result<(usize, f64)> {
        let g = self.gate(s)?;
        let k = argmax(&g);
        Ok((k, self.mu[k]))
    }

    /// Soft prediction `sum_k q(k | x) mu_k`.
    pub fn predict_soft(&self, s: &[bool]) -> Result<f64> {
        let g = self.gate(s)?;
        Ok(g.iter().zip(&self.mu).map(|(p, m)| p * m).sum())
    }

    /// Fraction of dataset rows whose most probable gate component is `k`.
    pub fn gate_shares(&self, data: &BinaryDataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        let k_count = self.components();
        let tables = self.gate.prefix_tables(self.schema.len());
        let mut counts = vec![0usize; k_count];
        let mut scores = vec![0.0; k_count];
        for n in 0..data.len() {
            self.gate.scores_for_row(&tables, data, n, &mut scores);
            counts[argmax(&scores)] += 1;
        }
        Ok(counts
            .iter()
            .map(|&c| c as f64 / data.len() as f64)
            .collect())
    }
}

pub(crate) fn gaussian_log_density(mu: f64, lambda: f64, z: f64) -> f64 {
    0.5 * (lambda / (2.0 * PI)).ln() - 0.5 * lambda * (z - mu) * (z - mu)
}

/// Index of the first maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
