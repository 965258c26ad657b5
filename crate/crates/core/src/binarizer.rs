//! Split-rule schema and the binary encoding `s_l = [x[d_l] >= b_l]`.
//!
//! Rules are sorted by `(feature, threshold)`, so the bits belonging to one
//! feature form a contiguous block, and within a block the encoding of any
//! input is a run of ones followed by zeros. [`BinaryDataset`] stores each
//! row as one "level" (the length of that run) per block. Datasets built
//! from arbitrary bit vectors fall back to one-bit blocks, which always have
//! this form.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::ensemble::TreeEnsemble;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    pub threshold: f64,
}

impl SplitRule {
    fn same(&self, other: &SplitRule) -> bool {
        self.feature == other.feature && self.threshold.to_bits() == other.threshold.to_bits()
    }
}

/// Ordered, deduplicated split rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SplitRule>", into = "Vec<SplitRule>")]
pub struct SplitSchema {
    rules: Vec<SplitRule>,
}

impl TryFrom<Vec<SplitRule>> for SplitSchema {
    type Error = Error;

    fn try_from(rules: Vec<SplitRule>) -> Result<Self> {
        SplitSchema::new(rules)
    }
}

impl From<SplitSchema> for Vec<SplitRule> {
    fn from(s: SplitSchema) -> Self {
        s.rules
    }
}

impl SplitSchema {
    /// Takes rules already in canonical order; rejects unsorted or duplicate input.
    pub fn new(rules: Vec<SplitRule>) -> Result<Self> {
        for w in rules.windows(2) {
            if cmp_rules(&w[0], &w[1]) != std::cmp::Ordering::Less {
                return Err(Error::invalid(format!(
                    "split rules must be strictly ascending by (feature, threshold): {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(r) = rules.iter().find(|r| !r.threshold.is_finite()) {
            return Err(Error::NonFinite(format!("threshold of rule {r:?}")));
        }
        Ok(SplitSchema { rules })
    }

    /// Sorts and deduplicates (by exact bit equality of thresholds).
    pub fn from_rules(mut rules: Vec<SplitRule>) -> Self {
        rules.sort_by(cmp_rules);
        rules.dedup_by(|a, b| a.same(b));
        SplitSchema { rules }
    }

    pub fn from_ensemble(ensemble: &TreeEnsemble) -> Self {
        Self::from_rules(
            ensemble
                .trees()
                .iter()
                .flat_map(|t| t.splits())
                .map(|(feature, threshold)| SplitRule { feature, threshold })
                .collect(),
        )
    }

    pub fn rules(&self) -> &[SplitRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Minimum input length the schema can encode.
    pub fn required_dim(&self) -> usize {
        self.rules.iter().map(|r| r.feature + 1).max().unwrap_or(0)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() < self.required_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.required_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<bool>> {
        self.check_input(x)?;
        Ok(self
            .rules
            .iter()
            .map(|r| x[r.feature] >= r.threshold)
            .collect())
    }

    /// Contiguous bit ranges sharing a feature.
    pub fn feature_blocks(&self) -> Vec<Range<usize>> {
        let mut blocks: Vec<Range<usize>> = Vec::new();
        for (i, r) in self.rules.iter().enumerate() {
            match blocks.last_mut() {
                Some(b) if self.rules[b.start].feature == r.feature => b.end = i + 1,
                _ => blocks.push(i..i + 1),
            }
        }
        blocks
    }
}

fn cmp_rules(a: &SplitRule, b: &SplitRule) -> std::cmp::Ordering {
    a.feature
        .cmp(&b.feature)
        .then(a.threshold.total_cmp(&b.threshold))
}

/// Rows of `(x, s, z)`: input, its split-rule bits and the ensemble output.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    schema: SplitSchema,
    blocks: Vec<Range<usize>>,
    xs: Vec<Vec<f64>>,
    /// Row-major `len() x blocks.len()`.
    levels: Vec<u32>,
    zs: Vec<f64>,
}

impl BinaryDataset {
    /// Encodes `xs` and pairs each row with the ensemble prediction.
    pub fn build(ensemble: &TreeEnsemble, schema: &SplitSchema, xs: &[Vec<f64>]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::invalid("build_dataset needs at least one input"));
        }
        let blocks = schema.feature_blocks();
        let mut levels = Vec::with_capacity(xs.len() * blocks.len());
        let mut zs = Vec::with_capacity(xs.len());
        for x in xs {
            zs.push(ensemble.predict(x)?);
            schema.check_input(x)?;
            for b in &blocks {
                let value = x[schema.rules[b.start].feature];
                let level = schema.rules[b.clone()].partition_point(|r| r.threshold <= value);
                levels.push(level as u32);
            }
        }
        Ok(BinaryDataset {
            schema: schema.clone(),
            blocks,
            xs: xs.to_vec(),
            levels,
            zs,
        })
    }

    /// Builds a dataset from explicit bit vectors (inputs are left empty).
    /// Feature blocks are used when every row is consistent with them,
    /// otherwise each bit is its own block.
    pub fn from_bits(schema: &SplitSchema, rows: &[(Vec<bool>, f64)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        for (s, z) in rows {
            Error::check_dim(schema.len(), s.len())?;
            if !z.is_finite() {
                return Err(Error::NonFinite("z".into()));
            }
        }
        let feature_blocks = schema.feature_blocks();
        let thermometer =
            |s: &[bool], b: &Range<usize>| s[b.clone()].windows(2).all(|w| w[0] || !w[1]);
        let blocks = if rows
            .iter()
            .all(|(s, _)| feature_blocks.iter().all(|b| thermometer(s, b)))
        {
            feature_blocks
        } else {
            (0..schema.len()).map(|i| i..i + 1).collect()
        };
        let mut levels = Vec::with_capacity(rows.len() * blocks.len());
        for (s, _) in rows {
            for b in &blocks {
                levels.push(s[b.clone()].iter().filter(|&&bit| bit).count() as u32);
            }
        }
        Ok(BinaryDataset {
            schema: schema.clone(),
            blocks,
            xs: vec![Vec::new(); rows.len()],
            levels,
            zs: rows.iter().map(|(_, z)| *z).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.zs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zs.is_empty()
    }

    pub fn bit_len(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &SplitSchema {
        &self.schema
    }

    pub fn x(&self, n: usize) -> &[f64] {
        &self.xs[n]
    }

    pub fn z(&self, n: usize) -> f64 {
        self.zs[n]
    }

    pub fn zs(&self) -> &[f64] {
        &self.zs
    }

    pub fn bits(&self, n: usize) -> Vec<bool> {
        let mut s = vec![false; self.bit_len()];
        for (b, &level) in self.blocks.iter().zip(self.row_levels(n)) {
            s[b.start..b.start + level as usize].fill(true);
        }
        s
    }

    fn row_levels(&self, n: usize) -> &[u32] {
        let nb = self.blocks.len();
        &self.levels[n * nb..(n + 1) * nb]
    }

    /// `sum_l s[n][l] * weights[l]` given `prefix[i] = sum_{l < i} weights[l]`.
    pub(crate) fn dot_prefix(&self, n: usize, prefix: &[f64]) -> f64 {
        self.blocks
            .iter()
            .zip(self.row_levels(n))
            .map(|(b, &level)| prefix[b.start + level as usize] - prefix[b.start])
            .sum()
    }

    /// For every bit `l`, `sum_n row_weights[n] * s[n][l]`.
    /// Fraction of rows with each bit set.
    pub fn bit_prevalence(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.weighted_bit_sums(&vec![1.0; self.len()])
            .into_iter()
            .map(|c| c / n)
            .collect()
    }

    pub(crate) fn weighted_bit_sums(&self, row_weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bit_len()];
        // per-block histogram over levels, then suffix sums
        let mut hist: Vec<Vec<f64>> = self.blocks.iter().map(|b| vec![0.0; b.len() + 1]).collect();
        for (n, &w) in row_weights.iter().enumerate() {
            for (h, &level) in hist.iter_mut().zip(self.row_levels(n)) {
                h[level as usize] += w;
            }
        }
        for (b, h) in self.blocks.iter().zip(&hist) {
            let mut acc = 0.0;
            for j in (0..b.len()).rev() {
                acc += h[j + 1];
                out[b.start + j] = acc;
            }
        }
        out
    }

    /// Debug dump: header `x_1..x_D,s_1..s_L,z`, one row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.xs.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
        header.extend((1..=self.bit_len()).map(|i| format!("s_{i}")));
        header.push("z".into());
        let to_err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
        w.write_record(&header).map_err(to_err)?;
        for n in 0..self.len() {
            let mut rec: Vec<String> = self.xs[n].iter().map(|v| v.to_string()).collect();
            rec.extend(
                self.bits(n)
                    .iter()
                    .map(|&b| if b { "1" } else { "0" }.to_string()),
            );
            rec.push(self.zs[n].to_string());
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("csv write: {e}")))?;
        Ok(())
    }
}
