//! Human-readable rules: per component, a conjunction of feature intervals
//! and a predicted value.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ensemble::{Node, Tree};
use crate::error::{Error, Result};
use crate::mixture::MixtureModel;

/// `lower <= x[feature] < upper`. `None` stands for an infinite bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub feature: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Interval {
    pub fn is_empty(&self) -> bool {
        matches!((self.lower, self.upper), (Some(l), Some(u)) if l >= u)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let v = x[self.feature];
        self.lower.is_none_or(|l| v >= l) && self.upper.is_none_or(|u| v < u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub mu: f64,
    /// Fraction of training rows assigned to this rule, when known.
    pub share: Option<f64>,
    pub intervals: Vec<Interval>,
    /// Some interval has `lower >= upper`.
    pub degenerate: bool,
}

impl Rule {
    pub fn is_catch_all(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn matches(&self, x: &[f64]) -> bool {
        self.intervals.iter().all(|i| i.contains(x))
    }

    pub fn interval(&self, feature: usize) -> Option<&Interval> {
        self.intervals.iter().find(|i| i.feature == feature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub components: Vec<Rule>,
}

/// Tightest per-feature bounds from a list of `(feature, threshold, is_lower)`.
fn intervals_from_bounds(
    bounds: impl IntoIterator<Item = (usize, f64, bool)>,
) -> (Vec<Interval>, bool) {
    let mut intervals: Vec<Interval> = Vec::new();
    for (feature, threshold, is_lower) in bounds {
        let idx = match intervals.iter().position(|i| i.feature == feature) {
            Some(i) => i,
            None => {
                intervals.push(Interval {
                    feature,
                    name: None,
                    lower: None,
                    upper: None,
                });
                intervals.len() - 1
            }
        };
        let iv = &mut intervals[idx];
        if is_lower {
            iv.lower = Some(iv.lower.map_or(threshold, |l| l.max(threshold)));
        } else {
            iv.upper = Some(iv.upper.map_or(threshold, |u| u.min(threshold)));
        }
    }
    intervals.sort_by_key(|i| i.feature);
    let degenerate = intervals.iter().any(Interval::is_empty);
    (intervals, degenerate)
}

impl MixtureModel {
    /// Reads each component's `eta` as a rule: `eta >= 1 - tau` imposes
    /// `x[d] >= b`, `eta <= tau` imposes `x[d] < b`, anything in between
    /// imposes nothing. Per feature the tightest bounds are kept.
    pub fn extract_rules(&self, tau: f64) -> Result<RuleSet> {
        self.rules_with(tau, None)
    }

    /// As [`extract_rules`](Self::extract_rules), but a bit only yields a
    /// lower bound if its prevalence over the data is below `1 - tau`, and an
    /// upper bound only if its prevalence is above `tau`. Bits that are set
    /// (or clear) for nearly every input say nothing about a component.
    pub fn extract_rules_informative(&self, tau: f64, prevalence: &[f64]) -> Result<RuleSet> {
        Error::check_dim(self.schema().len(), prevalence.len())?;
        self.rules_with(tau, Some(prevalence))
    }

    fn rules_with(&self, tau: f64, prevalence: Option<&[f64]>) -> Result<RuleSet> {
        if !(tau > 0.0 && tau < 0.5) {
            return Err(Error::invalid(format!(
                "tau must be in (0, 0.5), got {tau}"
            )));
        }
        let rules = self.schema().rules();
        let components = self
            .eta()
            .iter()
            .zip(self.mu())
            .map(|(eta, &mu)| {
                let bounds = rules
                    .iter()
                    .zip(eta)
                    .enumerate()
                    .filter_map(|(l, (r, &e))| {
                        let p = prevalence.map_or(0.5, |p| p[l]);
                        if e >= 1.0 - tau && p < 1.0 - tau {
                            Some((r.feature, r.threshold, true))
                        } else if e <= tau && p > tau {
                            Some((r.feature, r.threshold, false))
                        } else {
                            None
                        }
                    });
                let (intervals, degenerate) = intervals_from_bounds(bounds);
                Rule {
                    mu,
                    share: None,
                    intervals,
                    degenerate,
                }
            })
            .collect();
        Ok(RuleSet { components })
    }
}

impl RuleSet {
    /// One rule per leaf: the conjunction of the root-to-leaf conditions.
    /// Shares are computed from `xs` when given.
    pub fn from_tree(tree: &Tree, xs: Option<&[Vec<f64>]>) -> Self {
        let components = tree
            .leaf_paths()
            .into_iter()
            .map(|(leaf, path)| {
                let mu = match tree.nodes()[leaf] {
                    Node::Leaf { value } => value,
                    Node::Split { .. } => unreachable!(),
                };
                let share = xs.filter(|xs| !xs.is_empty()).map(|xs| {
                    xs.iter().filter(|x| tree.leaf_index(x) == leaf).count() as f64
                        / xs.len() as f64
                });
                let (intervals, degenerate) = intervals_from_bounds(path);
                Rule {
                    mu,
                    share,
                    intervals,
                    degenerate,
                }
            })
            .collect();
        RuleSet { components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn set_shares(&mut self, shares: &[f64]) -> Result<()> {
        Error::check_dim(self.components.len(), shares.len())?;
        for (r, &s) in self.components.iter_mut().zip(shares) {
            r.share = Some(s);
        }
        Ok(())
    }

    pub fn set_feature_names(&mut self, names: &[String]) {
        for iv in self
            .components
            .iter_mut()
            .flat_map(|r| r.intervals.iter_mut())
        {
            iv.name = names.get(iv.feature).cloned();
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rule sets serialise")
    }

    /// Plain-text table: predicted value, share and the rule conjunction.
    pub fn render_text(&self) -> String {
        let rows: Vec<(String, String, String)> = self
            .components
            .iter()
            .map(|r| {
                let share = r
                    .share
                    .map_or_else(|| "-".to_string(), |s| format!("{:.1}%", 100.0 * s));
                (format!("{:.2}", r.mu), share, describe(r))
            })
            .collect();
        let zw = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(1);
        let sw = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:>zw$}  {:>sw$}  Rule", "z", "share");
        let _ = writeln!(out, "{}", "-".repeat(zw + sw + 8));
        for (z, s, rule) in rows {
            let _ = writeln!(out, "{z:>zw$}  {s:>sw$}  {rule}");
        }
        out
    }
}

fn describe(rule: &Rule) -> String {
    if rule.is_catch_all() {
        return "any x".into();
    }
    let parts: Vec<String> = rule
        .intervals
        .iter()
        .map(|iv| {
            let name = iv
                .name
                .clone()
                .unwrap_or_else(|| format!("x_{}", iv.feature + 1));
            match (iv.lower, iv.upper) {
                (Some(l), Some(u)) => format!("{} ≤ {name} < {}", fmt_num(l), fmt_num(u)),
                (Some(l), None) => format!("{name} ≥ {}", fmt_num(l)),
                (None, Some(u)) => format!("{name} < {}", fmt_num(u)),
                (None, None) => format!("{name} unconstrained"),
            }
        })
        .collect();
    let mut text = parts.join(", ");
    if rule.degenerate {
        text.push_str("  [degenerate: empty interval]");
    }
    text
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}
