//! Producing the ensemble to be explained: least-squares gradient boosting
//! and the JSON interchange format for externally trained models.

use serde::{Deserialize, Serialize};

use crate::ensemble::{Node, Tree, TreeEnsemble};
use crate::error::{Error, Result};
use crate::math::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub tree_count: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Recorded for reproducibility. The booster has no stochastic step, so
    /// the fitted ensemble does not depend on it.
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            tree_count: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tree_count == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::invalid(
                "tree_count, max_depth and min_samples_leaf must be >= 1",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A candidate axis-aligned split and its reduction in squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Greedy variance-reduction split over `rows`.
///
/// Candidate thresholds are midpoints of consecutive distinct values; both
/// children must keep at least `min_samples_leaf` rows. Ties go to the lower
/// feature index, then the lower threshold.
#[allow(clippy::needless_range_loop)]
pub fn best_split(
    xs: &[Vec<f64>],
    targets: &[f64],
    rows: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let n = rows.len();
    let msl = min_samples_leaf.max(1);
    if n < 2 * msl {
        return None;
    }
    let dim = xs[rows[0]].len();
    let node_targets: Vec<f64> = rows.iter().map(|&r| targets[r]).collect();
    let centre = mean(&node_targets);
    let total: f64 = node_targets.iter().map(|t| t - centre).sum();
    let base = total * total / n as f64;

    let mut best: Option<SplitCandidate> = None;
    let mut order = rows.to_vec();
    for feature in 0..dim {
        order.sort_by(|&a, &b| xs[a][feature].total_cmp(&xs[b][feature]));
        let mut left_sum = 0.0;
        for i in 1..n {
            left_sum += targets[order[i - 1]] - centre;
            if i < msl || n - i < msl {
                continue;
            }
            let lo = xs[order[i - 1]][feature];
            let hi = xs[order[i]][feature];
            if lo == hi {
                continue;
            }
            let right_sum = total - left_sum;
            let gain =
                left_sum * left_sum / i as f64 + right_sum * right_sum / (n - i) as f64 - base;
            if best.is_none_or(|b| gain > b.gain) {
                let mut threshold = 0.5 * (lo + hi);
                if threshold <= lo {
                    threshold = hi;
                }
                best = Some(SplitCandidate {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

/// Grows a depth-limited regression tree by recursive greedy splitting.
/// A node becomes a leaf (holding the mean target) when it is pure, at
/// `max_depth`, or has no admissible split.
pub fn grow_tree(
    xs: &[Vec<f64>],
    targets: &[f64],
    max_depth: usize,
    min_samples_leaf: usize,
) -> Tree {
    let rows: Vec<usize> = (0..xs.len()).collect();
    let mut nodes = Vec::new();
    grow_node(
        xs,
        targets,
        &rows,
        0,
        max_depth,
        min_samples_leaf,
        &mut nodes,
    );
    Tree::new(nodes).expect("grown trees are well formed")
}

fn grow_node(
    xs: &[Vec<f64>],
    targets: &[f64],
    rows: &[usize],
    depth: usize,
    max_depth: usize,
    min_samples_leaf: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let values: Vec<f64> = rows.iter().map(|&r| targets[r]).collect();
    let leaf = Node::Leaf {
        value: mean(&values),
    };
    nodes.push(leaf);
    let pure = values.iter().all(|&v| v == values[0]);
    if pure || depth >= max_depth {
        return id;
    }
    let Some(split) = best_split(xs, targets, rows, min_samples_leaf) else {
        return id;
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&r| xs[r][split.feature] < split.threshold);
    let left = grow_node(
        xs,
        targets,
        &left_rows,
        depth + 1,
        max_depth,
        min_samples_leaf,
        nodes,
    );
    let right = grow_node(
        xs,
        targets,
        &right_rows,
        depth + 1,
        max_depth,
        min_samples_leaf,
        nodes,
    );
    nodes[id] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    id
}

pub(crate) fn check_xy(xs: &[Vec<f64>], ys: &[f64], min_rows: usize) -> Result<usize> {
    if xs.len() < min_rows {
        return Err(Error::invalid(format!(
            "need at least {min_rows} rows, got {}",
            xs.len()
        )));
    }
    Error::check_dim(xs.len(), ys.len())?;
    let dim = xs[0].len();
    for (i, x) in xs.iter().enumerate() {
        Error::check_dim(dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) || !ys[i].is_finite() {
            return Err(Error::NonFinite(format!("row {i}")));
        }
    }
    Ok(dim)
}

/// Stagewise least-squares boosting. Tree 0 is a single leaf holding
/// `mean(ys)` with weight 1; each further tree fits the current residuals and
/// carries weight `learning_rate`.
pub fn fit_gbt(xs: &[Vec<f64>], ys: &[f64], config: &GbtConfig) -> Result<TreeEnsemble> {
    config.validate()?;
    let dim = check_xy(xs, ys, 2)?;
    let base = mean(ys);
    let mut fitted = vec![base; ys.len()];
    let mut trees = vec![Tree::constant(base)];
    let mut weights = vec![1.0];
    let mut residuals = vec![0.0; ys.len()];
    for _ in 0..config.tree_count {
        for ((r, y), f) in residuals.iter_mut().zip(ys).zip(&fitted) {
            *r = y - f;
        }
        let tree = grow_tree(xs, &residuals, config.max_depth, config.min_samples_leaf);
        for (f, x) in fitted.iter_mut().zip(xs) {
            *f += config.learning_rate * tree.predict(x);
        }
        trees.push(tree);
        weights.push(config.learning_rate);
    }
    TreeEnsemble::new(trees, weights, dim)
}

// ---- interchange format ----

#[derive(Serialize)]
struct EnsembleFile<'a> {
    feature_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    feature_names: Option<&'a [String]>,
    trees: Vec<TreeFile<'a>>,
}

#[derive(Serialize)]
struct TreeFile<'a> {
    weight: f64,
    nodes: &'a [Node],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    feature_count: usize,
    #[serde(default)]
    feature_names: Option<Vec<String>>,
    trees: Vec<RawTree>,
    /// Optional `(x, prediction)` pairs checked after parsing.
    #[serde(default)]
    reference_predictions: Option<Vec<RawReference>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTree {
    weight: f64,
    nodes: Vec<RawNode>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    feature: Option<usize>,
    threshold: Option<f64>,
    left: Option<usize>,
    right: Option<usize>,
    value: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReference {
    x: Vec<f64>,
    prediction: f64,
}

impl RawNode {
    fn into_node(self, tree: usize, index: usize, feature_count: usize) -> Result<Node> {
        let err = |msg: String| Error::Parse(format!("tree {tree}, node {index}: {msg}"));
        let split_fields = [
            ("feature", self.feature.is_some()),
            ("threshold", self.threshold.is_some()),
            ("left", self.left.is_some()),
            ("right", self.right.is_some()),
        ];
        let any_split = split_fields.iter().any(|(_, present)| *present);
        match (self.value, any_split) {
            (Some(_), true) => Err(err("node has both a value and split fields".into())),
            (Some(value), false) => Ok(Node::Leaf { value }),
            (None, false) => Err(err("leaf missing value".into())),
            (None, true) => {
                if let Some((name, _)) = split_fields.iter().find(|(_, present)| !present) {
                    return Err(err(format!("split node missing {name}")));
                }
                let feature = self.feature.unwrap();
                if feature >= feature_count {
                    return Err(err(format!(
                        "feature index {feature} >= feature_count {feature_count}"
                    )));
                }
                Ok(Node::Split {
                    feature,
                    threshold: self.threshold.unwrap(),
                    left: self.left.unwrap(),
                    right: self.right.unwrap(),
                })
            }
        }
    }
}

/// Renders an ensemble in the interchange JSON format.
pub fn serialize_ensemble(ensemble: &TreeEnsemble) -> String {
    let file = EnsembleFile {
        feature_count: ensemble.feature_count(),
        feature_names: ensemble.feature_names(),
        trees: ensemble
            .trees()
            .iter()
            .zip(ensemble.weights())
            .map(|(t, &weight)| TreeFile {
                weight,
                nodes: t.nodes(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("ensemble serialises")
}

/// Parses the interchange JSON format. If the file carries
/// `reference_predictions`, each is checked against the parsed model.
pub fn parse_ensemble_json(text: &str) -> Result<TreeEnsemble> {
    let raw: RawEnsemble = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut trees = Vec::with_capacity(raw.trees.len());
    let mut weights = Vec::with_capacity(raw.trees.len());
    for (t, raw_tree) in raw.trees.into_iter().enumerate() {
        let nodes = raw_tree
            .nodes
            .into_iter()
            .enumerate()
            .map(|(k, n)| n.into_node(t, k, raw.feature_count))
            .collect::<Result<Vec<_>>>()?;
        let tree =
            Tree::new(nodes).map_err(|e| Error::Parse(format!("tree {t}, {}", strip_kind(&e))))?;
        trees.push(tree);
        weights.push(raw_tree.weight);
    }
    let mut ensemble = TreeEnsemble::new(trees, weights, raw.feature_count)
        .map_err(|e| Error::Parse(strip_kind(&e)))?;
    if let Some(names) = raw.feature_names {
        ensemble = ensemble
            .with_feature_names(names)
            .map_err(|e| Error::Parse(format!("feature_names: {e}")))?;
    }
    for (i, r) in raw
        .reference_predictions
        .unwrap_or_default()
        .iter()
        .enumerate()
    {
        let got = ensemble
            .predict(&r.x)
            .map_err(|e| Error::Parse(format!("reference_predictions[{i}]: {e}")))?;
        let tol = 1e-9 * (1.0 + r.prediction.abs());
        if (got - r.prediction).abs() > tol {
            return Err(Error::Parse(format!(
                "reference_predictions[{i}]: model predicts {got}, file says {}",
                r.prediction
            )));
        }
    }
    Ok(ensemble)
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::InvalidModel(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_targets_give_exact_constant() {
        let xs: Vec<Vec<f64>> = (0..7)
            .map(|i| vec![i as f64 * 0.1, (i * i) as f64])
            .collect();
        let ys = vec![0.1; 7];
        let cfg = GbtConfig {
            tree_count: 5,
            ..GbtConfig::default()
        };
        let e = fit_gbt(&xs, &ys, &cfg).unwrap();
        assert_eq!(e.trees().len(), 6);
        for x in &xs {
            assert_eq!(e.predict(x).unwrap(), 0.1);
        }
        assert_eq!(e.predict(&[100.0, -3.0]).unwrap(), 0.1);
    }

    #[test]
    fn separable_stump_threshold() {
        let xs: Vec<Vec<f64>> = [0.1, 0.2, 0.35, 0.6, 0.8, 0.9]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let ys = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let cfg = GbtConfig {
            tree_count: 1,
            max_depth: 1,
            learning_rate: 1.0,
            ..GbtConfig::default()
        };
        let e = fit_gbt(&xs, &ys, &cfg).unwrap();
        let (feature, threshold) = e.trees()[1].splits().next().unwrap();
        assert_eq!(feature, 0);
        assert!((0.35..0.6).contains(&threshold));
        for (x, y) in xs.iter().zip(ys) {
            assert!((e.predict(x).unwrap() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let xs = vec![vec![0.0], vec![1.0]];
        let ys = [0.0, 1.0];
        for bad in [
            GbtConfig {
                tree_count: 0,
                ..GbtConfig::default()
            },
            GbtConfig {
                max_depth: 0,
                ..GbtConfig::default()
            },
            GbtConfig {
                learning_rate: 0.0,
                ..GbtConfig::default()
            },
            GbtConfig {
                learning_rate: 1.5,
                ..GbtConfig::default()
            },
            GbtConfig {
                min_samples_leaf: 0,
                ..GbtConfig::default()
            },
        ] {
            assert!(fit_gbt(&xs, &ys, &bad).is_err());
        }
        assert!(fit_gbt(&xs[..1], &ys[..1], &GbtConfig::default()).is_err());
        assert!(fit_gbt(&[vec![0.0], vec![f64::NAN]], &ys, &GbtConfig::default()).is_err());
    }

    #[test]
    fn midpoint_between_adjacent_floats_separates() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let xs = vec![vec![a], vec![b]];
        let s = best_split(&xs, &[0.0, 1.0], &[0, 1], 1).unwrap();
        assert!(a < s.threshold && b >= s.threshold);
    }

    #[test]
    fn leaf_missing_value_is_named() {
        let text = r#"{"feature_count": 1, "trees": [{"weight": 1.0, "nodes": [
            {"feature": 0, "threshold": 0.5, "left": 1, "right": 2},
            {"value": 0.0},
            {}
        ]}]}"#;
        let err = parse_ensemble_json(text).unwrap_err().to_string();
        assert!(err.contains("node 2: leaf missing value"), "{err}");
    }

    #[test]
    fn parse_errors() {
        let cases = [
            (
                r#"{"feature_count": 1, "trees": [{"weight": 1.0, "nodes": [{"value": 0.0, "bogus": 1}]}]}"#,
                "bogus",
            ),
            (
                r#"{"feature_count": 1, "trees": [{"weight": 1.0, "nodes": [
                {"feature": 3, "threshold": 0.5, "left": 1, "right": 2}, {"value": 0.0}, {"value": 1.0}]}]}"#,
                "node 0: feature index 3",
            ),
            (
                r#"{"feature_count": 1, "trees": [{"weight": 1.0, "nodes": [
                {"feature": 0, "threshold": 0.5, "left": 1}, {"value": 0.0}]}]}"#,
                "node 0: split node missing right",
            ),
            (
                r#"{"feature_count": 1, "trees": [{"weight": 1.0, "nodes": [
                {"feature": 0, "threshold": 0.5, "left": 1, "right": 5}, {"value": 0.0}]}]}"#,
                "node 0: child 5 out of range",
            ),
            (
                r#"{"feature_count": 1, "trees": [{"weight": 1.0, "nodes": [{"value": 0.0}]}"#,
                "EOF",
            ),
        ];
        for (text, needle) in cases {
            let err = parse_ensemble_json(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{err} should mention {needle}");
        }
    }

    #[test]
    fn reference_predictions_are_checked() {
        let good = r#"{"feature_count": 1, "trees": [{"weight": 2.0, "nodes": [
            {"feature": 0, "threshold": 0.5, "left": 1, "right": 2}, {"value": 0.0}, {"value": 1.0}]}],
            "reference_predictions": [{"x": [0.7], "prediction": 2.0}]}"#;
        assert!(parse_ensemble_json(good).is_ok());
        let bad = good.replace("\"prediction\": 2.0", "\"prediction\": 1.0");
        assert!(parse_ensemble_json(&bad)
            .unwrap_err()
            .to_string()
            .contains("reference_predictions[0]"));
    }
}
