//! Axis-aligned regression trees and weighted ensembles of them.
//!
//! Routing: an input goes left when `x[feature] < threshold` and right
//! otherwise, so a value equal to the threshold routes right. The same
//! convention is used by the binary encoding in [`crate::binarizer`].

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// A regression tree stored as a flat node list with the root at index 0.
///
/// Leaf indices are positions in the node list.
/// A leaf id with its root-to-leaf conditions `(feature, threshold, goes_right)`.
pub type LeafPath = (usize, Vec<(usize, f64, bool)>);

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Validates the node graph: one rooted binary tree, every node reachable
    /// from node 0 exactly once, finite thresholds and leaf values.
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidModel("tree has no nodes".into()));
        }
        let mut parent_count = vec![0usize; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(Error::InvalidModel(format!(
                            "node {i}: leaf value is not finite"
                        )));
                    }
                }
                Node::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !threshold.is_finite() {
                        return Err(Error::InvalidModel(format!(
                            "node {i}: threshold is not finite"
                        )));
                    }
                    for child in [left, right] {
                        if child >= nodes.len() {
                            return Err(Error::InvalidModel(format!(
                                "node {i}: child {child} out of range"
                            )));
                        }
                        if child == 0 {
                            return Err(Error::InvalidModel(format!(
                                "node {i}: root used as a child"
                            )));
                        }
                        parent_count[child] += 1;
                    }
                }
            }
        }
        if let Some(i) = (1..nodes.len()).find(|&i| parent_count[i] != 1) {
            return Err(Error::InvalidModel(format!(
                "node {i}: has {} parents, expected 1",
                parent_count[i]
            )));
        }
        // With one parent per non-root node and none for the root, the graph is
        // a tree iff every node is reachable from the root.
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidModel(format!("node {i}: cycle detected")));
            }
            if let Node::Split { left, right, .. } = nodes[i] {
                stack.push(left);
                stack.push(right);
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidModel(format!(
                "node {i}: unreachable from root"
            )));
        }
        Ok(Tree { nodes })
    }

    pub fn constant(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Depth-1 tree: `x[feature] < threshold` -> `left_value`, else `right_value`.
    pub fn stump(feature: usize, threshold: f64, left_value: f64, right_value: f64) -> Self {
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: left_value },
                Node::Leaf { value: right_value },
            ],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn into_nodes(self) -> Vec<Node> {
        self.nodes
    }

    /// Index of the leaf reached by `x`. Does not check the length of `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Largest feature index used by a split, if any.
    pub fn max_feature(&self) -> Option<usize> {
        self.splits().map(|(d, _)| d).max()
    }

    /// Iterates `(feature, threshold)` over internal nodes.
    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        })
    }

    /// Root-to-leaf conditions for every leaf, as `(leaf index, [(feature, threshold, goes_right)])`.
    pub fn leaf_paths(&self) -> Vec<LeafPath> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((i, path)) = stack.pop() {
            match self.nodes[i] {
                Node::Leaf { .. } => out.push((i, path)),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let mut r = path.clone();
                    r.push((feature, threshold, true));
                    let mut l = path;
                    l.push((feature, threshold, false));
                    stack.push((right, r));
                    stack.push((left, l));
                }
            }
        }
        out.sort_by_key(|(i, _)| *i);
        out
    }
}

/// Weighted sum of regression trees: `predict(x) = sum_t weight_t * tree_t(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    trees: Vec<Tree>,
    weights: Vec<f64>,
    feature_count: usize,
    feature_names: Option<Vec<String>>,
}

impl TreeEnsemble {
    pub fn new(trees: Vec<Tree>, weights: Vec<f64>, feature_count: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidModel("ensemble has no trees".into()));
        }
        if trees.len() != weights.len() {
            return Err(Error::InvalidModel(format!(
                "{} trees but {} weights",
                trees.len(),
                weights.len()
            )));
        }
        if let Some(t) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "tree {t}: weight is not finite"
            )));
        }
        for (t, tree) in trees.iter().enumerate() {
            if let Some(d) = tree.max_feature().filter(|&d| d >= feature_count) {
                return Err(Error::InvalidModel(format!(
                    "tree {t}: feature index {d} >= feature_count {feature_count}"
                )));
            }
        }
        Ok(TreeEnsemble {
            trees,
            weights,
            feature_count,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        Error::check_dim(self.feature_count, names.len())?;
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        Error::check_dim(self.feature_count, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input vector".into()));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .zip(&self.weights)
            .map(|(tree, &w)| w * tree.predict(x))
            .sum()
    }

    /// Leaf reached in each tree; identifies the input cell.
    pub fn leaf_vector(&self, x: &[f64]) -> Result<Vec<u32>> {
        self.check_input(x)?;
        Ok(self.leaf_vector_unchecked(x))
    }

    fn leaf_vector_unchecked(&self, x: &[f64]) -> Vec<u32> {
        self.trees.iter().map(|t| t.leaf_index(x) as u32).collect()
    }

    /// Number of distinct cells hit by `probes`. A lower bound on the exact count.
    pub fn count_regions(&self, probes: &[Vec<f64>]) -> Result<usize> {
        if probes.is_empty() {
            return Err(Error::invalid("count_regions needs at least one probe"));
        }
        let mut cells = HashSet::new();
        for x in probes {
            cells.insert(self.leaf_vector(x)?);
        }
        Ok(cells.len())
    }

    /// Exact number of nonempty cells, by evaluating one representative point
    /// per cell of the threshold grid. Only supported for one or two features.
    pub fn count_regions_exact(&self) -> Result<usize> {
        if self.feature_count == 0 || self.feature_count > 2 {
            return Err(Error::invalid(format!(
                "exact region counting supports 1 or 2 features, ensemble has {}",
                self.feature_count
            )));
        }
        let axes: Vec<Vec<f64>> = (0..self.feature_count)
            .map(|d| cell_representatives(&self.thresholds_on(d)))
            .collect();
        let mut cells = HashSet::new();
        let mut x = vec![0.0; self.feature_count];
        match axes.as_slice() {
            [a] => {
                for &v in a {
                    x[0] = v;
                    cells.insert(self.leaf_vector_unchecked(&x));
                }
            }
            [a, b] => {
                for &u in a {
                    for &v in b {
                        x[0] = u;
                        x[1] = v;
                        cells.insert(self.leaf_vector_unchecked(&x));
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(cells.len())
    }

    /// Sorted distinct thresholds used on feature `d`.
    pub fn thresholds_on(&self, d: usize) -> Vec<f64> {
        let mut ts: Vec<f64> = self
            .trees
            .iter()
            .flat_map(|t| t.splits())
            .filter(|&(f, _)| f == d)
            .map(|(_, b)| b)
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| a.to_bits() == b.to_bits());
        ts
    }
}

/// One point inside each interval induced by sorted thresholds: the outer
/// cells plus midpoints between consecutive thresholds.
fn cell_representatives(thresholds: &[f64]) -> Vec<f64> {
    match (thresholds.first(), thresholds.last()) {
        (Some(&lo), Some(&hi)) => {
            let mut reps = Vec::with_capacity(thresholds.len() + 1);
            reps.push(lo - 1.0);
            reps.extend(thresholds.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            reps.push(hi + 1.0);
            reps
        }
        _ => vec![0.0],
    }
}
