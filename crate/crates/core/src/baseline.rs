//! Single regression tree baseline with the depth picked by k-fold
//! cross-validation. Uses the same greedy split search as the booster.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::ensemble::Tree;
use crate::error::{Error, Result};
use crate::trainer::{check_xy, grow_tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartConfig {
    pub depth_grid: Vec<usize>,
    pub folds: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig {
            depth_grid: (2..=10).collect(),
            folds: 5,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartFit {
    pub tree: Tree,
    pub depth: usize,
    /// `(depth, mean squared error over held-out folds)` for every grid entry.
    pub cv_mse: Vec<(usize, f64)>,
}

/// Seeded partition of `0..n` into `folds` groups whose sizes differ by at most one.
pub fn cv_folds(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::with_capacity(n / folds + 1); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    out
}

pub fn fit_cart(data: &LabeledDataset, config: &CartConfig) -> Result<CartFit> {
    if config.folds < 2 || config.depth_grid.is_empty() || config.min_samples_leaf == 0 {
        return Err(Error::invalid(
            "need folds >= 2, a non-empty depth grid and min_samples_leaf >= 1",
        ));
    }
    if data.len() < config.folds {
        return Err(Error::invalid(format!(
            "need at least {} rows for {}-fold CV, got {}",
            config.folds,
            config.folds,
            data.len()
        )));
    }
    check_xy(&data.xs, &data.ys, 1)?;
    let folds = cv_folds(data.len(), config.folds, config.seed);

    let mut cv_mse = Vec::with_capacity(config.depth_grid.len());
    for &depth in &config.depth_grid {
        let mut sse = 0.0;
        for held in &folds {
            let mut is_held = vec![false; data.len()];
            for &i in held {
                is_held[i] = true;
            }
            let train: Vec<usize> = (0..data.len()).filter(|&i| !is_held[i]).collect();
            let xs: Vec<Vec<f64>> = train.iter().map(|&i| data.xs[i].clone()).collect();
            let ys: Vec<f64> = train.iter().map(|&i| data.ys[i]).collect();
            let tree = grow_tree(&xs, &ys, depth, config.min_samples_leaf);
            sse += held
                .iter()
                .map(|&i| (tree.predict(&data.xs[i]) - data.ys[i]).powi(2))
                .sum::<f64>();
        }
        cv_mse.push((depth, sse / data.len() as f64));
    }
    // lowest CV error, ties to the smaller depth
    let &(depth, _) = cv_mse
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("grid is non-empty");
    let tree = grow_tree(&data.xs, &data.ys, depth, config.min_samples_leaf);
    Ok(CartFit {
        tree,
        depth,
        cv_mse,
    })
}

pub fn leaf_count(tree: &Tree) -> usize {
    tree.leaf_count()
}
