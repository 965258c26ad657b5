//! End-to-end runs: train the ensemble, fit the mixture on its outputs,
//! extract rules, and compare against a cross-validated single tree.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{fit_cart, CartConfig};
use crate::binarizer::{BinaryDataset, SplitSchema};
use crate::data::{gen_xor, load_csv, mse, split3, LabeledDataset};
use crate::em::{self, EmConfig, FitReport};
use crate::ensemble::TreeEnsemble;
use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::mixture::MixtureModel;
use crate::rules::RuleSet;
use crate::trainer::{fit_gbt, GbtConfig};

/// Column names of the UCI energy-efficiency file, in file order.
pub const ENERGY_COLUMNS: [&str; 10] = [
    "Relative Compactness",
    "Surface Area",
    "Wall Area",
    "Roof Area",
    "Overall Height",
    "Orientation",
    "Glazing Area",
    "Glazing Area Distribution",
    "Heating Load",
    "Cooling Load",
];

const SAMPLED_REGION_PROBES: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub gbt: GbtConfig,
    pub em: EmConfig,
    pub cart: CartConfig,
    pub tau: f64,
    /// Skip bits that are nearly constant over the training inputs when
    /// reading rules off `eta`.
    pub informative_bits: bool,
    pub seed: u64,
}

impl PipelineConfig {
    /// K = 4, ten restarts, 100 depth-3 trees at learning rate 0.1.
    pub fn with_seed(seed: u64) -> Self {
        PipelineConfig {
            gbt: GbtConfig {
                seed,
                ..GbtConfig::default()
            },
            em: EmConfig {
                seed,
                ..EmConfig::default()
            },
            cart: CartConfig {
                seed,
                ..CartConfig::default()
            },
            tau: 0.05,
            informative_bits: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub n_atm: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub atm_trees: usize,
    pub split_rules: usize,
    pub regions: usize,
    /// `"exact"` (threshold-grid enumeration) or `"sampled"` (lower bound).
    pub region_count_mode: String,
    pub components: usize,
    pub baseline_leaves: usize,
    pub baseline_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Errors {
    /// Ensemble against observed test labels.
    pub atm_test_mse: f64,
    /// Mixture (hard gate) against observed test labels.
    pub model_i_test_mse: f64,
    /// Mixture (soft gate) against observed test labels.
    pub model_i_soft_test_mse: f64,
    /// Mixture (hard gate) against the ensemble's test predictions.
    pub model_i_fidelity_mse: f64,
    pub baseline_test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub counts: Counts,
    pub errors: Errors,
    pub rules: RuleSet,
    pub baseline_rules: RuleSet,
    pub baseline_cv_mse: Vec<(usize, f64)>,
    pub fit: FitReport,
    pub wall_time_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }

    /// JSON without timing, for reproducibility comparisons.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("reports serialise");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time_seconds");
        }
        serde_json::to_string_pretty(&v).expect("reports serialise")
    }
}

/// Output of fitting the mixture to one ensemble.
#[derive(Debug, Clone)]
pub struct Simplified {
    pub model: MixtureModel,
    pub fit: FitReport,
    pub rules: RuleSet,
    pub data: BinaryDataset,
}

/// Encodes `xs`, fits the mixture to the ensemble's outputs and reads off rules.
pub fn simplify(
    ensemble: &TreeEnsemble,
    xs: &[Vec<f64>],
    em_config: &EmConfig,
    tau: f64,
    informative_bits: bool,
) -> Result<Simplified> {
    let schema = SplitSchema::from_ensemble(ensemble);
    let data = BinaryDataset::build(ensemble, &schema, xs)?;
    let (model, fit) = em::fit(&data, em_config)?;
    let mut rules = if informative_bits {
        model.extract_rules_informative(tau, &data.bit_prevalence())?
    } else {
        model.extract_rules(tau)?
    };
    rules.set_shares(&model.gate_shares(&data)?)?;
    if let Some(names) = ensemble.feature_names() {
        rules.set_feature_names(names);
    }
    Ok(Simplified {
        model,
        fit,
        rules,
        data,
    })
}

/// Hard-gate prediction of the mixture for a raw input.
pub fn predict_mixture(model: &MixtureModel, x: &[f64]) -> Result<f64> {
    Ok(model.predict_point(&model.schema().encode(x)?)?.1)
}

pub fn predict_mixture_soft(model: &MixtureModel, x: &[f64]) -> Result<f64> {
    model.predict_soft(&model.schema().encode(x)?)
}

/// Exact count for one or two features, otherwise a sampled lower bound
/// over the data plus uniform probes in the data's bounding box.
pub fn region_count(
    ensemble: &TreeEnsemble,
    data: &[&LabeledDataset],
    seed: u64,
) -> Result<(usize, &'static str)> {
    if ensemble.feature_count() <= 2 {
        return Ok((ensemble.count_regions_exact()?, "exact"));
    }
    let mut probes: Vec<Vec<f64>> = data.iter().flat_map(|d| d.xs.iter().cloned()).collect();
    let dim = ensemble.feature_count();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for x in &probes {
        for d in 0..dim {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SAMPLED_REGION_PROBES {
        probes.push(
            (0..dim)
                .map(|d| lo[d] + (hi[d] - lo[d]) * rng.random::<f64>())
                .collect(),
        );
    }
    Ok((ensemble.count_regions(&probes)?, "sampled"))
}

/// Runs the full comparison on pre-split data.
pub fn run(
    name: &str,
    atm: &LabeledDataset,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &PipelineConfig,
) -> Result<RunReport> {
    let start = Instant::now();
    let mut ensemble = fit_gbt(&atm.xs, &atm.ys, &config.gbt)?;
    if let Some(names) = &atm.feature_names {
        ensemble = ensemble.with_feature_names(names.clone())?;
    }
    let (regions, mode) = region_count(
        &ensemble,
        &[atm, train, test],
        derive_seed(config.seed, 100),
    )?;
    let simplified = simplify(
        &ensemble,
        &train.xs,
        &config.em,
        config.tau,
        config.informative_bits,
    )?;
    let model = &simplified.model;

    let cart = fit_cart(train, &config.cart)?;
    let mut baseline_rules = RuleSet::from_tree(&cart.tree, Some(&train.xs));
    if let Some(names) = &train.feature_names {
        baseline_rules.set_feature_names(names);
    }

    let atm_on_test = LabeledDataset {
        xs: test.xs.clone(),
        ys: test
            .xs
            .iter()
            .map(|x| ensemble.predict(x))
            .collect::<Result<_>>()?,
        feature_names: None,
    };
    let errors = Errors {
        atm_test_mse: mse(|x| ensemble.predict(x), test)?,
        model_i_test_mse: mse(|x| predict_mixture(model, x), test)?,
        model_i_soft_test_mse: mse(|x| predict_mixture_soft(model, x), test)?,
        model_i_fidelity_mse: mse(|x| predict_mixture(model, x), &atm_on_test)?,
        baseline_test_mse: mse(|x| Ok(cart.tree.predict(x)), test)?,
    };
    let counts = Counts {
        n_atm: atm.len(),
        n_train: train.len(),
        n_test: test.len(),
        atm_trees: ensemble.trees().len(),
        split_rules: simplified.data.bit_len(),
        regions,
        region_count_mode: mode.into(),
        components: model.components(),
        baseline_leaves: cart.tree.leaf_count(),
        baseline_depth: cart.depth,
    };
    Ok(RunReport {
        dataset: name.into(),
        seed: config.seed,
        config: config.clone(),
        counts,
        errors,
        rules: simplified.rules,
        baseline_rules,
        baseline_cv_mse: cart.cv_mse,
        fit: simplified.fit,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Three independent XOR samples of `n` rows each (noise sd 0.1).
pub fn synthetic_splits(
    n: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    Ok((
        gen_xor(n, 0.1, derive_seed(seed, 0))?,
        gen_xor(n, 0.1, derive_seed(seed, 1))?,
        gen_xor(n, 0.1, derive_seed(seed, 2))?,
    ))
}

pub fn reproduce_synthetic(config: &PipelineConfig) -> Result<RunReport> {
    let (atm, train, test) = synthetic_splits(1000, config.seed)?;
    run("synthetic", &atm, &train, &test, config)
}

/// Loads the energy-efficiency CSV. Accepts either descriptive column names
/// or the original `X1..X8,Y1,Y2` header; the cooling-load column is dropped.
pub fn load_energy(path: impl AsRef<std::path::Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let header = std::fs::read_to_string(path)
        .map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?
        .lines()
        .next()
        .unwrap_or_default()
        .to_string();
    let coded = ["X1", "X2", "X3", "X4", "X5", "X6", "X7", "X8", "Y1", "Y2"];
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let (target, cooling) = if columns == coded {
        ("Y1", "Y2")
    } else {
        (ENERGY_COLUMNS[8], ENERGY_COLUMNS[9])
    };
    let mut data = load_csv(path, target)?;
    data.drop_feature(cooling);
    if columns == coded {
        data.feature_names = Some(ENERGY_COLUMNS[..8].iter().map(|s| s.to_string()).collect());
    }
    Ok(data)
}

/// 40/30/30 split of the energy data, then [`run`].
pub fn reproduce_energy(data: &LabeledDataset, config: &PipelineConfig) -> Result<RunReport> {
    let (atm, train, test) = split3(data, (0.4, 0.3, 0.3), derive_seed(config.seed, 0))?;
    run("energy", &atm, &train, &test, config)
}
