//! `treemix`: fit a boosted tree ensemble, compress it into a handful of
//! interval rules, and compare against a single cross-validated tree.

use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use treemix_core::baseline::{fit_cart, CartConfig};
use treemix_core::data::{gen_xor, load_csv, mse, LabeledDataset};
use treemix_core::pipeline::{self, PipelineConfig};
use treemix_core::trainer::{fit_gbt, parse_ensemble_json, serialize_ensemble};
use treemix_core::{EmConfig, GbtConfig, MixtureModel, RuleSet, TreeEnsemble};

#[derive(Parser)]
#[command(
    name = "treemix",
    version,
    about = "Simplify tree ensembles into a few interval rules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a noisy XOR regression dataset as CSV (columns x_1, x_2, y).
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a least-squares gradient boosted ensemble and write it as JSON.
    TrainAtm {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "y")]
        target: String,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        #[arg(long, default_value_t = 1)]
        min_samples_leaf: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a K-rule mixture to an ensemble's predictions on the training inputs.
    Simplify {
        /// Ensemble JSON.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Optional held-out CSV; adds test errors to the report.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "y")]
        target: String,
        #[command(flatten)]
        mixture: MixtureArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a single regression tree with depth chosen by 5-fold cross-validation.
    Baseline {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "y")]
        target: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test error of an ensemble JSON or a `simplify` report on a CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "y")]
        target: String,
        /// Use the soft (gate-weighted) mixture prediction.
        #[arg(long)]
        soft: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full comparison end to end.
    Reproduce {
        #[command(subcommand)]
        which: Reproduce,
    },
}

#[derive(Subcommand)]
enum Reproduce {
    /// Three independent 1000-row XOR samples.
    Synthetic {
        #[command(flatten)]
        mixture: MixtureArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// UCI energy-efficiency data with a 40/30/30 split, heating load as target.
    Energy {
        /// CSV with header `X1,...,X8,Y1,Y2` or the descriptive column names.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        mixture: MixtureArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct MixtureArgs {
    /// Number of rules.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Bits with eta >= 1 - tau or <= tau become interval bounds.
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    intercept: Switch,
    /// Ignore bits that are set (or clear) for nearly all inputs when reading rules.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    bit_filter: Switch,
}

impl MixtureArgs {
    fn em_config(&self) -> EmConfig {
        EmConfig {
            components: self.k,
            restarts: self.restarts,
            seed: self.seed,
            intercept: matches!(self.intercept, Switch::On),
            ..EmConfig::default()
        }
    }

    fn pipeline_config(&self) -> PipelineConfig {
        let mut config = PipelineConfig::with_seed(self.seed);
        config.em = self.em_config();
        config.tau = self.tau;
        config.informative_bits = matches!(self.bit_filter, Switch::On);
        config
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn show_rules(rules: &RuleSet) {
    if std::io::stderr().is_terminal() {
        eprint!("{}", rules.render_text());
    }
}

fn load(path: &Path, target: &str) -> Result<LabeledDataset> {
    Ok(load_csv(path, target)?)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_ensemble(path: &Path) -> Result<TreeEnsemble> {
    parse_ensemble_json(&read_text(path)?)
        .with_context(|| format!("invalid ensemble in {}", path.display()))
}

fn check_width(data: &LabeledDataset, expected: usize, path: &Path) -> Result<()> {
    if data.dim() != expected {
        bail!(
            "{} has {} feature columns but the model expects {expected}",
            path.display(),
            data.dim()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            n,
            noise,
            seed,
            out,
        } => {
            let data = gen_xor(n, noise, seed)?;
            let mut buf = Vec::new();
            data.write_csv(&mut buf, "y")?;
            let text = String::from_utf8(buf).expect("csv output is utf-8");
            emit(out.as_deref(), text.trim_end())
        }
        Command::TrainAtm {
            train,
            target,
            trees,
            depth,
            learning_rate,
            min_samples_leaf,
            seed,
            out,
        } => {
            let data = load(&train, &target)?;
            let config = GbtConfig {
                tree_count: trees,
                max_depth: depth,
                learning_rate,
                min_samples_leaf,
                seed,
            };
            let mut ensemble = fit_gbt(&data.xs, &data.ys, &config)?;
            if let Some(names) = data.feature_names {
                ensemble = ensemble.with_feature_names(names)?;
            }
            emit(out.as_deref(), &serialize_ensemble(&ensemble))
        }
        Command::Simplify {
            model,
            train,
            test,
            target,
            mixture,
            out,
        } => {
            let ensemble = load_ensemble(&model)?;
            let data = load(&train, &target)?;
            check_width(&data, ensemble.feature_count(), &train)?;
            let s = pipeline::simplify(
                &ensemble,
                &data.xs,
                &mixture.em_config(),
                mixture.tau,
                matches!(mixture.bit_filter, Switch::On),
            )?;
            show_rules(&s.rules);
            let mut report = json!({
                "split_rules": s.data.bit_len(),
                "rules": s.rules,
                "mixture": s.model,
                "fit": s.fit,
                "tau": mixture.tau,
                "informative_bits": matches!(mixture.bit_filter, Switch::On),
            });
            if let Some(test) = test {
                let t = load(&test, &target)?;
                check_width(&t, ensemble.feature_count(), &test)?;
                report["errors"] = json!({
                    "atm_test_mse": mse(|x| ensemble.predict(x), &t)?,
                    "model_i_test_mse": mse(|x| pipeline::predict_mixture(&s.model, x), &t)?,
                    "model_i_soft_test_mse": mse(|x| pipeline::predict_mixture_soft(&s.model, x), &t)?,
                });
            }
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)
        }
        Command::Baseline {
            train,
            test,
            target,
            seed,
            out,
        } => {
            let data = load(&train, &target)?;
            let config = CartConfig {
                seed,
                ..CartConfig::default()
            };
            let fit = fit_cart(&data, &config)?;
            let mut rules = RuleSet::from_tree(&fit.tree, Some(&data.xs));
            if let Some(names) = &data.feature_names {
                rules.set_feature_names(names);
            }
            show_rules(&rules);
            let mut report = json!({
                "depth": fit.depth,
                "leaves": fit.tree.leaf_count(),
                "cv_mse": fit.cv_mse,
                "config": config,
                "rules": rules,
            });
            if let Some(test) = test {
                let t = load(&test, &target)?;
                check_width(&t, data.dim(), &test)?;
                report["test_mse"] = json!(mse(|x| Ok(fit.tree.predict(x)), &t)?);
            }
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)
        }
        Command::Evaluate {
            model,
            test,
            target,
            soft,
            out,
        } => {
            let text = read_text(&model)?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("{} is not JSON", model.display()))?;
            let t = load(&test, &target)?;
            let (kind, error) = if let Some(m) = value.get("mixture") {
                let m: MixtureModel = serde_json::from_value(m.clone())
                    .with_context(|| format!("invalid mixture in {}", model.display()))?;
                if t.dim() < m.schema().required_dim() {
                    bail!(
                        "{} has {} feature columns but the mixture splits on feature {}",
                        test.display(),
                        t.dim(),
                        m.schema().required_dim()
                    );
                }
                let err = if soft {
                    mse(|x| pipeline::predict_mixture_soft(&m, x), &t)?
                } else {
                    mse(|x| pipeline::predict_mixture(&m, x), &t)?
                };
                ("mixture", err)
            } else {
                let e = load_ensemble(&model)?;
                check_width(&t, e.feature_count(), &test)?;
                ("ensemble", mse(|x| e.predict(x), &t)?)
            };
            let report = json!({ "model": kind, "rows": t.len(), "test_mse": error });
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)
        }
        Command::Reproduce { which } => {
            let (report, out) = match which {
                Reproduce::Synthetic { mixture, out } => (
                    pipeline::reproduce_synthetic(&mixture.pipeline_config())?,
                    out,
                ),
                Reproduce::Energy { data, mixture, out } => {
                    let d = pipeline::load_energy(&data)?;
                    (
                        pipeline::reproduce_energy(&d, &mixture.pipeline_config())?,
                        out,
                    )
                }
            };
            show_rules(&report.rules);
            emit(out.as_deref(), &report.to_json())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
