//! The `caspian` command line.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use caspian::baselines::{Baseline, Method};
use caspian::data::{generate_synthetic_dataset, load_dataset, Dataset, SynthOracleParams};
use caspian::grid::{encode_inundation, encode_inundation_bytes};
use caspian::model::{build_ablation, count_params, Variant};
use caspian::run::{saved_run_config, split_samples, train_run, Predictor, RunConfig, SplitName};
use caspian::scenario::{parse_scenario, ProtectionScenario};

use crate::api::{serve, AppState};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or inputs that do not fit the model; exit status 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] caspian::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "caspian", version, about = "Flood inundation surrogate: data, training, baselines and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a network and write checkpoint, history and validation metrics.
    Train(TrainArgs),
    /// Print the metrics report of a trained network on one split.
    Evaluate(EvaluateArgs),
    /// Predict peak depths for one scenario.
    Predict(PredictArgs),
    /// Build (and optionally train) an ablated architecture.
    Ablate(AblateArgs),
    /// Fit or apply a comparison model.
    Baseline(BaselineArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub d_x: usize,
    #[arg(long, default_value_t = 400)]
    pub locations: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub scenarios: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.3)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub base_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub base_max: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration JSON; desk defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the training seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Split source when the model directory has no saved run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scenario: String,
    /// Dataset supplying the geometry; defaults to the one saved with the model.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also write the predicted grid in the binary raster format.
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// full, b, gamma, z or omega.
    #[arg(long)]
    pub variant: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train the variant on this dataset (requires --out).
    #[arg(long, requires = "out")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(subcommand)]
    pub action: BaselineAction,
}

#[derive(Debug, Subcommand)]
pub enum BaselineAction {
    /// Fit on the training split, save the model and print test metrics.
    Fit {
        #[arg(long)]
        method: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Predict one scenario with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenario: String,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Accepted for symmetry with the other commands; serving needs no run settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(caspian::Error::from)?;
    println!("{text}");
    Ok(())
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    })
}

fn scenario_arg(text: &str, d_x: usize) -> Result<ProtectionScenario> {
    let s = parse_scenario(text).map_err(|e| CliError::Usage(format!("--scenario: {e}")))?;
    if s.d_x() != d_x {
        return Err(CliError::Usage(format!(
            "--scenario has {} bits but the model expects {d_x}",
            s.d_x()
        )));
    }
    Ok(s)
}

fn fits(ds: &Dataset, cfg: &RunConfig) -> Result<()> {
    let need = cfg.split.train + cfg.split.val + cfg.split.test;
    if need > ds.samples.len() {
        return Err(CliError::Usage(format!(
            "split {}/{}/{} needs {need} scenarios, dataset has {}; pass --config with a smaller split",
            cfg.split.train,
            cfg.split.val,
            cfg.split.test,
            ds.samples.len()
        )));
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let params = SynthOracleParams {
                base_min: a.base_min,
                base_max: a.base_max,
                alpha: a.alpha,
                beta: a.beta,
                seed: a.seed,
            };
            let manifest = generate_synthetic_dataset(a.d_x, a.locations, a.height, a.width, a.scenarios, &params, &a.out)?;
            print_json(&manifest)
        }
        Command::Train(a) => {
            let mut cfg = run_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.train.seed = seed;
            }
            let ds = load_dataset(&a.data)?;
            fits(&ds, &cfg)?;
            let out = train_run(&ds, &cfg, &a.out)?;
            print_json(&json!({
                "fingerprint": out.fingerprint,
                "epochs": out.history.epochs.len(),
                "best_epoch": out.history.best_epoch,
                "best_val_loss": out.history.best_val_loss,
                "val_metrics": out.val_metrics,
            }))
        }
        Command::Evaluate(a) => {
            let split: SplitName = a.split.parse().map_err(|e: caspian::Error| CliError::Usage(e.to_string()))?;
            let cfg = match a.config.as_deref() {
                Some(p) => RunConfig::load(p)?,
                None => saved_run_config(&a.model)?.ok_or_else(|| {
                    CliError::Usage("model directory has no run.json; pass --config to define the split".into())
                })?,
            };
            let ds = load_dataset(&a.data)?;
            fits(&ds, &cfg)?;
            let predictor = Predictor::load(&a.model, Some(&ds))?;
            let splits = split_samples(&ds, &cfg.split)?;
            print_json(&predictor.evaluate(splits.get(split))?)
        }
        Command::Predict(a) => {
            let ds = a.data.as_deref().map(load_dataset).transpose()?;
            let predictor = Predictor::load(&a.model, ds.as_ref())?;
            let scenario = scenario_arg(&a.scenario, predictor.d_x)?;
            let depths = predictor.predict(&scenario)?;
            if let Some(p) = &a.grid_out {
                let map = encode_inundation(&depths, &predictor.index_map)?;
                std::fs::write(p, encode_inundation_bytes(&map, true))?;
            }
            print_json(&json!({
                "scenario": a.scenario,
                "depths": depths.values,
                "fingerprint": predictor.fingerprint,
            }))
        }
        Command::Ablate(a) => {
            let variant: Variant = a.variant.parse().map_err(|e: caspian::Error| CliError::Usage(e.to_string()))?;
            let mut cfg = run_config(a.config.as_deref())?;
            let full = count_params(&build_ablation(&cfg.model, Variant::Full, 0)?);
            let model = build_ablation(&cfg.model, variant, 0)?;
            let mut report = json!({
                "variant": variant.to_string(),
                "param_count": count_params(&model),
                "full_param_count": full,
            });
            if let (Some(data), Some(out)) = (&a.data, &a.out) {
                cfg.model = cfg.model.with_variant(variant);
                let ds = load_dataset(data)?;
                fits(&ds, &cfg)?;
                let run = train_run(&ds, &cfg, out)?;
                let splits = split_samples(&ds, &cfg.split)?;
                report["test_metrics"] = serde_json::to_value(run.predictor.evaluate(&splits.test)?).map_err(caspian::Error::from)?;
                report["fingerprint"] = json!(run.fingerprint);
            }
            print_json(&report)
        }
        Command::Baseline(b) => match b.action {
            BaselineAction::Fit { method, data, out, config } => {
                let method: Method = method.parse().map_err(|e: caspian::Error| CliError::Usage(e.to_string()))?;
                let cfg = run_config(config.as_deref())?;
                let ds = load_dataset(&data)?;
                fits(&ds, &cfg)?;
                let splits = split_samples(&ds, &cfg.split)?;
                let model = Baseline::fit(method, &splits.train, &ds.locations)?;
                model.save(&out)?;
                let preds = splits
                    .test
                    .iter()
                    .map(|s| model.predict(&s.scenario))
                    .collect::<caspian::Result<Vec<_>>>()?;
                let targets: Vec<_> = splits.test.iter().map(|s| s.depths.clone()).collect();
                let report = caspian::metrics::compute_metrics(&preds, &targets, &caspian::metrics::DEFAULT_DELTAS)?;
                print_json(&json!({ "method": method.to_string(), "test_metrics": report }))
            }
            BaselineAction::Predict { model, scenario } => {
                let model = Baseline::load(&model)?;
                let s = parse_scenario(&scenario).map_err(|e| CliError::Usage(format!("--scenario: {e}")))?;
                let depths = model.predict(&s).map_err(|e| match e {
                    caspian::Error::Shape(m) | caspian::Error::Consistency(m) => CliError::Usage(format!("--scenario: {m}")),
                    other => other.into(),
                })?;
                print_json(&json!({ "method": model.method().to_string(), "depths": depths.values }))
            }
        },
        Command::Serve(a) => {
            if let Some(p) = &a.config {
                RunConfig::load(p)?;
            }
            let ds = a.data.as_deref().map(load_dataset).transpose()?;
            let predictor = Predictor::load(&a.model, ds.as_ref())?;
            let state = Arc::new(AppState::new(predictor));
            let addr = SocketAddr::new(a.host, a.port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, addr))?;
            Ok(())
        }
    }
}

/// Parses `std::env::args`, runs, and maps failures to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
