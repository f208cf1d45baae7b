//! Trains the desk configuration end to end and compares with the naive
//! predictor. Takes about a minute.
//!
//! RUST_LOG=info cargo run -p caspian --example train_desk -- [out_dir]

use std::path::PathBuf;

use caspian::baselines::{Baseline, Method};
use caspian::data::{synthetic_dataset, SynthOracleParams};
use caspian::metrics::{compute_metrics, DEFAULT_DELTAS};
use caspian::run::{split_samples, train_run, RunConfig};

fn main() -> caspian::Result<()> {
    env_logger::init();
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("target/desk-run"), PathBuf::from);
    let ds = synthetic_dataset(6, 400, 128, 128, 64, &SynthOracleParams::default())?;
    let cfg = RunConfig::desk();

    let outcome = train_run(&ds, &cfg, &out)?;
    let best = outcome.history.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    println!("{} epochs, best val loss {best:.5}", outcome.history.epochs.len());

    let splits = split_samples(&ds, &cfg.split)?;
    let test = outcome.predictor.evaluate(&splits.test)?;
    let naive = Baseline::fit(Method::Naive, &splits.train, &ds.locations)?;
    let preds = splits.test.iter().map(|s| naive.predict(&s.scenario)).collect::<caspian::Result<Vec<_>>>()?;
    let targets: Vec<_> = splits.test.iter().map(|s| s.depths.clone()).collect();
    let base = compute_metrics(&preds, &targets, &DEFAULT_DELTAS)?;

    println!("caspian test amae {:.4}, naive {:.4}", test.amae, base.amae);
    println!("checkpoint {} written to {}", outcome.fingerprint, out.display());
    Ok(())
}
