//! Fits every baseline on the desk dataset and scores the test split.

use std::time::Instant;

use caspian::baselines::{Baseline, Method};
use caspian::data::{split_dataset, synthetic_dataset, SynthOracleParams};
use caspian::metrics::{compute_metrics, DEFAULT_DELTAS};
use caspian::run::RunConfig;

fn main() -> caspian::Result<()> {
    let ds = synthetic_dataset(6, 400, 128, 128, 64, &SynthOracleParams::default())?;
    let splits = split_dataset(&ds.samples, &RunConfig::desk().split)?;
    let targets: Vec<_> = splits.test.iter().map(|s| s.depths.clone()).collect();

    println!("{:<8} {:>8} {:>8} {:>8} {:>8}", "method", "amae", "armse", "r2", "fit s");
    for method in Method::ALL {
        let start = Instant::now();
        let model = Baseline::fit(method, &splits.train, &ds.locations)?;
        let fit = start.elapsed().as_secs_f64();
        let preds = splits.test.iter().map(|s| model.predict(&s.scenario)).collect::<caspian::Result<Vec<_>>>()?;
        let r = compute_metrics(&preds, &targets, &DEFAULT_DELTAS)?;
        println!(
            "{:<8} {:>8.4} {:>8.4} {:>8.3} {:>8.2}",
            method.name(),
            r.amae,
            r.armse,
            r.r2.unwrap_or(f64::NAN),
            fit
        );
    }
    Ok(())
}
