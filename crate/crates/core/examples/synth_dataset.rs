//! Writes a synthetic desk-scale dataset to disk and reads it back.
//!
//! cargo run -p caspian --example synth_dataset -- [out_dir]

use std::path::PathBuf;

use caspian::data::{generate_synthetic_dataset, load_dataset, SynthOracleParams};

fn main() -> caspian::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("target/desk-data"), PathBuf::from);
    let manifest = generate_synthetic_dataset(6, 400, 128, 128, 64, &SynthOracleParams::default(), &out)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);

    let ds = load_dataset(&out)?;
    let first = &ds.samples[0];
    let peak = first.depths.values.iter().cloned().fold(0.0f32, f32::max);
    println!("{} samples; scenario {} peaks at {peak:.3} m", ds.samples.len(), first.scenario);
    Ok(())
}
