//! Parameter counts of the full network and its ablations.

use caspian::model::{build_ablation, count_params, resnext_param_count, ModelConfig, Variant};

fn main() -> caspian::Result<()> {
    for (name, cfg) in [("paper", ModelConfig::paper()), ("desk", ModelConfig::desk())] {
        println!("{name} ({}x{}, F={}):", cfg.height, cfg.width, cfg.filters);
        for v in Variant::ALL {
            let model = build_ablation(&cfg, v, 0)?;
            println!("  {:<6} {:>8}", format!("{v:?}").to_lowercase(), count_params(&model));
        }
        println!("  one bottleneck block: {}", resnext_param_count(cfg.filters, cfg.cardinality, cfg.group_width));
    }
    Ok(())
}
