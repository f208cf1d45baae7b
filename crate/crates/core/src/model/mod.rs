//! Network configuration and assembly.

mod caspian;
mod config;

pub use caspian::{
    build_ablation, build_caspian, class_indicators, count_params, maps_to_tensor, modulation_block,
    pooling_cascade, resnext_block, resnext_param_count, segregated_pooling, Caspian, CaspianModel,
    ParamSpec,
};
pub use config::{ModelConfig, Variant};
