use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Init};

/// Architecture variant: the full network or one of the four ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    /// No channel summation in the head.
    B,
    /// Bottleneck reduced to two blocks.
    Gamma,
    /// No modulation block.
    Z,
    /// No pooling path (and therefore no modulation).
    Omega,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Self::Full, Self::B, Self::Gamma, Self::Z, Self::Omega];
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "caspian" => Ok(Self::Full),
            "b" => Ok(Self::B),
            "gamma" | "γ" => Ok(Self::Gamma),
            "z" => Ok(Self::Z),
            "omega" | "ω" => Ok(Self::Omega),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::B => "b",
            Self::Gamma => "gamma",
            Self::Z => "z",
            Self::Omega => "omega",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    /// Filters per block.
    #[serde(rename = "F")]
    pub filters: usize,
    /// Number of stride-2 levels.
    #[serde(rename = "K")]
    pub depth: usize,
    /// Bottleneck cardinality.
    #[serde(rename = "C")]
    pub cardinality: usize,
    /// Bottleneck block count.
    #[serde(rename = "M")]
    pub blocks: usize,
    /// Channels per bottleneck group.
    #[serde(rename = "w")]
    pub group_width: usize,
    /// 1-based decoder block that computes the modulation weights.
    pub modulation_level: usize,
    pub r_ratio: f64,
    pub activation: Activation,
    pub init: Init,
    #[serde(default)]
    pub variant: Variant,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            height: 1024,
            width: 1024,
            filters: 72,
            depth: 4,
            cardinality: 34,
            blocks: 8,
            group_width: 4,
            modulation_level: 1,
            r_ratio: 0.85,
            activation: Activation::Tanh,
            init: Init::GlorotNormal,
            variant: Variant::Full,
        }
    }

    /// Small configuration for 128x128 grids on a CPU.
    pub fn desk() -> Self {
        Self {
            height: 128,
            width: 128,
            filters: 16,
            depth: 3,
            cardinality: 4,
            blocks: 2,
            group_width: 2,
            ..Self::paper()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Modulation hidden width, `floor(r_ratio * F)`.
    pub fn r(&self) -> usize {
        (self.r_ratio * self.filters as f64 + 1e-9).floor() as usize
    }

    /// Bottleneck inner width `C * w`.
    pub fn bottleneck_width(&self) -> usize {
        self.cardinality * self.group_width
    }

    pub fn effective_blocks(&self) -> usize {
        if self.variant == Variant::Gamma {
            2
        } else {
            self.blocks
        }
    }

    pub fn has_pooling_path(&self) -> bool {
        self.variant != Variant::Omega
    }

    pub fn has_modulation(&self) -> bool {
        !matches!(self.variant, Variant::Z | Variant::Omega)
    }

    pub fn has_channel_sum(&self) -> bool {
        self.variant != Variant::B
    }

    pub fn validate(&self) -> Result<()> {
        let scale = 1usize
            .checked_shl(self.depth as u32)
            .ok_or_else(|| Error::Config(format!("K = {} is too deep", self.depth)))?;
        if self.depth == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.height == 0 || self.width == 0 || self.height % scale != 0 || self.width % scale != 0 {
            return Err(Error::Config(format!(
                "grid {}x{} is not divisible by 2^K = {scale}",
                self.height, self.width
            )));
        }
        if self.filters == 0 || self.cardinality == 0 || self.group_width == 0 {
            return Err(Error::Config("F, C and w must be positive".into()));
        }
        if self.modulation_level == 0 || self.modulation_level > self.depth {
            return Err(Error::Config(format!(
                "modulation_level {} outside 1..={}",
                self.modulation_level, self.depth
            )));
        }
        if !(self.r_ratio.is_finite() && self.r_ratio > 0.0) || (self.has_modulation() && self.r() == 0) {
            return Err(Error::Config(format!(
                "r_ratio {} gives no modulation units for F = {}",
                self.r_ratio, self.filters
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let p = ModelConfig::paper();
        p.validate().unwrap();
        assert_eq!(p.r(), 61);
        assert_eq!(p.bottleneck_width(), 136);
        let d = ModelConfig::desk();
        d.validate().unwrap();
        assert_eq!(d.r(), 13);
    }

    #[test]
    fn json_keys() {
        let v = serde_json::to_value(ModelConfig::desk()).unwrap();
        for key in ["H", "W", "F", "K", "C", "M", "w", "modulation_level", "r_ratio", "activation", "init", "variant"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["activation"], "tanh");
        assert_eq!(v["init"], "glorot_normal");
        let back: ModelConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, ModelConfig::desk());
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::desk();
        c.height = 100;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::desk();
        c.modulation_level = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.filters = 1;
        assert!(c.validate().is_err());
        assert!(c.clone().with_variant(Variant::Z).validate().is_ok());
        assert!("delta".parse::<Variant>().is_err());
        assert_eq!("Gamma".parse::<Variant>().unwrap(), Variant::Gamma);
    }
}
