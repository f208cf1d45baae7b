//! Masked Huber loss and the per-sample-averaged evaluation metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthVector, InundationMap};
use crate::nn::var::huber;

/// Depths within this distance of zero count as dry.
pub const DRY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberConfig {
    pub theta: f64,
}

impl Default for HuberConfig {
    fn default() -> Self {
        Self { theta: 0.5 }
    }
}

/// Mean Huber penalty over the target's valid cells.
pub fn huber_loss(pred: &InundationMap, target: &InundationMap, cfg: &HuberConfig) -> Result<f64> {
    if cfg.theta < 0.0 || !cfg.theta.is_finite() {
        return Err(Error::Config(format!("huber theta {} must be non-negative", cfg.theta)));
    }
    if pred.depths.h != target.depths.h || pred.depths.w != target.depths.w || pred.mask != target.mask {
        return Err(Error::Shape("prediction and target grids or masks differ".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((&p, &t), &m) in pred.depths.data.iter().zip(&target.depths.data).zip(&target.mask.data) {
        if m {
            total += huber(p as f64 - t as f64, cfg.theta);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Numeric("huber loss over an empty mask".into()));
    }
    Ok(total / count as f64)
}

pub const DEFAULT_DELTAS: [f64; 2] = [0.5, 0.1];

/// JSON key for a threshold, e.g. `delta_gt_0_5`.
pub fn delta_key(delta: f64) -> String {
    format!("delta_gt_{}", format!("{delta}").replace('.', "_").replace('-', "m"))
}

/// Standard deviation of each metric across samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricSpread {
    pub amae: f64,
    pub armse: f64,
    pub artae: Option<f64>,
    #[serde(flatten)]
    pub delta_exceed: BTreeMap<String, f64>,
    pub r2: Option<f64>,
    pub acc0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub amae: f64,
    pub armse: f64,
    /// `None` when every sample has an all-zero target.
    pub artae: Option<f64>,
    #[serde(flatten)]
    pub delta_exceed: BTreeMap<String, f64>,
    pub r2: Option<f64>,
    /// Fraction of truly dry locations predicted dry.
    pub acc0: Option<f64>,
    /// Fraction of dry locations in the ground truth alone.
    pub acc0_literal: f64,
    pub n_samples: usize,
    pub std: MetricSpread,
}

impl MetricsReport {
    pub fn delta(&self, delta: f64) -> Option<f64> {
        self.delta_exceed.get(&delta_key(delta)).copied()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn optional(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(v);
        (Some(m), Some(s))
    }
}

pub fn compute_metrics(preds: &[DepthVector], targets: &[DepthVector], deltas: &[f64]) -> Result<MetricsReport> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Shape("no samples to evaluate".into()));
    }
    let mut mae = Vec::new();
    let mut rmse = Vec::new();
    let mut rtae = Vec::new();
    let mut r2 = Vec::new();
    let mut acc0 = Vec::new();
    let mut literal = Vec::new();
    let mut exceed = vec![Vec::new(); deltas.len()];
    for (k, (p, t)) in preds.iter().zip(targets).enumerate() {
        if p.len() != t.len() || t.is_empty() {
            return Err(Error::Shape(format!(
                "sample {k}: prediction has {} values, target {}",
                p.len(),
                t.len()
            )));
        }
        if let Some(v) = t.values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Consistency(format!("sample {k}: target depth {v} is negative")));
        }
        let n = t.len() as f64;
        let y: Vec<f64> = t.values.iter().map(|&v| v as f64).collect();
        let yh: Vec<f64> = p.values.iter().map(|&v| v as f64).collect();
        let abs: Vec<f64> = y.iter().zip(&yh).map(|(a, b)| (a - b).abs()).collect();
        let l1: f64 = abs.iter().sum();
        let sse: f64 = abs.iter().map(|e| e * e).sum();
        mae.push(l1 / n);
        rmse.push((sse / n).sqrt());
        let norm: f64 = y.iter().sum();
        if norm > 0.0 {
            rtae.push(l1 / norm);
        } else {
            log::warn!("sample {k}: all-zero target, skipped in ARTAE");
        }
        for (d, out) in deltas.iter().zip(exceed.iter_mut()) {
            out.push(abs.iter().filter(|&&e| e > *d).count() as f64 / n);
        }
        let ybar = y.iter().sum::<f64>() / n;
        let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        if sst > 0.0 {
            r2.push(1.0 - sse / sst);
        } else {
            log::warn!("sample {k}: constant target, skipped in R2");
        }
        let dry: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0.0).collect();
        literal.push(dry.len() as f64 / n);
        if dry.is_empty() {
            log::warn!("sample {k}: no dry locations, skipped in Acc[0]");
        } else {
            let hit = dry.iter().filter(|&&i| yh[i].abs() <= DRY_EPS).count();
            acc0.push(hit as f64 / dry.len() as f64);
        }
    }
    let (amae, amae_sd) = mean_std(&mae);
    let (armse, armse_sd) = mean_std(&rmse);
    let (artae, artae_sd) = optional(&rtae);
    let (r2m, r2_sd) = optional(&r2);
    let (acc, acc_sd) = optional(&acc0);
    let mut delta_exceed = BTreeMap::new();
    let mut delta_sd = BTreeMap::new();
    for (d, v) in deltas.iter().zip(&exceed) {
        let (m, s) = mean_std(v);
        delta_exceed.insert(delta_key(*d), m);
        delta_sd.insert(delta_key(*d), s);
    }
    Ok(MetricsReport {
        amae,
        armse,
        artae,
        delta_exceed,
        r2: r2m,
        acc0: acc,
        acc0_literal: mean_std(&literal).0,
        n_samples: preds.len(),
        std: MetricSpread {
            amae: amae_sd,
            armse: armse_sd,
            artae: artae_sd,
            delta_exceed: delta_sd,
            r2: r2_sd,
            acc0: acc_sd,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn dv(v: &[f32]) -> DepthVector {
        DepthVector::new(v.to_vec())
    }

    #[test]
    fn hand_example() {
        let r = compute_metrics(&[dv(&[2.5, 0.0, 1.0])], &[dv(&[2.0, 0.0, 1.0])], &DEFAULT_DELTAS).unwrap();
        assert!((r.amae - 0.5 / 3.0).abs() < 1e-9);
        assert!((r.armse - (0.25f64 / 3.0).sqrt()).abs() < 1e-9);
        assert!((r.artae.unwrap() - 0.5 / 3.0).abs() < 1e-9);
        assert!((r.delta(0.1).unwrap() - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(r.delta(0.5).unwrap(), 0.0);
        assert!((r.r2.unwrap() - 0.875).abs() < 1e-9);
        assert_eq!(r.acc0, Some(1.0));
        assert!((r.acc0_literal - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let y = vec![dv(&[1.0, 0.0, 3.0]), dv(&[0.5, 0.25, 0.0])];
        let r = compute_metrics(&y, &y, &DEFAULT_DELTAS).unwrap();
        assert_eq!((r.amae, r.armse, r.artae), (0.0, 0.0, Some(0.0)));
        assert!(r.delta_exceed.values().all(|&v| v == 0.0));
        assert_eq!((r.r2, r.acc0), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn per_sample_mean_predictor_has_zero_r2() {
        let y = [dv(&[1.0, 2.0, 6.0]), dv(&[0.0, 4.0, 0.5, 0.5])];
        let p: Vec<DepthVector> = y
            .iter()
            .map(|t| {
                let m = t.values.iter().sum::<f32>() / t.len() as f32;
                dv(&vec![m; t.len()])
            })
            .collect();
        let r = compute_metrics(&p, &y, &DEFAULT_DELTAS).unwrap();
        assert!(r.r2.unwrap().abs() < 1e-6);
    }

    #[test]
    fn skipped_terms_and_json_keys() {
        let r = compute_metrics(&[dv(&[0.1, 0.2])], &[dv(&[0.0, 0.0])], &DEFAULT_DELTAS).unwrap();
        assert_eq!(r.artae, None);
        assert_eq!(r.r2, None);
        assert_eq!(r.acc0, Some(0.0));
        let v = serde_json::to_value(&r).unwrap();
        for key in ["amae", "armse", "artae", "delta_gt_0_5", "delta_gt_0_1", "r2", "acc0", "acc0_literal", "n_samples"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: MetricsReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert!(compute_metrics(&[dv(&[1.0])], &[dv(&[-1.0])], &DEFAULT_DELTAS).is_err());
    }

    fn map(depths: &[f32], mask: &[bool]) -> InundationMap {
        InundationMap {
            depths: Grid { h: 1, w: depths.len(), data: depths.to_vec() },
            mask: Grid { h: 1, w: mask.len(), data: mask.to_vec() },
        }
    }

    #[test]
    fn huber_values() {
        let cfg = HuberConfig::default();
        let t = map(&[1.0], &[true]);
        for (p, want) in [(1.0, 0.0), (1.5, 0.125), (3.0, 0.875)] {
            assert_eq!(huber_loss(&map(&[p], &[true]), &t, &cfg).unwrap(), want);
        }
        let lo: f64 = huber(0.5 - 1e-9, 0.5);
        let hi: f64 = huber(0.5 + 1e-9, 0.5);
        assert!((lo - hi).abs() < 1e-9);
        assert!(huber_loss(&map(&[1.0], &[false]), &map(&[1.0], &[false]), &cfg).is_err());
    }

    proptest! {
        #[test]
        fn unmasked_cells_do_not_matter(vals in prop::collection::vec(0.0f32..3.0, 6), noise in prop::collection::vec(-5.0f32..5.0, 6)) {
            let mask = [true, false, true, false, false, true];
            let target = map(&vals, &mask);
            let pred = map(&vals.iter().map(|v| v + 0.3).collect::<Vec<_>>(), &mask);
            let mut other = pred.clone();
            for i in 0..6 {
                if !mask[i] {
                    other.depths.data[i] += noise[i];
                }
            }
            let cfg = HuberConfig::default();
            prop_assert_eq!(huber_loss(&pred, &target, &cfg).unwrap(), huber_loss(&other, &target, &cfg).unwrap());
        }

        #[test]
        fn fractions_in_range(
            y in prop::collection::vec(prop::collection::vec(0.0f32..2.0, 5), 1..4),
            e in prop::collection::vec(-1.0f32..1.0, 20),
        ) {
            let preds: Vec<DepthVector> = y.iter().enumerate()
                .map(|(k, v)| dv(&v.iter().enumerate().map(|(i, x)| x + e[(k * 5 + i) % 20]).collect::<Vec<_>>()))
                .collect();
            let targets: Vec<DepthVector> = y.iter().map(|v| dv(v)).collect();
            let r = compute_metrics(&preds, &targets, &DEFAULT_DELTAS).unwrap();
            for v in r.delta_exceed.values() {
                prop_assert!((0.0..=1.0).contains(v));
            }
            prop_assert!((0.0..=1.0).contains(&r.acc0_literal));
            for (p, t) in preds.iter().zip(&targets) {
                let one = compute_metrics(&[p.clone()], &[t.clone()], &[]).unwrap();
                prop_assert!(one.amae <= one.armse + 1e-12);
            }
        }
    }
}
