//! Adam on masked Huber loss with linear warmup, reduce-on-plateau, early
//! stopping and best-checkpoint restore.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augmented_input, CutoutConfig, TrainingPair};
use crate::error::{Error, Result};
use crate::grid::{InundationMap, SusceptibilityMap};
use crate::model::{maps_to_tensor, Caspian, CaspianModel};
use crate::nn::var::masked_huber;
use crate::nn::{ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub main_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub theta: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// A validation loss must beat the best by more than this to count.
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_peak: 8e-4,
            warmup_epochs: 20,
            main_epochs: 200,
            plateau_factor: 0.85,
            plateau_patience: 10,
            early_stop_patience: 40,
            batch_size: 2,
            theta: 0.5,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-7,
            min_delta: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr_peak, self.theta, self.adam_epsilon];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("lr_peak, theta and adam_epsilon must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!("plateau_factor {} outside (0, 1)", self.plateau_factor)));
        }
        if self.batch_size == 0 || self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("batch size and patience values must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Learning rate for `epoch` given the plateau reductions applied so far.
pub fn lr_at(epoch: usize, reductions: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.warmup_epochs {
        cfg.lr_peak * (epoch + 1) as f64 / cfg.warmup_epochs as f64
    } else {
        cfg.lr_peak * cfg.plateau_factor.powi(reductions as i32)
    }
}

/// Tracks epochs without improvement over the best loss seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauState {
    pub best: f64,
    pub wait: usize,
    pub reductions: usize,
}

impl Default for PlateauState {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            wait: 0,
            reductions: 0,
        }
    }
}

/// Feeds one validation loss; returns true when a reduction fires. The
/// counter resets after firing.
pub fn reduce_on_plateau(val_loss: f64, patience: usize, min_delta: f64, state: &mut PlateauState) -> bool {
    if val_loss < state.best - min_delta {
        state.best = val_loss;
        state.wait = 0;
        return false;
    }
    state.wait += 1;
    if state.wait >= patience {
        state.wait = 0;
        state.reductions += 1;
        return true;
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Main,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainEvent {
    PlateauReduction { epoch: usize, next_lr: f64 },
    EarlyStop { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub events: Vec<TrainEvent>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

/// One model under optimization.
pub struct Trainer {
    arch: Caspian,
    params: ParamStore<f32>,
    adam: Adam,
    cfg: TrainConfig,
}

impl Trainer {
    pub fn new(model: CaspianModel, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let arch = model.arch().clone();
        let params = model.into_params();
        let zeros: Vec<Vec<f32>> = params.entries().iter().map(|e| vec![0.0; e.tensor.len()]).collect();
        Ok(Self {
            arch,
            params,
            adam: Adam {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            },
            cfg: cfg.clone(),
        })
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn into_model(self) -> Result<CaspianModel> {
        CaspianModel::new(self.arch, self.params)
    }

    fn batch_tensors(&self, targets: &[&InundationMap]) -> (Tensor<f32>, Tensor<f32>) {
        let c = self.arch.config();
        let shape = [targets.len(), c.height, c.width, 1];
        let mut y = Vec::with_capacity(shape.iter().product());
        let mut m = Vec::with_capacity(y.capacity());
        for t in targets {
            y.extend_from_slice(&t.depths.data);
            m.extend(t.mask.data.iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
        }
        (
            Tensor::from_vec(shape, y).expect("shape"),
            Tensor::from_vec(shape, m).expect("shape"),
        )
    }

    /// Loss on a batch without updating anything.
    pub fn batch_loss(&self, inputs: &[&SusceptibilityMap], targets: &[&InundationMap]) -> Result<f64> {
        let x = maps_to_tensor(inputs, self.arch.config())?;
        let (y, mask) = self.batch_tensors(targets);
        let pred = self.arch.forward(&self.params.vars(false), &x)?;
        let loss = masked_huber(&pred, &y, &mask, self.cfg.theta as f32)?;
        Ok(loss.value().data()[0] as f64)
    }

    /// One Adam step; returns the batch loss before the update.
    pub fn step(&mut self, inputs: &[&SusceptibilityMap], targets: &[&InundationMap], lr: f64) -> Result<f64> {
        let x = maps_to_tensor(inputs, self.arch.config())?;
        let (y, mask) = self.batch_tensors(targets);
        let vars = self.params.vars(true);
        let pred = self.arch.forward(&vars, &x)?;
        let loss = masked_huber(&pred, &y, &mask, self.cfg.theta as f32)?;
        let value = loss.value().data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {value}")));
        }
        let mut grads = loss.backward();
        drop(loss);
        drop(pred);

        self.adam.t += 1;
        let (b1, b2) = (self.cfg.adam_beta1, self.cfg.adam_beta2);
        let t = self.adam.t;
        let lr_t = (lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t))) as f32;
        let (b1, b2, eps) = (b1 as f32, b2 as f32, self.cfg.adam_epsilon as f32);
        for (i, var) in vars.iter().enumerate() {
            let Some(g) = grads.take(var) else { continue };
            let p = self.params.tensor_mut(i).data_mut();
            let (m, v) = (&mut self.adam.m[i], &mut self.adam.v[i]);
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                p[k] -= lr_t * m[k] / (v[k].sqrt() + eps);
            }
        }
        Ok(value)
    }

    /// Mean per-sample loss over `pairs`.
    pub fn evaluate(&self, pairs: &[TrainingPair]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in pairs.chunks(self.cfg.batch_size.max(1)) {
            let xs: Vec<&SusceptibilityMap> = chunk.iter().map(|p| &p.0).collect();
            let ys: Vec<&InundationMap> = chunk.iter().map(|p| p.1.as_ref()).collect();
            total += self.batch_loss(&xs, &ys)? * chunk.len() as f64;
        }
        Ok(total / pairs.len() as f64)
    }
}

/// Full schedule. Training inputs are the originals plus `augment.m` cutout
/// copies each, generated on the fly from per-(index, copy) streams.
pub fn train(
    model: CaspianModel,
    train_pairs: &[TrainingPair],
    val_pairs: &[TrainingPair],
    cfg: &TrainConfig,
    augment: Option<&CutoutConfig>,
) -> Result<(CaspianModel, TrainHistory)> {
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    let mcfg = model.config().clone();
    if let Some(a) = augment {
        a.validate(mcfg.height, mcfg.width)?;
    }
    let copies = augment.map_or(0, |a| a.m);
    let mut trainer = Trainer::new(model, cfg)?;
    let mut history = TrainHistory::default();
    let mut plateau = PlateauState::default();
    let mut stop = PlateauState::default();
    let mut best: Option<(f64, ParamStore<f32>)> = None;

    let mut order: Vec<(usize, usize)> = (0..train_pairs.len())
        .flat_map(|i| (0..=copies).map(move |c| (i, c)))
        .collect();
    let total_epochs = cfg.warmup_epochs + cfg.main_epochs;
    for epoch in 0..total_epochs {
        let phase = if epoch < cfg.warmup_epochs { Phase::Warmup } else { Phase::Main };
        let lr = lr_at(epoch, plateau.reductions, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<SusceptibilityMap> = chunk
                .iter()
                .map(|&(i, c)| match augment {
                    Some(a) => augmented_input(&train_pairs[i].0, a, i, c),
                    None => train_pairs[i].0.clone(),
                })
                .collect();
            let xs: Vec<&SusceptibilityMap> = inputs.iter().collect();
            let ys: Vec<&InundationMap> = chunk.iter().map(|&(i, _)| train_pairs[i].1.as_ref()).collect();
            let loss = trainer.step(&xs, &ys, lr).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = trainer.evaluate(val_pairs)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: validation loss {val_loss}")));
        }
        log::info!("epoch {epoch:>3} lr {lr:.3e} train {train_loss:.6} val {val_loss:.6}");
        history.epochs.push(EpochRecord {
            epoch,
            phase,
            train_loss,
            val_loss,
            lr,
        });
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, trainer.params().clone()));
            history.best_epoch = Some(epoch);
            history.best_val_loss = Some(val_loss);
        }
        if phase == Phase::Main {
            if reduce_on_plateau(val_loss, cfg.plateau_patience, cfg.min_delta, &mut plateau) {
                let next_lr = lr_at(epoch + 1, plateau.reductions, cfg);
                history.events.push(TrainEvent::PlateauReduction { epoch, next_lr });
            }
            reduce_on_plateau(val_loss, cfg.early_stop_patience, cfg.min_delta, &mut stop);
            if stop.reductions > 0 {
                history.events.push(TrainEvent::EarlyStop { epoch });
                break;
            }
        }
    }
    let (_, params) = best.expect("at least one epoch");
    trainer.params = params;
    Ok((trainer.into_model()?, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert!((lr_at(0, 0, &cfg) - 4e-5).abs() < 1e-18);
        assert_eq!(lr_at(19, 0, &cfg), 8e-4);
        assert!((lr_at(30, 2, &cfg) - 5.78e-4).abs() < 1e-12);
        for e in 20..100 {
            assert!(lr_at(e + 1, 3, &cfg) <= lr_at(e, 3, &cfg));
        }
    }

    #[test]
    fn plateau_semantics() {
        let mut s = PlateauState::default();
        for k in 0..50 {
            assert!(!reduce_on_plateau(10.0 - k as f64, 10, 1e-8, &mut s));
        }
        let mut s = PlateauState::default();
        let fired: Vec<usize> = (0..25).filter(|_| reduce_on_plateau(1.0, 10, 1e-8, &mut s)).collect();
        // Best at step 0, then ten flat steps fire at step 10 (the reduction
        // applies from step 11); the counter restarts afterwards.
        assert_eq!(fired, vec![10, 20]);
        let mut s = PlateauState::default();
        for _ in 0..9 {
            reduce_on_plateau(1.0, 10, 1e-8, &mut s);
        }
        reduce_on_plateau(0.5, 10, 1e-8, &mut s);
        assert_eq!(s.wait, 0);
        assert!(!reduce_on_plateau(0.5 - 1e-9, 10, 1e-8, &mut s));
        assert_eq!(s.wait, 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { plateau_factor: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
