//! Run configuration files and the train/evaluate/predict flows shared by the
//! command line, the service and the examples.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::CutoutConfig;
use crate::data::{Dataset, Sample, SplitSpec, Splits, split_dataset};
use crate::error::{Error, Result};
use crate::grid::{build_index_map, encode_susceptibility, extract_depths, CoastalLocation, DepthVector, GridIndexMap};
use crate::metrics::{compute_metrics, MetricsReport, DEFAULT_DELTAS};
use crate::model::{build_caspian, CaspianModel, ModelConfig};
use crate::scenario::ProtectionScenario;
use crate::trainer::{train, TrainConfig, TrainHistory};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const RUN_FILE: &str = "run.json";
pub const HISTORY_FILE: &str = "history.json";
pub const VAL_METRICS_FILE: &str = "metrics_val.json";
pub const GEOMETRY_FILE: &str = "geometry.json";

/// What a trained model needs to know about the coastline to encode
/// scenarios and decode its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub d_x: usize,
    pub locations: Vec<CoastalLocation>,
}

impl Geometry {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            d_x: dataset.d_x(),
            locations: dataset.locations.clone(),
        }
    }
}

fn default_model() -> ModelConfig {
    ModelConfig::desk()
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Cutout augmentation; absent means none.
    #[serde(default)]
    pub augment: Option<CutoutConfig>,
    pub split: SplitSpec,
}

impl RunConfig {
    /// Desk-scale defaults matched to the 64-scenario synthetic set.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig {
                warmup_epochs: 5,
                main_epochs: 60,
                seed: 42,
                ..TrainConfig::default()
            },
            augment: None,
            split: SplitSpec {
                train: 44,
                val: 8,
                test: 12,
                seed: 42,
            },
        }
    }

    pub fn paper() -> Self {
        Self {
            model: ModelConfig::paper(),
            train: TrainConfig::default(),
            augment: Some(CutoutConfig::default()),
            split: SplitSpec::paper(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(a) = &self.augment {
            a.validate(self.model.height, self.model.width)?;
        }
        Ok(())
    }

    /// Checks that the model grid matches the dataset grid.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        let m = &ds.manifest;
        if m.height != self.model.height || m.width != self.model.width {
            return Err(Error::Config(format!(
                "model grid {}x{} does not match dataset grid {}x{}",
                self.model.height, self.model.width, m.height, m.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Config(format!("unknown split '{s}' (train, val, test)"))),
        }
    }
}

impl<T> Splits<T> {
    pub fn get(&self, name: SplitName) -> &[T] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Encodes scenarios and decodes network output for one dataset geometry.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub model: CaspianModel,
    pub locations: Vec<CoastalLocation>,
    pub index_map: GridIndexMap,
    pub d_x: usize,
    pub fingerprint: String,
}

impl Predictor {
    pub fn new(model: CaspianModel, geometry: Geometry, fingerprint: String) -> Result<Self> {
        let cfg = model.config();
        let index_map = build_index_map(&geometry.locations, cfg.height, cfg.width)?;
        if let Some(l) = geometry.locations.iter().find(|l| l.segment_id >= geometry.d_x) {
            return Err(Error::Consistency(format!(
                "location {} references segment {} of {}",
                l.id, l.segment_id, geometry.d_x
            )));
        }
        Ok(Self {
            model,
            locations: geometry.locations,
            index_map,
            d_x: geometry.d_x,
            fingerprint,
        })
    }

    /// Loads a checkpoint or training output directory. Geometry comes from
    /// `dataset` when given, otherwise from the saved geometry file.
    pub fn load(model_path: &Path, dataset: Option<&Dataset>) -> Result<Self> {
        let (model, fp) = CaspianModel::load(&checkpoint_path(model_path))?;
        let geometry = match dataset {
            Some(ds) => {
                let m = &ds.manifest;
                if (m.height, m.width) != (model.config().height, model.config().width) {
                    return Err(Error::Config(format!(
                        "model grid {}x{} does not match dataset grid {}x{}",
                        model.config().height,
                        model.config().width,
                        m.height,
                        m.width
                    )));
                }
                Geometry::of(ds)
            }
            None => {
                let p = model_path.join(GEOMETRY_FILE);
                let text = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                serde_json::from_slice(&text)?
            }
        };
        Self::new(model, geometry, fp)
    }

    pub fn d_y(&self) -> usize {
        self.locations.len()
    }

    pub fn predict(&self, scenario: &ProtectionScenario) -> Result<DepthVector> {
        Ok(self.predict_batch(std::slice::from_ref(scenario))?.pop().expect("one output"))
    }

    pub fn predict_batch(&self, scenarios: &[ProtectionScenario]) -> Result<Vec<DepthVector>> {
        let maps = scenarios
            .iter()
            .map(|s| {
                if s.d_x() != self.d_x {
                    return Err(Error::Shape(format!(
                        "scenario has {} bits, model expects {}",
                        s.d_x(),
                        self.d_x
                    )));
                }
                encode_susceptibility(s, &self.locations, &self.index_map)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = maps.iter().collect();
        self.model
            .predict_batch(&refs)?
            .iter()
            .map(|g| extract_depths(g, &self.index_map))
            .collect()
    }

    pub fn evaluate(&self, samples: &[Sample]) -> Result<MetricsReport> {
        let mut preds = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(4) {
            let scen: Vec<_> = chunk.iter().map(|s| s.scenario.clone()).collect();
            preds.extend(self.predict_batch(&scen)?);
        }
        let targets: Vec<_> = samples.iter().map(|s| s.depths.clone()).collect();
        compute_metrics(&preds, &targets, &DEFAULT_DELTAS)
    }
}

/// `dir/checkpoint` when `dir` is a training output directory, else `dir`.
pub fn checkpoint_path(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.join(crate::nn::checkpoint::MANIFEST_FILE).exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

pub fn split_samples(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits<Sample>> {
    split_dataset(&dataset.samples, spec)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub val_metrics: MetricsReport,
    pub fingerprint: String,
    pub predictor: Predictor,
}

/// Trains on the configured split and writes the checkpoint, history, run
/// configuration and validation metrics under `out_dir`.
pub fn train_run(dataset: &Dataset, cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.check_dataset(dataset)?;
    let splits = split_samples(dataset, &cfg.split)?;
    let im = dataset.index_map()?;
    let train_pairs = dataset.pairs(&splits.train, &im)?;
    let val_pairs = dataset.pairs(&splits.val, &im)?;
    let model = build_caspian(&cfg.model, cfg.train.seed)?;
    let (model, history) = train(model, &train_pairs, &val_pairs, &cfg.train, cfg.augment.as_ref())?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let fingerprint = model.save(&out_dir.join(CHECKPOINT_DIR))?;
    cfg.save(&out_dir.join(RUN_FILE))?;
    write_json(&out_dir.join(HISTORY_FILE), &history)?;
    let geometry = Geometry::of(dataset);
    write_json(&out_dir.join(GEOMETRY_FILE), &geometry)?;
    let predictor = Predictor::new(model, geometry, fingerprint.clone())?;
    let val_metrics = predictor.evaluate(&splits.val)?;
    write_json(&out_dir.join(VAL_METRICS_FILE), &val_metrics)?;
    Ok(TrainOutcome {
        history,
        val_metrics,
        fingerprint,
        predictor,
    })
}

/// Split recorded next to a trained model, if any.
pub fn saved_run_config(model_path: &Path) -> Result<Option<RunConfig>> {
    let p = model_path.join(RUN_FILE);
    if p.exists() {
        RunConfig::load(&p).map(Some)
    } else {
        Ok(None)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}
