//! Flat JSON run configuration shared by every CLI subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, load_idx_images, synth_blobs, Dataset};
use crate::error::{LdbError, Result};
use crate::network::{build_preset, Network, PresetOptions};
use crate::scheduler::{LdbConfig, LrSchedule};
use crate::trainer::TrainOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Csv,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub p: f64,
    pub s: usize,
    pub kappa: f64,
    pub base_lr: f64,
    pub base_batch: usize,
    pub keep_head: usize,
    pub keep_tail: usize,
    pub reselect_every_step: bool,

    pub preset: String,
    pub width: usize,

    pub dataset: DatasetKind,
    pub blobs_n: usize,
    pub blobs_classes: usize,
    pub blobs_dim: usize,
    pub blobs_sigma: f64,
    pub csv_path: Option<PathBuf>,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,

    pub epochs: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub checkpoint_every: Option<usize>,
    pub out_dir: PathBuf,

    pub seed_data: u64,
    pub seed_init: u64,
    pub seed_select: u64,

    pub repetitions: usize,
    pub bench_steps: usize,
    pub bench_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ldb = LdbConfig::default();
        RunConfig {
            p: ldb.p,
            s: ldb.s,
            kappa: ldb.kappa,
            // 0.1 diverges on the deeper unnormalized MLP presets.
            base_lr: 0.02,
            base_batch: ldb.base_batch,
            keep_head: ldb.keep_head,
            keep_tail: ldb.keep_tail,
            reselect_every_step: ldb.reselect_every_step,
            preset: "mlp-8".into(),
            width: 64,
            dataset: DatasetKind::Blobs,
            blobs_n: 2000,
            blobs_classes: 3,
            blobs_dim: 16,
            blobs_sigma: 0.5,
            csv_path: None,
            idx_images: None,
            idx_labels: None,
            epochs: 30,
            schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 0.0,
            checkpoint_every: None,
            out_dir: PathBuf::from("ldb-out"),
            seed_data: 0,
            seed_init: 0,
            seed_select: 0,
            repetitions: 5,
            bench_steps: 30,
            bench_batch: 128,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LdbError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LdbError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| LdbError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| LdbError::io(path, e))
    }

    pub fn ldb(&self) -> LdbConfig {
        LdbConfig {
            p: self.p,
            s: self.s,
            kappa: self.kappa,
            base_lr: self.base_lr,
            base_batch: self.base_batch,
            keep_head: self.keep_head,
            keep_tail: self.keep_tail,
            selection_seed: self.seed_select,
            reselect_every_step: self.reselect_every_step,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            schedule: self.schedule,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            checkpoint_every: self.checkpoint_every,
            checkpoint_dir: self.checkpoint_every.map(|_| self.out_dir.join("checkpoints")),
            ..TrainOptions::default()
        }
    }

    pub fn preset_options(&self) -> PresetOptions {
        PresetOptions {
            width: self.width,
            init_seed: self.seed_init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ldb().validate()?;
        if self.epochs == 0 {
            return Err(LdbError::Config("epochs must be >= 1".into()));
        }
        if self.width == 0 {
            return Err(LdbError::Config("width must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LdbError::Config(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(LdbError::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.repetitions == 0 {
            return Err(LdbError::Config("repetitions must be >= 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(LdbError::Config("checkpoint_every must be >= 1".into()));
        }
        match self.dataset {
            DatasetKind::Csv if self.csv_path.is_none() => {
                Err(LdbError::Config("dataset csv needs csv_path".into()))
            }
            DatasetKind::Idx if self.idx_images.is_none() || self.idx_labels.is_none() => {
                Err(LdbError::Config("dataset idx needs idx_images and idx_labels".into()))
            }
            _ => Ok(()),
        }
    }

    /// Loads or synthesizes the dataset. `seed_data` drives generation, the
    /// train/val split and the shuffle order.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut ds = match self.dataset {
            DatasetKind::Blobs => synth_blobs(self.blobs_n, self.blobs_classes, self.blobs_dim, self.blobs_sigma, self.seed_data)?,
            DatasetKind::Csv => load_csv(self.csv_path.as_deref().expect("validated"), None, self.seed_data)?,
            DatasetKind::Idx => load_idx_images(
                self.idx_images.as_deref().expect("validated"),
                self.idx_labels.as_deref().expect("validated"),
            )?,
        };
        ds.set_shuffle_seed(self.seed_data);
        Ok(ds)
    }

    pub fn build_network(&self, ds: &Dataset) -> Result<Network> {
        build_preset(&self.preset, ds.sample_shape(), ds.classes(), &self.preset_options())
    }
}
