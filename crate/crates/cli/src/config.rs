//! TOML run configuration. Every section is optional; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use cdiff_core::cdiff::{ReverseNoise, SampleOptions, TrainConfig};
use cdiff_core::data::PairConfig;
use cdiff_core::link::Fading;
use cdiff_core::nn::UNetConfig;
use cdiff_core::schedule::{LambdaShape, ScheduleTable};
use cdiff_core::StreamRng;
use rand::RngCore;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub link: LinkSection,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            data: DataSection::default(),
            link: LinkSection::default(),
            schedule: ScheduleSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: SourceKind,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    /// Training images to use (synthetic: images to draw).
    pub count: usize,
    /// Held-out images for sweeps.
    pub test_count: usize,
    /// Pair container written by `prepare` and read by `train`.
    pub pairs: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            images: None,
            labels: None,
            test_images: None,
            count: 2000,
            test_count: 128,
            pairs: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub snr_db: [f64; 2],
    pub kappa_t: [f64; 2],
    pub kappa_r: [f64; 2],
    pub order: usize,
    pub repetition: usize,
    pub fading: Fading,
}

impl Default for LinkSection {
    fn default() -> Self {
        let d = PairConfig::default();
        Self {
            snr_db: [d.snr_db.0, d.snr_db.1],
            kappa_t: [d.kappa_t.0, d.kappa_t.1],
            kappa_r: [d.kappa_r.0, d.kappa_r.1],
            order: d.order,
            repetition: d.repetition,
            fading: d.fading,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            steps: d.steps,
            beta_start: d.beta_start,
            beta_end: d.beta_end,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub widths: Vec<usize>,
    pub time_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = UNetConfig::full(1);
        Self {
            widths: d.widths,
            time_dim: d.time_dim,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    pub checkpoint: Option<PathBuf>,
    /// Also write `<checkpoint stem>.epochN.cdif` after every epoch.
    pub save_epochs: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            ema_decay: d.ema_decay,
            checkpoint: None,
            save_epochs: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub noise: ReverseNoise,
    pub deterministic: bool,
    pub batch_size: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            noise: ReverseNoise::default(),
            deterministic: false,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub snr_grid: Vec<f64>,
    /// `[κᵗ, κʳ]` held fixed during the SNR sweep.
    pub kappa: [f64; 2],
    pub kappa_r_grid: Vec<f64>,
    pub impair_snr_db: f64,
    pub impair_kappa_t: f64,
    pub realizations: usize,
    /// Held-out images per impairment realisation.
    pub impair_images: usize,
    pub dump_images: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            snr_grid: vec![-5.0, 0.0, 5.0, 10.0],
            kappa: [0.05, 0.1],
            kappa_r_grid: vec![0.0, 0.0225],
            impair_snr_db: 0.0,
            impair_kappa_t: 0.05,
            realizations: 20,
            impair_images: 8,
            dump_images: true,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config().validate().map_err(|e| config_err(format!("[train]/[schedule]: {e}")))?;
        self.schedule().map_err(|e| config_err(format!("[schedule]: {e}")))?;
        self.unet().validate().map_err(|e| config_err(format!("[model]: {e}")))?;
        self.pair_config().validate().map_err(|e| config_err(format!("[link]: {e}")))?;
        if self.sample.batch_size == 0 {
            return Err(config_err("sample.batch_size must be at least 1"));
        }
        if self.data.count == 0 {
            return Err(config_err("data.count must be at least 1"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.schedule.steps,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            ema_decay: self.train.ema_decay,
            beta_start: self.schedule.beta_start,
            beta_end: self.schedule.beta_end,
            seed: self.seed,
        }
    }

    pub fn schedule(&self) -> Result<ScheduleTable, CliError> {
        let s = &self.schedule;
        ScheduleTable::build(s.steps, s.beta_start, s.beta_end, LambdaShape::Linear)
            .map_err(|e| config_err(format!("[schedule]: {e}")))
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            widths: self.model.widths.clone(),
            time_dim: self.model.time_dim,
            steps: self.schedule.steps,
            zero_init_output: true,
        }
    }

    /// Link settings for training pairs.
    pub fn pair_config(&self) -> PairConfig {
        let l = &self.link;
        PairConfig {
            snr_db: (l.snr_db[0], l.snr_db[1]),
            kappa_t: (l.kappa_t[0], l.kappa_t[1]),
            kappa_r: (l.kappa_r[0], l.kappa_r[1]),
            order: l.order,
            repetition: l.repetition,
            fading: l.fading,
            power: 1.0,
            seed: self.seed,
        }
    }

    /// Link settings for evaluation, on a seed disjoint from training.
    pub fn eval_pair_config(&self) -> PairConfig {
        PairConfig {
            seed: StreamRng::new(self.seed).split_named("eval").next_u64(),
            ..self.pair_config()
        }
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            deterministic: self.sample.deterministic,
            noise: self.sample.noise,
        }
    }

    pub fn pairs_path(&self) -> Result<&Path, CliError> {
        self.data
            .pairs
            .as_deref()
            .ok_or_else(|| config_err("data.pairs is not set (path of the pair dataset)"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.train
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.cdif"))
    }
}
