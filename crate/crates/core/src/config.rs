//! Experiment configuration: one flat key-value namespace covering phantom
//! generation, model size, training schedules, and evaluation.
//!
//! Resolution order is preset defaults, then config-file entries in file
//! order, then command-line overrides in flag order. The `preset` key is
//! special: its last occurrence anywhere picks the baseline that everything
//! else patches, regardless of where it appears in the file.
//!
//! File format is `key = value` per line, UTF-8. Blank lines and lines whose
//! first non-space character is `#` are ignored; inline comments are not
//! supported (values may contain `#`). `render` emits every key in a fixed
//! order and round-trips through `parse_file`.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::model::{Hyperparams, ModelError};
use crate::shapegen::{AbnormalMode, PhantomConfig};
use crate::train::{Phase, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("malformed config line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fully resolved experiment description. Every field has a preset default
/// and a config key of the same name.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    // Phantom population.
    pub grid_size: usize,
    pub radii_axis0: (f64, f64),
    pub radii_axis1: (f64, f64),
    pub radii_axis2: (f64, f64),
    pub bump_count: usize,
    pub bump_amplitude: (f64, f64),
    /// Lesion effect size; 0 makes the classes indistinguishable.
    pub lesion_amplitude: f64,
    pub lesion_radius: (f64, f64),
    pub abnormal_mode: AbnormalMode,
    pub count_normal: usize,
    pub count_abnormal: usize,
    /// Disjoint normal-only pool for auto-encoder pretraining.
    pub pretrain_count: usize,
    // Network size.
    pub input_size: usize,
    pub shape_dim: usize,
    pub hidden_width: usize,
    pub lambda: f64,
    // Schedules. The joint schedule is shared by the frozen ablation; the
    // discriminative variant reuses it with its own iteration budget.
    pub pretrain_iterations: usize,
    pub pretrain_lr: f64,
    pub joint_iterations: usize,
    pub joint_lr: f64,
    pub lr_decay_points: Vec<usize>,
    pub decay_factor: f64,
    pub freeze_until: usize,
    pub disc_iterations: usize,
    pub augmentation: bool,
    // Evaluation.
    pub svm_c: f64,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    // Artifact locations, relative to the working directory unless absolute.
    pub data_dir: String,
    pub checkpoint_dir: String,
    pub report_dir: String,
}

/// Render/parse order; also the canonical list of known keys.
const KEYS: [&str; 34] = [
    "preset",
    "seed",
    "grid_size",
    "radii_axis0",
    "radii_axis1",
    "radii_axis2",
    "bump_count",
    "bump_amplitude",
    "lesion_amplitude",
    "lesion_radius",
    "abnormal_mode",
    "count_normal",
    "count_abnormal",
    "pretrain_count",
    "input_size",
    "shape_dim",
    "hidden_width",
    "lambda",
    "pretrain_iterations",
    "pretrain_lr",
    "joint_iterations",
    "joint_lr",
    "lr_decay_points",
    "decay_factor",
    "freeze_until",
    "disc_iterations",
    "augmentation",
    "svm_c",
    "folds",
    "seeds",
    "jobs",
    "data_dir",
    "checkpoint_dir",
    "report_dir",
];

impl ExperimentConfig {
    /// Desk-scale defaults: small enough to run the full pipeline on one
    /// workstation core in minutes per stage.
    pub fn desk() -> Self {
        ExperimentConfig {
            preset: "desk".into(),
            seed: 11,
            grid_size: 48,
            radii_axis0: (9.5, 10.5),
            radii_axis1: (12.5, 13.5),
            radii_axis2: (16.5, 17.5),
            bump_count: 4,
            bump_amplitude: (0.03, 0.08),
            lesion_amplitude: 1.0,
            lesion_radius: (6.0, 10.0),
            abnormal_mode: AbnormalMode::Mixed,
            count_normal: 200,
            count_abnormal: 136,
            pretrain_count: 20,
            input_size: 32,
            shape_dim: 64,
            hidden_width: 32,
            lambda: 0.5,
            pretrain_iterations: 2000,
            pretrain_lr: 2e-3,
            joint_iterations: 2000,
            joint_lr: 5e-3,
            lr_decay_points: vec![1000, 1500],
            decay_factor: 0.1,
            freeze_until: 250,
            disc_iterations: 1000,
            augmentation: true,
            svm_c: 1.0,
            folds: 4,
            seeds: vec![101, 102, 103, 104, 105],
            jobs: 1,
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
        }
    }

    /// Published schedule: 40k pretraining iterations at 1e-6, 40k joint
    /// iterations at 5e-4 decayed tenfold at 20k and 30k, encoder frozen for
    /// the first 5k, 128-cube inputs, d=1024.
    pub fn paper() -> Self {
        ExperimentConfig {
            preset: "paper".into(),
            grid_size: 144,
            radii_axis0: (28.5, 31.5),
            radii_axis1: (37.5, 40.5),
            radii_axis2: (49.5, 52.5),
            lesion_radius: (18.0, 30.0),
            pretrain_count: 100,
            input_size: 128,
            shape_dim: 1024,
            hidden_width: 512,
            pretrain_iterations: 40000,
            pretrain_lr: 1e-6,
            joint_iterations: 40000,
            joint_lr: 5e-4,
            lr_decay_points: vec![20000, 30000],
            freeze_until: 5000,
            disc_iterations: 40000,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(ConfigError::BadValue {
                key: "preset".into(),
                reason: format!("unknown preset `{other}`, expected desk or paper"),
            }),
        }
    }

    /// Apply one key-value override. Values use the same syntax `render`
    /// emits: scalars verbatim, ranges as `lo,hi`, lists comma-separated.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "preset" => {
                // Validated here; the rebaseline happens in `resolve`.
                Self::preset(value)?;
                self.preset = value.into();
            }
            "seed" => self.seed = parse_scalar(key, value)?,
            "grid_size" => self.grid_size = parse_scalar(key, value)?,
            "radii_axis0" => self.radii_axis0 = parse_pair(key, value)?,
            "radii_axis1" => self.radii_axis1 = parse_pair(key, value)?,
            "radii_axis2" => self.radii_axis2 = parse_pair(key, value)?,
            "bump_count" => self.bump_count = parse_scalar(key, value)?,
            "bump_amplitude" => self.bump_amplitude = parse_pair(key, value)?,
            "lesion_amplitude" => self.lesion_amplitude = parse_scalar(key, value)?,
            "lesion_radius" => self.lesion_radius = parse_pair(key, value)?,
            "abnormal_mode" => {
                self.abnormal_mode =
                    AbnormalMode::parse(value).ok_or_else(|| ConfigError::BadValue {
                        key: key.into(),
                        reason: format!("expected bulge, dent, or mixed, got `{value}`"),
                    })?
            }
            "count_normal" => self.count_normal = parse_scalar(key, value)?,
            "count_abnormal" => self.count_abnormal = parse_scalar(key, value)?,
            "pretrain_count" => self.pretrain_count = parse_scalar(key, value)?,
            "input_size" => self.input_size = parse_scalar(key, value)?,
            "shape_dim" => self.shape_dim = parse_scalar(key, value)?,
            "hidden_width" => self.hidden_width = parse_scalar(key, value)?,
            "lambda" => self.lambda = parse_scalar(key, value)?,
            "pretrain_iterations" => self.pretrain_iterations = parse_scalar(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse_scalar(key, value)?,
            "joint_iterations" => self.joint_iterations = parse_scalar(key, value)?,
            "joint_lr" => self.joint_lr = parse_scalar(key, value)?,
            "lr_decay_points" => self.lr_decay_points = parse_list(key, value)?,
            "decay_factor" => self.decay_factor = parse_scalar(key, value)?,
            "freeze_until" => self.freeze_until = parse_scalar(key, value)?,
            "disc_iterations" => self.disc_iterations = parse_scalar(key, value)?,
            "augmentation" => self.augmentation = parse_scalar(key, value)?,
            "svm_c" => self.svm_c = parse_scalar(key, value)?,
            "folds" => self.folds = parse_scalar(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "jobs" => self.jobs = parse_scalar(key, value)?,
            "data_dir" => self.data_dir = value.into(),
            "checkpoint_dir" => self.checkpoint_dir = value.into(),
            "report_dir" => self.report_dir = value.into(),
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Build the final config from an optional file and ordered flag
    /// overrides (later entries win).
    pub fn resolve(
        file: Option<&str>,
        flags: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let file_kvs = match file {
            Some(text) => parse_file(text)?,
            None => Vec::new(),
        };
        let preset_name = file_kvs
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .chain(flags.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .filter(|(k, _)| *k == "preset")
            .last()
            .map(|(_, v)| v.to_string())
            .unwrap_or_else(|| "desk".into());
        let mut cfg = Self::preset(&preset_name)?;
        for (k, v) in file_kvs.iter().chain(flags.iter()) {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, flags: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::resolve(Some(&text), flags)
    }

    /// Every key in canonical order; parses back to an identical config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.value_of(key);
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        let pair = |(lo, hi): (f64, f64)| format!("{lo},{hi}");
        match key {
            "preset" => self.preset.clone(),
            "seed" => self.seed.to_string(),
            "grid_size" => self.grid_size.to_string(),
            "radii_axis0" => pair(self.radii_axis0),
            "radii_axis1" => pair(self.radii_axis1),
            "radii_axis2" => pair(self.radii_axis2),
            "bump_count" => self.bump_count.to_string(),
            "bump_amplitude" => pair(self.bump_amplitude),
            "lesion_amplitude" => self.lesion_amplitude.to_string(),
            "lesion_radius" => pair(self.lesion_radius),
            "abnormal_mode" => self.abnormal_mode.name().to_string(),
            "count_normal" => self.count_normal.to_string(),
            "count_abnormal" => self.count_abnormal.to_string(),
            "pretrain_count" => self.pretrain_count.to_string(),
            "input_size" => self.input_size.to_string(),
            "shape_dim" => self.shape_dim.to_string(),
            "hidden_width" => self.hidden_width.to_string(),
            "lambda" => self.lambda.to_string(),
            "pretrain_iterations" => self.pretrain_iterations.to_string(),
            "pretrain_lr" => self.pretrain_lr.to_string(),
            "joint_iterations" => self.joint_iterations.to_string(),
            "joint_lr" => self.joint_lr.to_string(),
            "lr_decay_points" => join(&self.lr_decay_points),
            "decay_factor" => self.decay_factor.to_string(),
            "freeze_until" => self.freeze_until.to_string(),
            "disc_iterations" => self.disc_iterations.to_string(),
            "augmentation" => self.augmentation.to_string(),
            "svm_c" => self.svm_c.to_string(),
            "folds" => self.folds.to_string(),
            "seeds" => join(&self.seeds),
            "jobs" => self.jobs.to_string(),
            "data_dir" => self.data_dir.clone(),
            "checkpoint_dir" => self.checkpoint_dir.clone(),
            "report_dir" => self.report_dir.clone(),
            other => unreachable!("unlisted key {other}"),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        // Structural checks that downstream constructors would reject with
        // less helpful wording; everything else is validated at use.
        self.phantom().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.hyperparams()?;
        if self.count_normal == 0 {
            return Err(ConfigError::Invalid("count_normal must be positive".into()));
        }
        if self.pretrain_count == 0 {
            return Err(ConfigError::Invalid("pretrain_count must be positive".into()));
        }
        if self.folds < 2 {
            return Err(ConfigError::Invalid("folds must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must list at least one seed".into()));
        }
        if self.freeze_until > self.joint_iterations {
            return Err(ConfigError::Invalid(format!(
                "freeze_until ({}) exceeds joint_iterations ({})",
                self.freeze_until, self.joint_iterations
            )));
        }
        if self.freeze_until > self.disc_iterations {
            return Err(ConfigError::Invalid(format!(
                "freeze_until ({}) exceeds disc_iterations ({})",
                self.freeze_until, self.disc_iterations
            )));
        }
        for (key, cfg) in [
            ("pretrain", self.train_config(Phase::PretrainAe, self.seed)),
            ("joint", self.train_config(Phase::Joint, self.seed)),
            ("disc", self.train_config(Phase::Discriminative, self.seed)),
        ] {
            cfg.validate().map_err(|e| {
                ConfigError::Invalid(format!("{key} schedule: {e}"))
            })?;
        }
        Ok(())
    }

    pub fn phantom(&self) -> PhantomConfig {
        PhantomConfig {
            grid_size: self.grid_size,
            base_radii_range: [self.radii_axis0, self.radii_axis1, self.radii_axis2],
            bump_count: self.bump_count,
            bump_amplitude_range: self.bump_amplitude,
            lesion_amplitude: self.lesion_amplitude,
            lesion_radius_range: self.lesion_radius,
            abnormal_mode: self.abnormal_mode,
        }
    }

    /// Network shape. Eta is a per-fold class balance computed at training
    /// time; the placeholder here never reaches a loss.
    pub fn hyperparams(&self) -> Result<Hyperparams, ConfigError> {
        Hyperparams::new(self.input_size, self.shape_dim, self.hidden_width, 1.0, self.lambda)
            .map_err(|e: ModelError| ConfigError::Invalid(e.to_string()))
    }

    /// Schedule for one training phase. The frozen ablation runs the joint
    /// schedule; the discriminative variant runs it with its own span.
    pub fn train_config(&self, phase: Phase, seed: u64) -> TrainConfig {
        let (iterations, base_lr, points, freeze) = match phase {
            Phase::PretrainAe => (self.pretrain_iterations, self.pretrain_lr, Vec::new(), 0),
            Phase::Joint | Phase::Frozen | Phase::Scratch => (
                self.joint_iterations,
                self.joint_lr,
                self.lr_decay_points.clone(),
                self.freeze_until,
            ),
            Phase::Discriminative => (
                self.disc_iterations,
                self.joint_lr,
                self.lr_decay_points.clone(),
                self.freeze_until,
            ),
        };
        TrainConfig {
            phase,
            iterations,
            base_lr,
            lr_decay_points: points,
            decay_factor: self.decay_factor,
            freeze_until: freeze,
            batch_size: 1,
            augmentation: self.augmentation,
            seed,
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        reason: format!("`{value}`: {e}"),
    })
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    let (lo, hi) = value.split_once(',').ok_or_else(|| ConfigError::BadValue {
        key: key.into(),
        reason: format!("`{value}`: expected `lo,hi`"),
    })?;
    Ok((parse_scalar(key, lo)?, parse_scalar(key, hi)?))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed.split(',').map(|item| parse_scalar(key, item)).collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Split config text into ordered key-value pairs without interpreting them.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut kvs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::Malformed { line: idx + 1 })?;
        kvs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(kvs)
}
