//! Training configuration as flat `key=value` text.
//!
//! Keys use the same kebab-case names as the command-line flags. The
//! resolved form lists every key in a fixed order and parses back to an
//! identical configuration.

use std::path::Path;

use crate::distill::{LossConfig, PairReduction};
use crate::encoder::Similarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub seed: u64,
    /// Documents retrieved per training query.
    pub k: usize,
    /// Rank window for sampled pairs.
    pub delta: usize,
    /// Pairs sampled per query.
    pub pairs: usize,
    pub tau: f64,
    pub lambda_kd: f64,
    pub lambda_pair: f64,
    pub batch_size: usize,
    /// Cap on the contrastive candidate set (positive plus negatives).
    pub candidates: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Optimizer steps per iteration.
    pub steps: usize,
    pub iterations: usize,
    pub use_cl: bool,
    pub use_kd: bool,
    pub use_pair: bool,
    /// Distillation-only objective; never reads labels.
    pub zero_shot: bool,
    pub pair_loss_reduction: PairReduction,
    pub symmetrize_pairs: bool,
    pub similarity: Similarity,
    pub dim: usize,
    pub shared_tables: bool,
    /// Noise of the synthetic pointwise teacher.
    pub teacher_noise: f64,
    /// Noise of the synthetic pairwise teacher.
    pub pair_teacher_noise: f64,
    pub teacher_sharpness: f64,
    /// Worker threads; outputs do not depend on it.
    pub workers: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 100,
            delta: 10,
            pairs: 50,
            tau: 1.0,
            lambda_kd: 1.0,
            lambda_pair: 3.0,
            batch_size: 32,
            candidates: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            steps: 300,
            iterations: 1,
            use_cl: true,
            use_kd: true,
            use_pair: true,
            zero_shot: false,
            pair_loss_reduction: PairReduction::Mean,
            symmetrize_pairs: false,
            similarity: Similarity::Dot,
            dim: 32,
            shared_tables: true,
            teacher_noise: 0.0,
            pair_teacher_noise: 0.0,
            teacher_sharpness: 1.0,
            workers: 1,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "k",
    "delta",
    "pairs",
    "tau",
    "lambda-kd",
    "lambda-pair",
    "batch-size",
    "candidates",
    "learning-rate",
    "momentum",
    "steps",
    "iterations",
    "use-cl",
    "use-kd",
    "use-pair",
    "zero-shot",
    "pair-loss-reduction",
    "symmetrize-pairs",
    "similarity",
    "dim",
    "shared-tables",
    "teacher-noise",
    "pair-teacher-noise",
    "teacher-sharpness",
    "workers",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl DistillConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "pairs" => self.pairs = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "lambda-kd" => self.lambda_kd = parse(key, value)?,
            "lambda-pair" => self.lambda_pair = parse(key, value)?,
            "batch-size" => self.batch_size = parse(key, value)?,
            "candidates" => self.candidates = parse(key, value)?,
            "learning-rate" => self.learning_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "use-cl" => self.use_cl = parse_bool(key, value)?,
            "use-kd" => self.use_kd = parse_bool(key, value)?,
            "use-pair" => self.use_pair = parse_bool(key, value)?,
            "zero-shot" => self.zero_shot = parse_bool(key, value)?,
            "pair-loss-reduction" => self.pair_loss_reduction = value.parse()?,
            "symmetrize-pairs" => self.symmetrize_pairs = parse_bool(key, value)?,
            "similarity" => self.similarity = value.parse()?,
            "dim" => self.dim = parse(key, value)?,
            "shared-tables" => self.shared_tables = parse_bool(key, value)?,
            "teacher-noise" => self.teacher_noise = parse(key, value)?,
            "pair-teacher-noise" => self.pair_teacher_noise = parse(key, value)?,
            "teacher-sharpness" => self.teacher_sharpness = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "k" => self.k.to_string(),
            "delta" => self.delta.to_string(),
            "pairs" => self.pairs.to_string(),
            "tau" => self.tau.to_string(),
            "lambda-kd" => self.lambda_kd.to_string(),
            "lambda-pair" => self.lambda_pair.to_string(),
            "batch-size" => self.batch_size.to_string(),
            "candidates" => self.candidates.to_string(),
            "learning-rate" => self.learning_rate.to_string(),
            "momentum" => self.momentum.to_string(),
            "steps" => self.steps.to_string(),
            "iterations" => self.iterations.to_string(),
            "use-cl" => self.use_cl.to_string(),
            "use-kd" => self.use_kd.to_string(),
            "use-pair" => self.use_pair.to_string(),
            "zero-shot" => self.zero_shot.to_string(),
            "pair-loss-reduction" => self.pair_loss_reduction.to_string(),
            "symmetrize-pairs" => self.symmetrize_pairs.to_string(),
            "similarity" => self.similarity.to_string(),
            "dim" => self.dim.to_string(),
            "shared-tables" => self.shared_tables.to_string(),
            "teacher-noise" => self.teacher_noise.to_string(),
            "pair-teacher-noise" => self.pair_teacher_noise.to_string(),
            "teacher-sharpness" => self.teacher_sharpness.to_string(),
            "workers" => self.workers.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{raw}`", i + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.resolve()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text)
    }

    /// Applies implied settings and validates.
    pub fn resolve(mut self) -> Result<Self> {
        if self.zero_shot {
            self.use_cl = false;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("delta", self.delta),
            ("pairs", self.pairs),
            ("batch-size", self.batch_size),
            ("candidates", self.candidates),
            ("iterations", self.iterations),
            ("dim", self.dim),
            ("workers", self.workers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config("`tau` must be positive".into()));
        }
        for (name, v) in [
            ("lambda-kd", self.lambda_kd),
            ("lambda-pair", self.lambda_pair),
            ("learning-rate", self.learning_rate),
            ("teacher-noise", self.teacher_noise),
            ("pair-teacher-noise", self.pair_teacher_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("`{name}` must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("`momentum` must be in [0, 1)".into()));
        }
        if !(self.teacher_sharpness.is_finite() && self.teacher_sharpness > 0.0) {
            return Err(Error::Config("`teacher-sharpness` must be positive".into()));
        }
        if self.zero_shot && self.use_cl {
            return Err(Error::Config("zero-shot mode excludes the contrastive term".into()));
        }
        if !(self.use_cl || self.use_kd || self.use_pair) {
            return Err(Error::Config("at least one loss component must be enabled".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            use_cl: self.use_cl && !self.zero_shot,
            use_kd: self.use_kd,
            use_pair: self.use_pair,
            tau: self.tau,
            lambda_kd: self.lambda_kd,
            lambda_pair: self.lambda_pair,
            pair_reduction: self.pair_loss_reduction,
        }
    }

    /// Every key, one `key=value` line each, in a fixed order.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }
}
