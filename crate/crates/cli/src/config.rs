//! Run configuration: one JSON document with a top-level seed and one
//! section per subsystem. Unknown keys are rejected everywhere, so a
//! config file is a complete, checkable reproduction recipe.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use vld_core::losses::LossConfig;
use vld_core::model::StudentConfig;
use vld_core::synth::{SynthWorld, TaskSpec, WorldConfig};
use vld_core::trainer::TrainConfig;
use vld_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every command derives all of its randomness here.
    pub seed: u64,
    pub world: WorldConfig,
    pub corpus: CorpusSection,
    pub loss: LossConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()
            .with_context(|| format!("validating config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.corpus.validate()?;
        self.eval.validate()?;
        self.train.validate()?;
        // Covers the loss section via the composed trainer config.
        self.train_config().validate()
    }

    /// Trainer configuration with the top-level seed and loss section
    /// folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_image: self.train.batch_image,
            batch_text: self.train.batch_text,
            peak_lr: self.train.peak_lr,
            weight_decay: self.train.weight_decay,
            warmup_epochs: self.train.warmup_epochs,
            seed: self.seed,
            loss: self.loss.clone(),
            checkpoint_every: self.train.checkpoint_every,
        }
    }

    pub fn student_config(&self) -> StudentConfig {
        let mut encoder_dims = Vec::with_capacity(self.train.student_hidden.len() + 2);
        encoder_dims.push(self.world.d_raw);
        encoder_dims.extend_from_slice(&self.train.student_hidden);
        encoder_dims.push(self.train.student_d_visual);
        StudentConfig {
            encoder_dims,
            d_hat: self.train.student_d_hat,
            d_text: self.world.d_text,
        }
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            seed: self.seed,
            train_per_class: self.eval.train_per_class,
            test_per_class: self.eval.test_per_class,
            prompts_per_class: self.eval.prompts_per_class,
            image_sigma: self.eval.image_sigma,
            prompt_sigma: self.eval.prompt_sigma,
        }
    }
}

/// Corpus sampling sizes and the grounding selector's stop threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_images: usize,
    pub n_captions: usize,
    pub n_nlp_pool: usize,
    pub progress_floor: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            n_images: 2000,
            n_captions: 2000,
            n_nlp_pool: 8000,
            progress_floor: 0.95,
        }
    }
}

impl CorpusSection {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("n_images", self.n_images),
            ("n_captions", self.n_captions),
            ("n_nlp_pool", self.n_nlp_pool),
        ] {
            if n == 0 {
                return Err(Error::ConfigInvalid(format!("{name} must be >= 1")));
            }
        }
        if !(self.progress_floor > 0.0 && self.progress_floor <= 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "progress_floor must be in (0, 1], got {}",
                self.progress_floor
            )));
        }
        Ok(())
    }
}

/// Optimization recipe plus the student architecture. The seed and the
/// loss weights live at the top level of [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_image: usize,
    pub batch_text: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub checkpoint_every: usize,
    /// Hidden widths of the student encoder; input is the world's raw
    /// image dimension.
    pub student_hidden: Vec<usize>,
    /// Encoder output width (pre-projection features).
    pub student_d_visual: usize,
    /// Shared-space width the student projects into.
    pub student_d_hat: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_image: t.batch_image,
            batch_text: t.batch_text,
            peak_lr: t.peak_lr,
            weight_decay: t.weight_decay,
            warmup_epochs: t.warmup_epochs,
            checkpoint_every: t.checkpoint_every,
            student_hidden: vec![64],
            student_d_visual: 32,
            student_d_hat: 24,
        }
    }
}

impl TrainSection {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("student_d_visual", self.student_d_visual),
            ("student_d_hat", self.student_d_hat),
        ] {
            if n < 2 {
                return Err(Error::ConfigInvalid(format!("{name} must be >= 2")));
            }
        }
        if self.student_hidden.contains(&0) {
            return Err(Error::ConfigInvalid(
                "student_hidden widths must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Downstream task shape and scoring knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub prompts_per_class: usize,
    pub image_sigma: f64,
    pub prompt_sigma: f64,
    /// Ridge strengths searched by the linear probe.
    pub l2_grid: Vec<f64>,
    /// Raw-space shift strengths for the robustness variants.
    pub shift_sigmas: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            train_per_class: 50,
            test_per_class: 50,
            prompts_per_class: 4,
            image_sigma: 0.1,
            prompt_sigma: 0.05,
            l2_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            shift_sigmas: vec![0.0, 0.25, 0.5],
        }
    }
}

impl EvalSection {
    pub fn validate(&self) -> Result<()> {
        if self.test_per_class == 0 || self.prompts_per_class == 0 {
            return Err(Error::ConfigInvalid(
                "test_per_class and prompts_per_class must be >= 1".into(),
            ));
        }
        for (name, v) in [
            ("image_sigma", self.image_sigma),
            ("prompt_sigma", self.prompt_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ConfigInvalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.l2_grid.is_empty() {
            return Err(Error::ConfigInvalid("l2_grid must not be empty".into()));
        }
        for &l2 in &self.l2_grid {
            if !(l2.is_finite() && l2 >= 0.0) {
                return Err(Error::ConfigInvalid(format!(
                    "l2_grid entries must be >= 0, got {l2}"
                )));
            }
        }
        if self.shift_sigmas.is_empty() {
            return Err(Error::ConfigInvalid("shift_sigmas must not be empty".into()));
        }
        for &s in &self.shift_sigmas {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::ConfigInvalid(format!(
                    "shift_sigmas entries must be >= 0, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Persisted world identity: the generator is deterministic, so seed
/// plus config regenerates the exact teacher and prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    pub seed: u64,
    pub config: WorldConfig,
}

impl WorldFile {
    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Accepts the file itself or a directory holding `world.json`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let file = if path.is_dir() {
            path.join("world.json")
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file)
            .with_context(|| format!("reading world file {}", file.display()))?;
        let world: WorldFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing world file {}", file.display()))?;
        Ok(world)
    }

    pub fn regenerate(&self) -> Result<SynthWorld> {
        vld_core::synth::make_world(self.seed, &self.config)
    }
}
