//! Experiment configuration: a JSON document with a block per concern.
//!
//! Every block rejects unknown keys and every field has a default, so
//! `{"task": {"kind": "teacher", "d": 32, "k": 32, "rank": 16}}` is a valid
//! file. [`ExperimentConfig::validate`] runs before any compute.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::adapter::AdapterKind;
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::task::{AdapterSite, BlobsTask, TeacherTask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskConfig {
    Blobs(BlobsTask),
    Teacher(TeacherTask),
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::Blobs(BlobsTask::default())
    }
}

/// Backbone of the blobs classifier; ignored by the teacher task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub adapted_layer: AdapterSite,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            adapted_layer: AdapterSite::Hidden,
            seed: 0,
        }
    }
}

/// `activation` and `scale_inside` only matter for `kind = "loran"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub rank: usize,
    pub alpha: f64,
    pub activation: Activation,
    pub scale_inside: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            kind: AdapterKind::Loran,
            rank: 8,
            alpha: 16.0,
            activation: Activation::default(),
            scale_inside: true,
        }
    }
}

impl AdapterConfig {
    /// Plain LoRA with the same rank and alpha.
    pub fn lora_baseline(&self) -> Self {
        Self {
            kind: AdapterKind::Lora,
            activation: Activation::Identity,
            scale_inside: false,
            ..self.clone()
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            AdapterKind::Lora => format!("lora-r{}", self.rank),
            AdapterKind::Loran => format!("loran-{}-r{}", self.activation, self.rank),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Minibatch size for classification; `null` means full batch. The
    /// teacher task is always full batch.
    pub batch_size: Option<usize>,
    /// Record the task metric every this many epochs.
    pub eval_every: usize,
    /// Run seed: adapter init and minibatch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::default(),
            learning_rate: 2e-4,
            epochs: 5,
            batch_size: Some(16),
            eval_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Everything one training run needs; echoed verbatim in its report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub adapter: AdapterConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// `(d, k)` of the weight the adapter attaches to.
    pub fn adapted_dims(&self) -> (usize, usize) {
        match &self.task {
            TaskConfig::Teacher(t) => (t.d, t.k),
            TaskConfig::Blobs(b) => match self.model.adapted_layer {
                AdapterSite::Hidden => (self.model.hidden, b.dim),
                AdapterSite::Head => (b.classes, self.model.hidden),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.task {
            TaskConfig::Blobs(b) => {
                b.validate()?;
                if self.model.hidden == 0 {
                    return Err(Error::Config("model.hidden must be ≥ 1".into()));
                }
            }
            TaskConfig::Teacher(t) => t.validate()?,
        }
        let (d, k) = self.adapted_dims();
        let a = &self.adapter;
        if a.rank == 0 || a.rank > d.min(k) {
            return Err(Error::Config(format!(
                "adapter rank {} invalid for a {d}x{k} weight",
                a.rank
            )));
        }
        if !(a.alpha > 0.0 && a.alpha.is_finite()) {
            return Err(Error::Config(format!("adapter alpha must be > 0, got {}", a.alpha)));
        }
        a.activation.validate()?;
        self.train.validate()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = seed;
        c
    }

    pub fn with_adapter(&self, adapter: AdapterConfig) -> Self {
        Self {
            adapter,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Used when `--out` is not given.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub amplitudes: Vec<f64>,
    pub omegas: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            amplitudes: vec![5e-6, 5e-5, 5e-4],
            omegas: vec![1e3, 1e4, 1e5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub activations: Vec<Activation>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            activations: Activation::ablation_family(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankStudyConfig {
    pub ranks: Vec<usize>,
}

impl Default for RankStudyConfig {
    fn default() -> Self {
        Self { ranks: vec![8, 64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub rel_tol: f64,
    /// Histogram edges; decades below the largest singular value when absent.
    pub edges: Option<Vec<f64>>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            edges: None,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub rank_study: RankStudyConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            adapter: AdapterConfig::default(),
            train: TrainConfig::default(),
            seeds: default_seeds(),
            output: OutputConfig::default(),
            grid: GridConfig::default(),
            ablation: AblationConfig::default(),
            rank_study: RankStudyConfig::default(),
            spectrum: SpectrumConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            task: self.task.clone(),
            model: self.model.clone(),
            adapter: self.adapter.clone(),
            train: self.train.clone(),
        }
    }

    /// Checks the run blocks and the blocks of every subcommand.
    pub fn validate(&self) -> Result<()> {
        let run = self.run_config();
        run.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.grid.amplitudes.is_empty() || self.grid.omegas.is_empty() {
            return Err(Error::Config("grid lists must not be empty".into()));
        }
        for &amplitude in &self.grid.amplitudes {
            for &omega in &self.grid.omegas {
                Activation::Sinter { amplitude, omega }.validate()?;
            }
        }
        if self.ablation.activations.is_empty() {
            return Err(Error::Config("ablation needs at least one activation".into()));
        }
        for a in &self.ablation.activations {
            a.validate()?;
        }
        if self.rank_study.ranks.is_empty() {
            return Err(Error::Config("rank_study.ranks must not be empty".into()));
        }
        if !(self.spectrum.rel_tol > 0.0 && self.spectrum.rel_tol < 1.0) {
            return Err(Error::Config(format!(
                "spectrum.rel_tol must lie in (0, 1), got {}",
                self.spectrum.rel_tol
            )));
        }
        if let Some(edges) = &self.spectrum.edges {
            crate::spectrum::spectrum_histogram(&[], edges)
                .map_err(|_| Error::Config("spectrum.edges must be strictly increasing".into()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_teacher_file() {
        let cfg = ExperimentConfig::from_json(
            r#"{"task": {"kind": "teacher", "d": 32, "k": 32, "rank": 16}}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.run_config().adapted_dims(), (32, 32));
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in [
            r#"{"tsk": {}}"#,
            r#"{"adapter": {"rnk": 4}}"#,
            r#"{"task": {"kind": "teacher", "d": 4, "k": 4, "rank": 2, "noise": 1}}"#,
            r#"{"train": {"lr": 0.1}}"#,
            r#"{"adapter": {"activation": {"kind": "tanh", "beta": 2}}}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn semantic_errors() {
        let mut cfg = ExperimentConfig::default();
        cfg.adapter.rank = 17;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.train.learning_rate = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.grid.omegas = vec![0.0];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.model.adapted_layer = AdapterSite::Head;
        cfg.adapter.rank = 8;
        assert!(cfg.validate().is_err(), "rank 8 exceeds the 4-class head");
    }

    #[test]
    fn baseline_is_plain_lora() {
        let a = AdapterConfig::default().lora_baseline();
        assert_eq!(a.kind, AdapterKind::Lora);
        assert_eq!(a.activation, Activation::Identity);
        assert!(!a.scale_inside);
        assert_eq!(a.label(), "lora-r8");
    }
}
