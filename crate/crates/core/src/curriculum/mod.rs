//! Three-phase training: graph warm-up, joint alignment, then hard
//! negatives drawn from caption clusters.

mod kmeans;
mod sampler;
mod trainer;

use std::ops::RangeInclusive;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::encoders::{ModelConfig, GRAPH_GROUPS, IMAGE_GROUPS, OBJECTIVE_GROUPS, TEXT_GROUPS};
use crate::objective::Direction;

pub use kmeans::{caption_matrix, caption_vector, cluster_captions, kmeans, ClusterAssignment, CAPTION_DIM, MAX_ITERATIONS, SHIFT_TOLERANCE};
pub use sampler::{hard_count, hard_negative_ratio, sample_batch, BatchDraw};
pub use trainer::{build_indices, evaluate_model, train, EpochSummary, TrainError, TrainOutcome, Trainer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CurriculumError {
    #[error("{samples} samples cannot form {clusters} clusters")]
    TooFewSamples { clusters: usize, samples: usize },
    #[error("epoch {epoch} is outside 1..={total} (at least 2 Phase-3 epochs are needed)")]
    BadEpochIndex { epoch: usize, total: usize },
    #[error("batch of {batch} requested from {available} samples")]
    DatasetTooSmall { batch: usize, available: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Random,
    Curriculum,
}

/// Which modalities take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Code, text and image, with the graph warm-up.
    TriModal,
    /// Text and image only; the code tower is never trained.
    TextImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase: u8,
    pub epochs: RangeInclusive<usize>,
    pub trainable: Vec<String>,
    pub directions: Vec<Direction>,
    pub sampling: SamplingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseEpochs {
    pub phase1: usize,
    pub phase2: usize,
    pub phase3: usize,
}

impl Default for PhaseEpochs {
    fn default() -> Self {
        Self { phase1: 6, phase2: 2, phase3: 12 }
    }
}

impl PhaseEpochs {
    pub fn total(&self) -> usize {
        self.phase1 + self.phase2 + self.phase3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub clusters: usize,
    pub alpha0: f64,
    pub alpha_max: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self { clusters: 30, alpha0: 0.05, alpha_max: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_graph: f64,
    /// Text and image towers.
    pub lr_text_image: f64,
    /// Temperature and auxiliary classifier.
    pub lr_objective: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Warmup length as a fraction of each schedule's steps.
    pub warmup_fraction: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_graph: 5e-4,
            lr_text_image: 5e-5,
            lr_objective: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            warmup_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Corpus manifest; used by the command line.
    pub manifest: Option<PathBuf>,
    /// Where the checkpoint, log and diagnostics go; used by the command line.
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: PhaseEpochs,
    pub mode: TrainMode,
    pub label_smoothing: f64,
    pub aux_weight: f64,
    pub curriculum: CurriculumConfig,
    pub optimizer: OptimConfig,
    pub model: ModelConfig,
    /// Evaluate on the test split after every epoch.
    pub eval_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            output_dir: None,
            seed: 0,
            batch_size: 256,
            epochs: PhaseEpochs::default(),
            mode: TrainMode::TriModal,
            label_smoothing: 0.1,
            aux_weight: 0.5,
            curriculum: CurriculumConfig::default(),
            optimizer: OptimConfig::default(),
            model: ModelConfig::default(),
            eval_every_epoch: true,
        }
    }
}

fn groups(sets: &[&[&str]]) -> Vec<String> {
    sets.iter().flat_map(|s| s.iter().map(|g| g.to_string())).collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        let bad = |m: String| Err(CurriculumError::InvalidConfig(m));
        let c = &self.curriculum;
        if !(0.0 <= c.alpha0 && c.alpha0 <= c.alpha_max && c.alpha_max <= 1.0) {
            return bad(format!("need 0 <= alpha0 ({}) <= alpha_max ({}) <= 1", c.alpha0, c.alpha_max));
        }
        if c.clusters < 2 {
            return bad(format!("need at least 2 clusters, got {}", c.clusters));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs.total() == 0 {
            return bad("no epochs configured".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) || self.aux_weight.is_nan() || self.aux_weight < 0.0 {
            return bad("label_smoothing must be in [0, 1) and aux_weight non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.optimizer.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1]".into());
        }
        Ok(())
    }

    /// The phase plan implied by the epoch counts and mode. Phases with
    /// zero epochs are omitted.
    pub fn phases(&self) -> Vec<PhaseConfig> {
        let e = &self.epochs;
        let (warm_groups, warm_dirs, joint_groups, joint_dirs) = match self.mode {
            TrainMode::TriModal => (
                groups(&[&GRAPH_GROUPS, &OBJECTIVE_GROUPS]),
                Direction::CODE_ONLY.to_vec(),
                groups(&[&GRAPH_GROUPS, &TEXT_GROUPS, &IMAGE_GROUPS, &OBJECTIVE_GROUPS]),
                Direction::ALL.to_vec(),
            ),
            TrainMode::TextImage => {
                let g = groups(&[&TEXT_GROUPS, &IMAGE_GROUPS, &OBJECTIVE_GROUPS]);
                (g.clone(), Direction::TEXT_IMAGE.to_vec(), g, Direction::TEXT_IMAGE.to_vec())
            }
        };
        let plan = [
            (1, e.phase1, warm_groups, warm_dirs, SamplingMode::Random),
            (2, e.phase2, joint_groups.clone(), joint_dirs.clone(), SamplingMode::Random),
            (3, e.phase3, joint_groups, joint_dirs, SamplingMode::Curriculum),
        ];
        let mut start = 1;
        let mut out = Vec::new();
        for (phase, n, trainable, directions, sampling) in plan {
            if n > 0 {
                out.push(PhaseConfig { phase, epochs: start..=start + n - 1, trainable, directions, sampling });
            }
            start += n;
        }
        out
    }

    /// Phase config for a 1-based global epoch.
    pub fn phase_for_epoch(&self, epoch: usize) -> Option<PhaseConfig> {
        self.phases().into_iter().find(|p| p.epochs.contains(&epoch))
    }

    /// Hard-negative ratio for a 1-based global epoch; zero outside Phase 3.
    /// A single Phase-3 epoch uses `alpha0`.
    pub fn alpha_for_epoch(&self, epoch: usize) -> f64 {
        let first3 = self.epochs.phase1 + self.epochs.phase2 + 1;
        if epoch < first3 || epoch > self.epochs.total() {
            return 0.0;
        }
        let c = &self.curriculum;
        hard_negative_ratio(epoch - first3 + 1, self.epochs.phase3, c.alpha0, c.alpha_max).unwrap_or(c.alpha0)
    }
}
