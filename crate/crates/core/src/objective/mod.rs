//! Contrastive alignment over modality pairs plus the auxiliary topology
//! classifier.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{cross_entropy, soft_cross_entropy};
use crate::autodiff::{EngineError, ParamStore, Tape, Var};
use crate::encoders::{AuxClassifier, Modality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "I→C")]
    ImageToCode,
    #[serde(rename = "T→I")]
    TextToImage,
    #[serde(rename = "T→C")]
    TextToCode,
    #[serde(rename = "C→I")]
    CodeToImage,
    #[serde(rename = "I→T")]
    ImageToText,
    #[serde(rename = "C→T")]
    CodeToText,
}

impl Direction {
    /// Report column order.
    pub const ALL: [Direction; 6] = [
        Direction::ImageToCode,
        Direction::TextToImage,
        Direction::TextToCode,
        Direction::CodeToImage,
        Direction::ImageToText,
        Direction::CodeToText,
    ];

    /// The four directions that involve code.
    pub const CODE_ONLY: [Direction; 4] =
        [Direction::ImageToCode, Direction::TextToCode, Direction::CodeToImage, Direction::CodeToText];

    /// Text and image only.
    pub const TEXT_IMAGE: [Direction; 2] = [Direction::TextToImage, Direction::ImageToText];

    pub fn new(from: Modality, to: Modality) -> Option<Direction> {
        use Modality::*;
        Some(match (from, to) {
            (Image, Code) => Direction::ImageToCode,
            (Text, Image) => Direction::TextToImage,
            (Text, Code) => Direction::TextToCode,
            (Code, Image) => Direction::CodeToImage,
            (Image, Text) => Direction::ImageToText,
            (Code, Text) => Direction::CodeToText,
            _ => return None,
        })
    }

    pub fn from(self) -> Modality {
        use Direction::*;
        match self {
            ImageToCode | ImageToText => Modality::Image,
            TextToImage | TextToCode => Modality::Text,
            CodeToImage | CodeToText => Modality::Code,
        }
    }

    pub fn to(self) -> Modality {
        use Direction::*;
        match self {
            TextToCode | ImageToCode => Modality::Code,
            CodeToImage | TextToImage => Modality::Image,
            CodeToText | ImageToText => Modality::Text,
        }
    }

    pub fn reverse(self) -> Direction {
        Direction::new(self.to(), self.from()).expect("distinct modalities")
    }

    pub fn label(self) -> String {
        format!("{}→{}", self.from().letter(), self.to().letter())
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub label_smoothing: f64,
    pub aux_weight: f64,
    pub directions: Vec<Direction>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { label_smoothing: 0.1, aux_weight: 0.5, directions: Direction::ALL.to_vec() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("batch mismatch: anchors {anchors:?}, targets {targets:?}")]
    BatchMismatch { anchors: (usize, usize), targets: (usize, usize) },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no embeddings for modality {0:?}")]
    MissingModality(Modality),
    #[error("invalid objective config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(ObjectiveError::InvalidConfig(format!("label_smoothing {} not in [0, 1)", self.label_smoothing)));
        }
        if self.aux_weight.is_nan() || self.aux_weight < 0.0 {
            return Err(ObjectiveError::InvalidConfig(format!("aux_weight {} is negative", self.aux_weight)));
        }
        Ok(())
    }
}

/// Smoothed targets `(1 − ε)·I + ε/B`.
pub fn smoothed_targets(b: usize, eps: f64) -> Array2<f64> {
    let mut q = Array2::from_elem((b, b), eps / b as f64);
    for i in 0..b {
        q[[i, i]] += 1.0 - eps;
    }
    q
}

/// One directional InfoNCE term. Rows of `anchors` and `targets` are unit
/// vectors with positives index-aligned; `logit_scale` is a `1 × 1` var.
pub fn info_nce_direction(
    tape: &mut Tape<'_>,
    anchors: Var,
    targets: Var,
    logit_scale: Var,
    eps: f64,
) -> Result<Var, ObjectiveError> {
    let (a, t) = (tape.shape(anchors), tape.shape(targets));
    if a != t || a.0 == 0 {
        return Err(ObjectiveError::BatchMismatch { anchors: a, targets: t });
    }
    let tt = tape.transpose(targets);
    let sim = tape.matmul(anchors, tt)?;
    let logits = tape.mul(sim, logit_scale)?;
    Ok(soft_cross_entropy(tape, logits, smoothed_targets(a.0, eps))?)
}

/// Embedding batches per modality; any may be absent if no active
/// direction needs it.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModalityVars {
    pub code: Option<Var>,
    pub text: Option<Var>,
    pub image: Option<Var>,
}

impl ModalityVars {
    pub fn get(&self, m: Modality) -> Result<Var, ObjectiveError> {
        match m {
            Modality::Code => self.code,
            Modality::Text => self.text,
            Modality::Image => self.image,
        }
        .ok_or(ObjectiveError::MissingModality(m))
    }
}

/// Sum of [`info_nce_direction`] over `directions`.
pub fn tri_modal_loss(
    tape: &mut Tape<'_>,
    vars: &ModalityVars,
    logit_scale: Var,
    directions: &[Direction],
    eps: f64,
) -> Result<Var, ObjectiveError> {
    let mut total: Option<Var> = None;
    for d in directions {
        let l = info_nce_direction(tape, vars.get(d.from())?, vars.get(d.to())?, logit_scale, eps)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.unwrap_or_else(|| tape.scalar_constant(0.0)))
}

/// Mean unsmoothed cross-entropy over the given logit batches, all scored
/// against the same labels. With text and code logits this is
/// `½[CE(text) + CE(code)]`.
pub fn aux_cls_loss(tape: &mut Tape<'_>, logits: &[Var], labels: &[usize]) -> Result<Var, ObjectiveError> {
    let mut total: Option<Var> = None;
    for &l in logits {
        let classes = tape.shape(l).1;
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(ObjectiveError::LabelOutOfRange { label: bad, classes });
        }
        let ce = cross_entropy(tape, l, labels, 0.0)?;
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
    }
    let total = total.ok_or_else(|| ObjectiveError::InvalidConfig("aux loss needs at least one input".into()))?;
    Ok(tape.scale(total, 1.0 / logits.len() as f64))
}

/// Runs the classifier on each embedding batch and returns [`aux_cls_loss`].
pub fn classify_and_score<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    classifier: &AuxClassifier,
    embeddings: &[Var],
    labels: &[usize],
) -> Result<Var, ObjectiveError> {
    let mut logits = Vec::with_capacity(embeddings.len());
    for &e in embeddings {
        logits.push(classifier.forward(tape, store, e)?);
    }
    aux_cls_loss(tape, &logits, labels)
}

/// `align + λ · cls`.
pub fn total_loss(tape: &mut Tape<'_>, align: Var, cls: Var, aux_weight: f64) -> Result<Var, ObjectiveError> {
    let weighted = tape.scale(cls, aux_weight);
    Ok(tape.add(align, weighted)?)
}
