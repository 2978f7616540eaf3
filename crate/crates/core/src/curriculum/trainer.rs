use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{cluster_captions, sample_batch, ClusterAssignment, CurriculumError, PhaseConfig, SamplingMode, TrainConfig, TrainMode};
use crate::autodiff::{lr_schedule, AdamW, AdamWConfig, EngineError, Tape};
use crate::corpus::{Dataset, Sample, Split};
use crate::encoders::{EncoderError, Modality, TriModalModel};
use crate::graph::GraphBatch;
use crate::index::{evaluate_six_directions, EmbeddingIndex, IndexError, ModalityIndices, RetrievalReport};
use crate::objective::{classify_and_score, total_loss, tri_modal_loss, ModalityVars, ObjectiveError};

/// Stream offsets so sampling, dropout and clustering draw from
/// independent generators under one seed.
const SAMPLE_STREAM: u64 = 0x5eed_0001;
const DROPOUT_STREAM: u64 = 0x5eed_0002;
const CLUSTER_STREAM: u64 = 0x5eed_0003;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("sample `{0}` has no type label but the auxiliary loss is enabled")]
    MissingLabel(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String, dump: Option<PathBuf> },
    #[error("training log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub phase: u8,
    pub alpha: f64,
    pub steps: usize,
    #[serde(rename = "L_align")]
    pub l_align: f64,
    #[serde(rename = "L_cls")]
    pub l_cls: f64,
    pub logit_scale: f64,
    pub eval: Option<RetrievalReport>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: TriModalModel,
    pub history: Vec<EpochSummary>,
    pub clusters: Option<ClusterAssignment>,
    pub final_report: Option<RetrievalReport>,
}

/// Embeds `samples` with all three towers and indexes them by id.
pub fn build_indices(model: &TriModalModel, samples: &[&Sample]) -> Result<ModalityIndices, TrainError> {
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let graphs: Vec<_> = samples.iter().map(|s| &s.graph).collect();
    let captions: Vec<&str> = samples.iter().map(|s| s.caption.as_str()).collect();
    let dim = samples.first().map_or(model.config.image_dim, |s| s.features.len());
    let feats = ndarray::Array2::from_shape_fn((samples.len(), dim), |(r, c)| samples[r].features[c]);
    let d = model.config.embed_dim;
    Ok(ModalityIndices {
        code: EmbeddingIndex::build(Modality::Code, d, ids.clone(), &model.embed_graphs(&graphs)?)?,
        text: EmbeddingIndex::build(Modality::Text, d, ids.clone(), &model.embed_texts(&captions)?)?,
        image: EmbeddingIndex::build(Modality::Image, d, ids, &model.embed_images(&feats)?)?,
    })
}

pub fn evaluate_model(model: &TriModalModel, samples: &[&Sample]) -> Result<RetrievalReport, TrainError> {
    Ok(evaluate_six_directions(&build_indices(model, samples)?)?)
}

/// Owns the model and optimizer and advances one epoch at a time.
pub struct Trainer<'d, W: Write> {
    pub config: TrainConfig,
    pub model: TriModalModel,
    pub optimizer: AdamW,
    pub clusters: Option<ClusterAssignment>,
    /// Where a diagnostic dump goes if the loss becomes non-finite.
    pub dump_dir: Option<PathBuf>,
    data: &'d Dataset,
    train: Vec<usize>,
    test: Vec<usize>,
    phases: Vec<PhaseConfig>,
    steps_per_epoch: usize,
    epoch: usize,
    step: usize,
    regime_step: usize,
    regime_total: usize,
    sample_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    log: W,
}

impl<'d, W: Write> Trainer<'d, W> {
    pub fn new(data: &'d Dataset, config: TrainConfig, log: W) -> Result<Self, TrainError> {
        config.validate()?;
        if data.feature_dim != config.model.image_dim {
            return Err(EncoderError::FeatureDim { expected: config.model.image_dim, found: data.feature_dim }.into());
        }
        let train = data.indices(Split::Train);
        let test = data.indices(Split::Test);
        if train.len() < config.batch_size {
            return Err(CurriculumError::DatasetTooSmall { batch: config.batch_size, available: train.len() }.into());
        }
        if config.aux_weight > 0.0 {
            if let Some(s) = train.iter().map(|&i| &data.samples[i]).find(|s| s.label.is_none()) {
                return Err(TrainError::MissingLabel(s.id.clone()));
            }
        }
        let clusters = if config.epochs.phase3 > 0 {
            let captions: Vec<&str> = train.iter().map(|&i| data.samples[i].caption.as_str()).collect();
            Some(cluster_captions(&captions, config.curriculum.clusters, config.seed ^ CLUSTER_STREAM)?)
        } else {
            None
        };
        let model = TriModalModel::new(config.model.clone(), config.seed);
        let o = &config.optimizer;
        let adam = AdamWConfig {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: 1e-8,
            weight_decay: o.weight_decay,
            default_lr: o.lr_objective,
            group_lrs: vec![
                ("graph".into(), o.lr_graph),
                ("text".into(), o.lr_text_image),
                ("image".into(), o.lr_text_image),
                ("objective".into(), o.lr_objective),
            ],
        };
        let optimizer = AdamW::new(&model.store, adam);
        Ok(Self {
            phases: config.phases(),
            steps_per_epoch: train.len() / config.batch_size,
            sample_rng: ChaCha8Rng::seed_from_u64(config.seed ^ SAMPLE_STREAM),
            dropout_rng: ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_STREAM),
            config,
            model,
            optimizer,
            clusters,
            dump_dir: None,
            data,
            train,
            test,
            epoch: 0,
            step: 0,
            regime_step: 0,
            regime_total: 0,
            log,
        })
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs.total()
    }

    pub fn test_samples(&self) -> Vec<&'d Sample> {
        self.test.iter().map(|&i| &self.data.samples[i]).collect()
    }

    fn enter_phase(&mut self, phase: &PhaseConfig, epoch: usize) -> Result<(), TrainError> {
        let all: Vec<String> = self.model.store.groups().into_iter().map(String::from).collect();
        self.model.set_trainable(&all, false)?;
        self.model.set_trainable(&phase.trainable, true)?;
        let e = &self.config.epochs;
        let regime_epochs = if epoch == 1 && e.phase1 > 0 {
            Some(e.phase1)
        } else if epoch == e.phase1 + 1 {
            Some(e.phase2 + e.phase3)
        } else {
            None
        };
        if let Some(n) = regime_epochs {
            self.optimizer.rebuild(&self.model.store);
            self.regime_step = 0;
            self.regime_total = n * self.steps_per_epoch;
        }
        let line = json!({
            "kind": "phase",
            "phase": phase.phase,
            "epoch": epoch,
            "optimizer_steps": self.optimizer.step_count(),
            "moments_zero": self.optimizer.moments_are_zero(),
            "trainable": phase.trainable,
            "directions": phase.directions,
        });
        writeln!(self.log, "{line}")?;
        Ok(())
    }

    fn epoch_batches(&mut self, phase: &PhaseConfig, alpha: f64) -> Result<Vec<Vec<usize>>, TrainError> {
        let b = self.config.batch_size;
        match phase.sampling {
            SamplingMode::Random => {
                let mut perm: Vec<usize> = (0..self.train.len()).collect();
                perm.shuffle(&mut self.sample_rng);
                Ok(perm.chunks_exact(b).take(self.steps_per_epoch).map(<[usize]>::to_vec).collect())
            }
            SamplingMode::Curriculum => {
                let clusters = &self.clusters.as_ref().expect("clusters exist when Phase 3 runs").assignments;
                (0..self.steps_per_epoch)
                    .map(|_| Ok(sample_batch(clusters, b, alpha, &mut self.sample_rng)?.ids))
                    .collect()
            }
        }
    }

    fn train_step(&mut self, positions: &[usize], phase: &PhaseConfig, epoch: usize, alpha: f64) -> Result<(f64, f64), TrainError> {
        let samples: Vec<&Sample> = positions.iter().map(|&p| &self.data.samples[self.train[p]]).collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.label.unwrap_or(0)).collect();
        let warmup = (self.config.optimizer.warmup_fraction * self.regime_total as f64).round() as usize;
        let lr_scale = lr_schedule(self.regime_step + 1, self.regime_total, warmup, 1.0);
        let tri = self.config.mode == TrainMode::TriModal;

        let model = &self.model;
        let rng = &mut self.dropout_rng;
        let mut tape = Tape::new();
        let mut vars = ModalityVars::default();
        if tri {
            let graphs: Vec<_> = samples.iter().map(|s| &s.graph).collect();
            vars.code = Some(model.encode_graphs(&mut tape, &GraphBatch::new(&graphs), Some(&mut *rng))?);
        }
        let captions: Vec<&str> = samples.iter().map(|s| s.caption.as_str()).collect();
        vars.text = Some(model.encode_texts(&mut tape, &captions, Some(&mut *rng))?);
        vars.image = Some(model.encode_images(&mut tape, self.data.feature_matrix(&positions.iter().map(|&p| self.train[p]).collect::<Vec<_>>()))?);
        let scale = model.logit_scale(&mut tape);
        let align = tri_modal_loss(&mut tape, &vars, scale, &phase.directions, self.config.label_smoothing)?;
        let cls_inputs: Vec<_> = [vars.text, vars.code].into_iter().flatten().collect();
        let cls = if self.config.aux_weight > 0.0 {
            classify_and_score(&mut tape, &model.store, &model.aux, &cls_inputs, &labels)?
        } else {
            tape.scalar_constant(0.0)
        };
        let total = total_loss(&mut tape, align, cls, self.config.aux_weight)?;
        let (l_align, l_cls, l_total) = (tape.scalar(align), tape.scalar(cls), tape.scalar(total));
        if !l_total.is_finite() {
            let op = tape.first_nonfinite().map(|(v, op)| format!("{op} (node {})", v.index()));
            let dump = json!({
                "step": self.step + 1,
                "epoch": epoch,
                "phase": phase.phase,
                "alpha": alpha,
                "L_align": l_align.to_string(),
                "L_cls": l_cls.to_string(),
                "logit_scale": model.logit_scale_value(),
                "first_nonfinite_op": op,
                "batch": samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
            });
            return Err(self.non_finite(dump, format!("L_align={l_align}, L_cls={l_cls}")));
        }
        let grads = tape.backward(total)?.into_param_grads();
        drop(tape);

        self.model.store.zero_grad();
        self.model.store.accumulate(grads);
        self.optimizer.step(&mut self.model.store, lr_scale)?;
        self.model.clamp_logit_scale();
        self.step += 1;
        self.regime_step += 1;
        let line = json!({
            "kind": "step",
            "step": self.step,
            "epoch": epoch,
            "phase": phase.phase,
            "L_align": l_align,
            "L_cls": l_cls,
            "logit_scale": self.model.logit_scale_value(),
            "alpha": alpha,
            "lr_scale": lr_scale,
        });
        writeln!(self.log, "{line}")?;
        Ok((l_align, l_cls))
    }

    fn non_finite(&self, dump: serde_json::Value, detail: String) -> TrainError {
        let path = self.dump_dir.as_ref().and_then(|d| {
            let p = d.join(format!("nonfinite_step{}.json", self.step + 1));
            std::fs::write(&p, serde_json::to_string_pretty(&dump).ok()?).ok()?;
            Some(p)
        });
        TrainError::NonFiniteLoss { step: self.step + 1, detail, dump: path }
    }

    /// Runs the next epoch. Returns `None` once every epoch is done.
    pub fn run_epoch(&mut self) -> Result<Option<EpochSummary>, TrainError> {
        if self.is_finished() {
            return Ok(None);
        }
        let epoch = self.epoch + 1;
        let phase = self.phases.iter().find(|p| p.epochs.contains(&epoch)).cloned().expect("every epoch has a phase");
        if epoch == *phase.epochs.start() {
            self.enter_phase(&phase, epoch)?;
        }
        let alpha = self.config.alpha_for_epoch(epoch);
        let batches = self.epoch_batches(&phase, alpha)?;
        let (mut sa, mut sc) = (0.0, 0.0);
        for b in &batches {
            let (a, c) = self.train_step(b, &phase, epoch, alpha)?;
            sa += a;
            sc += c;
        }
        self.epoch = epoch;
        let n = batches.len().max(1) as f64;
        let eval = if !self.test.is_empty() && (self.config.eval_every_epoch || self.is_finished()) {
            Some(evaluate_model(&self.model, &self.test_samples())?)
        } else {
            None
        };
        let summary = EpochSummary {
            epoch,
            phase: phase.phase,
            alpha,
            steps: batches.len(),
            l_align: sa / n,
            l_cls: sc / n,
            logit_scale: self.model.logit_scale_value(),
            eval,
        };
        let mut line = serde_json::to_value(&summary).expect("summary serializes");
        line["kind"] = json!("epoch");
        writeln!(self.log, "{line}")?;
        Ok(Some(summary))
    }

    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        let mut history = Vec::new();
        while let Some(s) = self.run_epoch()? {
            history.push(s);
        }
        self.log.flush()?;
        let final_report = history.last().and_then(|s| s.eval.clone());
        Ok(TrainOutcome { model: self.model, history, clusters: self.clusters, final_report })
    }
}

/// Trains from scratch on `data`, writing the JSONL log to `log`.
pub fn train<W: Write>(data: &Dataset, config: TrainConfig, log: W) -> Result<TrainOutcome, TrainError> {
    Trainer::new(data, config, log)?.run()
}
