//! The three modality encoders and the model that owns their parameters.
//!
//! Every encoder ends in a unit-norm `embed_dim` vector. Parameters are
//! grouped so phases can freeze whole towers:
//!
//! | group | contents |
//! |---|---|
//! | `graph.featurizer`, `graph.rgcn`, `graph.pool`, `graph.head` | code tower |
//! | `text.embed` | hashed token table, never trained |
//! | `text.head` | text projection |
//! | `image.proj` | image projection |
//! | `objective.logit_scale`, `objective.aux` | temperature and classifier |

mod head;
mod rgcn;
mod text;

use std::io::{Read, Write};

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::Linear;
use crate::autodiff::{read_checkpoint, write_checkpoint, EngineError, ParamId, ParamStore, Tape, Var};
use crate::graph::{CircuitGraph, GraphBatch, NodeFeaturizer, Relation};

pub use head::{AuxClassifier, ProjectionHead};
pub use rgcn::{AttentionPool, GraphEncoder, RgcnLayer};
pub use text::{token_id, tokenize, TextEncoder};

pub const GRAPH_GROUPS: [&str; 4] = ["graph.featurizer", "graph.rgcn", "graph.pool", "graph.head"];
pub const TEXT_FROZEN_GROUP: &str = "text.embed";
pub const TEXT_GROUPS: [&str; 1] = ["text.head"];
pub const IMAGE_GROUPS: [&str; 1] = ["image.proj"];
pub const OBJECTIVE_GROUPS: [&str; 2] = ["objective.logit_scale", "objective.aux"];

/// Rows encoded per tape during inference.
const INFER_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_g: usize,
    pub rgcn_layers: usize,
    pub graph_norm: bool,
    pub proj_hidden: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub text_vocab: usize,
    pub text_dim: usize,
    pub image_dim: usize,
    pub aux_hidden: usize,
    pub num_classes: usize,
    pub logit_scale_init: f64,
    pub logit_scale_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_g: 512,
            rgcn_layers: 2,
            graph_norm: true,
            proj_hidden: 1024,
            embed_dim: 768,
            dropout: 0.1,
            text_vocab: 8192,
            text_dim: 256,
            image_dim: 512,
            aux_hidden: 256,
            num_classes: 19,
            logit_scale_init: 1.0 / 0.07,
            logit_scale_max: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Code,
    Text,
    Image,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Code, Modality::Text, Modality::Image];

    pub fn letter(self) -> char {
        match self {
            Modality::Code => 'C',
            Modality::Text => 'T',
            Modality::Image => 'I',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Code => "code",
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "code" | "c" => Ok(Modality::Code),
            "text" | "t" => Ok(Modality::Text),
            "image" | "i" => Ok(Modality::Image),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// A unit-norm vector tagged with the modality that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub modality: Modality,
    pub vector: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("relation id {0} out of range")]
    RelationOutOfRange(usize),
    #[error("image feature vector has {found} values, expected {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("checkpoint metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// All trainable state: three encoders, the temperature and the auxiliary
/// classifier.
#[derive(Debug, Clone)]
pub struct TriModalModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub graph: GraphEncoder,
    pub text: TextEncoder,
    pub image: Linear,
    /// `ln(logit_scale)`.
    pub log_scale: ParamId,
    pub aux: AuxClassifier,
}

impl TriModalModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let featurizer = NodeFeaturizer::new(&mut store, "graph.featurizer", c.d_g, &mut rng);
        let layers = (0..c.rgcn_layers)
            .map(|l| RgcnLayer::new(&mut store, &format!("graph.rgcn.{l}"), "graph.rgcn", c.d_g, c.graph_norm, &mut rng))
            .collect();
        let pool = AttentionPool::new(&mut store, "graph.pool", "graph.pool", c.d_g, &mut rng);
        let head = ProjectionHead::new(&mut store, "graph.head", c.d_g, c.proj_hidden, c.embed_dim, c.dropout, &mut rng);
        let graph = GraphEncoder { featurizer, layers, pool, head };

        let embedding = store.add_normal("text.embed.table", TEXT_FROZEN_GROUP, (c.text_vocab, c.text_dim), 1.0, &mut rng);
        let text_head = ProjectionHead::new(&mut store, "text.head", c.text_dim, c.proj_hidden, c.embed_dim, c.dropout, &mut rng);
        let text = TextEncoder { embedding, vocab: c.text_vocab, head: text_head };

        let image = Linear::new(&mut store, "image.proj", "image.proj", c.image_dim, c.embed_dim, &mut rng);
        // a non-zero bias keeps the all-zero feature vector well defined
        let bias = Array2::from_shape_simple_fn((1, c.embed_dim), || 0.02 * rng.sample::<f64, _>(rand_distr::StandardNormal));
        store.get_mut(image.bias).value.assign(&bias.mapv(|x| x as f32 as f64));

        let log_scale =
            store.add("objective.logit_scale", "objective.logit_scale", Array2::from_elem((1, 1), c.logit_scale_init.ln()), false);
        let aux = AuxClassifier::new(&mut store, "objective.aux", c.embed_dim, c.aux_hidden, c.num_classes, &mut rng);

        store.set_trainable(&[TEXT_FROZEN_GROUP], false).expect("group exists");
        Self { config, store, graph, text, image, log_scale, aux }
    }

    /// Freezes or unfreezes parameter groups. The hashed text table stays
    /// frozen regardless.
    pub fn set_trainable<S: AsRef<str>>(&mut self, groups: &[S], flag: bool) -> Result<(), EngineError> {
        self.store.set_trainable(groups, flag)?;
        self.store.set_trainable(&[TEXT_FROZEN_GROUP], false)
    }

    pub fn logit_scale_value(&self) -> f64 {
        self.store.get(self.log_scale).value[[0, 0]].exp()
    }

    /// Keeps `logit_scale` in `(0, max]` after an optimizer step.
    pub fn clamp_logit_scale(&mut self) {
        let max = self.config.logit_scale_max.ln();
        let v = &mut self.store.get_mut(self.log_scale).value;
        if v[[0, 0]] > max {
            v[[0, 0]] = max as f32 as f64;
        }
    }

    pub fn logit_scale<'p>(&'p self, tape: &mut Tape<'p>) -> Var {
        let l = tape.param(&self.store, self.log_scale);
        tape.exp(l)
    }

    pub fn encode_graphs<'p, R: Rng>(
        &'p self,
        tape: &mut Tape<'p>,
        batch: &GraphBatch,
        rng: Option<&mut R>,
    ) -> Result<Var, EncoderError> {
        if batch.num_nodes == 0 || batch.node_graph.windows(2).any(|w| w[1] > w[0] + 1) {
            return Err(EncoderError::EmptyGraph);
        }
        if batch.node_graph.last().map_or(0, |g| g + 1) != batch.num_graphs {
            return Err(EncoderError::EmptyGraph);
        }
        if batch.relations.len() > Relation::COUNT {
            return Err(EncoderError::RelationOutOfRange(batch.relations.len() - 1));
        }
        Ok(self.graph.forward(tape, &self.store, batch, rng)?)
    }

    pub fn encode_texts<'p, R: Rng>(
        &'p self,
        tape: &mut Tape<'p>,
        captions: &[&str],
        rng: Option<&mut R>,
    ) -> Result<Var, EncoderError> {
        let (ids, owner) = self
            .text
            .token_batch(captions)
            .map_err(|i| EncoderError::EmptyInput(format!("caption {i} has no tokens")))?;
        Ok(self.text.forward(tape, &self.store, ids, owner, captions.len(), rng)?)
    }

    pub fn encode_images<'p>(&'p self, tape: &mut Tape<'p>, features: Array2<f64>) -> Result<Var, EncoderError> {
        if features.ncols() != self.config.image_dim {
            return Err(EncoderError::FeatureDim { expected: self.config.image_dim, found: features.ncols() });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(EncoderError::NonFiniteInput);
        }
        let x = tape.constant(features);
        let y = self.image.forward(tape, &self.store, x)?;
        Ok(tape.l2_normalize_rows(y))
    }

    /// Inference embeddings (dropout off) for many graphs, one row each.
    pub fn embed_graphs(&self, graphs: &[&CircuitGraph]) -> Result<Array2<f64>, EncoderError> {
        let mut out = Array2::zeros((graphs.len(), self.config.embed_dim));
        for (c, chunk) in graphs.chunks(INFER_CHUNK).enumerate() {
            if chunk.iter().any(|g| g.nodes.is_empty()) {
                return Err(EncoderError::EmptyGraph);
            }
            let batch = GraphBatch::new(chunk);
            let mut tape = Tape::new();
            let v = self.encode_graphs::<ChaCha8Rng>(&mut tape, &batch, None)?;
            let start = c * INFER_CHUNK;
            out.slice_mut(s![start..start + chunk.len(), ..]).assign(&tape.value(v));
        }
        Ok(out)
    }

    pub fn embed_texts(&self, captions: &[&str]) -> Result<Array2<f64>, EncoderError> {
        let mut out = Array2::zeros((captions.len(), self.config.embed_dim));
        for (c, chunk) in captions.chunks(INFER_CHUNK).enumerate() {
            let mut tape = Tape::new();
            let v = self.encode_texts::<ChaCha8Rng>(&mut tape, chunk, None)?;
            let start = c * INFER_CHUNK;
            out.slice_mut(s![start..start + chunk.len(), ..]).assign(&tape.value(v));
        }
        Ok(out)
    }

    pub fn embed_images(&self, features: &Array2<f64>) -> Result<Array2<f64>, EncoderError> {
        let mut out = Array2::zeros((features.nrows(), self.config.embed_dim));
        let mut start = 0;
        while start < features.nrows() {
            let end = (start + INFER_CHUNK).min(features.nrows());
            let mut tape = Tape::new();
            let v = self.encode_images(&mut tape, features.slice(s![start..end, ..]).to_owned())?;
            out.slice_mut(s![start..end, ..]).assign(&tape.value(v));
            start = end;
        }
        Ok(out)
    }

    pub fn encode_circuit(&self, graph: &CircuitGraph) -> Result<Embedding, EncoderError> {
        let m = self.embed_graphs(&[graph])?;
        Ok(Embedding { modality: Modality::Code, vector: m.row(0).to_vec() })
    }

    pub fn encode_text(&self, caption: &str) -> Result<Embedding, EncoderError> {
        if caption.trim().is_empty() {
            return Err(EncoderError::EmptyInput("caption is empty".into()));
        }
        let m = self.embed_texts(&[caption])?;
        Ok(Embedding { modality: Modality::Text, vector: m.row(0).to_vec() })
    }

    pub fn encode_image_features(&self, features: &[f64]) -> Result<Embedding, EncoderError> {
        if features.is_empty() {
            return Err(EncoderError::EmptyInput("image feature vector is empty".into()));
        }
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("one row");
        let m = self.embed_images(&x)?;
        Ok(Embedding { modality: Modality::Image, vector: m.row(0).to_vec() })
    }

    pub fn save<W: Write>(&self, extra: serde_json::Value, w: W) -> Result<(), EncoderError> {
        let meta = serde_json::json!({ "model": self.config, "extra": extra });
        Ok(write_checkpoint(&self.store, &meta, w)?)
    }

    /// Rebuilds a model from a checkpoint; returns it with the `extra`
    /// metadata that was saved alongside.
    pub fn load<R: Read>(r: R) -> Result<(Self, serde_json::Value), EncoderError> {
        let ck = read_checkpoint(r)?;
        let config: ModelConfig = serde_json::from_value(ck.meta.get("model").cloned().unwrap_or_default())
            .map_err(|e| EncoderError::Meta(e.to_string()))?;
        let mut model = Self::new(config, 0);
        model.store.load_tensors(&ck.tensors)?;
        let extra = ck.meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((model, extra))
    }
}
