//! Layers and losses composed from tape primitives.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::EngineError;

const NORM_EPS: f64 = 1e-5;

/// Affine map `x · W + b` with `W: in × out`, `b: 1 × out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, group: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (1.0 / inputs as f64).sqrt();
        let weight = store.add_normal(format!("{name}.weight"), group, (inputs, outputs), std, rng);
        let bias = store.add(format!("{name}.bias"), group, Array2::zeros((1, outputs)), false);
        Self { weight, bias }
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var, EngineError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

/// Row-wise layer normalization with learnable scale and shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), group, Array2::ones((1, dim)), false);
        let beta = store.add(format!("{name}.beta"), group, Array2::zeros((1, dim)), false);
        Self { gamma, beta }
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var, EngineError> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        layer_norm(tape, x, gamma, beta)
    }
}

pub fn layer_norm(tape: &mut Tape<'_>, x: Var, gamma: Var, beta: Var) -> Result<Var, EngineError> {
    let mean = tape.mean_cols(x);
    let centered = tape.sub(x, mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean_cols(sq);
    let eps = tape.scalar_constant(NORM_EPS);
    let var = tape.add(var, eps)?;
    let sd = tape.sqrt(var);
    let normed = tape.div(centered, sd)?;
    let scaled = tape.mul(normed, gamma)?;
    tape.add(scaled, beta)
}

/// Per-graph normalization with learnable scale `γ`, shift `β` and
/// mean-scale `α`: `γ · (h − α·μ_G) / σ_G + β`, where `μ_G` and `σ_G` are
/// taken over the nodes of each graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub alpha: ParamId,
}

impl GraphNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), group, Array2::ones((1, dim)), false);
        let beta = store.add(format!("{name}.beta"), group, Array2::zeros((1, dim)), false);
        let alpha = store.add(format!("{name}.alpha"), group, Array2::ones((1, dim)), false);
        Self { gamma, beta, alpha }
    }

    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        h: Var,
        graph_of_node: &Arc<[usize]>,
        n_graphs: usize,
    ) -> Result<Var, EngineError> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let alpha = tape.param(store, self.alpha);
        graph_norm(tape, h, graph_of_node, n_graphs, gamma, beta, alpha)
    }
}

pub fn graph_norm(
    tape: &mut Tape<'_>,
    h: Var,
    graph_of_node: &Arc<[usize]>,
    n_graphs: usize,
    gamma: Var,
    beta: Var,
    alpha: Var,
) -> Result<Var, EngineError> {
    let mu = tape.segment_mean(h, graph_of_node.clone(), n_graphs)?;
    let mu_nodes = tape.gather_rows(mu, graph_of_node.clone())?;
    let shifted = tape.mul(mu_nodes, alpha)?;
    let centered = tape.sub(h, shifted)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.segment_mean(sq, graph_of_node.clone(), n_graphs)?;
    let eps = tape.scalar_constant(NORM_EPS);
    let var = tape.add(var, eps)?;
    let sd = tape.sqrt(var);
    let sd_nodes = tape.gather_rows(sd, graph_of_node.clone())?;
    let normed = tape.div(centered, sd_nodes)?;
    let scaled = tape.mul(normed, gamma)?;
    tape.add(scaled, beta)
}

/// Pairwise cosine similarity between the rows of `a` and the rows of `b`.
pub fn cosine_similarity(tape: &mut Tape<'_>, a: Var, b: Var) -> Result<Var, EngineError> {
    let an = tape.l2_normalize_rows(a);
    let bn = tape.l2_normalize_rows(b);
    let bt = tape.transpose(bn);
    tape.matmul(an, bt)
}

/// Mean over rows of `−Σ_j q_ij · log softmax(logits)_ij`, where `targets`
/// holds one probability row per logit row.
pub fn soft_cross_entropy(tape: &mut Tape<'_>, logits: Var, targets: Array2<f64>) -> Result<Var, EngineError> {
    let rows = tape.shape(logits).0;
    let logp = tape.log_softmax_rows(logits);
    let q = tape.constant(targets);
    let prod = tape.mul(logp, q)?;
    let total = tape.sum(prod);
    Ok(tape.scale(total, -1.0 / rows.max(1) as f64))
}

/// Cross-entropy against integer labels with smoothing `eps`: the target row
/// is `(1 − eps)·onehot(label) + eps / classes`.
pub fn cross_entropy(tape: &mut Tape<'_>, logits: Var, labels: &[usize], eps: f64) -> Result<Var, EngineError> {
    let (rows, classes) = tape.shape(logits);
    if labels.len() != rows {
        return Err(EngineError::ShapeMismatch { op: "cross_entropy", lhs: vec![rows, classes], rhs: vec![labels.len()] });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(EngineError::IndexOutOfRange { op: "cross_entropy", index: bad, len: classes });
    }
    let mut q = Array2::from_elem((rows, classes), eps / classes as f64);
    for (i, &y) in labels.iter().enumerate() {
        q[[i, y]] += 1.0 - eps;
    }
    soft_cross_entropy(tape, logits, q)
}

/// Inverted dropout. With `rng = None` (evaluation) this is the identity.
pub fn dropout<R: Rng>(tape: &mut Tape<'_>, x: Var, p: f64, rng: Option<&mut R>) -> Result<Var, EngineError> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 - p;
            let mask = Array2::from_shape_simple_fn(tape.shape(x), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
            let m = tape.constant(mask);
            tape.mul(x, m)
        }
        _ => Ok(x),
    }
}
