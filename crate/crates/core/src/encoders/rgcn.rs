use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use super::head::ProjectionHead;
use crate::autodiff::nn::GraphNorm;
use crate::autodiff::{EngineError, ParamId, ParamStore, Tape, Var};
use crate::graph::{GraphBatch, NodeFeaturizer, Relation};

/// One port-aware message-passing layer:
/// `h' = GraphNorm(GELU(Σ_r W_r · mean_{u ∈ N_r(v)} h_u)) + h`.
#[derive(Debug, Clone)]
pub struct RgcnLayer {
    pub weights: Vec<ParamId>,
    pub norm: Option<GraphNorm>,
}

impl RgcnLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, group: &str, dim: usize, graph_norm: bool, rng: &mut R) -> Self {
        let std = (1.0 / dim as f64).sqrt();
        let weights = Relation::ALL
            .iter()
            .map(|r| store.add_normal(format!("{name}.w_{}", r.name()), group, (dim, dim), std, rng))
            .collect();
        let norm = graph_norm.then(|| GraphNorm::new(store, &format!("{name}.norm"), group, dim));
        Self { weights, norm }
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, batch: &GraphBatch, h: Var) -> Result<Var, EngineError> {
        let (n, d) = tape.shape(h);
        let mut agg: Option<Var> = None;
        for (r, edges) in batch.relations.iter().enumerate() {
            let Some(edges) = edges else { continue };
            let msgs = tape.gather_rows(h, edges.src.clone())?;
            let mean = tape.segment_mean(msgs, edges.dst_compact.clone(), edges.num_dst())?;
            let w = tape.param(store, self.weights[r]);
            let out = tape.matmul(mean, w)?;
            let scattered = tape.segment_sum(out, edges.dst_nodes.clone(), n)?;
            agg = Some(match agg {
                Some(a) => tape.add(a, scattered)?,
                None => scattered,
            });
        }
        let agg = match agg {
            Some(a) => a,
            None => tape.constant(Array2::zeros((n, d))),
        };
        let act = tape.gelu(agg);
        let act = match &self.norm {
            Some(norm) => norm.forward(tape, store, act, &batch.node_graph, batch.num_graphs)?,
            None => act,
        };
        tape.add(act, h)
    }
}

/// Softmax attention over the nodes of each graph.
#[derive(Debug, Clone, Copy)]
pub struct AttentionPool {
    pub w: ParamId,
}

impl AttentionPool {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, group: &str, dim: usize, rng: &mut R) -> Self {
        let w = store.add_normal(format!("{name}.w"), group, (dim, 1), (1.0 / dim as f64).sqrt(), rng);
        Self { w }
    }

    /// Per-node weights `α` (`n × 1`), summing to one within each graph.
    pub fn weights<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        h: Var,
        node_graph: &Arc<[usize]>,
        n_graphs: usize,
    ) -> Result<Var, EngineError> {
        let w = tape.param(store, self.w);
        let logits = tape.matmul(h, w)?;
        tape.segment_softmax(logits, node_graph.clone(), n_graphs)
    }

    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        h: Var,
        node_graph: &Arc<[usize]>,
        n_graphs: usize,
    ) -> Result<Var, EngineError> {
        let alpha = self.weights(tape, store, h, node_graph, n_graphs)?;
        let weighted = tape.mul(h, alpha)?;
        tape.segment_sum(weighted, node_graph.clone(), n_graphs)
    }
}

/// Featurizer, message passing, attention pool and projection head.
#[derive(Debug, Clone)]
pub struct GraphEncoder {
    pub featurizer: NodeFeaturizer,
    pub layers: Vec<RgcnLayer>,
    pub pool: AttentionPool,
    pub head: ProjectionHead,
}

impl GraphEncoder {
    /// Node states after the last message-passing layer.
    pub fn node_states<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, batch: &GraphBatch) -> Result<Var, EngineError> {
        let mut h = self.featurizer.forward(tape, store, batch)?;
        for layer in &self.layers {
            h = layer.forward(tape, store, batch, h)?;
        }
        Ok(h)
    }

    pub fn forward<'p, R: Rng>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        batch: &GraphBatch,
        rng: Option<&mut R>,
    ) -> Result<Var, EngineError> {
        let h = self.node_states(tape, store, batch)?;
        let g = self.pool.forward(tape, store, h, &batch.node_graph, batch.num_graphs)?;
        self.head.forward(tape, store, g, rng)
    }
}
