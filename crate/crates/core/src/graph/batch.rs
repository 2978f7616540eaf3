use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;

use super::{CircuitGraph, Relation, NUM_SLOTS};

/// Edges of one relation in a batch, grouped for mean aggregation.
#[derive(Debug, Clone)]
pub struct RelationEdges {
    /// Global source node of each edge.
    pub src: Arc<[usize]>,
    /// Compact destination id (index into `dst_nodes`) of each edge.
    pub dst_compact: Arc<[usize]>,
    /// Global node id of each distinct destination, ascending.
    pub dst_nodes: Arc<[usize]>,
}

impl RelationEdges {
    pub fn num_dst(&self) -> usize {
        self.dst_nodes.len()
    }
}

/// Several graphs stacked into one disjoint union.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub num_nodes: usize,
    pub num_graphs: usize,
    pub kinds: Arc<[usize]>,
    /// `num_nodes × NUM_SLOTS`, raw slot values.
    pub cont: Array2<f64>,
    /// Graph index of every node.
    pub node_graph: Arc<[usize]>,
    /// Indexed by relation id; relations with no edges are `None`.
    pub relations: Vec<Option<RelationEdges>>,
}

impl GraphBatch {
    pub fn new(graphs: &[&CircuitGraph]) -> Self {
        let num_nodes: usize = graphs.iter().map(|g| g.nodes.len()).sum();
        let mut kinds = Vec::with_capacity(num_nodes);
        let mut node_graph = Vec::with_capacity(num_nodes);
        let mut cont = Array2::zeros((num_nodes, NUM_SLOTS));
        let mut per_rel: Vec<Vec<(usize, usize)>> = vec![Vec::new(); Relation::COUNT];
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            for (i, n) in g.nodes.iter().enumerate() {
                kinds.push(n.kind_id());
                node_graph.push(gi);
                for (j, &x) in n.cont.iter().enumerate() {
                    cont[[offset + i, j]] = x;
                }
            }
            for e in &g.edges {
                per_rel[e.relation.id()].push((e.dst + offset, e.src + offset));
            }
            offset += g.nodes.len();
        }
        let relations = per_rel
            .into_iter()
            .map(|mut pairs| {
                if pairs.is_empty() {
                    return None;
                }
                pairs.sort_unstable();
                let mut compact: BTreeMap<usize, usize> = BTreeMap::new();
                let mut dst_nodes = Vec::new();
                let mut src = Vec::with_capacity(pairs.len());
                let mut dst_compact = Vec::with_capacity(pairs.len());
                for (d, s) in pairs {
                    let c = *compact.entry(d).or_insert_with(|| {
                        dst_nodes.push(d);
                        dst_nodes.len() - 1
                    });
                    src.push(s);
                    dst_compact.push(c);
                }
                Some(RelationEdges { src: src.into(), dst_compact: dst_compact.into(), dst_nodes: dst_nodes.into() })
            })
            .collect();
        GraphBatch {
            num_nodes,
            num_graphs: graphs.len(),
            kinds: kinds.into(),
            cont,
            node_graph: node_graph.into(),
            relations,
        }
    }
}
