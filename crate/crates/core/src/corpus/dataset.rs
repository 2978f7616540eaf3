use ndarray::Array2;

use super::manifest::{Manifest, ManifestError, Split};
use super::synth::SynthSample;
use crate::graph::{build_graph, CircuitGraph, GraphError};
use crate::spice::{parse_netlist, ParseError};

/// A triplet loaded into memory, netlist already turned into a graph.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub graph: CircuitGraph,
    pub caption: String,
    pub features: Vec<f64>,
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub feature_dim: usize,
    pub samples: Vec<Sample>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{id}: {source}")]
    Parse { id: String, source: ParseError },
    #[error("{id}: {source}")]
    Graph { id: String, source: GraphError },
}

fn to_graph(id: &str, text: &str) -> Result<CircuitGraph, DatasetError> {
    let ir = parse_netlist(text).map_err(|source| DatasetError::Parse { id: id.into(), source })?;
    build_graph(&ir).map_err(|source| DatasetError::Graph { id: id.into(), source })
}

impl Dataset {
    pub fn from_manifest(m: &Manifest) -> Result<Self, DatasetError> {
        let mut samples = Vec::with_capacity(m.records.len());
        for r in &m.records {
            samples.push(Sample {
                id: r.id.clone(),
                graph: to_graph(&r.id, &m.read_netlist(r)?)?,
                caption: r.caption.clone(),
                features: m.read_features(r)?,
                label: r.label,
                split: r.split,
            });
        }
        Ok(Self { feature_dim: m.feature_dim, samples })
    }

    pub fn from_synth(samples: &[SynthSample], feature_dim: usize) -> Result<Self, DatasetError> {
        let samples = samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id.clone(),
                    graph: to_graph(&s.id, &s.netlist)?,
                    caption: s.caption.clone(),
                    features: s.features.clone(),
                    label: Some(s.label),
                    split: s.split,
                })
            })
            .collect::<Result<_, DatasetError>>()?;
        Ok(Self { feature_dim, samples })
    }

    /// Indices of the samples in `split`, in dataset order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn subset(&self, split: Split) -> Dataset {
        Dataset {
            feature_dim: self.feature_dim,
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
        }
    }

    pub fn feature_matrix(&self, idx: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((idx.len(), self.feature_dim), |(r, c)| self.samples[idx[r]].features[c])
    }
}
