//! Exact cosine-similarity search and the six-direction Recall@K harness.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoders::Modality;
use crate::objective::Direction;

const MAGIC: &[u8; 4] = b"ARIX";
const VERSION: u32 = 1;
/// Rows must have unit norm within this tolerance.
pub const NORM_TOLERANCE: f64 = 1e-5;
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("row `{id}` has norm {norm}, expected 1")]
    NotUnitNorm { id: String, norm: f64 },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    BadK,
    #[error("query has zero or non-finite norm")]
    BadQuery,
    #[error("no ground-truth target for query `{0}`")]
    MissingPair(String),
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Immutable flat index of unit-norm vectors stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    modality: Modality,
    dim: usize,
    ids: Vec<String>,
    /// Row-major `len × dim`.
    data: Vec<f32>,
    norms: Vec<f64>,
}

fn dot(a: &[f32], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(q) {
        s += f64::from(*x) * y;
    }
    s
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn modality_code(m: Modality) -> u8 {
    match m {
        Modality::Code => 0,
        Modality::Text => 1,
        Modality::Image => 2,
    }
}

impl EmbeddingIndex {
    /// Builds an index from `(id, row)` pairs; rows are stored as `f32`.
    pub fn build(modality: Modality, dim: usize, ids: Vec<String>, vectors: &Array2<f64>) -> Result<Self, IndexError> {
        if vectors.nrows() != ids.len() {
            return Err(IndexError::Format(format!("{} ids for {} rows", ids.len(), vectors.nrows())));
        }
        if vectors.nrows() > 0 && vectors.ncols() != dim {
            return Err(IndexError::DimMismatch { expected: dim, found: vectors.ncols() });
        }
        let data: Vec<f32> = vectors.iter().map(|&x| x as f32).collect();
        Self::from_parts(modality, dim, ids, data)
    }

    fn from_parts(modality: Modality, dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self, IndexError> {
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(IndexError::DuplicateId(id.clone()));
            }
        }
        let norms: Vec<f64> = data.chunks(dim.max(1)).map(|r| norm(r.iter().map(|&x| f64::from(x)))).collect();
        for (id, &n) in ids.iter().zip(&norms) {
            if n.is_nan() || (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(IndexError::NotUnitNorm { id: id.clone(), norm: n });
            }
        }
        Ok(Self { modality, dim, ids, data, norms })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Cosine score of `query` against every row, in insertion order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>, IndexError> {
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimMismatch { expected: self.dim, found: query.len() });
        }
        let qn = norm(query.iter().copied());
        if !(qn > 0.0 && qn.is_finite()) {
            return Err(IndexError::BadQuery);
        }
        Ok((0..self.len()).map(|i| dot(self.row(i), query) / (self.norms[i] * qn)).collect())
    }

    /// The `k` best rows by cosine score, descending; equal scores are
    /// ordered by ascending id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit>, IndexError> {
        if k == 0 {
            return Err(IndexError::BadK);
        }
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| self.ids[a].cmp(&self.ids[b])));
        Ok(order.into_iter().take(k).map(|i| Hit { id: self.ids[i].clone(), score: scores[i] }).collect())
    }

    /// 1-based rank `top_k` would give to row `target`.
    fn rank_of(&self, scores: &[f64], target: usize) -> usize {
        let (s, id) = (scores[target], &self.ids[target]);
        1 + (0..self.len())
            .filter(|&i| i != target && (scores[i] > s || (scores[i] == s && self.ids[i] < *id)))
            .count()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), IndexError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[modality_code(self.modality)])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, IndexError> {
        fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], IndexError> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(|e| IndexError::Format(format!("truncated: {e}")))?;
            Ok(b)
        }
        if &take::<4>(&mut r)? != MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let modality = match take::<1>(&mut r)?[0] {
            0 => Modality::Code,
            1 => Modality::Text,
            2 => Modality::Image,
            m => return Err(IndexError::Format(format!("unknown modality tag {m}"))),
        };
        let dim = u32::from_le_bytes(take(&mut r)?) as usize;
        let count = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u32::from_le_bytes(take(&mut r)?) as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(|e| IndexError::Format(format!("truncated id: {e}")))?;
            ids.push(String::from_utf8(buf).map_err(|e| IndexError::Format(e.to_string()))?);
        }
        let mut bytes = vec![0u8; count * dim * 4];
        r.read_exact(&mut bytes).map_err(|e| IndexError::Format(format!("truncated matrix: {e}")))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::from_parts(modality, dim, ids, data)
    }
}

/// Recall@K for each `k` in `ks`: the fraction of queries whose paired
/// target ranks within the top `k`.
pub fn recall_at_ks(
    index: &EmbeddingIndex,
    query_ids: &[String],
    queries: &Array2<f64>,
    pairing: &BTreeMap<String, String>,
    ks: &[usize],
) -> Result<Vec<f64>, IndexError> {
    if ks.contains(&0) {
        return Err(IndexError::BadK);
    }
    let mut hits = vec![0usize; ks.len()];
    for (qid, q) in query_ids.iter().zip(queries.rows()) {
        let target = pairing
            .get(qid)
            .and_then(|t| index.position(t))
            .ok_or_else(|| IndexError::MissingPair(qid.clone()))?;
        let scores = index.scores(q.as_slice().expect("standard layout"))?;
        let rank = index.rank_of(&scores, target);
        for (h, &k) in hits.iter_mut().zip(ks) {
            *h += usize::from(rank <= k);
        }
    }
    let n = query_ids.len().max(1) as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

pub fn recall_at_k(
    index: &EmbeddingIndex,
    query_ids: &[String],
    queries: &Array2<f64>,
    pairing: &BTreeMap<String, String>,
    k: usize,
) -> Result<f64, IndexError> {
    Ok(recall_at_ks(index, query_ids, queries, pairing, &[k])?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecall {
    pub direction: Direction,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// In column order I→C, T→I, T→C, C→I, I→T, C→T.
    pub directions: Vec<DirectionRecall>,
    pub avg_r1: f64,
    pub num_queries: usize,
}

impl RetrievalReport {
    pub fn get(&self, d: Direction) -> Option<&DirectionRecall> {
        self.directions.iter().find(|r| r.direction == d)
    }

    fn avg(&self, f: impl Fn(&DirectionRecall) -> f64) -> f64 {
        self.directions.iter().map(f).sum::<f64>() / self.directions.len().max(1) as f64
    }

    /// Fixed-width table, recalls in percent.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<6}", "");
        for d in &self.directions {
            let _ = write!(out, "{:>8}", d.direction.label());
        }
        let _ = writeln!(out, "{:>8}", "Avg");
        type Column = fn(&DirectionRecall) -> f64;
        let rows: [(&str, Column); 3] = [("R@1", |r| r.r1), ("R@5", |r| r.r5), ("R@10", |r| r.r10)];
        for (name, f) in rows {
            let _ = write!(out, "{name:<6}");
            for d in &self.directions {
                let _ = write!(out, "{:>8.1}", 100.0 * f(d));
            }
            let _ = writeln!(out, "{:>8.1}", 100.0 * self.avg(f));
        }
        out
    }
}

/// One index per modality over the same ids.
#[derive(Debug, Clone)]
pub struct ModalityIndices {
    pub code: EmbeddingIndex,
    pub text: EmbeddingIndex,
    pub image: EmbeddingIndex,
}

impl ModalityIndices {
    pub fn get(&self, m: Modality) -> &EmbeddingIndex {
        match m {
            Modality::Code => &self.code,
            Modality::Text => &self.text,
            Modality::Image => &self.image,
        }
    }
}

fn matrix(index: &EmbeddingIndex) -> Array2<f64> {
    Array2::from_shape_fn((index.len(), index.dim()), |(r, c)| f64::from(index.row(r)[c]))
}

/// Runs all six query→target evaluations. Row `i` of every index is the
/// same sample, so each query's positive is the target with the same id.
pub fn evaluate_six_directions(indices: &ModalityIndices) -> Result<RetrievalReport, IndexError> {
    let ids = indices.code.ids();
    for m in [Modality::Text, Modality::Image] {
        if indices.get(m).ids() != ids {
            return Err(IndexError::Format(format!("{} index ids differ from code index", m.name())));
        }
    }
    if ids.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    let pairing: BTreeMap<String, String> = ids.iter().map(|i| (i.clone(), i.clone())).collect();
    let mut directions = Vec::with_capacity(6);
    for d in Direction::ALL {
        let q = indices.get(d.from());
        let r = recall_at_ks(indices.get(d.to()), q.ids(), &matrix(q), &pairing, &RECALL_KS)?;
        directions.push(DirectionRecall { direction: d, r1: r[0], r5: r[1], r10: r[2] });
    }
    let avg_r1 = directions.iter().map(|r| r.r1).sum::<f64>() / 6.0;
    Ok(RetrievalReport { directions, avg_r1, num_queries: ids.len() })
}

#[cfg(test)]
mod tests;
