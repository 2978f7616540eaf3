use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CurriculumError;

/// Linear hard-negative ramp over Phase-3 epochs, capped at `alpha_max`.
/// `m` is 1-based within Phase 3 and `total` is the Phase-3 epoch count.
pub fn hard_negative_ratio(m: usize, total: usize, alpha0: f64, alpha_max: f64) -> Result<f64, CurriculumError> {
    if total < 2 || m < 1 || m > total {
        return Err(CurriculumError::BadEpochIndex { epoch: m, total });
    }
    let t = (m - 1) as f64 / (total - 1) as f64;
    Ok(alpha_max.min(alpha0 + t * (alpha_max - alpha0)))
}

/// Number of hard negatives for ratio `alpha`, rounding halves up.
pub fn hard_count(alpha: f64, batch: usize) -> usize {
    ((alpha * batch as f64 + 0.5).floor() as usize).min(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDraw {
    /// Positions into the sampling pool, shuffled.
    pub ids: Vec<usize>,
    /// Cluster the hard negatives came from, if any were requested.
    pub anchor: Option<usize>,
    /// How many ids were drawn from the anchor cluster.
    pub hard: usize,
}

/// Draws `batch` distinct positions from a pool of `clusters.len()` items.
/// One anchor cluster is picked uniformly among the non-empty clusters;
/// `round(alpha · batch)` members of it are drawn (fewer if it is smaller)
/// and the rest of the batch comes uniformly from outside the cluster.
pub fn sample_batch<R: Rng>(
    clusters: &[usize],
    batch: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<BatchDraw, CurriculumError> {
    let pool = clusters.len();
    if batch == 0 || pool < batch {
        return Err(CurriculumError::DatasetTooSmall { batch, available: pool });
    }
    let n_hard = hard_count(alpha, batch);
    if n_hard == 0 {
        let ids = index::sample(rng, pool, batch).into_vec();
        return Ok(BatchDraw { ids, anchor: None, hard: 0 });
    }
    let mut present: Vec<usize> = clusters.to_vec();
    present.sort_unstable();
    present.dedup();
    let anchor = present[rng.random_range(0..present.len())];
    let (mut members, mut rest): (Vec<usize>, Vec<usize>) = (0..pool).partition(|&i| clusters[i] == anchor);

    let hard = n_hard.min(members.len());
    let (picked, unpicked) = members.partial_shuffle(rng, hard);
    let mut ids = picked.to_vec();
    let mut leftover = unpicked.to_vec();

    let need = batch - hard;
    let from_rest = need.min(rest.len());
    ids.extend_from_slice(rest.partial_shuffle(rng, from_rest).0);
    // only when the pool outside the anchor is too small
    ids.extend_from_slice(leftover.partial_shuffle(rng, need - from_rest).0);
    ids.shuffle(rng);
    Ok(BatchDraw { ids, anchor: Some(anchor), hard })
}
