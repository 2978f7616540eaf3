use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CurriculumError;
use crate::encoders::{token_id, tokenize};

pub const CAPTION_DIM: usize = 512;
pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

/// Hashed term-frequency vector over word unigrams and character
/// 3-grams of each word (padded with spaces), l2-normalised.
pub fn caption_vector(caption: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for tok in tokenize(caption) {
        if tok.is_empty() {
            continue;
        }
        v[token_id(&format!("w:{tok}"), dim)] += 1.0;
        let padded: Vec<char> = format!(" {tok} ").chars().collect();
        for w in padded.windows(3) {
            let tri: String = w.iter().collect();
            v[token_id(&format!("c:{tri}"), dim)] += 1.0;
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

pub fn caption_matrix(captions: &[&str], dim: usize) -> Array2<f64> {
    let mut m = Array2::zeros((captions.len(), dim));
    for (mut row, c) in m.rows_mut().into_iter().zip(captions) {
        row.assign(&ArrayView1::from(&caption_vector(c, dim)));
    }
    m
}

/// Result of k-means: `assignments[i]` is the cluster of input row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == cluster).collect()
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.rows().into_iter().map(|r| sq_dist(r, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            // every point coincides with a seed; take an unused index
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, r) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, points.row(next)));
        }
    }
    let mut c = Array2::zeros((k, points.ncols()));
    for (j, &i) in chosen.iter().enumerate() {
        c.row_mut(j).assign(&points.row(i));
    }
    c
}

/// Lloyd's algorithm with k-means++ seeding. Stops after
/// [`MAX_ITERATIONS`] or once no centroid moves by more than
/// [`SHIFT_TOLERANCE`]. Empty clusters keep their previous centroid.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<ClusterAssignment, CurriculumError> {
    let n = points.nrows();
    if k < 1 || n < k {
        return Err(CurriculumError::TooFewSamples { clusters: k, samples: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignments = vec![0; n];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (i, r) in points.rows().into_iter().enumerate() {
            assignments[i] = nearest(r, &centroids).0;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, r) in points.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(assignments[i]);
            s += &r;
            counts[assignments[i]] += 1;
        }
        let mut shift: f64 = 0.0;
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let mean = sums.row(c).mapv(|x| x / count as f64);
            shift = shift.max(sq_dist(mean.view(), centroids.row(c)).sqrt());
            centroids.row_mut(c).assign(&mean);
        }
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, r) in points.rows().into_iter().enumerate() {
        let (c, d) = nearest(r, &centroids);
        assignments[i] = c;
        inertia += d;
    }
    Ok(ClusterAssignment { assignments, centroids, inertia, iterations })
}

/// Clusters captions by their hashed n-gram vectors.
pub fn cluster_captions(captions: &[&str], k: usize, seed: u64) -> Result<ClusterAssignment, CurriculumError> {
    kmeans(&caption_matrix(captions, CAPTION_DIM), k, seed)
}
