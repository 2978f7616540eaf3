use std::collections::BTreeMap;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

fn unit_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("id{i:04}")).collect()
}

fn index(n: usize, d: usize, seed: u64) -> EmbeddingIndex {
    EmbeddingIndex::build(Modality::Code, d, ids(n), &unit_rows(n, d, seed)).unwrap()
}

/// Independent ranking: score every row, sort descending, ties by id.
fn oracle_top_k(m: &Array2<f64>, ids: &[String], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(String, f64)> = m
        .rows()
        .into_iter()
        .zip(ids)
        .map(|(r, id)| {
            let r32: Vec<f64> = r.iter().map(|&x| f64::from(x as f32)).collect();
            let rn = r32.iter().map(|x| x * x).sum::<f64>().sqrt();
            let s: f64 = r32.iter().zip(q).map(|(a, b)| a * b).sum();
            (id.clone(), s / (rn * qn))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

#[test]
fn empty_index_rejects_queries() {
    let idx = EmbeddingIndex::build(Modality::Text, 4, vec![], &Array2::zeros((0, 4))).unwrap();
    assert!(idx.is_empty());
    assert!(matches!(idx.top_k(&[1.0, 0.0, 0.0, 0.0], 1), Err(IndexError::EmptyIndex)));
}

#[test]
fn build_preserves_order_and_rejects_bad_input() {
    let idx = index(7, 8, 1);
    assert_eq!(idx.len(), 7);
    assert_eq!(idx.ids(), ids(7).as_slice());

    let m = unit_rows(2, 8, 2);
    let dup = vec!["a".to_string(), "a".to_string()];
    assert!(matches!(EmbeddingIndex::build(Modality::Code, 8, dup, &m), Err(IndexError::DuplicateId(_))));
    assert!(matches!(EmbeddingIndex::build(Modality::Code, 4, ids(2), &m), Err(IndexError::DimMismatch { .. })));
    let scaled = &m * 2.0;
    assert!(matches!(EmbeddingIndex::build(Modality::Code, 8, ids(2), &scaled), Err(IndexError::NotUnitNorm { .. })));
    let idx = index(3, 8, 3);
    assert!(matches!(idx.top_k(&[0.0; 8], 1), Err(IndexError::BadQuery)));
    assert!(matches!(idx.top_k(&[1.0; 4], 1), Err(IndexError::DimMismatch { .. })));
    assert!(matches!(idx.top_k(&[1.0; 8], 0), Err(IndexError::BadK)));
}

#[test]
fn self_query_ranks_first() {
    let m = unit_rows(20, 16, 4);
    let idx = EmbeddingIndex::build(Modality::Image, 16, ids(20), &m).unwrap();
    for i in 0..20 {
        let hits = idx.top_k(m.row(i).as_slice().unwrap(), 3).unwrap();
        assert_eq!(hits[0].id, format!("id{i:04}"));
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }
}

#[test]
fn orthogonal_query_falls_back_to_id_order() {
    let mut m = Array2::zeros((4, 3));
    for r in 0..4 {
        m[[r, 1]] = 1.0;
    }
    let names: Vec<String> = ["d", "b", "c", "a"].iter().map(|s| s.to_string()).collect();
    let idx = EmbeddingIndex::build(Modality::Code, 3, names, &m).unwrap();
    let hits = idx.top_k(&[1.0, 0.0, 0.0], 10).unwrap();
    let order: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
    assert_eq!(order, ["a", "b", "c", "d"]);
    assert!(hits.iter().all(|h| h.score == 0.0));
}

#[test]
fn matches_brute_force_on_fifty_vectors() {
    let m = unit_rows(50, 32, 5);
    let idx = EmbeddingIndex::build(Modality::Code, 32, ids(50), &m).unwrap();
    let probes = unit_rows(10, 32, 6);
    for q in probes.rows() {
        let got = idx.top_k(q.as_slice().unwrap(), 50).unwrap();
        let want = oracle_top_k(&m, &ids(50), q.as_slice().unwrap(), 50);
        for (g, (id, s)) in got.iter().zip(&want) {
            assert_eq!(&g.id, id);
            assert!((g.score - s).abs() < 1e-12);
        }
    }
}

#[test]
fn persistence_round_trips_bytes_and_queries() {
    let idx = index(40, 24, 7);
    let mut buf = Vec::new();
    idx.write_to(&mut buf).unwrap();
    let back = EmbeddingIndex::read_from(buf.as_slice()).unwrap();
    assert_eq!(back, idx);
    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    assert_eq!(again, buf);
    let probes = unit_rows(100, 24, 8);
    for q in probes.rows() {
        assert_eq!(idx.top_k(q.as_slice().unwrap(), 5).unwrap(), back.top_k(q.as_slice().unwrap(), 5).unwrap());
    }
    assert!(matches!(EmbeddingIndex::read_from(&buf[..10]), Err(IndexError::Format(_))));
    assert!(matches!(EmbeddingIndex::read_from(&b"NOPE\0\0\0\0"[..]), Err(IndexError::Format(_))));
}

fn identity(n: usize) -> BTreeMap<String, String> {
    ids(n).into_iter().map(|i| (i.clone(), i)).collect()
}

#[test]
fn identity_index_has_perfect_recall() {
    let m = unit_rows(30, 16, 9);
    let idx = EmbeddingIndex::build(Modality::Text, 16, ids(30), &m).unwrap();
    assert_eq!(recall_at_k(&idx, &ids(30), &m, &identity(30), 1).unwrap(), 1.0);
}

#[test]
fn paired_item_at_rank_two() {
    // query i is e_i; target i is slightly off e_i, and a decoy sits exactly on e_i
    let n = 4;
    let d = 2 * n;
    let mut targets = Array2::zeros((2 * n, d));
    let mut names = Vec::new();
    for i in 0..n {
        targets[[i, i]] = 0.8;
        targets[[i, n + i]] = 0.6;
        names.push(format!("t{i}"));
    }
    for i in 0..n {
        targets[[n + i, i]] = 1.0;
        names.push(format!("decoy{i}"));
    }
    let idx = EmbeddingIndex::build(Modality::Code, d, names, &targets).unwrap();
    let mut q = Array2::zeros((n, d));
    let qids: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
    let mut pairing = BTreeMap::new();
    for i in 0..n {
        q[[i, i]] = 1.0;
        pairing.insert(qids[i].clone(), format!("t{i}"));
    }
    let r = recall_at_ks(&idx, &qids, &q, &pairing, &[1, 2, 5]).unwrap();
    assert_eq!(r, vec![0.0, 1.0, 1.0]);

    pairing.remove("q0");
    assert!(matches!(recall_at_ks(&idx, &qids, &q, &pairing, &[1]), Err(IndexError::MissingPair(_))));
}

fn indices_from(c: &Array2<f64>, t: &Array2<f64>, i: &Array2<f64>) -> ModalityIndices {
    let n = c.nrows();
    let d = c.ncols();
    ModalityIndices {
        code: EmbeddingIndex::build(Modality::Code, d, ids(n), c).unwrap(),
        text: EmbeddingIndex::build(Modality::Text, d, ids(n), t).unwrap(),
        image: EmbeddingIndex::build(Modality::Image, d, ids(n), i).unwrap(),
    }
}

#[test]
fn identical_modalities_give_perfect_report() {
    let m = unit_rows(25, 12, 10);
    let report = evaluate_six_directions(&indices_from(&m, &m, &m)).unwrap();
    let labels: Vec<String> = report.directions.iter().map(|r| r.direction.label()).collect();
    assert_eq!(labels, ["I→C", "T→I", "T→C", "C→I", "I→T", "C→T"]);
    assert!(report.directions.iter().all(|r| r.r1 == 1.0));
    assert_eq!(report.avg_r1, 1.0);
    let table = report.to_table();
    let header = table.lines().next().unwrap();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(cols, ["I→C", "T→I", "T→C", "C→I", "I→T", "C→T", "Avg"]);
    assert!(table.contains("100.0"));
}

#[test]
fn random_embeddings_sit_at_chance() {
    let n = 1000;
    let d = 32;
    let report = evaluate_six_directions(&indices_from(&unit_rows(n, d, 11), &unit_rows(n, d, 12), &unit_rows(n, d, 13))).unwrap();
    // binomial(1000, 1/1000): P(X > 8) is far below 1e-4
    for r in &report.directions {
        assert!(r.r1 <= 8.0 / n as f64, "{:?}", r);
    }
    let mean: f64 = report.directions.iter().map(|r| r.r1).sum::<f64>() / 6.0;
    assert!((report.avg_r1 - mean).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn top_k_equals_oracle(n in 1usize..=512, d in 2usize..16, k in 1usize..20, seed in 0u64..1000) {
        let m = unit_rows(n, d, seed);
        let idx = EmbeddingIndex::build(Modality::Code, d, ids(n), &m).unwrap();
        let q = unit_rows(1, d, seed + 7919);
        let got = idx.top_k(q.row(0).as_slice().unwrap(), k).unwrap();
        let want = oracle_top_k(&m, &ids(n), q.row(0).as_slice().unwrap(), k);
        prop_assert_eq!(got.len(), want.len());
        for (g, (id, s)) in got.iter().zip(&want) {
            prop_assert_eq!(&g.id, id);
            prop_assert!((g.score - s).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_is_monotone_in_k(n in 2usize..120, seed in 0u64..1000) {
        let d = 8;
        let report = evaluate_six_directions(&indices_from(&unit_rows(n, d, seed), &unit_rows(n, d, seed + 1), &unit_rows(n, d, seed + 2))).unwrap();
        for r in &report.directions {
            prop_assert!(0.0 <= r.r1 && r.r1 <= r.r5 && r.r5 <= r.r10 && r.r10 <= 1.0);
        }
    }
}
