use std::sync::Arc;

use rand::Rng;

use super::head::ProjectionHead;
use crate::autodiff::{EngineError, ParamId, ParamStore, Tape, Var};

/// Lower-cases, splits on whitespace and trims punctuation from token edges.
/// Inner punctuation is kept so values like `2.2u` or `10k/20k` survive.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// 64-bit FNV-1a.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn token_id(token: &str, vocab: usize) -> usize {
    (fnv1a(token) % vocab as u64) as usize
}

/// Hashed bag-of-tokens encoder: embedding lookup, mean pool, projection.
#[derive(Debug, Clone, Copy)]
pub struct TextEncoder {
    pub embedding: ParamId,
    pub vocab: usize,
    pub head: ProjectionHead,
}

impl TextEncoder {
    /// Token ids and owning caption of every token in the batch. Returns
    /// the index of the first caption without tokens on failure.
    pub fn token_batch(&self, captions: &[&str]) -> Result<(Vec<usize>, Vec<usize>), usize> {
        let mut ids = Vec::new();
        let mut owner = Vec::new();
        for (i, c) in captions.iter().enumerate() {
            let toks = tokenize(c);
            if toks.is_empty() {
                return Err(i);
            }
            for t in toks {
                ids.push(token_id(&t, self.vocab));
                owner.push(i);
            }
        }
        Ok((ids, owner))
    }

    pub fn forward<'p, R: Rng>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        ids: Vec<usize>,
        owner: Vec<usize>,
        n: usize,
        rng: Option<&mut R>,
    ) -> Result<Var, EngineError> {
        let table = tape.param(store, self.embedding);
        let emb = tape.gather_rows(table, ids)?;
        let owner: Arc<[usize]> = owner.into();
        let pooled = tape.segment_mean(emb, owner, n)?;
        self.head.forward(tape, store, pooled, rng)
    }
}
