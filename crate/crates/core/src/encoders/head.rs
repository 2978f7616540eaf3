use rand::Rng;

use crate::autodiff::nn::{dropout, LayerNorm, Linear};
use crate::autodiff::{EngineError, ParamStore, Tape, Var};

/// `Linear → LayerNorm → GELU → Dropout → Linear → l2-normalize`.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionHead {
    pub fc1: Linear,
    pub norm: LayerNorm,
    pub fc2: Linear,
    pub dropout: f64,
}

impl ProjectionHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        group: &str,
        input: usize,
        hidden: usize,
        output: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let fc1 = Linear::new(store, &format!("{group}.fc1"), group, input, hidden, rng);
        let norm = LayerNorm::new(store, &format!("{group}.norm"), group, hidden);
        let fc2 = Linear::new(store, &format!("{group}.fc2"), group, hidden, output, rng);
        Self { fc1, norm, fc2, dropout }
    }

    pub fn forward<'p, R: Rng>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: Var,
        rng: Option<&mut R>,
    ) -> Result<Var, EngineError> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = self.norm.forward(tape, store, h)?;
        let h = tape.gelu(h);
        let h = dropout(tape, h, self.dropout, rng)?;
        let h = self.fc2.forward(tape, store, h)?;
        Ok(tape.l2_normalize_rows(h))
    }
}

/// Two-layer topology classifier `768 → hidden → classes`.
#[derive(Debug, Clone, Copy)]
pub struct AuxClassifier {
    pub fc1: Linear,
    pub fc2: Linear,
    pub classes: usize,
}

impl AuxClassifier {
    pub fn new<R: Rng>(store: &mut ParamStore, group: &str, input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let fc1 = Linear::new(store, &format!("{group}.fc1"), group, input, hidden, rng);
        let fc2 = Linear::new(store, &format!("{group}.fc2"), group, hidden, classes, rng);
        Self { fc1, fc2, classes }
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var, EngineError> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, store, h)
    }
}
