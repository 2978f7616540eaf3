use ndarray::Array2;
use rand::Rng;

use super::{continuous_slots, GraphBatch, GraphError, NUM_SLOTS};
use crate::autodiff::nn::Linear;
use crate::autodiff::{EngineError, ParamId, ParamStore, Tape, Var};
use crate::spice::{Device, DeviceKind};

/// Width of the device-kind embedding.
pub const D_TYPE: usize = 64;
/// Width of the projected continuous slots.
pub const D_CONT: usize = 64;

/// `sign(x) · ln(1 + |x|)`; equal to `log1p` for the non-negative slots.
pub fn signed_log1p(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Initial node state `W_fuse · [Emb(kind) ; cont_linear(log1p(x))]`.
#[derive(Debug, Clone, Copy)]
pub struct NodeFeaturizer {
    pub type_embedding: ParamId,
    pub cont_linear: Linear,
    pub fuse: Linear,
    pub out_dim: usize,
}

impl NodeFeaturizer {
    pub fn new<R: Rng>(store: &mut ParamStore, group: &str, out_dim: usize, rng: &mut R) -> Self {
        let type_embedding =
            store.add_normal(format!("{group}.type_embedding"), group, (DeviceKind::ALL.len(), D_TYPE), 1.0, rng);
        let cont_linear = Linear::new(store, &format!("{group}.cont_linear"), group, NUM_SLOTS, D_CONT, rng);
        let fuse = Linear::new(store, &format!("{group}.fuse"), group, D_TYPE + D_CONT, out_dim, rng);
        Self { type_embedding, cont_linear, fuse, out_dim }
    }

    /// Log-scaled slot matrix for a batch.
    pub fn scaled_slots(cont: &Array2<f64>) -> Array2<f64> {
        cont.mapv(signed_log1p)
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, batch: &GraphBatch) -> Result<Var, EngineError> {
        let table = tape.param(store, self.type_embedding);
        let emb = tape.gather_rows(table, batch.kinds.clone())?;
        let slots = tape.constant(Self::scaled_slots(&batch.cont));
        let cont = self.cont_linear.forward(tape, store, slots)?;
        let cat = tape.concat_cols(&[emb, cont])?;
        self.fuse.forward(tape, store, cat)
    }

    /// Feature vector of a single device.
    pub fn featurize(&self, store: &ParamStore, device: &Device) -> Result<Vec<f64>, GraphError> {
        let slots = continuous_slots(device)?;
        let mut tape = Tape::new();
        let table = tape.param(store, self.type_embedding);
        let emb = tape.gather_rows(table, vec![device.kind.index()]).expect("kind index in table");
        let x = Array2::from_shape_fn((1, NUM_SLOTS), |(_, j)| signed_log1p(slots[j]));
        let x = tape.constant(x);
        let cont = self.cont_linear.forward(&mut tape, store, x).expect("slot width matches");
        let cat = tape.concat_cols(&[emb, cont]).expect("single row");
        let out = self.fuse.forward(&mut tape, store, cat).expect("fuse width matches");
        Ok(tape.value(out).iter().copied().collect())
    }
}
