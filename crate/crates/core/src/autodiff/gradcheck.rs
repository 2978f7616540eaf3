//! Central finite-difference oracle for tape gradients.
//!
//! Kept outside `#[cfg(test)]` so integration and acceptance suites can use
//! it; it shares nothing with the backward pass beyond the forward ops.

use ndarray::Array2;

use super::tape::{Tape, Var};
use super::EngineError;

/// Worst relative error between analytic and finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares the tape gradient of `f` at `inputs` against central differences
/// with step `h`. `f` builds a scalar loss from the input vars.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// near-zero components from dominating.
pub fn check_gradients<F>(inputs: &[Array2<f64>], h: f64, floor: f64, f: F) -> Result<GradCheck, EngineError>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var, EngineError>,
{
    let eval = |vals: &[Array2<f64>]| -> Result<f64, EngineError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Array2::zeros(inputs[k].raw_dim()));
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let orig = work[k][[r, c]];
            work[k][[r, c]] = orig + h;
            let plus = eval(&work)?;
            work[k][[r, c]] = orig - h;
            let minus = eval(&work)?;
            work[k][[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[[r, c]];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheck { max_rel_error: worst, checked })
}
