use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::{round_f32, ParamStore};
use super::EngineError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Learning rate for groups with no entry in `group_lrs`.
    pub default_lr: f64,
    /// `(group pattern, lr)`; first match wins, patterns match like
    /// [`ParamStore::set_trainable`].
    pub group_lrs: Vec<(String, f64)>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, default_lr: 1e-3, group_lrs: Vec::new() }
    }
}

impl AdamWConfig {
    pub fn lr_for(&self, group: &str) -> f64 {
        self.group_lrs
            .iter()
            .find(|(pat, _)| group == pat || (group.starts_with(pat.as_str()) && group.as_bytes().get(pat.len()) == Some(&b'.')))
            .map_or(self.default_lr, |(_, lr)| *lr)
    }
}

/// AdamW moments and step counter for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    signature: Vec<(String, (usize, usize))>,
}

fn signature(store: &ParamStore) -> Vec<(String, (usize, usize))> {
    store.iter().map(|(_, p)| (p.name.clone(), p.value.dim())).collect()
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let first = store.iter().map(|(_, p)| Array2::zeros(p.value.raw_dim())).collect();
        let second = store.iter().map(|(_, p)| Array2::zeros(p.value.raw_dim())).collect();
        Self { config, step: 0, first, second, signature: signature(store) }
    }

    /// Discards all optimizer state: zero moments, step counter 0.
    pub fn rebuild(&mut self, store: &ParamStore) {
        *self = Self::new(store, self.config.clone());
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// True when every moment buffer is identically zero.
    pub fn moments_are_zero(&self) -> bool {
        self.first.iter().chain(&self.second).all(|m| m.iter().all(|&x| x == 0.0))
    }

    /// One decoupled-weight-decay Adam update on every trainable parameter.
    /// `lr_scale` multiplies each group's base learning rate (schedule factor).
    pub fn step(&mut self, store: &mut ParamStore, lr_scale: f64) -> Result<(), EngineError> {
        if signature(store) != self.signature {
            return Err(EngineError::StaleState);
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, wd) = (self.config.beta1, self.config.beta2, self.config.eps, self.config.weight_decay);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.index();
            let lr = self.config.lr_for(&store.get(id).group) * lr_scale;
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let decay = if p.decay { 1.0 - lr * wd } else { 1.0 };
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut self.first[i])
                .and(&mut self.second[i])
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w = round_f32(*w * decay - lr * mhat / (vhat.sqrt() + eps));
                });
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr` over `warmup_steps`, then cosine decay
/// to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    let warmup = warmup_steps.max(1);
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if total_steps <= warmup {
        return base_lr;
    }
    let progress = ((step - warmup) as f64 / (total_steps - warmup) as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn one_param(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", "g", array![[value]], true);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = one_param(0.75);
        let mut opt = AdamW::new(&s, AdamWConfig { default_lr: 0.1, ..Default::default() });
        opt.step(&mut s, 1.0).unwrap();
        assert_eq!(s.get(s.find("w").unwrap()).value[[0, 0]], 0.75);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = one_param(0.0);
        let id = s.find("w").unwrap();
        s.get_mut(id).grad[[0, 0]] = 1.0;
        let mut opt = AdamW::new(&s, AdamWConfig { default_lr: 0.1, ..Default::default() });
        opt.step(&mut s, 1.0).unwrap();
        // m̂ = 1, v̂ = 1: Δ = -0.1 / (1 + 1e-8)
        assert_abs_diff_eq!(s.get(id).value[[0, 0]], -0.1, epsilon = 1e-7);
    }

    #[test]
    fn rebuild_clears_state() {
        let mut s = one_param(1.0);
        let id = s.find("w").unwrap();
        s.get_mut(id).grad[[0, 0]] = 0.5;
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        opt.step(&mut s, 1.0).unwrap();
        assert_eq!(opt.step_count(), 1);
        assert!(!opt.moments_are_zero());
        opt.rebuild(&s);
        assert_eq!(opt.step_count(), 0);
        assert!(opt.moments_are_zero());
    }

    #[test]
    fn frozen_params_are_untouched() {
        let mut s = one_param(2.0);
        let id = s.find("w").unwrap();
        s.get_mut(id).grad[[0, 0]] = 3.0;
        s.set_trainable(&["g"], false).unwrap();
        let mut opt = AdamW::new(&s, AdamWConfig { weight_decay: 0.1, ..Default::default() });
        opt.step(&mut s, 1.0).unwrap();
        assert_eq!(s.get(id).value[[0, 0]].to_bits(), 2.0f64.to_bits());
    }

    #[test]
    fn changed_parameter_set_is_stale() {
        let mut s = one_param(1.0);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        s.add("extra", "g", array![[0.0]], true);
        assert!(matches!(opt.step(&mut s, 1.0), Err(EngineError::StaleState)));
    }

    #[test]
    fn group_learning_rates() {
        let cfg = AdamWConfig {
            default_lr: 1.0,
            group_lrs: vec![("graph".into(), 5e-4), ("text".into(), 5e-5)],
            ..Default::default()
        };
        assert_eq!(cfg.lr_for("graph.rgcn"), 5e-4);
        assert_eq!(cfg.lr_for("text.proj"), 5e-5);
        assert_eq!(cfg.lr_for("graphite"), 1.0);
        assert_eq!(cfg.lr_for("objective"), 1.0);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 100, 10, 2.0), 0.0);
        assert_eq!(lr_schedule(5, 100, 10, 2.0), 1.0);
        assert_eq!(lr_schedule(10, 100, 10, 2.0), 2.0);
        assert_abs_diff_eq!(lr_schedule(100, 100, 10, 2.0), 0.0, epsilon = 1e-15);
        // midpoint of the cosine segment: (10 + 100) / 2
        assert_abs_diff_eq!(lr_schedule(55, 100, 10, 2.0), 1.0, epsilon = 1e-12);
    }
}
