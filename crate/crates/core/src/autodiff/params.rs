use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    /// Parameter group, e.g. `graph.rgcn` or `text.embed`.
    pub group: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub trainable: bool,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

/// Owns every parameter of a model, addressed by [`ParamId`] or name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Rounds to the nearest `f32`. Parameters are kept `f32`-representable so the
/// 32-bit checkpoint format round-trips exactly.
pub(crate) fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, value: Array2<f64>, decay: bool) -> ParamId {
        let value = value.mapv(round_f32);
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param { name: name.into(), group: group.into(), value, grad, trainable: true, decay });
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter drawn from `N(0, std²)`.
    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        group: impl Into<String>,
        shape: (usize, usize),
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let value = Array2::from_shape_simple_fn(shape, || std * rng.sample::<f64, _>(StandardNormal));
        self.add(name, group, value, true)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Distinct group names in registration order.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.params {
            if !out.contains(&p.group.as_str()) {
                out.push(&p.group);
            }
        }
        out
    }

    fn group_matches(group: &str, pattern: &str) -> bool {
        group == pattern || (group.starts_with(pattern) && group.as_bytes().get(pattern.len()) == Some(&b'.'))
    }

    /// Freezes or unfreezes parameter groups. A pattern matches a group
    /// exactly or as a dotted prefix (`text` covers `text.embed`).
    pub fn set_trainable<S: AsRef<str>>(&mut self, groups: &[S], flag: bool) -> Result<(), EngineError> {
        for g in groups {
            let g = g.as_ref();
            if !self.params.iter().any(|p| Self::group_matches(&p.group, g)) {
                return Err(EngineError::UnknownGroup(g.to_string()));
            }
        }
        for p in &mut self.params {
            if groups.iter().any(|g| Self::group_matches(&p.group, g.as_ref())) {
                p.trainable = flag;
            }
        }
        Ok(())
    }

    pub fn is_group_trainable(&self, group: &str) -> bool {
        self.params.iter().filter(|p| Self::group_matches(&p.group, group)).any(|p| p.trainable)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds gradients from one backward pass into the stored `grad` buffers.
    pub fn accumulate(&mut self, grads: Vec<(ParamId, Array2<f64>)>) {
        for (id, g) in grads {
            self.params[id.0].grad += &g;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
