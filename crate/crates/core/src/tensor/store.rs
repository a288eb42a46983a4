use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Index of a parameter group inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub(crate) usize);

impl GroupId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    name: String,
    values: Vec<f64>,
    trainable: bool,
}

impl ParamGroup {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Named, ordered groups of learnable weights.
///
/// Iteration order is insertion order. Every value is finite; the trainable
/// flag only gates gradient flow and optimizer updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    groups: Vec<ParamGroup>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_group(&mut self, name: &str, values: Vec<f64>) -> Result<GroupId> {
        if self.find(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter group `{name}`")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                group: Some(name.to_string()),
                message: format!("non-finite initial value at index {i}"),
            });
        }
        self.groups.push(ParamGroup {
            name: name.to_string(),
            values,
            trainable: true,
        });
        Ok(GroupId(self.groups.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<GroupId> {
        self.groups.iter().position(|g| g.name == name).map(GroupId)
    }

    pub fn group(&self, id: GroupId) -> &ParamGroup {
        &self.groups[id.0]
    }

    pub fn values(&self, id: GroupId) -> &[f64] {
        &self.groups[id.0].values
    }

    /// Direct mutable access, used by initialization and file loading.
    pub fn values_mut(&mut self, id: GroupId) -> &mut [f64] {
        &mut self.groups[id.0].values
    }

    pub fn set_trainable(&mut self, id: GroupId, trainable: bool) {
        self.groups[id.0].trainable = trainable;
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for g in &mut self.groups {
            g.trainable = trainable;
        }
    }

    pub fn is_trainable(&self, id: GroupId) -> bool {
        self.groups[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = GroupId> + '_ {
        (0..self.groups.len()).map(GroupId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (GroupId, &ParamGroup)> {
        self.groups.iter().enumerate().map(|(i, g)| (GroupId(i), g))
    }

    pub fn num_parameters(&self) -> usize {
        self.groups.iter().map(|g| g.values.len()).sum()
    }
}

/// One gradient slot per parameter, shaped like the store it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMap {
    grads: Vec<Vec<f64>>,
}

impl GradientMap {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            grads: store.groups.iter().map(|g| vec![0.0; g.values.len()]).collect(),
        }
    }

    pub fn group(&self, id: GroupId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn group_mut(&mut self, id: GroupId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn is_congruent(&self, store: &ParameterStore) -> bool {
        self.grads.len() == store.groups.len()
            && self
                .grads
                .iter()
                .zip(&store.groups)
                .all(|(g, p)| g.len() == p.values.len())
    }

    pub fn num_groups(&self) -> usize {
        self.grads.len()
    }
}

/// Layout helper for a fully connected stack stored in one flat group:
/// for each layer, a row-major `out x in` weight block followed by `out` biases.
pub fn mlp_param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Uniform fan-in scaled values for an MLP group (weights and biases drawn
/// from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`).
pub fn init_mlp(widths: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(mlp_param_count(widths));
    for w in widths.windows(2) {
        let bound = 1.0 / (w[0].max(1) as f64).sqrt();
        for _ in 0..(w[0] * w[1] + w[1]) {
            out.push(rng.random_range(-bound..bound));
        }
    }
    out
}

/// Seeded generator used for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
