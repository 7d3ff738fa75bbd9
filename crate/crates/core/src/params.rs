//! Named, group-tagged model parameters.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::scalar::Scalar;

/// Which part of the model a parameter belongs to, for trainable-count
/// accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    Lora,
    Embedders,
    Head,
    Policy,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::Lora => "lora",
            ParamGroup::Embedders => "embedders",
            ParamGroup::Head => "head",
            ParamGroup::Policy => "policy",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
    pub group: ParamGroup,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, group: ParamGroup) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: true,
            group,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Anything that owns parameters in a fixed, deterministic order.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    /// Trainable element counts per group.
    fn trainable_counts(&self) -> ParamCounts {
        let mut by_group = BTreeMap::new();
        for p in self.params().into_iter().filter(|p| p.trainable) {
            *by_group.entry(p.group).or_insert(0) += p.numel();
        }
        ParamCounts { by_group }
    }

    fn total_param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn freeze_all(&mut self) {
        for p in self.params_mut() {
            p.trainable = false;
        }
    }
}

/// Trainable parameter counts partitioned by [`ParamGroup`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub by_group: BTreeMap<ParamGroup, usize>,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.by_group.values().sum()
    }

    pub fn group(&self, group: ParamGroup) -> usize {
        self.by_group.get(&group).copied().unwrap_or(0)
    }
}

impl fmt::Display for ParamCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (g, n) in &self.by_group {
            write!(f, "{g}={n} ")?;
        }
        write!(f, "total={}", self.total())
    }
}
