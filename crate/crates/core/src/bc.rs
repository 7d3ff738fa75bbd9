//! Behavior-cloning baseline: an MLP from the current state to an action.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::container::{Container, ContainerWriter};
use crate::dt::WindowBatch;
use crate::error::{Error, Result};
use crate::nn::{derive_seed, Linear};
use crate::params::{Param, ParamGroup, Parameterized};
use crate::scalar::Scalar;

/// Allowed relative gap between the BC and target trainable counts.
pub const MATCH_TOLERANCE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: [usize; 2],
}

impl BcConfig {
    pub fn param_count(&self) -> usize {
        let [h1, h2] = self.hidden;
        (self.state_dim + 1) * h1 + (h1 + 1) * h2 + (h2 + 1) * self.action_dim
    }

    /// Two equal hidden layers sized so the parameter count is as close as
    /// possible to `target`; errors if that is still off by more than
    /// [`MATCH_TOLERANCE`].
    pub fn matched(state_dim: usize, action_dim: usize, target: usize) -> Result<Self> {
        let cfg = |h: usize| Self {
            state_dim,
            action_dim,
            hidden: [h, h],
        };
        // count(h) = h² + (d_s + d_a + 2)·h + d_a
        let b = (state_dim + action_dim + 2) as f64;
        let c = action_dim as f64 - target as f64;
        let root = ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).max(1.0);
        let best = [root.floor() as usize, root.ceil() as usize]
            .into_iter()
            .map(|h| cfg(h.max(1)))
            .min_by_key(|c| c.param_count().abs_diff(target))
            .expect("two candidates");
        let gap = best.param_count().abs_diff(target) as f64 / target.max(1) as f64;
        if gap > MATCH_TOLERANCE {
            return Err(Error::Config(format!(
                "no two-layer MLP with {} inputs matches {target} parameters within {:.0}% (closest {})",
                state_dim,
                MATCH_TOLERANCE * 100.0,
                best.param_count()
            )));
        }
        Ok(best)
    }
}

#[derive(Clone, Debug)]
pub struct BcPolicy<T> {
    pub config: BcConfig,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub out: Linear<T>,
}

impl<T: Scalar> BcPolicy<T> {
    pub fn init(config: BcConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
        let g = ParamGroup::Policy;
        let [h1, h2] = config.hidden;
        Self {
            fc1: Linear::init("bc.fc1", config.state_dim, h1, g, &mut rng),
            fc2: Linear::init("bc.fc2", h1, h2, g, &mut rng),
            out: Linear::init("bc.out", h2, config.action_dim, g, &mut rng),
            config,
        }
    }

    /// `[N, d_s]` states to `[N, d_a]` actions in (−1, 1).
    pub fn forward(&self, tape: &mut Tape<T>, states: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, states)?;
        let h = tape.gelu(h);
        let h = self.fc2.forward(tape, h)?;
        let h = tape.gelu(h);
        let a = self.out.forward(tape, h)?;
        Ok(tape.tanh(a))
    }

    /// Applies the MLP independently to every window slot; returns and
    /// earlier actions are ignored.
    pub fn predict_actions(&self, tape: &mut Tape<T>, batch: &WindowBatch<T>) -> Result<Var> {
        let (b, k) = (batch.batch(), batch.context());
        let d_s = self.config.state_dim;
        if batch.states.shape() != [b, k, d_s] {
            return Err(Error::shape("bc states", batch.states.shape(), &[b, k, d_s]));
        }
        let s = tape.constant(batch.states.reshape(&[b * k, d_s])?);
        let a = self.forward(tape, s)?;
        tape.reshape(a, &[b, k, self.config.action_dim])
    }

    pub fn infer(&self, batch: &WindowBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let v = self.predict_actions(&mut tape, batch)?;
        Ok(tape.value(v).clone())
    }

    pub fn write_container(&self, writer: &mut ContainerWriter) {
        for p in self.params() {
            writer.insert(p.name.clone(), &p.value);
        }
    }

    pub fn load_from(&mut self, container: &Container) -> Result<()> {
        for p in self.params_mut() {
            p.value = container.expect(&p.name, p.value.shape())?;
        }
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for BcPolicy<T> {
    fn params(&self) -> Vec<&Param<T>> {
        [&self.fc1, &self.fc2, &self.out]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let Self { fc1, fc2, out, .. } = self;
        fc1.params_mut()
            .into_iter()
            .chain(fc2.params_mut())
            .chain(out.params_mut())
            .collect()
    }
}
