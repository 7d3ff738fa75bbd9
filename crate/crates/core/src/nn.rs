//! Small trainable building blocks shared by the policy heads.

use rand::Rng;

use crate::autograd::{Tape, Tensor, Var};
use crate::error::Result;
use crate::gpt2::INIT_STD;
use crate::params::{Param, ParamGroup};
use crate::scalar::Scalar;

/// Affine map with a `[out, in]` weight.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, group: ParamGroup, rng: &mut R) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::randn(&[d_out, d_in], INIT_STD, rng),
                group,
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[d_out]), group),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.linear(x, w, Some(b))
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Lift to width `d`, then a GELU residual MLP at that width:
/// `y = lift(x); y + proj(gelu(fc(y)))`.
#[derive(Clone, Debug)]
pub struct ResidualEmbedder<T> {
    pub lift: Linear<T>,
    pub fc: Linear<T>,
    pub proj: Linear<T>,
}

impl<T: Scalar> ResidualEmbedder<T> {
    pub fn init<R: Rng + ?Sized>(name: &str, d_in: usize, d: usize, rng: &mut R) -> Self {
        let g = ParamGroup::Embedders;
        Self {
            lift: Linear::init(&format!("{name}.lift"), d_in, d, g, rng),
            fc: Linear::init(&format!("{name}.fc"), d, d, g, rng),
            proj: Linear::init(&format!("{name}.proj"), d, d, g, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = self.lift.forward(tape, x)?;
        let h = self.fc.forward(tape, y)?;
        let h = tape.gelu(h);
        let h = self.proj.forward(tape, h)?;
        tape.add(y, h)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        [&self.lift, &self.fc, &self.proj]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let Self { lift, fc, proj } = self;
        lift.params_mut()
            .into_iter()
            .chain(fc.params_mut())
            .chain(proj.params_mut())
            .collect()
    }
}

/// SplitMix64 finalizer; derives independent sub-seeds from one run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
