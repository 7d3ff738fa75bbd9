//! Low-rank adapters on frozen backbone projections: `W = W₀ + (α/r)·B·A`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{kernels, Tape, Tensor, Var};
use crate::container::{Container, ContainerWriter};
use crate::error::{Error, Result};
use crate::gpt2::{GptConfig, GptParams, INIT_STD};
use crate::params::{Param, ParamGroup, Parameterized};
use crate::scalar::Scalar;

/// Projection roles an adapter can wrap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LoraTarget {
    /// Fused query/key/value projection, `[3·d, d]`.
    AttnQkv,
    /// Attention output projection, `[d, d]`.
    AttnOut,
}

impl LoraTarget {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "attn.c_attn" => Ok(Self::AttnQkv),
            "attn.c_proj" => Ok(Self::AttnOut),
            other => Err(Error::Config(format!(
                "unknown LoRA target `{other}` (expected attn.c_attn or attn.c_proj)"
            ))),
        }
    }

    pub fn role(self) -> &'static str {
        match self {
            Self::AttnQkv => "attn.c_attn",
            Self::AttnOut => "attn.c_proj",
        }
    }

    fn shape(self, d_model: usize) -> (usize, usize) {
        match self {
            Self::AttnQkv => (3 * d_model, d_model),
            Self::AttnOut => (d_model, d_model),
        }
    }
}

fn default_rank() -> usize {
    16
}

fn default_targets() -> Vec<String> {
    vec!["attn.c_attn".into(), "attn.c_proj".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Scaling numerator; the update is multiplied by `alpha / rank`.
    /// Defaults to `rank`, i.e. unit scale.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_targets")]
    pub targets: Vec<String>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: default_rank(),
            alpha: None,
            targets: default_targets(),
        }
    }
}

impl LoraConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha.unwrap_or(self.rank as f64) / self.rank as f64
    }

    pub fn parsed_targets(&self) -> Result<Vec<LoraTarget>> {
        let mut t = self
            .targets
            .iter()
            .map(|s| LoraTarget::parse(s))
            .collect::<Result<Vec<_>>>()?;
        t.sort();
        t.dedup();
        if t.is_empty() {
            return Err(Error::Config("LoRA target set is empty".into()));
        }
        Ok(t)
    }

    /// Validates rank against every targeted matrix of `gpt`.
    pub fn validate(&self, gpt: &GptConfig) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("LoRA rank must be positive".into()));
        }
        for t in self.parsed_targets()? {
            let (d, k) = t.shape(gpt.d_model);
            if self.rank >= d.min(k) {
                return Err(Error::Config(format!(
                    "LoRA rank {} is not below min({d}, {k}) for {}",
                    self.rank,
                    t.role()
                )));
            }
        }
        Ok(())
    }

    /// Closed-form adapter count: `n_layer · Σ_targets r·(d + k)`.
    pub fn trainable_count(&self, gpt: &GptConfig) -> Result<usize> {
        self.validate(gpt)?;
        let per_layer: usize = self
            .parsed_targets()?
            .into_iter()
            .map(|t| {
                let (d, k) = t.shape(gpt.d_model);
                self.rank * (d + k)
            })
            .sum();
        Ok(gpt.n_layer * per_layer)
    }
}

/// Trainable factors for one frozen base matrix `W₀: [d, k]`.
#[derive(Clone, Debug)]
pub struct LoraPair<T> {
    pub base_name: String,
    /// `[r, k]`, gaussian at creation.
    pub a: Param<T>,
    /// `[d, r]`, zero at creation.
    pub b: Param<T>,
    pub scale: T,
}

impl<T: Scalar> LoraPair<T> {
    /// `W₀ + scale·B·A` as a plain tensor.
    pub fn effective_weight(&self, base: &Tensor<T>) -> Result<Tensor<T>> {
        let (d, r) = (self.b.value.shape()[0], self.b.value.shape()[1]);
        let k = self.a.value.shape()[1];
        if base.shape() != [d, k] {
            return Err(Error::shape("effective_weight", base.shape(), &[d, k]));
        }
        let delta = kernels::matmul(self.b.value.data(), self.a.value.data(), d, r, k);
        let w = base
            .data()
            .iter()
            .zip(&delta)
            .map(|(&w0, &dw)| w0 + self.scale * dw)
            .collect();
        Tensor::new(&[d, k], w)
    }

    /// Same composition recorded on a tape, so gradients reach `A` and `B`
    /// while `W₀` enters as a constant.
    pub fn bind_effective(&self, tape: &mut Tape<T>, base: &Param<T>) -> Result<Var> {
        let w0 = tape.param(base);
        let a = tape.param(&self.a);
        let b = tape.param(&self.b);
        let mut delta = tape.matmul(b, a)?;
        if self.scale != T::one() {
            delta = tape.scale(delta, self.scale);
        }
        tape.add(w0, delta)
    }
}

/// All adapters of a backbone, keyed by base tensor name.
#[derive(Clone, Debug)]
pub struct LoraSet<T> {
    pub config: LoraConfig,
    pairs: BTreeMap<String, LoraPair<T>>,
}

impl<T: Scalar> LoraSet<T> {
    /// Wraps every targeted projection with a fresh adapter and freezes the
    /// whole backbone, leaving only adapter factors trainable in it.
    pub fn attach(params: &mut GptParams<T>, config: &LoraConfig, seed: u64) -> Result<Self> {
        config.validate(&params.config)?;
        let targets = config.parsed_targets()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = T::of(config.scale());
        let r = config.rank;
        let mut pairs = BTreeMap::new();
        for block in &params.blocks {
            for &t in &targets {
                let base = match t {
                    LoraTarget::AttnQkv => &block.attn_qkv,
                    LoraTarget::AttnOut => &block.attn_out,
                };
                let (d, k) = (base.value.shape()[0], base.value.shape()[1]);
                let name = base.name.clone();
                let a = Param::new(
                    format!("{name}.lora_A"),
                    Tensor::randn(&[r, k], INIT_STD, &mut rng),
                    ParamGroup::Lora,
                );
                let b = Param::new(format!("{name}.lora_B"), Tensor::zeros(&[d, r]), ParamGroup::Lora);
                pairs.insert(
                    name.clone(),
                    LoraPair {
                        base_name: name,
                        a,
                        b,
                        scale,
                    },
                );
            }
        }
        params.freeze_all();
        Ok(Self {
            config: config.clone(),
            pairs,
        })
    }

    pub fn pair(&self, base_name: &str) -> Option<&LoraPair<T>> {
        self.pairs.get(base_name)
    }

    pub fn pairs(&self) -> impl Iterator<Item = &LoraPair<T>> {
        self.pairs.values()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Zeroes every `B`, restoring the base model's behaviour.
    pub fn reset_updates(&mut self) {
        for p in self.pairs.values_mut() {
            p.b.value = Tensor::zeros(p.b.value.shape());
        }
    }

    pub fn write_container(&self, writer: &mut ContainerWriter) {
        for p in self.params() {
            writer.insert(p.name.clone(), &p.value);
        }
    }

    /// Overwrites adapter factors from `<base>.lora_A` / `<base>.lora_B`.
    pub fn load_from(&mut self, container: &Container) -> Result<()> {
        for p in self.params_mut() {
            p.value = container.expect(&p.name, p.value.shape())?;
        }
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for LoraSet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.pairs.values().flat_map(|p| [&p.a, &p.b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.pairs.values_mut().flat_map(|p| [&mut p.a, &mut p.b]).collect()
    }
}
