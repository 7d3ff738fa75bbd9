//! Decision Transformer policy.
//!
//! Each timestep contributes three tokens (return-to-go, state, action),
//! each `LayerNorm(embed(x) + p_t)` with a learned timestep table `p`. The
//! interleaved `3K`-token window runs through the backbone and the action
//! for timestep `t` is read off the output at that timestep's state token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::container::{Container, ContainerWriter};
use crate::error::{Error, Result};
use crate::gpt2::{layer_norm, GptConfig, GptParams, LayerNormParams, INIT_STD};
use crate::lora::{LoraConfig, LoraSet};
use crate::nn::{derive_seed, Linear, ResidualEmbedder};
use crate::params::{Param, ParamGroup, Parameterized};
use crate::scalar::Scalar;

/// Tokens per timestep.
pub const TOKENS_PER_STEP: usize = 3;
/// Offset of the state token inside a timestep's token triple.
pub const STATE_TOKEN: usize = 1;

fn default_context() -> usize {
    20
}

fn default_max_ep_len() -> usize {
    4096
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtConfig {
    /// Context length `K` in timesteps.
    #[serde(default = "default_context")]
    pub context_len: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Rows of the timestep embedding table.
    #[serde(default = "default_max_ep_len")]
    pub max_ep_len: usize,
}

impl DtConfig {
    pub fn seq_len(&self) -> usize {
        TOKENS_PER_STEP * self.context_len
    }

    pub fn validate(&self, backbone: &GptConfig) -> Result<()> {
        if self.context_len == 0 || self.state_dim == 0 || self.action_dim == 0 || self.max_ep_len == 0 {
            return Err(Error::Config(format!(
                "degenerate decision-transformer config {self:?}"
            )));
        }
        if self.seq_len() > backbone.max_seq_len {
            return Err(Error::Config(format!(
                "3·K = {} tokens exceed backbone max_seq_len {}",
                self.seq_len(),
                backbone.max_seq_len
            )));
        }
        Ok(())
    }
}

/// A batch of left-padded windows. Per-row buffers are `[B, K, ·]`;
/// `timesteps` and `pad_mask` are `[B, K]` row-major.
#[derive(Clone, Debug)]
pub struct WindowBatch<T> {
    pub rtg: Tensor<T>,
    pub states: Tensor<T>,
    pub actions: Tensor<T>,
    pub timesteps: Vec<usize>,
    pub pad_mask: Vec<bool>,
}

impl<T: Scalar> WindowBatch<T> {
    pub fn batch(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn context(&self) -> usize {
        self.states.shape()[1]
    }

    fn check(&self, cfg: &DtConfig) -> Result<()> {
        let (b, k) = (self.batch(), self.context());
        let expect = |t: &Tensor<T>, d: usize, what: &'static str| {
            if t.shape() != [b, k, d] {
                Err(Error::shape(what, t.shape(), &[b, k, d]))
            } else {
                Ok(())
            }
        };
        expect(&self.rtg, 1, "window rtg")?;
        expect(&self.states, cfg.state_dim, "window states")?;
        expect(&self.actions, cfg.action_dim, "window actions")?;
        if self.timesteps.len() != b * k || self.pad_mask.len() != b * k {
            return Err(Error::shape(
                "window index",
                &[b, k],
                &[self.timesteps.len(), self.pad_mask.len()],
            ));
        }
        if let Some(&t) = self.timesteps.iter().find(|&&t| t >= cfg.max_ep_len) {
            return Err(Error::Range(format!("timestep {t} >= max_ep_len {}", cfg.max_ep_len)));
        }
        Ok(())
    }

    /// Concatenates single-row batches.
    pub fn stack(rows: &[WindowBatch<T>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Contract("empty window stack".into()))?;
        let k = first.context();
        let cat = |f: &dyn Fn(&WindowBatch<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
            let d = f(first).last_dim();
            let mut data = Vec::with_capacity(rows.len() * k * d);
            for r in rows {
                data.extend_from_slice(f(r).data());
            }
            let b = data.len() / (k * d);
            Tensor::new(&[b, k, d], data)
        };
        Ok(Self {
            rtg: cat(&|w| &w.rtg)?,
            states: cat(&|w| &w.states)?,
            actions: cat(&|w| &w.actions)?,
            timesteps: rows.iter().flat_map(|r| r.timesteps.iter().copied()).collect(),
            pad_mask: rows.iter().flat_map(|r| r.pad_mask.iter().copied()).collect(),
        })
    }
}

/// Modality embedders, timestep table, shared token LayerNorm and the
/// action head. All trainable.
#[derive(Clone, Debug)]
pub struct EmbedderSet<T> {
    pub rtg: ResidualEmbedder<T>,
    pub state: ResidualEmbedder<T>,
    pub action: ResidualEmbedder<T>,
    pub timestep: Param<T>,
    pub token_ln: LayerNormParams<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> EmbedderSet<T> {
    pub fn init(cfg: &DtConfig, d_model: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = ParamGroup::Embedders;
        Self {
            rtg: ResidualEmbedder::init("dt.embed_return", 1, d_model, &mut rng),
            state: ResidualEmbedder::init("dt.embed_state", cfg.state_dim, d_model, &mut rng),
            action: ResidualEmbedder::init("dt.embed_action", cfg.action_dim, d_model, &mut rng),
            timestep: Param::new(
                "dt.embed_timestep.weight",
                Tensor::randn(&[cfg.max_ep_len, d_model], INIT_STD, &mut rng),
                g,
            ),
            token_ln: LayerNormParams {
                gain: Param::new("dt.embed_ln.weight", Tensor::ones(&[d_model]), g),
                bias: Param::new("dt.embed_ln.bias", Tensor::zeros(&[d_model]), g),
            },
            head: Linear::init("dt.predict_action", d_model, cfg.action_dim, ParamGroup::Head, &mut rng),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = self.rtg.params();
        out.extend(self.state.params());
        out.extend(self.action.params());
        out.extend([&self.timestep, &self.token_ln.gain, &self.token_ln.bias]);
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let Self {
            rtg,
            state,
            action,
            timestep,
            token_ln,
            head,
        } = self;
        let mut out = rtg.params_mut();
        out.extend(state.params_mut());
        out.extend(action.params_mut());
        out.extend([timestep, &mut token_ln.gain, &mut token_ln.bias]);
        out.extend(head.params_mut());
        out
    }
}

/// How the backbone weights come to be.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneInit {
    Random,
    Pretrained,
}

#[derive(Clone, Debug)]
pub struct DecisionTransformer<T> {
    pub config: DtConfig,
    pub backbone: GptParams<T>,
    pub lora: Option<LoraSet<T>>,
    pub embedders: EmbedderSet<T>,
}

impl<T: Scalar> DecisionTransformer<T> {
    /// Wraps a backbone with fresh embedders and, when `lora` is given,
    /// adapters (which freeze the backbone).
    pub fn new(mut backbone: GptParams<T>, config: DtConfig, lora: Option<&LoraConfig>, seed: u64) -> Result<Self> {
        config.validate(&backbone.config)?;
        let lora = match lora {
            Some(cfg) => Some(LoraSet::attach(&mut backbone, cfg, derive_seed(seed, 2))?),
            None => None,
        };
        let embedders = EmbedderSet::init(&config, backbone.config.d_model, derive_seed(seed, 3));
        Ok(Self {
            config,
            backbone,
            lora,
            embedders,
        })
    }

    /// Randomly initialized backbone.
    pub fn init_random(gpt: &GptConfig, config: DtConfig, lora: Option<&LoraConfig>, seed: u64) -> Result<Self> {
        let backbone = GptParams::init_random(gpt, derive_seed(seed, 1))?;
        Self::new(backbone, config, lora, seed)
    }

    pub fn d_model(&self) -> usize {
        self.backbone.config.d_model
    }

    /// Interleaved `[B, 3K, d_model]` token sequence and its `[B, 3K]`
    /// padding mask.
    pub fn embed_window(&self, tape: &mut Tape<T>, batch: &WindowBatch<T>) -> Result<(Var, Vec<bool>)> {
        batch.check(&self.config)?;
        let (b, k, d) = (batch.batch(), batch.context(), self.d_model());
        let n = b * k;
        let e = &self.embedders;
        let rtg = tape.constant(batch.rtg.reshape(&[n, 1])?);
        let states = tape.constant(batch.states.reshape(&[n, self.config.state_dim])?);
        let actions = tape.constant(batch.actions.reshape(&[n, self.config.action_dim])?);
        let table = tape.param(&e.timestep);
        let pos = tape.gather_rows(table, batch.timesteps.clone())?;

        let mut summed = Vec::with_capacity(TOKENS_PER_STEP);
        for (embedder, x) in [(&e.rtg, rtg), (&e.state, states), (&e.action, actions)] {
            let emb = embedder.forward(tape, x)?;
            summed.push(tape.add(emb, pos)?);
        }
        let stacked = tape.concat_rows(&summed)?;
        // modality-major rows → (b, t, modality) order
        let mut order = Vec::with_capacity(TOKENS_PER_STEP * n);
        for row in 0..b {
            for t in 0..k {
                for m in 0..TOKENS_PER_STEP {
                    order.push(m * n + row * k + t);
                }
            }
        }
        let tokens = tape.gather_rows(stacked, order)?;
        let tokens = layer_norm(tape, tokens, &e.token_ln, T::of(self.backbone.config.layer_norm_eps))?;
        let h = tape.reshape(tokens, &[b, TOKENS_PER_STEP * k, d])?;
        let mask = batch.pad_mask.iter().flat_map(|&p| [p; TOKENS_PER_STEP]).collect();
        Ok((h, mask))
    }

    /// `[B, K, d_a]` actions, each in (−1, 1).
    pub fn predict_actions(&self, tape: &mut Tape<T>, batch: &WindowBatch<T>) -> Result<Var> {
        let (h, mask) = self.embed_window(tape, batch)?;
        let out = self.backbone.forward(tape, h, &mask, self.lora.as_ref())?;
        let (b, k) = (batch.batch(), batch.context());
        let rows = (0..b)
            .flat_map(|r| (0..k).map(move |t| r * TOKENS_PER_STEP * k + TOKENS_PER_STEP * t + STATE_TOKEN))
            .collect();
        let state_out = tape.gather_rows(out, rows)?;
        let a = self.embedders.head.forward(tape, state_out)?;
        let a = tape.tanh(a);
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
        writer.metadata("n_head", self.backbone.config.n_head.to_string());
    }

    /// Overwrites every parameter from a container, checking shapes.
    pub fn load_from(&mut self, container: &Container) -> Result<()> {
        for p in self.params_mut() {
            p.value = container.expect(&p.name, p.value.shape())?;
        }
        Ok(())
    }
}

/// Masked mean squared error over unpadded `(batch, timestep)` cells and
/// every action dimension.
pub fn action_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var, pad_mask: &[bool]) -> Result<Var> {
    let keep: Vec<bool> = pad_mask.iter().map(|&p| !p).collect();
    tape.masked_mse(pred, target, &keep)
}

impl<T: Scalar> Parameterized<T> for DecisionTransformer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = self.backbone.params();
        if let Some(l) = &self.lora {
            out.extend(l.params());
        }
        out.extend(self.embedders.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let Self {
            backbone,
            lora,
            embedders,
            ..
        } = self;
        let mut out = backbone.params_mut();
        if let Some(l) = lora {
            out.extend(l.params_mut());
        }
        out.extend(embedders.params_mut());
        out
    }
}
