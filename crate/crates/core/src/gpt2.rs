//! GPT-2 architecture decoder stack.
//!
//! Pre-LayerNorm blocks (`x + attn(ln_1(x))`, then `x + mlp(ln_2(x))`),
//! multi-head causal self-attention over a fused qkv projection, a GELU MLP
//! of width `4·d_model`, and a final LayerNorm. The stack consumes already
//! embedded sequences; GPT-2's own token and position tables are only kept
//! so imported checkpoints bind completely.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::container::{Container, ContainerWriter};
use crate::error::{Error, Result};
use crate::lora::LoraSet;
use crate::params::{Param, ParamGroup, Parameterized};
use crate::scalar::Scalar;

/// Standard deviation of freshly initialized weight matrices.
pub const INIT_STD: f64 = 0.02;

fn default_ln_eps() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GptConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub d_model: usize,
    pub max_seq_len: usize,
    /// Add the backbone's own position table to the input. Off by default:
    /// the decision transformer supplies timestep embeddings instead.
    #[serde(default)]
    pub use_native_positional_embeddings: bool,
    /// Rows of the native token table; 0 means no table is held.
    #[serde(default)]
    pub vocab_size: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

impl GptConfig {
    /// 12 layers, 12 heads, width 768, 1024 positions, 50,257-token table.
    pub fn gpt2_small() -> Self {
        Self {
            n_layer: 12,
            n_head: 12,
            d_model: 768,
            max_seq_len: 1024,
            use_native_positional_embeddings: false,
            vocab_size: 50257,
            layer_norm_eps: default_ln_eps(),
        }
    }

    /// Two-layer, width-64 backbone for fast experiments.
    pub fn toy() -> Self {
        Self {
            n_layer: 2,
            n_head: 4,
            d_model: 64,
            max_seq_len: 60,
            use_native_positional_embeddings: false,
            vocab_size: 0,
            layer_norm_eps: default_ln_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layer == 0 || self.n_head == 0 || self.d_model == 0 || self.max_seq_len == 0 {
            return Err(Error::Config(format!("degenerate backbone config {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_head) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_head {}",
                self.d_model, self.n_head
            )));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }

    fn holds_position_table(&self) -> bool {
        self.use_native_positional_embeddings || self.vocab_size > 0
    }

    /// Every named tensor of this configuration with its shape, in the
    /// order parameters are initialized.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = Vec::new();
        if self.vocab_size > 0 {
            out.push(("wte.weight".to_string(), vec![self.vocab_size, d]));
        }
        if self.holds_position_table() {
            out.push(("wpe.weight".to_string(), vec![self.max_seq_len, d]));
        }
        for i in 0..self.n_layer {
            let p = |s: &str| format!("h.{i}.{s}");
            out.extend([
                (p("ln_1.weight"), vec![d]),
                (p("ln_1.bias"), vec![d]),
                (p("attn.c_attn.weight"), vec![3 * d, d]),
                (p("attn.c_attn.bias"), vec![3 * d]),
                (p("attn.c_proj.weight"), vec![d, d]),
                (p("attn.c_proj.bias"), vec![d]),
                (p("ln_2.weight"), vec![d]),
                (p("ln_2.bias"), vec![d]),
                (p("mlp.c_fc.weight"), vec![4 * d, d]),
                (p("mlp.c_fc.bias"), vec![4 * d]),
                (p("mlp.c_proj.weight"), vec![d, 4 * d]),
                (p("mlp.c_proj.bias"), vec![d]),
            ]);
        }
        out.push(("ln_f.weight".to_string(), vec![d]));
        out.push(("ln_f.bias".to_string(), vec![d]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Reads the architecture off a container's tensor names and shapes.
    /// Head count is not recoverable from shapes; it comes from the
    /// container's `n_head` metadata when present, else `d_model / 64`.
    pub fn discover(container: &Container) -> Result<Self> {
        let d_model = container
            .header("ln_f.weight")
            .ok_or_else(|| Error::Import("missing tensor `ln_f.weight`".into()))?
            .shape[0];
        let n_layer = (0..)
            .take_while(|i| container.contains(&format!("h.{i}.ln_1.weight")))
            .count();
        let n_head = match container.metadata().get("n_head") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Import(format!("bad n_head metadata `{v}`")))?,
            None => (d_model / 64).max(1),
        };
        let wpe = container.header("wpe.weight").map(|h| h.shape[0]);
        let vocab_size = container.header("wte.weight").map_or(0, |h| h.shape[0]);
        Ok(Self {
            n_layer,
            n_head,
            d_model,
            max_seq_len: wpe.unwrap_or(1024),
            use_native_positional_embeddings: false,
            vocab_size,
            layer_norm_eps: default_ln_eps(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams<T> {
    pub gain: Param<T>,
    pub bias: Param<T>,
}

#[derive(Clone, Debug)]
pub struct Block<T> {
    pub ln_1: LayerNormParams<T>,
    pub attn_qkv: Param<T>,
    pub attn_qkv_bias: Param<T>,
    pub attn_out: Param<T>,
    pub attn_out_bias: Param<T>,
    pub ln_2: LayerNormParams<T>,
    pub mlp_fc: Param<T>,
    pub mlp_fc_bias: Param<T>,
    pub mlp_out: Param<T>,
    pub mlp_out_bias: Param<T>,
}

#[derive(Clone, Debug)]
pub struct GptParams<T> {
    pub config: GptConfig,
    pub token_embedding: Option<Param<T>>,
    pub position_embedding: Option<Param<T>>,
    pub blocks: Vec<Block<T>>,
    pub ln_f: LayerNormParams<T>,
}

impl<T: Scalar> Parameterized<T> for GptParams<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = Vec::new();
        out.extend(self.token_embedding.iter());
        out.extend(self.position_embedding.iter());
        for b in &self.blocks {
            out.extend([
                &b.ln_1.gain,
                &b.ln_1.bias,
                &b.attn_qkv,
                &b.attn_qkv_bias,
                &b.attn_out,
                &b.attn_out_bias,
                &b.ln_2.gain,
                &b.ln_2.bias,
                &b.mlp_fc,
                &b.mlp_fc_bias,
                &b.mlp_out,
                &b.mlp_out_bias,
            ]);
        }
        out.extend([&self.ln_f.gain, &self.ln_f.bias]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = Vec::new();
        out.extend(self.token_embedding.iter_mut());
        out.extend(self.position_embedding.iter_mut());
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln_1.gain,
                &mut b.ln_1.bias,
                &mut b.attn_qkv,
                &mut b.attn_qkv_bias,
                &mut b.attn_out,
                &mut b.attn_out_bias,
                &mut b.ln_2.gain,
                &mut b.ln_2.bias,
                &mut b.mlp_fc,
                &mut b.mlp_fc_bias,
                &mut b.mlp_out,
                &mut b.mlp_out_bias,
            ]);
        }
        out.extend([&mut self.ln_f.gain, &mut self.ln_f.bias]);
        out
    }
}

impl<T: Scalar> GptParams<T> {
    /// Assembles parameters from a name → tensor source, in the order of
    /// [`GptConfig::tensor_shapes`].
    fn assemble(config: &GptConfig, mut get: impl FnMut(&str, &[usize]) -> Result<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let mut named = |name: String, shape: &[usize]| -> Result<Param<T>> {
            let t = get(&name, shape)?;
            Ok(Param::new(name, t, ParamGroup::Backbone))
        };
        let d = config.d_model;
        let token_embedding = if config.vocab_size > 0 {
            Some(named("wte.weight".into(), &[config.vocab_size, d])?)
        } else {
            None
        };
        let position_embedding = if config.holds_position_table() {
            Some(named("wpe.weight".into(), &[config.max_seq_len, d])?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(config.n_layer);
        for i in 0..config.n_layer {
            let mut p = |s: &str, shape: &[usize]| named(format!("h.{i}.{s}"), shape);
            blocks.push(Block {
                ln_1: LayerNormParams {
                    gain: p("ln_1.weight", &[d])?,
                    bias: p("ln_1.bias", &[d])?,
                },
                attn_qkv: p("attn.c_attn.weight", &[3 * d, d])?,
                attn_qkv_bias: p("attn.c_attn.bias", &[3 * d])?,
                attn_out: p("attn.c_proj.weight", &[d, d])?,
                attn_out_bias: p("attn.c_proj.bias", &[d])?,
                ln_2: LayerNormParams {
                    gain: p("ln_2.weight", &[d])?,
                    bias: p("ln_2.bias", &[d])?,
                },
                mlp_fc: p("mlp.c_fc.weight", &[4 * d, d])?,
                mlp_fc_bias: p("mlp.c_fc.bias", &[4 * d])?,
                mlp_out: p("mlp.c_proj.weight", &[d, 4 * d])?,
                mlp_out_bias: p("mlp.c_proj.bias", &[d])?,
            });
        }
        let ln_f = LayerNormParams {
            gain: named("ln_f.weight".into(), &[d])?,
            bias: named("ln_f.bias".into(), &[d])?,
        };
        Ok(Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            blocks,
            ln_f,
        })
    }

    /// `normal(0, 0.02)` matrices and embedding tables, zero biases, unit
    /// LayerNorm gains. Deterministic per seed.
    pub fn init_random(config: &GptConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::assemble(config, |name, shape| {
            Ok(
                if name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") || name == "ln_f.weight" {
                    Tensor::ones(shape)
                } else if shape.len() == 1 {
                    Tensor::zeros(shape)
                } else {
                    Tensor::randn(shape, INIT_STD, &mut rng)
                },
            )
        })
    }

    /// Binds every tensor of `config` from a container, validating shapes.
    /// All imported parameters are frozen.
    pub fn import(container: &Container, config: &GptConfig) -> Result<Self> {
        let mut params = Self::assemble(config, |name, shape| container.expect(name, shape))?;
        params.freeze_all();
        Ok(params)
    }

    pub fn import_weights(path: impl AsRef<Path>, config: &GptConfig) -> Result<Self> {
        Self::import(&Container::read(path)?, config)
    }

    pub fn write_container(&self, writer: &mut ContainerWriter) {
        for p in self.params() {
            writer.insert(p.name.clone(), &p.value);
        }
        writer.metadata("n_head", self.config.n_head.to_string());
    }

    /// Runs the block stack over embedded tokens `h: [B, L, d_model]`.
    /// `pad_mask` is `[B, L]`, true on padded slots.
    pub fn forward(&self, tape: &mut Tape<T>, h: Var, pad_mask: &[bool], lora: Option<&LoraSet<T>>) -> Result<Var> {
        let cfg = &self.config;
        let s = tape.shape(h).to_vec();
        if s.len() != 3 || s[2] != cfg.d_model {
            return Err(Error::shape("gpt2 forward", &s, &[0, 0, cfg.d_model]));
        }
        let (batch, len) = (s[0], s[1]);
        if len > cfg.max_seq_len {
            return Err(Error::SequenceLength {
                len,
                max: cfg.max_seq_len,
            });
        }
        if pad_mask.len() != batch * len {
            return Err(Error::shape("gpt2 pad mask", &s, &[pad_mask.len()]));
        }
        let eps = T::of(cfg.layer_norm_eps);

        let mut x = h;
        if cfg.use_native_positional_embeddings {
            let table = self
                .position_embedding
                .as_ref()
                .ok_or_else(|| Error::Config("native positions requested but no wpe table".into()))?;
            let wpe = tape.param(table);
            let idx = (0..batch).flat_map(|_| 0..len).collect();
            let pos = tape.gather_rows(wpe, idx)?;
            let pos = tape.reshape(pos, &s)?;
            x = tape.add(x, pos)?;
        }

        for block in &self.blocks {
            let a = layer_norm(tape, x, &block.ln_1, eps)?;
            let w = bind_weight(tape, &block.attn_qkv, lora)?;
            let b = tape.param(&block.attn_qkv_bias);
            let qkv = tape.linear(a, w, Some(b))?;
            let [q, k, v] = tape.split_qkv(qkv, cfg.n_head)?;
            let att = tape.causal_attention(q, k, v, pad_mask)?;
            let merged = tape.merge_heads(att)?;
            let w = bind_weight(tape, &block.attn_out, lora)?;
            let b = tape.param(&block.attn_out_bias);
            let o = tape.linear(merged, w, Some(b))?;
            x = tape.add(x, o)?;

            let m = layer_norm(tape, x, &block.ln_2, eps)?;
            let w = bind_weight(tape, &block.mlp_fc, lora)?;
            let b = tape.param(&block.mlp_fc_bias);
            let f = tape.linear(m, w, Some(b))?;
            let f = tape.gelu(f);
            let w = bind_weight(tape, &block.mlp_out, lora)?;
            let b = tape.param(&block.mlp_out_bias);
            let f = tape.linear(f, w, Some(b))?;
            x = tape.add(x, f)?;
        }
        layer_norm(tape, x, &self.ln_f, eps)
    }

    /// Convenience inference pass on plain tensors.
    pub fn infer(&self, h: &Tensor<T>, pad_mask: &[bool], lora: Option<&LoraSet<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let x = tape.constant(h.clone());
        let out = self.forward(&mut tape, x, pad_mask, lora)?;
        Ok(tape.value(out).clone())
    }
}

pub(crate) fn layer_norm<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &LayerNormParams<T>, eps: T) -> Result<Var> {
    let g = tape.param(&p.gain);
    let b = tape.param(&p.bias);
    tape.layer_norm(x, g, b, eps)
}

/// Binds a projection weight, routing through its adapter when one exists.
fn bind_weight<T: Scalar>(tape: &mut Tape<T>, base: &Param<T>, lora: Option<&LoraSet<T>>) -> Result<Var> {
    match lora.and_then(|l| l.pair(&base.name)) {
        Some(pair) => pair.bind_effective(tape, base),
        None => Ok(tape.param(base)),
    }
}

/// Max absolute deviation of the block-stack output from a reference
/// fixture holding `input` and `output` tensors of shape `[B, L, d_model]`.
pub fn fixture_error<T: Scalar>(params: &GptParams<T>, fixture: &Container) -> Result<f64> {
    let input: Tensor<T> = fixture.tensor("input")?;
    let expected: Tensor<T> = fixture.tensor("output")?;
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::Import(format!(
            "fixture input has shape {s:?}, expected [B, L, d]"
        )));
    }
    let mask = vec![false; s[0] * s[1]];
    let out = params.infer(&input, &mask, None)?;
    if out.shape() != expected.shape() {
        return Err(Error::shape("fixture output", out.shape(), expected.shape()));
    }
    Ok(out.max_abs_diff(&expected))
}
