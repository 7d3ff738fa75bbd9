//! Decision Transformer on a LoRA-adapted GPT-2 backbone, trained offline on
//! expert portfolio-trading trajectories and scored in a simulated market.
//!
//! The model stack ([`autograd`], [`gpt2`], [`lora`], [`dt`], [`bc`],
//! [`training`]) is generic over the [`Scalar`] element type; the aliases
//! below pin it to `f64`, which is what the pipeline uses end to end.
//! Market data, the environment and metrics work in `f64` currency units.

pub mod autograd;
pub mod bc;
pub mod checkpoint;
pub mod container;
pub mod dataset;
pub mod dt;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod gpt2;
pub mod lora;
pub mod market;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autograd::Tensor<f64>;
pub type Tape = autograd::Tape<f64>;
pub type DecisionTransformer = dt::DecisionTransformer<f64>;
pub type BcPolicy = bc::BcPolicy<f64>;
pub type GptParams = gpt2::GptParams<f64>;
pub type LoraSet = lora::LoraSet<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
