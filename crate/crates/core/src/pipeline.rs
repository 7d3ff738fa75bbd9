//! End-to-end steps shared by the command-line tool and the tests: build a
//! model from run settings, train it on trajectories, package a checkpoint.

use serde::{Deserialize, Serialize};

use crate::bc::{BcConfig, BcPolicy};
use crate::checkpoint::{Checkpoint, CheckpointMeta, Model, ModelSpec, SCHEMA_VERSION};
use crate::container::Container;
use crate::dataset::{NormStats, OfflineDataset};
use crate::dt::{BackboneInit, DecisionTransformer, DtConfig, EmbedderSet};
use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::gpt2::{GptConfig, GptParams};
use crate::lora::LoraConfig;
use crate::params::Parameterized;
use crate::scalar::Scalar;
use crate::training::{train, TrainConfig, TrainLog};

pub const RUN_SCHEMA_VERSION: u32 = 1;

fn default_context() -> usize {
    20
}

fn default_max_ep_len() -> usize {
    4096
}

fn default_lora() -> Option<LoraConfig> {
    Some(LoraConfig::default())
}

/// Settings file for `train-dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtRunConfig {
    pub schema_version: u32,
    /// Backbone shape for random initialization; a pretrained container
    /// determines its own shape.
    #[serde(default = "GptConfig::gpt2_small")]
    pub backbone: GptConfig,
    #[serde(default = "default_context")]
    pub context_len: usize,
    #[serde(default = "default_max_ep_len")]
    pub max_ep_len: usize,
    /// `null` trains the whole backbone.
    #[serde(default = "default_lora")]
    pub lora: Option<LoraConfig>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for DtRunConfig {
    fn default() -> Self {
        Self {
            schema_version: RUN_SCHEMA_VERSION,
            backbone: GptConfig::gpt2_small(),
            context_len: default_context(),
            max_ep_len: default_max_ep_len(),
            lora: default_lora(),
            train: TrainConfig::default(),
        }
    }
}

/// Settings file for `train-bc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcRunConfig {
    pub schema_version: u32,
    /// Explicit hidden sizes; otherwise sized to match a parameter budget.
    #[serde(default)]
    pub hidden: Option<[usize; 2]>,
    #[serde(default)]
    pub target_params: Option<usize>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for BcRunConfig {
    fn default() -> Self {
        Self {
            schema_version: RUN_SCHEMA_VERSION,
            hidden: None,
            target_params: None,
            train: TrainConfig::default(),
        }
    }
}

fn check_schema(found: u32) -> Result<()> {
    if found != RUN_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "config schema_version {found} is not supported (expected {RUN_SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

impl DtRunConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.backbone.validate()?;
        self.train.validate()
    }
}

impl BcRunConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.train.validate()
    }
}

/// Mean total scaled return of the trajectories; the starting
/// return-to-go at deployment.
pub fn target_return(trajs: &[Trajectory]) -> f64 {
    trajs.iter().map(|t| t.rewards.iter().sum::<f64>()).sum::<f64>() / trajs.len().max(1) as f64
}

/// Trainable parameters of a DT with these settings, without building the
/// backbone.
pub fn dt_trainable_count(gpt: &GptConfig, dt: &DtConfig, lora: Option<&LoraConfig>) -> Result<usize> {
    let backbone = match lora {
        Some(l) => l.trainable_count(gpt)?,
        None => gpt.param_count(),
    };
    let emb = EmbedderSet::<f32>::init(dt, gpt.d_model, 0);
    Ok(backbone + emb.params().iter().map(|p| p.numel()).sum::<usize>())
}

/// Builds and trains a DT. With `pretrained`, the backbone is imported from
/// the container (shape discovered from it) instead of randomly initialized.
pub fn train_dt<T: Scalar>(
    trajs: Vec<Trajectory>,
    run: &DtRunConfig,
    pretrained: Option<&Container>,
    seed: u64,
    progress: impl FnMut(usize, f64),
) -> Result<(Checkpoint<T>, TrainLog)> {
    run.validate()?;
    let eval_target_return = target_return(&trajs);
    let dataset = OfflineDataset::new(trajs)?;
    let stats = NormStats::fit(&dataset.trajectories)?;
    let dt = DtConfig {
        context_len: run.context_len,
        state_dim: dataset.state_dim(),
        action_dim: dataset.action_dim(),
        max_ep_len: run.max_ep_len,
    };
    let (mut model, init, gpt) = match pretrained {
        Some(c) => {
            let gpt = GptConfig::discover(c)?;
            let backbone = GptParams::import(c, &gpt)?;
            (
                DecisionTransformer::new(backbone, dt.clone(), run.lora.as_ref(), seed)?,
                BackboneInit::Pretrained,
                gpt,
            )
        }
        None => (
            DecisionTransformer::init_random(&run.backbone, dt.clone(), run.lora.as_ref(), seed)?,
            BackboneInit::Random,
            run.backbone.clone(),
        ),
    };
    let cfg = TrainConfig {
        seed,
        ..run.train.clone()
    };
    let log = train(&mut model, &dataset, &stats, &cfg, progress)?;
    let meta = CheckpointMeta {
        schema_version: SCHEMA_VERSION,
        dtype: T::DTYPE.into(),
        model: ModelSpec::Dt {
            gpt,
            dt,
            lora: run.lora.clone(),
            init,
        },
        norm: stats,
        train: cfg,
        seed,
        iterations: log.losses.len(),
        final_loss: log.final_loss(),
        eval_target_return,
        trainable: model.trainable_counts(),
    };
    Ok((
        Checkpoint {
            meta,
            model: Model::Dt(model),
        },
        log,
    ))
}

/// Trains the state-to-action MLP baseline.
pub fn train_bc<T: Scalar>(
    trajs: Vec<Trajectory>,
    run: &BcRunConfig,
    seed: u64,
    progress: impl FnMut(usize, f64),
) -> Result<(Checkpoint<T>, TrainLog)> {
    run.validate()?;
    let eval_target_return = target_return(&trajs);
    let dataset = OfflineDataset::new(trajs)?;
    let stats = NormStats::fit(&dataset.trajectories)?;
    let (d_s, d_a) = (dataset.state_dim(), dataset.action_dim());
    let bc = match (run.hidden, run.target_params) {
        (Some(hidden), _) => BcConfig {
            state_dim: d_s,
            action_dim: d_a,
            hidden,
        },
        (None, Some(target)) => BcConfig::matched(d_s, d_a, target)?,
        (None, None) => return Err(Error::Config("BC needs either `hidden` or `target_params`".into())),
    };
    let mut model = BcPolicy::init(bc.clone(), seed);
    let cfg = TrainConfig {
        seed,
        ..run.train.clone()
    };
    let log = train(&mut model, &dataset, &stats, &cfg, progress)?;
    let meta = CheckpointMeta {
        schema_version: SCHEMA_VERSION,
        dtype: T::DTYPE.into(),
        model: ModelSpec::Bc { bc },
        norm: stats,
        train: cfg,
        seed,
        iterations: log.losses.len(),
        final_loss: log.final_loss(),
        eval_target_return,
        trainable: model.trainable_counts(),
    };
    Ok((
        Checkpoint {
            meta,
            model: Model::Bc(model),
        },
        log,
    ))
}
