//! Checkpoints: a tensor container plus a JSON sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::bc::{BcConfig, BcPolicy};
use crate::container::{Container, ContainerWriter};
use crate::dataset::{build_window, NormStats};
use crate::dt::{BackboneInit, DecisionTransformer, DtConfig};
use crate::env::{History, Policy};
use crate::error::{Error, Result};
use crate::gpt2::GptConfig;
use crate::lora::LoraConfig;
use crate::params::{ParamCounts, Parameterized};
use crate::scalar::Scalar;
use crate::training::{ActionModel, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const WEIGHTS_FILE: &str = "model.bin";
pub const SIDECAR_FILE: &str = "model.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Dt {
        gpt: GptConfig,
        dt: DtConfig,
        lora: Option<LoraConfig>,
        init: BackboneInit,
    },
    Bc {
        bc: BcConfig,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub dtype: String,
    pub model: ModelSpec,
    pub norm: NormStats,
    pub train: TrainConfig,
    pub seed: u64,
    pub iterations: usize,
    pub final_loss: Option<f64>,
    /// Initial return-to-go used when deploying a return-conditioned policy.
    pub eval_target_return: f64,
    pub trainable: ParamCounts,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Model<T> {
    Dt(DecisionTransformer<T>),
    Bc(BcPolicy<T>),
}

impl<T: Scalar> Model<T> {
    pub fn as_action_model(&self) -> &dyn ActionModel<T> {
        match self {
            Model::Dt(m) => m,
            Model::Bc(m) => m,
        }
    }

    pub fn trainable_counts(&self) -> ParamCounts {
        match self {
            Model::Dt(m) => m.trainable_counts(),
            Model::Bc(m) => m.trainable_counts(),
        }
    }

    fn write_container(&self, w: &mut ContainerWriter) {
        match self {
            Model::Dt(m) => m.write_container(w),
            Model::Bc(m) => m.write_container(w),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub model: Model<T>,
}

/// `(weights, sidecar)` for a checkpoint directory or a `.bin` path.
pub fn resolve_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.extension().is_some_and(|e| e == "bin") {
        (path.to_path_buf(), path.with_extension("json"))
    } else {
        (path.join(WEIGHTS_FILE), path.join(SIDECAR_FILE))
    }
}

impl<T: Scalar> Checkpoint<T> {
    /// Writes `model.bin` and `model.json` into `dir`, creating it.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = ContainerWriter::new();
        self.model.write_container(&mut w);
        w.write(dir.join(WEIGHTS_FILE))?;
        let sidecar = dir.join(SIDECAR_FILE);
        let json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&sidecar, json + "\n").map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (weights, sidecar) = resolve_paths(path.as_ref());
        let container = Container::read(&weights)?;
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "checkpoint schema version {} (expected {SCHEMA_VERSION})",
                meta.schema_version
            )));
        }
        if meta.dtype != T::DTYPE {
            return Err(Error::Config(format!(
                "checkpoint dtype {} (expected {})",
                meta.dtype,
                T::DTYPE
            )));
        }
        let model = match &meta.model {
            ModelSpec::Dt { gpt, dt, lora, init } => {
                let mut m = DecisionTransformer::init_random(gpt, dt.clone(), lora.as_ref(), meta.seed)?;
                m.load_from(&container)?;
                if *init == BackboneInit::Pretrained {
                    m.backbone.freeze_all();
                }
                Model::Dt(m)
            }
            ModelSpec::Bc { bc } => {
                let mut m = BcPolicy::init(bc.clone(), meta.seed);
                m.load_from(&container)?;
                Model::Bc(m)
            }
        };
        Ok(Self { meta, model })
    }

    pub fn policy(&self) -> ModelPolicy<'_, T> {
        ModelPolicy {
            model: &self.model,
            stats: &self.meta.norm,
        }
    }
}

/// Deploys a trained model: builds the window ending today from the rollout
/// history and acts on the last slot's prediction.
pub struct ModelPolicy<'a, T> {
    pub model: &'a Model<T>,
    pub stats: &'a NormStats,
}

impl<T: Scalar> Policy for ModelPolicy<'_, T> {
    fn name(&self) -> String {
        match self.model {
            Model::Dt(_) => "dt".into(),
            Model::Bc(_) => "bc".into(),
        }
    }

    fn act(&mut self, h: &History<'_>) -> Result<Vec<f64>> {
        let m = self.model.as_action_model();
        let k = m.context_len();
        let d_a = h.panel.num_assets();
        let window = build_window::<T>(h.states, h.actions, d_a, h.returns_to_go, h.day, k, self.stats)?;
        let pred: Tensor<T> = {
            let mut tape = crate::autograd::Tape::inference();
            let v = m.predict_actions(&mut tape, &window)?;
            tape.value(v).clone()
        };
        let last = &pred.data()[(k - 1) * d_a..k * d_a];
        Ok(last.iter().map(|x| x.f64().clamp(-1.0, 1.0)).collect())
    }
}
