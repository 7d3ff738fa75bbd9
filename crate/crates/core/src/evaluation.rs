//! Test-period deployment and multi-seed metric reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::{rollout, EnvConfig};
use crate::error::{Error, Result};
use crate::market::FeaturePanel;
use crate::metrics::{cumulative_return, max_drawdown, sharpe_ratio, EquityCurve, TRADING_DAYS};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub cumulative_return_pct: f64,
    pub mdd_pct: f64,
    /// `None` when the return variance is zero.
    pub sharpe: Option<f64>,
}

impl SeedMetrics {
    pub fn from_curve(seed: u64, curve: &EquityCurve) -> Result<Self> {
        let sharpe = match sharpe_ratio(&curve.values, 0.0, TRADING_DAYS) {
            Ok(s) => Some(s),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            seed,
            cumulative_return_pct: cumulative_return(&curve.values)?,
            mdd_pct: max_drawdown(&curve.values)?,
            sharpe,
        })
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cumulative_return_pct: MeanStd,
    pub mdd_pct: MeanStd,
    /// Over seeds whose Sharpe ratio is defined.
    pub sharpe: Option<MeanStd>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub policy: String,
    pub checkpoint_hash: Option<String>,
    pub expert: Option<String>,
    pub start_date: Option<String>,
    pub end_date: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: ReportMeta,
    pub rows: Vec<SeedMetrics>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    pub fn from_rows(meta: ReportMeta, rows: Vec<SeedMetrics>) -> Result<Self> {
        let col = |f: fn(&SeedMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let aggregate = Aggregate {
            cumulative_return_pct: MeanStd::of(&col(|r| r.cumulative_return_pct))
                .ok_or_else(|| Error::Data("report needs at least one seed".into()))?,
            mdd_pct: MeanStd::of(&col(|r| r.mdd_pct)).expect("non-empty"),
            sharpe: MeanStd::of(&rows.iter().filter_map(|r| r.sharpe).collect::<Vec<_>>()),
        };
        Ok(Self { meta, rows, aggregate })
    }

    pub fn from_curves(meta: ReportMeta, curves: &[(u64, EquityCurve)]) -> Result<Self> {
        let rows = curves
            .iter()
            .map(|(s, c)| SeedMetrics::from_curve(*s, c))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(meta, rows)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Rolls the checkpoint's policy over `panel` once per seed. Return-conditioned
/// policies start from the checkpoint's evaluation target.
pub fn evaluate_checkpoint<T: Scalar>(
    ckpt: &Checkpoint<T>,
    panel: &FeaturePanel,
    env: &EnvConfig,
    seeds: &[u64],
    meta: ReportMeta,
) -> Result<(MetricsReport, Vec<(u64, EquityCurve)>)> {
    if seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one seed".into()));
    }
    let mut curves = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let traj = rollout(&mut ckpt.policy(), panel, env, ckpt.meta.eval_target_return, seed)?;
        curves.push((seed, EquityCurve::new(traj.dates, traj.values)?));
    }
    let meta = ReportMeta {
        start_date: panel.dates().first().map(|d| d.to_string()),
        end_date: panel.dates().last().map(|d| d.to_string()),
        ..meta
    };
    Ok((MetricsReport::from_curves(meta, &curves)?, curves))
}
