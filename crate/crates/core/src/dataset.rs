//! Returns-to-go, normalization and window sampling over trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::dt::WindowBatch;
use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const STD_FLOOR: f64 = 1e-8;

/// Undiscounted suffix sums.
pub fn returns_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    out
}

/// Smallest power of ten ≥ `x`; 1 for `x ≤ 0`.
pub fn power_of_ten_ceil(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return 1.0;
    }
    let mut p = 10f64.powf(x.log10().ceil());
    if p / 10.0 >= x {
        p /= 10.0;
    } else if p < x {
        p *= 10.0;
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub rtg_scale: f64,
}

impl NormStats {
    /// Mean and population std over every state row, rtg scale from the
    /// largest absolute return-to-go.
    pub fn fit(trajs: &[Trajectory]) -> Result<Self> {
        let first = trajs
            .first()
            .ok_or_else(|| Error::Data("no trajectories to fit".into()))?;
        let d = first.state_dim();
        let rows: Vec<&Vec<f64>> = trajs.iter().flat_map(|t| &t.states).collect();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Data("trajectories disagree on state dimension".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        let max_rtg = trajs
            .iter()
            .flat_map(|t| returns_to_go(&t.rewards))
            .fold(0.0f64, |a, r| a.max(r.abs()));
        Ok(Self {
            state_mean: mean,
            state_std: std,
            rtg_scale: power_of_ten_ceil(max_rtg),
        })
    }

    pub fn normalize(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(&self.state_mean)
            .zip(&self.state_std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.state_mean)
            .zip(&self.state_std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }
}

/// Single-row window ending at `t` over already-available history. Slots
/// before the episode start are zero and marked padded; an action index at or
/// past `actions.len()` reads as zeros.
pub fn build_window<T: Scalar>(
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    action_dim: usize,
    rtg: &[f64],
    t: usize,
    k: usize,
    stats: &NormStats,
) -> Result<WindowBatch<T>> {
    if t >= states.len() || t >= rtg.len() {
        return Err(Error::Range(format!(
            "anchor {t} outside history of {} steps",
            states.len().min(rtg.len())
        )));
    }
    if k == 0 {
        return Err(Error::Contract("window length must be positive".into()));
    }
    let d_s = stats.state_mean.len();
    let mut s = vec![T::zero(); k * d_s];
    let mut a = vec![T::zero(); k * action_dim];
    let mut r = vec![T::zero(); k];
    let mut timesteps = vec![0; k];
    let mut pad = vec![true; k];
    let start = (t + 1).saturating_sub(k);
    let offset = k - (t + 1 - start);
    for (slot, step) in (offset..k).zip(start..=t) {
        if states[step].len() != d_s {
            return Err(Error::shape("window state", &[states[step].len()], &[d_s]));
        }
        for (dst, z) in s[slot * d_s..(slot + 1) * d_s]
            .iter_mut()
            .zip(stats.normalize(&states[step]))
        {
            *dst = T::of(z);
        }
        if let Some(act) = actions.get(step) {
            if act.len() != action_dim {
                return Err(Error::shape("window action", &[act.len()], &[action_dim]));
            }
            for (dst, x) in a[slot * action_dim..(slot + 1) * action_dim].iter_mut().zip(act) {
                *dst = T::of(*x);
            }
        }
        r[slot] = T::of(rtg[step] / stats.rtg_scale);
        timesteps[slot] = step;
        pad[slot] = false;
    }
    Ok(WindowBatch {
        rtg: Tensor::new(&[1, k, 1], r)?,
        states: Tensor::new(&[1, k, d_s], s)?,
        actions: Tensor::new(&[1, k, action_dim], a)?,
        timesteps,
        pad_mask: pad,
    })
}

/// Window of `k` steps ending at anchor `t` of a recorded trajectory.
pub fn sample_window<T: Scalar>(traj: &Trajectory, t: usize, k: usize, stats: &NormStats) -> Result<WindowBatch<T>> {
    if t >= traj.len() {
        return Err(Error::Range(format!(
            "anchor {t} outside trajectory of length {}",
            traj.len()
        )));
    }
    let rtg = returns_to_go(&traj.rewards);
    build_window(&traj.states, &traj.actions, traj.action_dim(), &rtg, t, k, stats)
}

/// Trajectories with precomputed returns-to-go.
#[derive(Clone, Debug)]
pub struct OfflineDataset {
    pub trajectories: Vec<Trajectory>,
    rtg: Vec<Vec<f64>>,
}

impl OfflineDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Data("empty trajectory set".into()));
        }
        let (ds, da) = (trajectories[0].state_dim(), trajectories[0].action_dim());
        for t in &trajectories {
            t.validate()?;
            if t.is_empty() {
                return Err(Error::Data("trajectory with no steps".into()));
            }
            if t.state_dim() != ds || t.action_dim() != da {
                return Err(Error::Data("trajectories disagree on state or action dimension".into()));
            }
        }
        let rtg = trajectories.iter().map(|t| returns_to_go(&t.rewards)).collect();
        Ok(Self { trajectories, rtg })
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories[0].state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.trajectories[0].action_dim()
    }

    pub fn rtg(&self, traj: usize) -> &[f64] {
        &self.rtg[traj]
    }

    /// Every `(trajectory, anchor)` pair.
    pub fn anchors(&self) -> Vec<(usize, usize)> {
        self.trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |a| (i, a)))
            .collect()
    }

    pub fn window<T: Scalar>(&self, traj: usize, t: usize, k: usize, stats: &NormStats) -> Result<WindowBatch<T>> {
        let tr = &self.trajectories[traj];
        if t >= tr.len() {
            return Err(Error::Range(format!(
                "anchor {t} outside trajectory of length {}",
                tr.len()
            )));
        }
        build_window(&tr.states, &tr.actions, tr.action_dim(), &self.rtg[traj], t, k, stats)
    }
}

/// Draws anchors uniformly over all `(trajectory, anchor)` pairs.
pub struct WindowSampler {
    anchors: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
}

impl WindowSampler {
    pub fn new(dataset: &OfflineDataset, seed: u64) -> Self {
        Self {
            anchors: dataset.anchors(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn draw(&mut self) -> (usize, usize) {
        self.anchors[self.rng.random_range(0..self.anchors.len())]
    }

    pub fn batch<T: Scalar>(
        &mut self,
        dataset: &OfflineDataset,
        batch: usize,
        k: usize,
        stats: &NormStats,
    ) -> Result<WindowBatch<T>> {
        let rows = (0..batch)
            .map(|_| {
                let (i, t) = self.draw();
                dataset.window(i, t, k, stats)
            })
            .collect::<Result<Vec<_>>>()?;
        WindowBatch::stack(&rows)
    }
}
