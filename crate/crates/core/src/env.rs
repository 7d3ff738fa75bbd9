//! Daily portfolio environment, rollouts and scripted experts.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::market::{FeaturePanel, INDICATORS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub initial_balance: f64,
    pub hmax: u32,
    pub transaction_cost_rate: f64,
    pub reward_scale: f64,
    /// Kept for completeness; returns-to-go are undiscounted.
    pub gamma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            initial_balance: 1_000_000.0,
            hmax: 100,
            transaction_cost_rate: 0.001,
            reward_scale: 1e-4,
            gamma: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_balance > 0.0 && self.initial_balance.is_finite()) {
            return Err(Error::Config(format!(
                "initial_balance must be positive, got {}",
                self.initial_balance
            )));
        }
        if !(0.0..1.0).contains(&self.transaction_cost_rate) {
            return Err(Error::Config(format!(
                "transaction_cost_rate must be in [0, 1), got {}",
                self.transaction_cost_rate
            )));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::Config(format!(
                "reward_scale must be positive, got {}",
                self.reward_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// `1 + 2M + 4M`: cash, prices, holdings, indicators.
pub fn state_dim(num_assets: usize) -> usize {
    1 + 2 * num_assets + INDICATORS.len() * num_assets
}

#[derive(Clone, Debug, PartialEq)]
pub struct PortfolioState {
    pub day: usize,
    pub cash: f64,
    pub prices: Vec<f64>,
    pub holdings: Vec<u64>,
    /// Indicator-major: all MACD values, then all RSI values, and so on.
    pub indicators: Vec<f64>,
}

impl PortfolioState {
    pub fn num_assets(&self) -> usize {
        self.prices.len()
    }

    pub fn value(&self) -> f64 {
        self.cash
            + self
                .prices
                .iter()
                .zip(&self.holdings)
                .map(|(p, &h)| p * h as f64)
                .sum::<f64>()
    }

    /// Flattened `[cash, prices, holdings, indicators]`.
    pub fn observation(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(state_dim(self.num_assets()));
        s.push(self.cash);
        s.extend(&self.prices);
        s.extend(self.holdings.iter().map(|&h| h as f64));
        s.extend(&self.indicators);
        s
    }
}

fn market_view(panel: &FeaturePanel, day: usize) -> (Vec<f64>, Vec<f64>) {
    let prices = panel.ohlcv.closes(day);
    let m = prices.len();
    let mut ind = vec![0.0; INDICATORS.len() * m];
    for (a, vals) in panel.indicators[day].iter().enumerate() {
        for (k, v) in vals.iter().enumerate() {
            ind[k * m + a] = *v;
        }
    }
    (prices, ind)
}

pub fn reset(panel: &FeaturePanel, config: &EnvConfig) -> Result<PortfolioState> {
    config.validate()?;
    if panel.is_empty() || panel.num_assets() == 0 {
        return Err(Error::Data("cannot reset on an empty panel".into()));
    }
    let (prices, indicators) = market_view(panel, 0);
    Ok(PortfolioState {
        day: 0,
        cash: config.initial_balance,
        holdings: vec![0; prices.len()],
        prices,
        indicators,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next: PortfolioState,
    /// `reward_scale · raw_reward`.
    pub reward: f64,
    /// `value(next) − value(current)`.
    pub raw_reward: f64,
    pub done: bool,
}

/// Sells execute first (capped at holdings), then buys (capped by cash
/// including fees), then the day advances and prices are marked.
pub fn step(panel: &FeaturePanel, state: &PortfolioState, action: &[f64], config: &EnvConfig) -> Result<StepResult> {
    let m = state.num_assets();
    if action.len() != m {
        return Err(Error::Contract(format!(
            "action has {} components for {m} assets",
            action.len()
        )));
    }
    if let Some(a) = action.iter().find(|a| !(-1.0..=1.0).contains(*a)) {
        return Err(Error::Contract(format!("action component {a} outside [-1, 1]")));
    }
    if state.day + 1 >= panel.len() {
        return Err(Error::Contract(format!("step after terminal day {}", state.day)));
    }
    let before = state.value();
    let fee = config.transaction_cost_rate;
    let hmax = f64::from(config.hmax);
    let mut cash = state.cash;
    let mut holdings = state.holdings.clone();
    let trades: Vec<i64> = action.iter().map(|a| (a * hmax).round() as i64).collect();

    for (i, &q) in trades.iter().enumerate() {
        if q < 0 {
            let n = q.unsigned_abs().min(holdings[i]);
            let gross = n as f64 * state.prices[i];
            cash += gross - fee * gross;
            holdings[i] -= n;
        }
    }
    for (i, &q) in trades.iter().enumerate() {
        if q > 0 {
            let p = state.prices[i];
            let unit = p * (1.0 + fee);
            let mut n = (q as u64).min((cash / unit).floor().max(0.0) as u64);
            let cost = |n: u64| {
                let gross = n as f64 * p;
                gross + fee * gross
            };
            while n > 0 && cost(n) > cash {
                n -= 1;
            }
            cash -= cost(n);
            holdings[i] += n;
        }
    }

    let day = state.day + 1;
    let (prices, indicators) = market_view(panel, day);
    let next = PortfolioState {
        day,
        cash,
        prices,
        holdings,
        indicators,
    };
    let raw_reward = next.value() - before;
    Ok(StepResult {
        reward: config.reward_scale * raw_reward,
        raw_reward,
        done: day + 1 == panel.len(),
        next,
    })
}

/// What a policy sees before acting on day `day`.
pub struct History<'a> {
    pub panel: &'a FeaturePanel,
    pub day: usize,
    /// Observations for days `0..=day`.
    pub states: &'a [Vec<f64>],
    /// Actions for days `0..day`.
    pub actions: &'a [Vec<f64>],
    /// Remaining target for days `0..=day`.
    pub returns_to_go: &'a [f64],
}

impl History<'_> {
    pub fn state(&self) -> &[f64] {
        &self.states[self.day]
    }
}

pub trait Policy {
    fn name(&self) -> String;
    fn act(&mut self, history: &History<'_>) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub expert: String,
    pub config_hash: String,
    pub seed: u64,
}

/// One episode: `states` has one more row than `actions` and `rewards`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Scaled rewards.
    pub rewards: Vec<f64>,
    pub dates: Vec<String>,
    pub meta: TrajectoryMeta,
    /// Portfolio value per day, `states.len()` entries.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if self.states.len() != t + 1 || self.rewards.len() != t {
            return Err(Error::Data(format!(
                "trajectory lengths disagree: {} states, {} actions, {} rewards",
                self.states.len(),
                t,
                self.rewards.len()
            )));
        }
        if !self.values.is_empty() && self.values.len() != t + 1 {
            return Err(Error::Data(format!(
                "{} values for {} states",
                self.values.len(),
                t + 1
            )));
        }
        let (ds, da) = (self.state_dim(), self.action_dim());
        if self.states.iter().any(|s| s.len() != ds) || self.actions.iter().any(|a| a.len() != da) {
            return Err(Error::Data("ragged state or action rows".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.states.iter().all(|s| finite(s)) || !self.actions.iter().all(|a| finite(a)) || !finite(&self.rewards) {
            return Err(Error::Data("non-finite value in trajectory".into()));
        }
        Ok(())
    }

    /// Equity curve, starting at the initial balance.
    pub fn equity(&self) -> &[f64] {
        &self.values
    }
}

pub fn write_trajectories<W: Write>(mut out: W, trajs: &[Trajectory]) -> Result<()> {
    for t in trajs {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").map_err(|e| Error::io("<trajectories>", e))?;
    }
    Ok(())
}

pub fn save_trajectories(path: impl AsRef<Path>, trajs: &[Trajectory]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_trajectories(&mut w, trajs)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        traj.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        out.push(traj);
    }
    Ok(out)
}

/// Runs `policy` from the first to the last day of `panel`, decrementing the
/// remaining target by each scaled reward.
pub fn rollout(
    policy: &mut dyn Policy,
    panel: &FeaturePanel,
    config: &EnvConfig,
    target_return: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut state = reset(panel, config)?;
    let steps = panel.len() - 1;
    let mut states = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    let mut rtg = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    states.push(state.observation());
    rtg.push(target_return);
    values.push(state.value());

    for day in 0..steps {
        let action = policy.act(&History {
            panel,
            day,
            states: &states,
            actions: &actions,
            returns_to_go: &rtg,
        })?;
        let res = step(panel, &state, &action, config)?;
        rtg.push(rtg[day] - res.reward);
        rewards.push(res.reward);
        actions.push(action);
        state = res.next;
        states.push(state.observation());
        values.push(state.value());
    }
    Ok(Trajectory {
        states,
        actions,
        rewards,
        dates: panel.dates().iter().map(|d| d.to_string()).collect(),
        meta: TrajectoryMeta {
            expert: policy.name(),
            config_hash: config.hash(),
            seed,
        },
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    BuyAndHold,
    Momentum,
    OracleLookahead,
}

impl ExpertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::BuyAndHold => "buy_and_hold",
            Self::Momentum => "momentum",
            Self::OracleLookahead => "oracle_lookahead",
        }
    }
}

impl std::str::FromStr for ExpertKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "buy_and_hold" => Ok(Self::BuyAndHold),
            "momentum" => Ok(Self::Momentum),
            "oracle_lookahead" => Ok(Self::OracleLookahead),
            _ => Err(Error::Config(format!(
                "unknown expert `{s}` (buy_and_hold, momentum, oracle_lookahead)"
            ))),
        }
    }
}

/// Gain applied to MACD / close in the momentum expert.
pub const MOMENTUM_GAIN: f64 = 50.0;

/// Rule-based stand-ins for trained RL agents.
#[derive(Clone, Copy, Debug)]
pub struct ScriptedExpert(pub ExpertKind);

impl Policy for ScriptedExpert {
    fn name(&self) -> String {
        self.0.as_str().to_string()
    }

    fn act(&mut self, h: &History<'_>) -> Result<Vec<f64>> {
        let s = h.state();
        let m = h.panel.num_assets();
        let prices = &s[1..1 + m];
        Ok(match self.0 {
            ExpertKind::BuyAndHold => vec![1.0; m],
            ExpertKind::Momentum => {
                let macd = &s[1 + 2 * m..1 + 3 * m];
                macd.iter()
                    .zip(prices)
                    .map(|(d, p)| (MOMENTUM_GAIN * d / p).tanh())
                    .collect()
            }
            ExpertKind::OracleLookahead => {
                let next = h.panel.ohlcv.closes(h.day + 1);
                next.iter()
                    .zip(prices)
                    .map(|(n, p)| if n > p { 1.0 } else { -1.0 })
                    .collect()
            }
        })
    }
}

pub fn scripted_expert(kind: ExpertKind, panel: &FeaturePanel, config: &EnvConfig) -> Result<Trajectory> {
    if panel.len() < 2 {
        return Err(Error::Data("expert rollouts need at least two days".into()));
    }
    rollout(&mut ScriptedExpert(kind), panel, config, 0.0, 0)
}
