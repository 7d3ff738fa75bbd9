//! Seeded synthetic OHLCV panels.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{Bar, OhlcvPanel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Geometric random walk.
    Gbm,
    /// Log price pulled back toward its starting level (Ornstein-Uhlenbeck).
    MeanReverting,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbm" => Ok(Self::Gbm),
            "mean_reverting" | "mean-reverting" => Ok(Self::MeanReverting),
            _ => Err(Error::Config(format!(
                "unknown synthetic market kind `{s}` (gbm, mean_reverting)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub tickers: usize,
    pub days: usize,
    pub start: NaiveDate,
    /// Daily log drift (GBM only).
    pub drift: f64,
    /// Daily log volatility.
    pub volatility: f64,
    /// Per-day pull toward the mean (mean-reverting only).
    pub reversion: f64,
}

impl SynthConfig {
    pub fn new(kind: SynthKind, tickers: usize, days: usize) -> Self {
        Self {
            kind,
            tickers,
            days,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            drift: 3e-4,
            volatility: 0.015,
            reversion: 0.1,
        }
    }
}

/// Next `n` weekdays on or after `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<OhlcvPanel> {
    if cfg.tickers == 0 || cfg.days == 0 {
        return Err(Error::Config(
            "synthetic panel needs at least one ticker and one day".into(),
        ));
    }
    if cfg.volatility.is_nan() || cfg.volatility < 0.0 || !(0.0..=1.0).contains(&cfg.reversion) {
        return Err(Error::Config("volatility must be ≥ 0 and reversion in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let dates = business_days(cfg.start, cfg.days);
    let tickers: Vec<String> = (0..cfg.tickers).map(|i| format!("SYN{i:02}")).collect();

    let mut bars = vec![Vec::with_capacity(cfg.tickers); cfg.days];
    for _ in 0..cfg.tickers {
        let base: f64 = rng.random_range(20.0..200.0);
        let anchor = base.ln();
        let mut log_p = anchor;
        let mut prev_close = base;
        for row in bars.iter_mut() {
            let z: f64 = noise.sample(&mut rng);
            log_p += match cfg.kind {
                SynthKind::Gbm => cfg.drift - 0.5 * cfg.volatility * cfg.volatility + cfg.volatility * z,
                SynthKind::MeanReverting => cfg.reversion * (anchor - log_p) + cfg.volatility * z,
            };
            let close = log_p.exp();
            let open = prev_close * (1.0 + 0.25 * cfg.volatility * noise.sample(&mut rng));
            let wick = |rng: &mut ChaCha8Rng| 1.0 + 0.5 * cfg.volatility * noise.sample(rng).abs();
            let high = open.max(close) * wick(&mut rng);
            let low = open.min(close) / wick(&mut rng);
            let volume = rng.random_range(1e5..1e6_f64).round();
            row.push(Bar {
                open,
                high,
                low,
                close,
                volume,
            });
            prev_close = close;
        }
    }
    Ok(OhlcvPanel { tickers, dates, bars })
}
