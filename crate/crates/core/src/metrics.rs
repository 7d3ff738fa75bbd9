//! Return, drawdown and Sharpe metrics over equity curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRADING_DAYS: f64 = 252.0;

/// Daily account values with their dates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub dates: Vec<String>,
    pub values: Vec<f64>,
}

impl EquityCurve {
    pub fn new(dates: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::Data(format!(
                "{} dates for {} values",
                dates.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Data(format!("equity value {v} is not positive")));
        }
        Ok(Self { dates, values })
    }

    /// Curve with placeholder dates `0, 1, ...`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new((0..values.len()).map(|i| i.to_string()).collect(), values)
    }

    /// `value[i] / value[i−1] − 1`.
    pub fn returns(&self) -> Vec<f64> {
        daily_returns(&self.values)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "value"])?;
        for (d, v) in self.dates.iter().zip(&self.values) {
            w.write_record([d.clone(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<equity csv>", e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let (mut dates, mut values) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 2 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("expected 2 fields, found {}", rec.len()),
                });
            }
            dates.push(rec[0].to_string());
            values.push(rec[1].trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad value `{}`", &rec[1]),
            })?);
        }
        Self::new(dates, values)
    }
}

pub fn daily_returns(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// `(final / initial − 1) · 100`.
pub fn cumulative_return(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::UndefinedMetric("cumulative return needs at least two values"));
    }
    let (first, last) = (values[0], values[values.len() - 1]);
    if first.is_nan() || first <= 0.0 {
        return Err(Error::Data(format!("initial equity {first} is not positive")));
    }
    Ok((last / first - 1.0) * 100.0)
}

/// Largest peak-to-trough decline in percent (≤ 0).
pub fn max_drawdown(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::UndefinedMetric("max drawdown needs at least two values"));
    }
    let mut peak = values[0];
    let mut worst = 0.0f64;
    for &v in values {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    Ok(worst * 100.0)
}

/// Annualized mean daily excess return over the sample std of daily returns.
pub fn sharpe_ratio(values: &[f64], risk_free_daily: f64, periods_per_year: f64) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::UndefinedMetric("Sharpe ratio needs at least three values"));
    }
    sharpe_from_returns(&daily_returns(values), risk_free_daily, periods_per_year)
}

pub fn sharpe_from_returns(returns: &[f64], risk_free_daily: f64, periods_per_year: f64) -> Result<f64> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::UndefinedMetric("Sharpe ratio needs at least two returns"));
    }
    let mean_r = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean_r) * (r - mean_r)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    // Returns of a constant-growth curve differ only by rounding.
    if std == 0.0 || std <= 1e-12 * mean_r.abs() {
        return Err(Error::UndefinedMetric(
            "Sharpe ratio undefined for zero return variance",
        ));
    }
    Ok(periods_per_year.sqrt() * (mean_r - risk_free_daily) / std)
}
