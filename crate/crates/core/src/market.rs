//! OHLCV panels, technical indicators and date splits.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Indicator columns, in state-vector order.
pub const INDICATORS: [&str; 4] = ["macd", "rsi_30", "cci_30", "dx_30"];
pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;
pub const WINDOW: usize = 30;
/// Rows dropped from the front so every windowed indicator is complete.
pub const WARMUP: usize = WINDOW;
/// A ticker missing from more than this fraction of dates is rejected.
pub const MAX_MISSING_FRACTION: f64 = 0.05;

const DATE_FMT: &str = "%Y-%m-%d";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bar {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

/// Date-aligned bars, `bars[date][ticker]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OhlcvPanel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub bars: Vec<Vec<Bar>>,
}

impl OhlcvPanel {
    pub fn num_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn closes(&self, day: usize) -> Vec<f64> {
        self.bars[day].iter().map(|b| b.close).collect()
    }

    /// Close series of one ticker.
    pub fn close_series(&self, asset: usize) -> Vec<f64> {
        self.bars.iter().map(|row| row[asset].close).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("dates must be strictly increasing".into()));
        }
        for (d, row) in self.dates.iter().zip(&self.bars) {
            if row.len() != self.tickers.len() {
                return Err(Error::Data(format!(
                    "{d}: {} bars for {} tickers",
                    row.len(),
                    self.tickers.len()
                )));
            }
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let (panel, _) = read_rows(file, path, 0)?;
        Ok(panel)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, self, None)
    }
}

/// Loads `date,ticker,open,high,low,close,volume` and aligns to the dates
/// every ticker trades.
pub fn load_ohlcv(path: impl AsRef<Path>) -> Result<OhlcvPanel> {
    OhlcvPanel::read_csv(path)
}

fn parse_field(rec: &csv::StringRecord, i: usize, name: &str, path: &Path, line: u64) -> Result<f64> {
    let raw = rec.get(i).unwrap_or("");
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("bad {name} value `{raw}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("non-finite {name}"),
        });
    }
    Ok(v)
}

/// Extra columns per day and ticker.
type ExtraColumns = Vec<Vec<Vec<f64>>>;

/// Reads OHLCV rows plus `extra` trailing numeric columns per row.
fn read_rows<R: Read>(input: R, path: &Path, extra: usize) -> Result<(OhlcvPanel, Option<ExtraColumns>)> {
    const BASE: [&str; 7] = ["date", "ticker", "open", "high", "low", "close", "volume"];
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let want: Vec<&str> = BASE
        .iter()
        .copied()
        .chain(INDICATORS.iter().copied().take(extra))
        .collect();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != want {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header {}, found {}", want.join(","), got.join(",")),
        });
    }

    let mut cells: BTreeMap<(NaiveDate, String), (Bar, Vec<f64>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != want.len() {
            return Err(perr(format!("expected {} fields, found {}", want.len(), rec.len())));
        }
        let date =
            NaiveDate::parse_from_str(rec[0].trim(), DATE_FMT).map_err(|_| perr(format!("bad date `{}`", &rec[0])))?;
        let ticker = rec[1].trim().to_string();
        if ticker.is_empty() {
            return Err(perr("empty ticker".into()));
        }
        let mut vals = [0.0; 5];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = parse_field(&rec, 2 + i, BASE[2 + i], path, line)?;
        }
        let bar = Bar {
            open: vals[0],
            high: vals[1],
            low: vals[2],
            close: vals[3],
            volume: vals[4],
        };
        if bar.open <= 0.0 || bar.high <= 0.0 || bar.low <= 0.0 || bar.close <= 0.0 {
            return Err(perr(format!("non-positive price for {ticker} on {date}")));
        }
        if bar.volume < 0.0 {
            return Err(perr(format!("negative volume for {ticker} on {date}")));
        }
        let ind = (0..extra)
            .map(|j| parse_field(&rec, 7 + j, INDICATORS[j], path, line))
            .collect::<Result<Vec<_>>>()?;
        if cells.insert((date, ticker.clone()), (bar, ind)).is_some() {
            return Err(perr(format!("duplicate row for {ticker} on {date}")));
        }
    }

    let all_dates: BTreeSet<NaiveDate> = cells.keys().map(|(d, _)| *d).collect();
    let tickers: BTreeSet<String> = cells.keys().map(|(_, t)| t.clone()).collect();
    if tickers.is_empty() {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    for t in &tickers {
        let present = cells.keys().filter(|(_, x)| x == t).count();
        let missing = all_dates.len() - present;
        if missing as f64 > MAX_MISSING_FRACTION * all_dates.len() as f64 {
            return Err(Error::Data(format!(
                "ticker {t} is missing {missing} of {} dates (more than {:.0}%)",
                all_dates.len(),
                MAX_MISSING_FRACTION * 100.0
            )));
        }
    }
    let tickers: Vec<String> = tickers.into_iter().collect();
    let dates: Vec<NaiveDate> = all_dates
        .into_iter()
        .filter(|d| tickers.iter().all(|t| cells.contains_key(&(*d, t.clone()))))
        .collect();
    let mut bars = Vec::with_capacity(dates.len());
    let mut extras = Vec::with_capacity(dates.len());
    for d in &dates {
        let mut row = Vec::with_capacity(tickers.len());
        let mut erow = Vec::with_capacity(tickers.len());
        for t in &tickers {
            let (bar, ind) = &cells[&(*d, t.clone())];
            row.push(*bar);
            erow.push(ind.clone());
        }
        bars.push(row);
        extras.push(erow);
    }
    let panel = OhlcvPanel { tickers, dates, bars };
    panel.validate()?;
    Ok((panel, (extra > 0).then_some(extras)))
}

fn write_rows<W: Write>(out: W, panel: &OhlcvPanel, indicators: Option<&[Vec<[f64; 4]>]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date", "ticker", "open", "high", "low", "close", "volume"];
    if indicators.is_some() {
        header.extend(INDICATORS);
    }
    w.write_record(&header)?;
    for (i, (d, row)) in panel.dates.iter().zip(&panel.bars).enumerate() {
        for (j, (t, b)) in panel.tickers.iter().zip(row).enumerate() {
            let mut rec = vec![
                d.format(DATE_FMT).to_string(),
                t.clone(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.volume.to_string(),
            ];
            if let Some(ind) = indicators {
                rec.extend(ind[i][j].iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Panel with per-(date, ticker) indicators, in [`INDICATORS`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePanel {
    pub ohlcv: OhlcvPanel,
    pub indicators: Vec<Vec<[f64; 4]>>,
}

impl FeaturePanel {
    pub fn len(&self) -> usize {
        self.ohlcv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ohlcv.is_empty()
    }

    pub fn num_assets(&self) -> usize {
        self.ohlcv.num_assets()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.ohlcv.dates
    }

    /// Rows `range` as a new panel.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            ohlcv: OhlcvPanel {
                tickers: self.ohlcv.tickers.clone(),
                dates: self.ohlcv.dates[range.clone()].to_vec(),
                bars: self.ohlcv.bars[range.clone()].to_vec(),
            },
            indicators: self.indicators[range].to_vec(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.ohlcv, Some(&self.indicators))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let (ohlcv, extra) = read_rows(file, path, INDICATORS.len())?;
        let indicators = extra
            .expect("indicator columns requested")
            .into_iter()
            .map(|row| row.into_iter().map(|v| [v[0], v[1], v[2], v[3]]).collect())
            .collect();
        Ok(Self { ohlcv, indicators })
    }
}

/// EMA seeded with the first value, `α = 2 / (span + 1)`.
pub fn ema(xs: &[f64], span: usize) -> Vec<f64> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = match xs.first() {
        Some(&x) => x,
        None => return out,
    };
    for &x in xs {
        acc = alpha * x + (1.0 - alpha) * acc;
        out.push(acc);
    }
    out
}

pub fn macd(close: &[f64]) -> Vec<f64> {
    ema(close, MACD_FAST)
        .into_iter()
        .zip(ema(close, MACD_SLOW))
        .map(|(f, s)| f - s)
        .collect()
}

/// RSI from simple averages of the last `n` gains and losses. Defined from
/// index `n` on; 100 when there were no losses, 50 on a flat window.
pub fn rsi(close: &[f64], n: usize) -> Vec<Option<f64>> {
    (0..close.len())
        .map(|t| {
            (t >= n).then(|| {
                let (mut up, mut down) = (0.0, 0.0);
                for i in t + 1 - n..=t {
                    let d = close[i] - close[i - 1];
                    if d > 0.0 {
                        up += d;
                    } else {
                        down -= d;
                    }
                }
                if down == 0.0 {
                    if up == 0.0 {
                        50.0
                    } else {
                        100.0
                    }
                } else {
                    100.0 - 100.0 / (1.0 + up / down)
                }
            })
        })
        .collect()
}

/// Commodity channel index over a trailing window of typical prices:
/// `(tp − sma) / (0.015 · mean|tp − sma|)`, 0 when the window is flat.
pub fn cci(bars: &[Bar], n: usize) -> Vec<Option<f64>> {
    let tp: Vec<f64> = bars.iter().map(|b| (b.high + b.low + b.close) / 3.0).collect();
    (0..tp.len())
        .map(|t| {
            (t + 1 >= n).then(|| {
                let w = &tp[t + 1 - n..=t];
                let sma = w.iter().sum::<f64>() / n as f64;
                let md = w.iter().map(|x| (x - sma).abs()).sum::<f64>() / n as f64;
                if md == 0.0 {
                    0.0
                } else {
                    (tp[t] - sma) / (0.015 * md)
                }
            })
        })
        .collect()
}

/// Directional movement index from trailing `n`-day sums of +DM, −DM and
/// true range. Defined from index `n` on.
pub fn dx(bars: &[Bar], n: usize) -> Vec<Option<f64>> {
    let mut pdm = vec![0.0; bars.len()];
    let mut mdm = vec![0.0; bars.len()];
    let mut tr = vec![0.0; bars.len()];
    for t in 1..bars.len() {
        let (cur, prev) = (bars[t], bars[t - 1]);
        let up = cur.high - prev.high;
        let down = prev.low - cur.low;
        pdm[t] = if up > down && up > 0.0 { up } else { 0.0 };
        mdm[t] = if down > up && down > 0.0 { down } else { 0.0 };
        tr[t] = (cur.high - cur.low)
            .max((cur.high - prev.close).abs())
            .max((cur.low - prev.close).abs());
    }
    (0..bars.len())
        .map(|t| {
            (t >= n).then(|| {
                let r = t + 1 - n..=t;
                let s_tr: f64 = tr[r.clone()].iter().sum();
                if s_tr == 0.0 {
                    return 0.0;
                }
                let pdi = 100.0 * pdm[r.clone()].iter().sum::<f64>() / s_tr;
                let mdi = 100.0 * mdm[r].iter().sum::<f64>() / s_tr;
                if pdi + mdi == 0.0 {
                    0.0
                } else {
                    100.0 * (pdi - mdi).abs() / (pdi + mdi)
                }
            })
        })
        .collect()
}

/// MACD, RSI(30), CCI(30), DX(30) per ticker; the first [`WARMUP`] rows are
/// dropped so every value is computed from a full window.
pub fn compute_indicators(panel: &OhlcvPanel) -> Result<FeaturePanel> {
    let need = WARMUP + 1;
    if panel.len() < need {
        return Err(Error::Data(format!(
            "indicators need at least {need} rows of history, panel has {}",
            panel.len()
        )));
    }
    let m = panel.num_assets();
    let mut per_asset = Vec::with_capacity(m);
    for a in 0..m {
        let bars: Vec<Bar> = panel.bars.iter().map(|row| row[a]).collect();
        let close: Vec<f64> = bars.iter().map(|b| b.close).collect();
        per_asset.push((macd(&close), rsi(&close, WINDOW), cci(&bars, WINDOW), dx(&bars, WINDOW)));
    }
    let indicators = (WARMUP..panel.len())
        .map(|t| {
            per_asset
                .iter()
                .map(|(m, r, c, d)| {
                    [
                        m[t],
                        r[t].expect("past warm-up"),
                        c[t].expect("past warm-up"),
                        d[t].expect("past warm-up"),
                    ]
                })
                .collect()
        })
        .collect();
    Ok(FeaturePanel {
        ohlcv: OhlcvPanel {
            tickers: panel.tickers.clone(),
            dates: panel.dates[WARMUP..].to_vec(),
            bars: panel.bars[WARMUP..].to_vec(),
        },
        indicators,
    })
}

/// Train rows are dates before `train_end`; test rows run from `train_end`
/// through `test_end` inclusive.
pub fn split_by_date(
    panel: &FeaturePanel,
    train_end: NaiveDate,
    test_end: NaiveDate,
) -> Result<(FeaturePanel, FeaturePanel)> {
    let dates = panel.dates();
    let (first, last) = match (dates.first(), dates.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::Data("cannot split an empty panel".into())),
    };
    if train_end >= test_end {
        return Err(Error::Range(format!(
            "train_end {train_end} must precede test_end {test_end}"
        )));
    }
    if train_end <= first {
        return Err(Error::Range(format!(
            "train_end {train_end} leaves an empty train panel (first date {first})"
        )));
    }
    if train_end > last || test_end > last {
        return Err(Error::Range(format!("split boundary beyond last date {last}")));
    }
    let cut = dates.partition_point(|d| *d < train_end);
    let end = dates.partition_point(|d| *d <= test_end);
    if cut == end {
        return Err(Error::Range(format!("no test dates in [{train_end}, {test_end}]")));
    }
    Ok((panel.slice(0..cut), panel.slice(cut..end)))
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, DATE_FMT).map_err(|_| Error::Data(format!("bad date `{s}` (want YYYY-MM-DD)")))
}
