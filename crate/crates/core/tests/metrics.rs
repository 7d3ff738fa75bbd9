use dtq_core::evaluation::{MeanStd, MetricsReport, ReportMeta, SeedMetrics};
use dtq_core::metrics::{
    cumulative_return, max_drawdown, sharpe_from_returns, sharpe_ratio, EquityCurve, TRADING_DAYS,
};
use dtq_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mdd_oracle(v: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        for j in i..v.len() {
            worst = worst.min((v[j] - v[i]) / v[i]);
        }
    }
    worst * 100.0
}

fn sharpe_oracle(v: &[f64]) -> f64 {
    let r: Vec<f64> = (1..v.len()).map(|i| (v[i] - v[i - 1]) / v[i - 1]).collect();
    let n = r.len() as f64;
    let mut mean = 0.0;
    for x in &r {
        mean += x / n;
    }
    let mut ss = 0.0;
    for x in &r {
        ss += (x - mean).powi(2);
    }
    mean / (ss / (n - 1.0)).sqrt() * 252f64.sqrt()
}

fn random_curve(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut v = vec![rng.random_range(1e3..1e7)];
    for _ in 1..len {
        let last = *v.last().unwrap();
        v.push(last * (1.0 + rng.random_range(-0.05..0.05)));
    }
    v
}

#[test]
fn cumulative_return_examples() {
    assert!((cumulative_return(&[1_000_000.0, 1_346_900.0]).unwrap() - 34.69).abs() < 1e-9);
    assert!((cumulative_return(&[100.0, 110.0, 121.0]).unwrap() - 21.0).abs() < 1e-9);
    assert!(matches!(cumulative_return(&[5.0]), Err(Error::UndefinedMetric(_))));
    assert!(cumulative_return(&[0.0, 1.0]).is_err());
}

#[test]
fn drawdown_examples() {
    assert!((max_drawdown(&[100.0, 120.0, 90.0, 110.0]).unwrap() + 25.0).abs() < 1e-12);
    assert_eq!(max_drawdown(&[1.0, 2.0, 3.0, 3.0, 4.0]).unwrap(), 0.0);
}

#[test]
fn sharpe_examples() {
    let alt: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
    assert!(sharpe_from_returns(&alt, 0.0, TRADING_DAYS).unwrap().abs() < 1e-12);
    assert!(matches!(
        sharpe_from_returns(&[0.003; 30], 0.0, TRADING_DAYS),
        Err(Error::UndefinedMetric(_))
    ));
    let growth: Vec<f64> = (0..30).map(|i| 100.0 * 1.01f64.powi(i)).collect();
    assert!(matches!(
        sharpe_ratio(&growth, 0.0, TRADING_DAYS),
        Err(Error::UndefinedMetric(_))
    ));
}

#[test]
fn sharpe_matches_direct_oracle_over_a_year() {
    let mut rng = ChaCha8Rng::seed_from_u64(252);
    for _ in 0..20 {
        let v = random_curve(&mut rng, 253);
        let got = sharpe_ratio(&v, 0.0, TRADING_DAYS).unwrap();
        assert!((got - sharpe_oracle(&v)).abs() < 1e-9);
    }
}

#[test]
fn thousand_random_curves_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let len = rng.random_range(3..120);
        let v = random_curve(&mut rng, len);
        let cr = (v[len - 1] - v[0]) / v[0] * 100.0;
        assert!((cumulative_return(&v).unwrap() - cr).abs() < 1e-9);
        assert!((max_drawdown(&v).unwrap() - mdd_oracle(&v)).abs() < 1e-12);
        let s = sharpe_oracle(&v);
        assert!((sharpe_ratio(&v, 0.0, TRADING_DAYS).unwrap() - s).abs() < 1e-9 * s.abs().max(1.0));
    }
}

#[test]
fn report_aggregates_per_seed_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let curves: Vec<(u64, EquityCurve)> = (0..5u64)
        .map(|s| (s, EquityCurve::from_values(random_curve(&mut rng, 60)).unwrap()))
        .collect();
    let report = MetricsReport::from_curves(ReportMeta::default(), &curves).unwrap();
    let crs: Vec<f64> = curves
        .iter()
        .map(|(_, c)| cumulative_return(&c.values).unwrap())
        .collect();
    let mean = crs.iter().sum::<f64>() / 5.0;
    let std = (crs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
    assert!((report.aggregate.cumulative_return_pct.mean - mean).abs() < 1e-12);
    assert!((report.aggregate.cumulative_return_pct.std - std).abs() < 1e-12);
    assert_eq!(report.rows.len(), 5);

    let one = MetricsReport::from_curves(ReportMeta::default(), &curves[..1]).unwrap();
    assert_eq!(
        one.aggregate.cumulative_return_pct.mean,
        one.rows[0].cumulative_return_pct
    );
    assert_eq!(one.aggregate.cumulative_return_pct.std, 0.0);
    assert_eq!(one.aggregate.mdd_pct.mean, one.rows[0].mdd_pct);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    report.write_json(&path).unwrap();
    assert_eq!(MetricsReport::read_json(&path).unwrap(), report);
}

#[test]
fn undefined_sharpe_is_reported_as_none() {
    let flat = EquityCurve::from_values(vec![100.0; 10]).unwrap();
    let row = SeedMetrics::from_curve(1, &flat).unwrap();
    assert_eq!(row.sharpe, None);
    assert_eq!((row.cumulative_return_pct, row.mdd_pct), (0.0, 0.0));
    let report = MetricsReport::from_rows(ReportMeta::default(), vec![row]).unwrap();
    assert_eq!(report.aggregate.sharpe, None);
    assert_eq!(
        MeanStd {
            mean: 2.716,
            std: 0.5
        }
        .to_string(),
        "2.72 ± 0.50"
    );
}

#[test]
fn equity_csv_round_trip() {
    let c = EquityCurve::new(
        vec!["2021-01-04".into(), "2021-01-05".into()],
        vec![1e6, 1_000_123.456789],
    )
    .unwrap();
    let f = tempfile::NamedTempFile::new().unwrap();
    c.write_csv(std::fs::File::create(f.path()).unwrap()).unwrap();
    assert_eq!(EquityCurve::read_csv(f.path()).unwrap(), c);
    assert!(EquityCurve::from_values(vec![1.0, -1.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn drawdown_matches_all_pairs(v in prop::collection::vec(0.01f64..1e6, 2..80)) {
        prop_assert!((max_drawdown(&v).unwrap() - mdd_oracle(&v)).abs() < 1e-12);
        prop_assert!(max_drawdown(&v).unwrap() <= 0.0);
    }

    #[test]
    fn metrics_are_scale_invariant(v in prop::collection::vec(1.0f64..1e4, 3..60), c in 0.01f64..1e3) {
        let w: Vec<f64> = v.iter().map(|x| x * c).collect();
        prop_assert!((cumulative_return(&v).unwrap() - cumulative_return(&w).unwrap()).abs() < 1e-9);
        prop_assert!((max_drawdown(&v).unwrap() - max_drawdown(&w).unwrap()).abs() < 1e-9);
        if let (Ok(a), Ok(b)) = (sharpe_ratio(&v, 0.0, TRADING_DAYS), sharpe_ratio(&w, 0.0, TRADING_DAYS)) {
            prop_assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
        }
    }
}
