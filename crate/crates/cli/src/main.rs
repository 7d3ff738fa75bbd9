//! `dtq`: synthetic data, expert trajectories, DT/BC training and evaluation.

mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use dtq_core::container::Container;
use dtq_core::env::{load_trajectories, save_trajectories, scripted_expert, EnvConfig, ExpertKind};
use dtq_core::evaluation::{evaluate_checkpoint, MeanStd, MetricsReport, ReportMeta};
use dtq_core::market::{compute_indicators, load_ohlcv, parse_date, split_by_date, FeaturePanel};
use dtq_core::metrics::EquityCurve;
use dtq_core::pipeline::{self, BcRunConfig, DtRunConfig};
use dtq_core::synth::{generate, SynthConfig, SynthKind};
use dtq_core::Checkpoint;
use manifest::{manifest_path, sha256_file, ManifestBuilder};

/// Seeds used for multi-seed runs, in order.
const DEFAULT_SEEDS: [u64; 5] = [20742, 55230, 85125, 96921, 67851];

#[derive(Parser)]
#[command(name = "dtq", version, about = "Decision Transformer trading pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic OHLCV panel.
    SynthData(SynthArgs),
    /// Validate an OHLCV CSV, add indicators and optionally split by date.
    Ingest(IngestArgs),
    /// Roll scripted experts over a feature panel and save trajectories.
    GenExpert(GenExpertArgs),
    /// Train a Decision Transformer on trajectories.
    TrainDt(TrainDtArgs),
    /// Train the behavior-cloning baseline.
    TrainBc(TrainBcArgs),
    /// Deploy a checkpoint on a test panel and score it.
    Evaluate(EvaluateArgs),
    /// Rebuild a metrics report from stored equity curves.
    Report(ReportArgs),
    /// Compare pretrained and random backbones across experts and seeds.
    CompareInit(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// gbm or mean_reverting
    #[arg(long, default_value = "gbm")]
    kind: SynthKind,
    #[arg(long, default_value_t = 3)]
    tickers: usize,
    #[arg(long, default_value_t = 280)]
    days: usize,
    #[arg(long, default_value = "2020-01-01")]
    start: String,
    #[arg(long)]
    volatility: Option<f64>,
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output directory for features.csv (and train.csv / test.csv).
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, requires = "test_end")]
    train_end: Option<String>,
    #[arg(long, requires = "train_end")]
    test_end: Option<String>,
}

#[derive(Args)]
struct GenExpertArgs {
    /// Feature panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// Comma-separated: buy_and_hold, momentum, oracle_lookahead.
    #[arg(long, default_value = "momentum")]
    expert: String,
    /// Environment settings JSON.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TrainOverrides {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct TrainDtArgs {
    /// Trajectory JSON-lines file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pretrained backbone container; random init when absent.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEEDS[0])]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct TrainBcArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Size the MLP to this DT checkpoint's trainable parameter count.
    #[arg(long)]
    match_ckpt: Option<PathBuf>,
    #[arg(long)]
    target_params: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEEDS[0])]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint directory or its model.bin.
    #[arg(long)]
    ckpt: PathBuf,
    /// Test-period feature panel CSV.
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    env: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding equity_<seed>.csv files.
    #[arg(long)]
    dir: PathBuf,
    /// Report JSON to write; defaults to <dir>/report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Feature panel CSV covering both periods.
    #[arg(long)]
    panel: PathBuf,
    /// First test date; defaults to the date 80% into the panel.
    #[arg(long)]
    train_end: Option<String>,
    #[arg(long)]
    test_end: Option<String>,
    #[arg(long, default_value = "momentum,oracle_lookahead")]
    experts: String,
    /// Number of training seeds.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Pretrained backbone container.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("DTQ_LOG_LEVEL", "info"))
        .format_timestamp(None)
        .init();
    let res = match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Ingest(a) => ingest(a),
        Command::GenExpert(a) => gen_expert(a),
        Command::TrainDt(a) => train_dt(a),
        Command::TrainBc(a) => train_bc(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
        Command::CompareInit(a) => compare_init(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", p.display()))
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn parse_experts(list: &str) -> Result<Vec<ExpertKind>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Ok(s.trim().parse::<ExpertKind>()?))
        .collect()
}

fn apply_overrides(train: &mut dtq_core::training::TrainConfig, o: &TrainOverrides) {
    if let Some(n) = o.iterations {
        train.iterations = n;
    }
    if let Some(b) = o.batch_size {
        train.batch_size = b;
    }
    if let Some(lr) = o.lr {
        train.learning_rate = lr;
    }
}

fn progress(total: usize) -> impl FnMut(usize, f64) {
    move |i, loss| {
        if i % 100 == 0 || i + 1 == total {
            log::info!("iteration {i}/{total} loss {loss:.6}");
        } else {
            log::debug!("iteration {i}/{total} loss {loss:.6}");
        }
    }
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::new(a.kind, a.tickers, a.days);
    cfg.start = parse_date(&a.start)?;
    if let Some(v) = a.volatility {
        cfg.volatility = v;
    }
    if let Some(d) = a.drift {
        cfg.drift = d;
    }
    let mut manifest = ManifestBuilder::new("synth-data", &cfg, Some(a.seed))?;
    let panel = generate(&cfg, a.seed)?;
    panel.write_csv(create_file(&a.out)?)?;
    log::info!(
        "wrote {} tickers x {} days to {}",
        panel.num_assets(),
        panel.len(),
        a.out.display()
    );
    manifest.output(&a.out);
    manifest.finish(&manifest_path(&a.out, false))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "ingest",
        serde_json::json!({"train_end": a.train_end, "test_end": a.test_end}),
        None,
    )?;
    manifest.input(&a.input)?;
    let raw = load_ohlcv(&a.input)?;
    let features = compute_indicators(&raw)?;
    create_dir(&a.out_dir)?;
    let path = a.out_dir.join("features.csv");
    features.write_csv(create_file(&path)?)?;
    manifest.output(&path);
    log::info!(
        "{} tickers, {} days after warm-up",
        features.num_assets(),
        features.len()
    );
    if let (Some(tr), Some(te)) = (&a.train_end, &a.test_end) {
        let (train, test) = split_by_date(&features, parse_date(tr)?, parse_date(te)?)?;
        for (name, part) in [("train.csv", &train), ("test.csv", &test)] {
            let p = a.out_dir.join(name);
            part.write_csv(create_file(&p)?)?;
            manifest.output(&p);
        }
        log::info!("split: {} train days, {} test days", train.len(), test.len());
    }
    manifest.finish(&manifest_path(&a.out_dir, true))
}

fn gen_expert(a: GenExpertArgs) -> Result<()> {
    let env: EnvConfig = read_config(a.env.as_deref())?;
    env.validate()?;
    let experts = parse_experts(&a.expert)?;
    let mut manifest = ManifestBuilder::new(
        "gen-expert",
        serde_json::json!({"env": env, "experts": a.expert}),
        Some(a.seed),
    )?;
    manifest.input(&a.panel)?;
    let panel = FeaturePanel::read_csv(&a.panel)?;
    let trajs = experts
        .iter()
        .map(|&k| {
            let mut t = scripted_expert(k, &panel, &env)?;
            t.meta.seed = a.seed;
            log::info!(
                "{}: {} steps, final value {:.2}",
                k.as_str(),
                t.len(),
                t.values.last().copied().unwrap_or(f64::NAN)
            );
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    save_trajectories(&a.out, &trajs)?;
    manifest.output(&a.out);
    manifest.finish(&manifest_path(&a.out, false))
}

fn save_checkpoint(
    ckpt: &Checkpoint,
    log: &dtq_core::training::TrainLog,
    out: &Path,
    manifest: &mut ManifestBuilder,
) -> Result<()> {
    ckpt.save(out)?;
    let loss_path = out.join("loss.csv");
    log.write_csv(create_file(&loss_path)?)?;
    for name in ["model.bin", "model.json", "loss.csv"] {
        manifest.output(out.join(name));
    }
    Ok(())
}

fn train_dt(a: TrainDtArgs) -> Result<()> {
    let mut run: DtRunConfig = read_config(a.config.as_deref())?;
    apply_overrides(&mut run.train, &a.overrides);
    run.validate()?;
    let mut manifest = ManifestBuilder::new("train-dt", &run, Some(a.seed))?;
    manifest.input(&a.data)?;
    let trajs = load_trajectories(&a.data)?;
    let pretrained = match &a.pretrained {
        Some(p) => {
            manifest.input(p)?;
            Some(Container::read(p)?)
        }
        None => None,
    };
    let (ckpt, log) =
        pipeline::train_dt::<f64>(trajs, &run, pretrained.as_ref(), a.seed, progress(run.train.iterations))?;
    log::info!("trainable parameters: {}", ckpt.meta.trainable);
    save_checkpoint(&ckpt, &log, &a.out, &mut manifest)?;
    manifest.finish(&manifest_path(&a.out, true))
}

fn train_bc(a: TrainBcArgs) -> Result<()> {
    let mut run: BcRunConfig = read_config(a.config.as_deref())?;
    apply_overrides(&mut run.train, &a.overrides);
    if let Some(n) = a.target_params {
        run.target_params = Some(n);
    }
    let mut manifest_inputs = vec![a.data.clone()];
    if let Some(p) = &a.match_ckpt {
        let dt = Checkpoint::load(p)?;
        run.target_params = Some(dt.meta.trainable.total());
        manifest_inputs.push(dtq_core::checkpoint::resolve_paths(p).0);
    }
    run.validate()?;
    let mut manifest = ManifestBuilder::new("train-bc", &run, Some(a.seed))?;
    for p in &manifest_inputs {
        manifest.input(p)?;
    }
    let trajs = load_trajectories(&a.data)?;
    let (ckpt, log) = pipeline::train_bc::<f64>(trajs, &run, a.seed, progress(run.train.iterations))?;
    if let dtq_core::checkpoint::ModelSpec::Bc { bc } = &ckpt.meta.model {
        log::info!(
            "hidden layout {:?}, {} trainable parameters (target {:?})",
            bc.hidden,
            bc.param_count(),
            run.target_params
        );
    }
    save_checkpoint(&ckpt, &log, &a.out, &mut manifest)?;
    manifest.finish(&manifest_path(&a.out, true))
}

fn equity_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("equity_{seed}.csv"))
}

fn format_report(r: &MetricsReport) -> String {
    let mut s = String::new();
    let sharpe = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(
        s,
        "{:>8}  {:>12}  {:>10}  {:>10}",
        "seed", "return %", "MDD %", "Sharpe"
    );
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{:>8}  {:>12.4}  {:>10.4}  {:>10}",
            row.seed,
            row.cumulative_return_pct,
            row.mdd_pct,
            sharpe(row.sharpe)
        );
    }
    let a = &r.aggregate;
    let _ = writeln!(
        s,
        "mean ± std: return {} | MDD {} | Sharpe {}",
        a.cumulative_return_pct,
        a.mdd_pct,
        a.sharpe.map_or("undefined".into(), |m| m.to_string())
    );
    s
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let env: EnvConfig = read_config(a.env.as_deref())?;
    env.validate()?;
    let (weights, _) = dtq_core::checkpoint::resolve_paths(&a.ckpt);
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let mut manifest = ManifestBuilder::new("evaluate", serde_json::json!({"env": env, "seeds": a.seeds}), None)?;
    manifest.input(&weights)?;
    manifest.input(&a.panel)?;
    let panel = FeaturePanel::read_csv(&a.panel)?;
    let meta = ReportMeta {
        policy: match ckpt.model {
            dtq_core::checkpoint::Model::Dt(_) => "dt".into(),
            dtq_core::checkpoint::Model::Bc(_) => "bc".into(),
        },
        checkpoint_hash: Some(sha256_file(&weights)?),
        ..Default::default()
    };
    let (report, curves) = evaluate_checkpoint(&ckpt, &panel, &env, &a.seeds, meta)?;
    create_dir(&a.out)?;
    for (seed, curve) in &curves {
        let p = equity_file(&a.out, *seed);
        curve.write_csv(create_file(&p)?)?;
        manifest.output(p);
    }
    let rp = a.out.join("report.json");
    report.write_json(&rp)?;
    manifest.output(rp);
    print!("{}", format_report(&report));
    manifest.finish(&manifest_path(&a.out, true))
}

fn report(a: ReportArgs) -> Result<()> {
    let mut curves = Vec::new();
    for entry in std::fs::read_dir(&a.dir).with_context(|| format!("reading {}", a.dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(seed) = name.strip_prefix("equity_").and_then(|n| n.strip_suffix(".csv")) {
            let seed: u64 = seed.parse().with_context(|| format!("bad seed in {name}"))?;
            curves.push((seed, EquityCurve::read_csv(&path)?));
        }
    }
    if curves.is_empty() {
        bail!("no equity_<seed>.csv files in {}", a.dir.display());
    }
    curves.sort_by_key(|(s, _)| *s);
    let old = a.dir.join("report.json");
    let meta = if old.exists() {
        // Keep the original report's seed order.
        let prev = MetricsReport::read_json(&old)?;
        let rank = |seed: u64| prev.rows.iter().position(|r| r.seed == seed).unwrap_or(usize::MAX);
        curves.sort_by_key(|(s, _)| rank(*s));
        prev.meta
    } else {
        ReportMeta::default()
    };
    let report = MetricsReport::from_curves(meta, &curves)?;
    let out = a.out.unwrap_or(old);
    report.write_json(&out)?;
    print!("{}", format_report(&report));
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    expert: String,
    init: String,
    seeds: Vec<u64>,
    cumulative_return_pct: MeanStd,
    mdd_pct: MeanStd,
    sharpe: Option<MeanStd>,
    final_loss: MeanStd,
}

fn compare_init(a: CompareArgs) -> Result<()> {
    let pretrained_path = a
        .pretrained
        .as_ref()
        .context("compare-init needs --pretrained <container> for the pretrained arm")?;
    let env: EnvConfig = read_config(a.env.as_deref())?;
    env.validate()?;
    let mut run: DtRunConfig = read_config(a.config.as_deref())?;
    apply_overrides(&mut run.train, &a.overrides);
    let experts = parse_experts(&a.experts)?;
    if a.seeds == 0 || a.seeds > DEFAULT_SEEDS.len() {
        bail!("--seeds must be between 1 and {}", DEFAULT_SEEDS.len());
    }
    let seeds = &DEFAULT_SEEDS[..a.seeds];

    let mut manifest = ManifestBuilder::new(
        "compare-init",
        serde_json::json!({"run": run, "env": env, "experts": a.experts, "seeds": seeds}),
        None,
    )?;
    manifest.input(&a.panel)?;
    manifest.input(pretrained_path)?;
    let container = Container::read(pretrained_path)?;
    // Both arms share the pretrained container's backbone shape.
    run.backbone = dtq_core::gpt2::GptConfig::discover(&container)?;
    run.validate()?;

    let panel = FeaturePanel::read_csv(&a.panel)?;
    let (train_end, test_end) = match (&a.train_end, &a.test_end) {
        (Some(tr), te) => (
            parse_date(tr)?,
            match te {
                Some(te) => parse_date(te)?,
                None => *panel.dates().last().context("empty panel")?,
            },
        ),
        (None, _) => {
            let dates = panel.dates();
            if dates.len() < 4 {
                bail!("panel too short to split");
            }
            (dates[dates.len() * 4 / 5], dates[dates.len() - 1])
        }
    };
    let (train, test) = split_by_date(&panel, train_end, test_end)?;
    log::info!("train {} days, test {} days", train.len(), test.len());

    create_dir(&a.out)?;
    let mut rows = Vec::new();
    for &expert in &experts {
        let traj = scripted_expert(expert, &train, &env)?;
        for (init, source) in [("pretrained", Some(&container)), ("random", None)] {
            let mut per_seed = Vec::new();
            let mut losses = Vec::new();
            for &seed in seeds {
                log::info!("{} / {init} / seed {seed}", expert.as_str());
                let (ckpt, log) =
                    pipeline::train_dt::<f64>(vec![traj.clone()], &run, source, seed, progress(run.train.iterations))?;
                let (report, _) = evaluate_checkpoint(&ckpt, &test, &env, &[seed], ReportMeta::default())?;
                per_seed.extend(report.rows);
                losses.push(log.final_loss().unwrap_or(f64::NAN));
            }
            let agg = MetricsReport::from_rows(ReportMeta::default(), per_seed)?.aggregate;
            rows.push(CompareRow {
                expert: expert.as_str().into(),
                init: init.into(),
                seeds: seeds.to_vec(),
                cumulative_return_pct: agg.cumulative_return_pct,
                mdd_pct: agg.mdd_pct,
                sharpe: agg.sharpe,
                final_loss: MeanStd::of(&losses).expect("at least one seed"),
            });
        }
    }

    let table = compare_table(&rows);
    let md = a.out.join("compare.md");
    std::fs::write(&md, &table).with_context(|| format!("writing {}", md.display()))?;
    let json = a.out.join("compare.json");
    write_json(&json, &rows)?;
    manifest.output(md);
    manifest.output(json);
    print!("{table}");
    manifest.finish(&manifest_path(&a.out, true))
}

/// Markdown table grouped by expert, one row per initialization.
fn compare_table(rows: &[CompareRow]) -> String {
    let mut by_expert: BTreeMap<&str, Vec<&CompareRow>> = BTreeMap::new();
    for r in rows {
        by_expert.entry(&r.expert).or_default().push(r);
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| expert | init | cumulative return % | MDD % | Sharpe | train loss |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for (expert, group) in by_expert {
        for r in group {
            let _ = writeln!(
                s,
                "| {expert} | {} | {} | {} | {} | {:.2e} ± {:.1e} |",
                r.init,
                r.cumulative_return_pct,
                r.mdd_pct,
                r.sharpe.map_or("undefined".into(), |m| m.to_string()),
                r.final_loss.mean,
                r.final_loss.std
            );
        }
    }
    s
}
