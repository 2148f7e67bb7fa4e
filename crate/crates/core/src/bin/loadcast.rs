use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use loadcast::cli::{config_reference, exit_code, RunConfig, EXIT_CONFIG, EXIT_DATA};
use loadcast::data::{load_holidays, parse_load_csv, synth_generate, HolidayCalendar, LoadSeries};
use loadcast::eval::{
    backtest, metrics, run_ablation, run_sweep, seasonal_naive_metrics, write_report_files, MetricTriple, SweepAxis,
    Variant,
};
use loadcast::train::{fit_model, load_checkpoint, save_checkpoint, CorrectionMode};

#[derive(Parser)]
#[command(name = "loadcast", version, about = "Day-ahead electrical load forecasting")]
#[command(after_long_help = config_reference())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hourly load series and its holiday list.
    Synth(SynthArgs),
    /// Fit clusters and train a model on the training span.
    Train(TrainArgs),
    /// Forecast the test span day by day and write reports.
    Backtest(BacktestArgs),
    /// Compare feature subsets (proposed, model1, model2, model3).
    Ablate(AblateArgs),
    /// Vary n_c and lambda one at a time.
    Sweep(SweepArgs),
    /// Recompute MAE, MAPE and RMSE from a forecast CSV.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file (see `loadcast --help` for keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lr_offline=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every stochastic component.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct DataArgs {
    /// Hourly load CSV (overrides data.csv).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Holiday list (overrides data.holidays).
    #[arg(long)]
    holidays: Option<PathBuf>,
    /// First test day (overrides data.test_start).
    #[arg(long)]
    test_start: Option<NaiveDate>,
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.data {
            cfg.data.csv = Some(p.clone());
        }
        if let Some(p) = &self.holidays {
            cfg.data.holidays = Some(p.clone());
        }
        if let Some(d) = self.test_start {
            cfg.data.test_start = Some(d);
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for load.csv and holidays.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Override train.max_epochs_offline.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Override model.variant.
    #[arg(long)]
    variant: Option<String>,
    /// Checkpoint path; the history is written next to it as <stem>.history.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Correction mode: fine-tune-output, retrain-all or none.
    #[arg(long)]
    policy: Option<String>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',', default_value = "proposed,model1,model2,model3")]
    variants: Vec<String>,
    /// Comma-separated seeds (default: train.seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated cluster counts.
    #[arg(long = "nc", value_delimiter = ',')]
    n_clusters: Vec<usize>,
    /// Comma-separated perturbation scales.
    #[arg(long = "lambda", value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// CSV with columns date,hour,actual_mw,forecast_mw.
    #[arg(long)]
    forecast: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn load_series(cfg: &RunConfig) -> Result<LoadSeries> {
    let csv = cfg
        .data
        .csv
        .as_deref()
        .ok_or_else(|| loadcast::Error::Config("no data file: pass --data or set data.csv".into()))?;
    let holidays = match &cfg.data.holidays {
        Some(p) => load_holidays(p)?,
        None => HolidayCalendar::new(),
    };
    let text = fs::read_to_string(csv).map_err(|e| loadcast::Error::io(csv, e))?;
    let (series, report) = parse_load_csv(&text, holidays)?;
    if report.interpolated_hours + report.trimmed_leading_hours + report.trimmed_trailing_hours > 0 {
        eprintln!(
            "note: interpolated {} hours, trimmed {} leading and {} trailing hours",
            report.interpolated_hours, report.trimmed_leading_hours, report.trimmed_trailing_hours
        );
    }
    Ok(series)
}

fn parse_variant(s: &str) -> Result<Variant> {
    Variant::parse(s.trim()).ok_or_else(|| loadcast::Error::Config(format!("unknown variant `{s}`")).into())
}

fn print_metrics(label: &str, m: &MetricTriple) {
    let mape = m.mape.map_or_else(|| "n/a".to_string(), |v| v.to_string());
    println!("{label}: mae_mw={} mape_pct={mape} rmse_mw={}", m.mae, m.rmse);
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| loadcast::Error::io(path, e).into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| loadcast::Error::io(dir, e).into())
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let series = synth_generate(&cfg.synth)?;
    create_dir(&args.out)?;
    let csv = args.out.join("load.csv");
    let hol = args.out.join("holidays.txt");
    series.write_csv(&csv)?;
    series.write_holidays(&hol)?;
    println!(
        "wrote {} hourly rows to {} and holidays to {}",
        series.len(),
        csv.display(),
        hol.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    args.data.apply(&mut cfg);
    if let Some(n) = args.max_epochs {
        cfg.train.max_epochs_offline = n;
    }
    if let Some(v) = &args.variant {
        cfg.model.variant = parse_variant(v)?;
    }
    cfg.validate()?;
    let series = load_series(&cfg)?;
    let train_days = cfg.train_days(&series)?;
    let out = fit_model(&series, train_days, &cfg.fit_options())?;
    save_checkpoint(&out.checkpoint, &args.out)?;
    let history = args.out.with_extension("history.csv");
    let mut csv = String::from("epoch,train_loss,validation_loss\n");
    for h in &out.checkpoint.history {
        csv.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.validation_loss));
    }
    write(&history, csv)?;
    let best = &out.checkpoint.history[out.best_epoch];
    println!(
        "trained {} epochs on {} days; best epoch {} validation loss {}",
        out.epochs_run, train_days, out.best_epoch, best.validation_loss
    );
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

fn backtest_cmd(args: BacktestArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    args.data.apply(&mut cfg);
    if let Some(p) = &args.policy {
        cfg.correction.mode =
            CorrectionMode::parse(p).ok_or_else(|| loadcast::Error::Config(format!("unknown policy `{p}`")))?;
    }
    cfg.validate()?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let series = load_series(&cfg)?;
    let train_days = cfg.train_days(&series)?;
    let days = train_days..series.num_days();
    let out = backtest(
        &ckpt,
        &series,
        days.clone(),
        &cfg.correction,
        cfg.correction.mode.as_str(),
    )?;
    let files = write_report_files(&out.report, &args.out)?;
    print_metrics("model", &out.report.aggregate);
    print_metrics("seasonal-naive", &seasonal_naive_metrics(&series, days)?);
    println!(
        "{} corrections; wrote {} files to {}",
        out.report.corrections.len(),
        files.len(),
        args.out.display()
    );
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    args.data.apply(&mut cfg);
    cfg.validate()?;
    let variants = args
        .variants
        .iter()
        .map(|v| parse_variant(v))
        .collect::<Result<Vec<_>>>()?;
    let seeds = if args.seeds.is_empty() {
        vec![cfg.train.seed]
    } else {
        args.seeds
    };
    let series = load_series(&cfg)?;
    let train_days = cfg.train_days(&series)?;
    let table = run_ablation(
        &series,
        train_days,
        &variants,
        &seeds,
        &cfg.fit_options(),
        &cfg.correction,
    )?;
    create_dir(&args.out)?;
    write(&args.out.join("ablation.csv"), table.to_csv()?)?;
    write(&args.out.join("ablation.svg"), table.to_svg())?;
    write(&args.out.join("ablation.json"), serde_json::to_vec_pretty(&table)?)?;
    for (v, m) in table.mean_mape() {
        println!("{v}: mean mape_pct={m}");
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    args.data.apply(&mut cfg);
    cfg.validate()?;
    let series = load_series(&cfg)?;
    let train_days = cfg.train_days(&series)?;
    let res = run_sweep(
        &series,
        train_days,
        &args.n_clusters,
        &args.lambdas,
        &cfg.fit_options(),
        &cfg.correction,
    )?;
    create_dir(&args.out)?;
    write(&args.out.join("sweep.csv"), res.to_csv()?)?;
    write(&args.out.join("sweep.json"), serde_json::to_vec_pretty(&res)?)?;
    for axis in [SweepAxis::NClusters, SweepAxis::Lambda] {
        if res.points.iter().any(|p| p.axis == axis) {
            write(&args.out.join(format!("sweep_{}.svg", axis.as_str())), res.to_svg(axis))?;
        }
    }
    for r in &res.runs {
        print_metrics(&format!("n_c={} lambda={}", r.n_clusters, r.lambda), &r.metrics);
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct ForecastRow {
    #[allow(dead_code)]
    date: String,
    #[allow(dead_code)]
    hour: u32,
    actual_mw: f64,
    forecast_mw: f64,
}

fn metrics_cmd(args: MetricsArgs) -> Result<()> {
    let text = fs::read_to_string(&args.forecast).map_err(|e| loadcast::Error::io(&args.forecast, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let (mut actual, mut forecast) = (Vec::new(), Vec::new());
    for (i, row) in reader.deserialize::<ForecastRow>().enumerate() {
        let row = row.map_err(|e| loadcast::Error::Data(format!("{} row {}: {e}", args.forecast.display(), i + 2)))?;
        actual.push(row.actual_mw);
        forecast.push(row.forecast_mw);
    }
    let m = metrics(&actual, &forecast)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&m)?);
    } else {
        print_metrics("metrics", &m);
    }
    Ok(())
}

fn code_for(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|e| e.downcast_ref::<loadcast::Error>())
        .map_or(EXIT_DATA, exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a).context("synth"),
        Command::Train(a) => train(a).context("train"),
        Command::Backtest(a) => backtest_cmd(a).context("backtest"),
        Command::Ablate(a) => ablate(a).context("ablate"),
        Command::Sweep(a) => sweep(a).context("sweep"),
        Command::Metrics(a) => metrics_cmd(a).context("metrics"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code_for(&e) as u8)
        }
    }
}
