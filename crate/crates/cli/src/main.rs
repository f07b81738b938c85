use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use chronoml::benchmark::{run_benchmark, write_results, Suite};
use chronoml::engine::{build_priors, fit_to_dir, AblationMode, RunConfig};
use chronoml::ensemble::EnsembleModel;
use chronoml::metalearn::KnowledgeBase;
use chronoml::metrics::LossKind;
use chronoml::series::load_dataset;
use chronoml::synth::{generate, write_all, SynthKind, SynthParams};

#[derive(Parser)]
#[command(name = "chronoml", version, about = "Automated time-series forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search pipelines on a dataset and write the run directory.
    Fit(FitArgs),
    /// Forecast with a saved ensemble; prints CSV.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Compare engine modes over a dataset suite.
    Benchmark {
        #[arg(long)]
        suite: PathBuf,
        /// Number of seeds, starting at 0.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        budget_s: Option<f64>,
    },
    /// Collect finished runs into a knowledge base, merging into `--out`
    /// if it exists.
    BuildPriors {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        n_c: usize,
        #[arg(long, default_value_t = 200)]
        tail_length: usize,
    },
    /// Write seeded synthetic datasets.
    Synth(SynthArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// key = value settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    budget_s: Option<f64>,
    #[arg(long)]
    grace_s: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    metric: Option<LossKind>,
    #[arg(long)]
    mode: Option<AblationMode>,
    #[arg(long)]
    max_trials: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    ensemble_size: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    kind: SynthKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    series: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    datasets: Option<usize>,
}

/// Parses a settings file into a run config and an optional kb path.
fn read_config_file(path: &Path) -> Result<(RunConfig, Option<PathBuf>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    let kb = match table.remove("kb") {
        Some(toml::Value::String(s)) => Some(path.parent().unwrap_or(Path::new(".")).join(s)),
        Some(_) => bail!("`kb` must be a string"),
        None => None,
    };
    let cfg: RunConfig = table.try_into().with_context(|| format!("invalid settings in {}", path.display()))?;
    Ok((cfg, kb))
}

fn fit(args: FitArgs) -> Result<()> {
    let (mut cfg, mut kb_path) = match &args.config {
        Some(p) => read_config_file(p)?,
        None => (RunConfig::default(), None),
    };
    cfg.apply_env()?;
    if let Some(v) = args.budget_s {
        cfg.time_budget_s = v;
    }
    if let Some(v) = args.grace_s {
        cfg.grace_period_s = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.metric {
        cfg.metric = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.max_trials {
        cfg.max_trials = Some(v);
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if let Some(v) = args.ensemble_size {
        cfg.ensemble_size = v;
    }
    if args.kb.is_some() {
        kb_path = args.kb;
    }
    cfg.validate()?;
    let dataset = load_dataset(&args.data, &args.meta)?;
    let kb = kb_path.as_deref().map(KnowledgeBase::load).transpose()?;
    let outcome = fit_to_dir(&dataset, &cfg, kb.as_ref(), Some((&args.data, &args.meta)), &args.out)?;
    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    Ok(())
}

fn forecast(model: &Path, horizon: Option<usize>) -> Result<()> {
    let model = EnsembleModel::load(model).with_context(|| format!("loading {}", model.display()))?;
    let h = horizon.unwrap_or(model.horizon);
    let fc = model.forecast(h)?;
    let dim = fc.first().and_then(|s| s.first()).map_or(1, Vec::len);
    let mut out = csv::Writer::from_writer(std::io::stdout().lock());
    let mut header = vec!["series_id".to_string(), "step".into()];
    if dim == 1 {
        header.push("value".into());
    } else {
        header.extend((0..dim).map(|d| format!("value_{d}")));
    }
    out.write_record(&header)?;
    for (id, rows) in model.series_ids.iter().zip(&fc) {
        for (step, row) in rows.iter().enumerate() {
            let mut rec = vec![id.clone(), (step + 1).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn benchmark(suite: &Path, seeds: u64, out: &Path, budget_s: Option<f64>) -> Result<()> {
    let mut suite = Suite::load(suite).with_context(|| format!("loading {}", suite.display()))?;
    suite.run.apply_env()?;
    if let Some(b) = budget_s {
        suite.run.time_budget_s = b;
        suite.run.grace_period_s = suite.run.grace_period_s.min(b);
    }
    suite.run.validate()?;
    let datasets = suite.load_datasets()?;
    let kb = suite.kb.as_deref().map(KnowledgeBase::load).transpose()?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let results = run_benchmark(&datasets, &suite.modes, &seeds, &suite.run, kb.as_ref());
    write_results(&results, out)?;
    for s in &results.summary {
        println!(
            "{:<16} mean {:.4} std {:.4} rank {:.3} failures {}",
            s.mode.to_string(),
            s.mean,
            s.std,
            s.mean_rank,
            s.failures
        );
    }
    Ok(())
}

fn build(runs: &[PathBuf], out: &Path, n_c: usize, h: usize) -> Result<()> {
    let base = if out.exists() {
        Some(KnowledgeBase::load(out).with_context(|| format!("loading {}", out.display()))?)
    } else {
        None
    };
    let kb = build_priors(runs, base, n_c, h)?;
    kb.save(out)?;
    println!("{} entries written to {}", kb.entries.len(), out.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let d = SynthParams::default();
    let p = SynthParams {
        length: args.length.unwrap_or(d.length),
        period: args.period.unwrap_or(d.period),
        horizon: args.horizon.unwrap_or(d.horizon),
        series: args.series.unwrap_or(d.series),
        noise: args.noise.unwrap_or(d.noise),
        amplitude: args.amplitude.unwrap_or(d.amplitude),
        datasets: args.datasets.unwrap_or(d.datasets),
        ..d
    };
    for (csv, meta) in write_all(&generate(args.kind, &p, args.seed)?, &args.out)? {
        println!("{} {}", csv.display(), meta.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Forecast { model, horizon } => forecast(&model, horizon),
        Command::Benchmark {
            suite,
            seeds,
            out,
            budget_s,
        } => benchmark(&suite, seeds, &out, budget_s),
        Command::BuildPriors {
            runs,
            out,
            n_c,
            tail_length,
        } => build(&runs, &out, n_c, tail_length),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
