use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sigfolio::config::{DataSection, RunConfig};
use sigfolio::csvio::{parse_date, read_prices, read_signals, write_prices, write_signals};
use sigfolio::report::{read_metrics, write_tables, EvaluationSummary};
use sigfolio::run;
use sigfolio_core::signals::{build_signal_tracks, resolve_overlaps, OverlapScope};
use sigfolio_core::synth::{synth_experts, synth_market, ExpertParams, MarketParams};

#[derive(Parser)]
#[command(name = "sigfolio", version, about = "Portfolio management from expert signals with PPO")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rollout worker threads; 0 collects in-process.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read raw daily bars, fill missing days and write a complete panel.
    IngestPrices {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Check signals against a price file and write them with overlaps merged.
    IngestSignals {
        input: PathBuf,
        #[arg(long)]
        prices: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = ScopeArg::SameExpert)]
        scope: ScopeArg,
    },
    /// Generate a synthetic market, expert signals and a run configuration.
    Synth(SynthArgs),
    /// Train a policy; writes checkpoints and metrics to the output directory.
    Train,
    /// Greedy rolling evaluation of a checkpoint.
    Evaluate {
        /// Defaults to the final checkpoint of the configured run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// First decision day (YYYY-MM-DD); defaults to the test split.
        #[arg(long)]
        from: Option<String>,
        /// Last day (YYYY-MM-DD), inclusive.
        #[arg(long)]
        to: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready tables from training metrics and evaluation reports.
    Report {
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Evaluation report JSON files.
        #[arg(long = "summary")]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    SameExpert,
    AcrossExperts,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    assets: usize,
    #[arg(long, default_value_t = 300)]
    days: usize,
    /// Daily drift, one value for every asset or one per asset. Defaults to
    /// 0.005 for the first asset and 0 for the rest.
    #[arg(long, value_delimiter = ',')]
    drift: Option<Vec<f64>>,
    /// Daily log volatility, one value or one per asset. Defaults to 0.01
    /// for the first asset and 0.02 for the rest.
    #[arg(long, value_delimiter = ',')]
    vol: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    experts: usize,
    /// Probability of a correct call is 0.5 + skill / 2.
    #[arg(long, default_value_t = 1.0)]
    skill: f64,
    #[arg(long, default_value_t = 75)]
    signals_per_expert: usize,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_deref().context("--config is required for this command")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.train.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn day_index(data: &sigfolio_core::MarketData, date: &str, last: bool) -> Result<usize> {
    let day = parse_date(date).map_err(anyhow::Error::msg)?;
    let idx = if last { data.panel.last_index_on_or_before(day) } else { data.panel.first_index_on_or_after(day) };
    idx.with_context(|| format!("{date} is outside the price history"))
}

fn synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let per_asset = |given: &Option<Vec<f64>>, first: f64, rest: f64, flag: &str| -> Result<Vec<f64>> {
        match given {
            None => Ok((0..args.assets).map(|i| if i == 0 { first } else { rest }).collect()),
            Some(v) if v.len() == 1 || v.len() == args.assets => Ok(v.clone()),
            Some(_) => bail!("--{flag} needs 1 or {} values", args.assets),
        }
    };
    let params = MarketParams {
        drifts: per_asset(&args.drift, 0.005, 0.0, "drift")?,
        vols: per_asset(&args.vol, 0.01, 0.02, "vol")?,
        ..MarketParams::default()
    };
    let panel = synth_market(args.assets, args.days, seed, &params)?;
    let expert_params = ExpertParams { signals_per_expert: args.signals_per_expert, ..ExpertParams::default() };
    let signals = synth_experts(&panel, args.experts, args.skill, seed.wrapping_add(100), &expert_params)?;
    write_prices(&args.out.join("prices.csv"), &panel)?;
    write_signals(&args.out.join("signals.csv"), &signals)?;
    let cfg_path = args.out.join("run.toml");
    if !cfg_path.exists() {
        let cfg = RunConfig {
            seed,
            output_dir: PathBuf::from("run"),
            data: DataSection {
                prices: PathBuf::from("prices.csv"),
                signals: Some(PathBuf::from("signals.csv")),
                ..Default::default()
            },
            ..Default::default()
        };
        std::fs::write(&cfg_path, cfg.to_toml()).with_context(|| cfg_path.display().to_string())?;
    }
    println!("{} assets x {} days, {} signals -> {}", args.assets, args.days, signals.len(), args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::IngestPrices { input, output } => {
            let panel = read_prices(input)?;
            let filled = panel.fill_mask().iter().filter(|f| **f).count();
            write_prices(output, &panel)?;
            println!("{} symbols x {} days, {filled} cells filled", panel.assets(), panel.days());
        }
        Command::IngestSignals { input, prices, output, scope } => {
            let scope = match scope {
                ScopeArg::SameExpert => OverlapScope::SameExpert,
                ScopeArg::AcrossExperts => OverlapScope::AcrossExperts,
            };
            let panel = read_prices(prices)?;
            let records = read_signals(input)?;
            let tracks = build_signal_tracks(&records, &panel, scope).context("signals do not fit the price panel")?;
            let resolved = resolve_overlaps(&records, scope);
            write_signals(output, &resolved)?;
            println!("{} signals, {} after merging overlaps, {} experts", records.len(), resolved.len(), tracks.experts().len());
        }
        Command::Synth(args) => synth(args, cli.seed.unwrap_or(0))?,
        Command::Train => {
            let cfg = config(&cli)?;
            let data = run::load_market(&cfg)?;
            let outcome = run::train(&cfg, &data, cfg.train.workers)?;
            println!(
                "{} iterations, final version {} -> {}",
                outcome.metrics.len(),
                outcome.snapshot.version(),
                cfg.output_dir.display()
            );
        }
        Command::Evaluate { checkpoint, from, to, out } => {
            let cfg = config(&cli)?;
            let data = run::load_market(&cfg)?;
            let from = from.as_deref().map(|d| day_index(&data, d, false)).transpose()?;
            let to = to.as_deref().map(|d| day_index(&data, d, true).map(|t| t + 1)).transpose()?;
            let range = run::evaluation_range(&cfg, &data, from, to)?;
            let ckpt = checkpoint.clone().unwrap_or_else(|| run::final_checkpoint(&cfg.output_dir));
            let out = out.clone().unwrap_or_else(|| cfg.output_dir.join("evaluation"));
            let outcome = run::evaluate(&cfg, &data, &ckpt, range, &out)?;
            let s = &outcome.summary;
            let show = |x: Option<f64>| x.map_or_else(|| String::from("undefined"), |v| format!("{v:.4}"));
            println!(
                "{} periods: average gain {}, max {}, min {}; ratio to best expert {} (max {})",
                s.periods.len(),
                show(s.average_gain),
                show(s.max_gain),
                show(s.min_gain),
                show(s.average_gain_ratio),
                show(s.max_gain_ratio)
            );
        }
        Command::Report { metrics, summaries, out } => {
            let cfg = cli.config.as_ref().map(|_| config(&cli)).transpose()?;
            let base = cfg.as_ref().map(|c| c.output_dir.clone());
            let metrics_path = metrics.clone().or_else(|| base.as_ref().map(|b| b.join("metrics.csv")));
            let mut summary_paths = summaries.clone();
            if summary_paths.is_empty() {
                if let Some(b) = &base {
                    let p = b.join("evaluation").join("report.json");
                    if p.exists() {
                        summary_paths.push(p);
                    }
                }
            }
            let out = out.clone().or_else(|| base.map(|b| b.join("tables"))).context("--out or --config is required")?;
            let metrics = match metrics_path {
                Some(p) if p.exists() => read_metrics(&p)?,
                Some(p) if metrics.is_some() => bail!("{}: no such file", p.display()),
                _ => Vec::new(),
            };
            let summaries = summary_paths.iter().map(|p| EvaluationSummary::load(p)).collect::<Result<Vec<_>, _>>()?;
            write_tables(&out, &metrics, &summaries)?;
            println!("tables written to {}", out.display());
        }
    }
    Ok(())
}
