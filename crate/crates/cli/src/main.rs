use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use shuffle_linucb::accounting::{budget_report, render_reports};
use shuffle_linucb::experiment::{
    aggregate, emit_chart, emit_csv, emit_report, protocol_config, read_csv, records_from_rows, run_matrix_with,
    Algo, ExperimentConfig,
};
use shuffle_linucb::ContextMode;

#[derive(Parser)]
#[command(name = "shuffle-linucb", version, about = "Private batched LinUCB experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment matrix and write CSV, SVG and budget reports.
    Run(RunArgs),
    /// Print the privacy budget report of every (algo, epsilon) in a config.
    Accounting(ConfigArgs),
    /// Redraw the chart from a CSV written by `run`.
    Chart {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
}

/// Config file plus per-key overrides. Flags win over file values.
#[derive(Args)]
struct ConfigArgs {
    /// TOML file with flat config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference settings: T=20000, 50 seeds.
    #[arg(long, conflicts_with = "desk_scale")]
    paper_figure1: bool,
    /// Reference settings at T=5000 with 20 seeds.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<Algo>>,
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long = "B")]
    batch_size: Option<usize>,
    #[arg(long)]
    baseline_batch: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    num_arms: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Explicit seed list.
    #[arg(long, value_delimiter = ',', conflicts_with = "num_seeds")]
    seeds: Option<Vec<u64>>,
    /// Seeds 0..N.
    #[arg(long)]
    num_seeds: Option<u64>,
    #[arg(long)]
    returning_users: bool,
    #[arg(long = "M0")]
    m0: Option<u32>,
    /// Leading constant of the bit-count calibration.
    #[arg(long, conflicts_with = "theory_constants")]
    vec_constant: Option<f64>,
    /// Use the theoretical bit-count constant.
    #[arg(long)]
    theory_constants: bool,
    #[arg(long, value_parser = parse_mode)]
    context_mode: Option<ContextMode>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Keep every round in the CSV.
    #[arg(long)]
    full_trace: bool,
}

fn parse_mode(s: &str) -> Result<ContextMode, String> {
    match s {
        "resampled" => Ok(ContextMode::Resampled),
        "fixed" => Ok(ContextMode::Fixed),
        _ => Err(format!("unknown context mode {s:?}; expected resampled or fixed")),
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for outputs without an explicit path.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Run episodes on one thread.
    #[arg(long)]
    serial: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = if let Some(path) = &self.config {
            ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?
        } else if self.desk_scale {
            ExperimentConfig::desk_scale()
        } else {
            ExperimentConfig::paper_figure1()
        };
        if self.config.is_some() && self.desk_scale {
            let desk = ExperimentConfig::desk_scale();
            cfg.horizon = desk.horizon;
            cfg.seeds = desk.seeds;
        }
        if self.config.is_some() && self.paper_figure1 {
            let paper = ExperimentConfig::paper_figure1();
            cfg.horizon = paper.horizon;
            cfg.seeds = paper.seeds;
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(algo => algos, epsilon => epsilons, horizon => horizon, batch_size => batch_size,
             baseline_batch => baseline_batch, d => d, num_arms => num_arms, delta => delta,
             alpha => alpha, seeds => seeds, m0 => m0, context_mode => context_mode,
             grid_points => grid_points);
        if let Some(n) = self.num_seeds {
            cfg.seeds = (0..n).collect();
        }
        if self.returning_users {
            cfg.returning_users = true;
        }
        if self.full_trace {
            cfg.full_trace = true;
        }
        if let Some(c) = self.vec_constant {
            cfg.vec_constant_override = Some(c);
        }
        if self.theory_constants {
            cfg.vec_constant_override = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output_path(explicit: &Option<PathBuf>, from_config: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    explicit
        .clone()
        .or_else(|| from_config.clone())
        .unwrap_or_else(|| dir.join(name))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let csv = output_path(&args.csv, &cfg.csv_path, &args.out_dir, "regret.csv");
    let svg = output_path(&args.svg, &cfg.svg_path, &args.out_dir, "regret.svg");
    let report = output_path(&args.report, &cfg.report_path, &args.out_dir, "budget.txt");
    for p in [&csv, &svg, &report] {
        ensure_parent(p)?;
    }
    let jobs = cfg.algos.len() * cfg.epsilons.len() * cfg.seeds.len();
    eprintln!("running {jobs} episodes (T={}, B={}, {} seeds)", cfg.horizon, cfg.batch_size, cfg.seeds.len());
    let start = std::time::Instant::now();
    let records = run_matrix_with(&cfg, args.serial)?;
    let curves = aggregate(&records)?;
    emit_csv(&records, &csv)?;
    emit_chart(&curves, &svg)?;
    emit_report(&records, &report)?;
    println!("{:<16} {:>8} {:>14} {:>10}", "algo", "epsilon", "final regret", "std err");
    for c in &curves {
        println!("{:<16} {:>8} {:>14.2} {:>10.2}", c.algo.label(), c.epsilon, c.final_mean(), c.final_se());
    }
    eprintln!(
        "wrote {}, {}, {} in {:.1}s",
        csv.display(),
        svg.display(),
        report.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn accounting(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let mut algos = cfg.algos.clone();
    algos.sort();
    algos.dedup();
    for algo in algos {
        for &eps in &cfg.epsilons {
            let reports = budget_report(&protocol_config(&cfg, algo, eps))?;
            print!("{}", render_reports(&format!("{algo} epsilon={eps}"), &reports));
        }
    }
    Ok(())
}

fn chart(csv: &Path, svg: &Path) -> Result<()> {
    let rows = read_csv(csv).with_context(|| format!("reading {}", csv.display()))?;
    if rows.is_empty() {
        bail!("{} has no data rows", csv.display());
    }
    let curves = aggregate(&records_from_rows(&rows))?;
    ensure_parent(svg)?;
    emit_chart(&curves, svg)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Accounting(args) => accounting(args),
        Command::Chart { csv, svg } => chart(csv, svg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
