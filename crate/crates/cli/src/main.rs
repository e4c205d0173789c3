use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use udabound::check::{self, Scale};
use udabound::divergence::MixtureTaskSpec;
use udabound::experiment::{emit, format_summary, read_csv, report_summary, run_experiment, ExperimentConfig, Format};
use udabound::tasks::{
    build_mixture_task, build_one_sided_task, build_synthetic_task, class_counts, load_dataset, save_task,
    SyntheticSpec,
};

#[derive(Parser)]
#[command(name = "udabound", version, about = "PAC-Bayes domain adaptation bounds with data-dependent priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a task and write its CSVs and manifest.json
    MakeTask {
        #[command(subcommand)]
        kind: TaskKind,
    },
    /// Run an experiment config and write report.csv / report.json
    Run(RunArgs),
    /// Per seed, alpha and bound: minimum over checkpoints
    Summarize {
        /// report.csv written by `run`
        report: PathBuf,
    },
    /// Run the acceptance checks on small built-in problems
    Check {
        /// Full-size problems (minutes rather than seconds)
        #[arg(long)]
        full: bool,
        /// Check ids to run; all when omitted
        ids: Vec<usize>,
    },
    /// Print a config with every field at its default
    DefaultConfig {
        /// Manifest path to use as the task instead of the synthetic default
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TaskKind {
    /// Two Gaussian blobs with reweighted mixing proportions
    Synthetic {
        #[arg(long, default_value_t = 20_000)]
        n_source: usize,
        #[arg(long, default_value_t = 20_000)]
        n_target: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Full SyntheticSpec as JSON; overrides the size flags
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class mixture of two labeled pools (digit-style schedule)
    Mixture {
        #[arg(long)]
        pool0: PathBuf,
        #[arg(long)]
        pool1: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: u32,
        /// Full MixtureTaskSpec as JSON; defaults to the ten-class schedule
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Part of a shared pool joins a source-only pool, the rest is the target
    OneSided {
        #[arg(long)]
        source_only: PathBuf,
        #[arg(long)]
        shared: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        move_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
    Both,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON
    config: PathBuf,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Both)]
    format: OutputFormat,
    /// Also print the summary table
    #[arg(long)]
    summary: bool,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn make_task(kind: TaskKind) -> Result<()> {
    let (task, out) = match kind {
        TaskKind::Synthetic {
            n_source,
            n_target,
            seed,
            spec,
            out,
        } => {
            let spec = match spec {
                Some(p) => read_json(&p)?,
                None => SyntheticSpec::two_blobs(n_source, n_target, seed),
            };
            (build_synthetic_task(&spec)?, out)
        }
        TaskKind::Mixture {
            pool0,
            pool1,
            classes,
            spec,
            seed,
            out,
        } => {
            let p0 = load_dataset(&pool0, Some(classes))?;
            let p1 = load_dataset(&pool1, Some(classes))?;
            let spec: MixtureTaskSpec = match spec {
                Some(p) => read_json(&p)?,
                None => MixtureTaskSpec::digit_schedule(class_counts(&p0, &p1, classes as usize)?),
            };
            (build_mixture_task(&p0, &p1, &spec, seed)?, out)
        }
        TaskKind::OneSided {
            source_only,
            shared,
            move_fraction,
            seed,
            out,
        } => {
            let a = load_dataset(&source_only, Some(2))?;
            let b = load_dataset(&shared, Some(2))?;
            (build_one_sided_task(&a, &b, move_fraction, seed)?, out)
        }
    };
    let manifest = save_task(&task, &out)?;
    println!(
        "wrote {} (source {}, target {}, beta_inf {})",
        out.join("manifest.json").display(),
        task.source.len(),
        task.target_x.len(),
        manifest.beta_inf
    );
    Ok(())
}

fn write_report(path: &Path, report: &udabound::experiment::RunReport, format: Format) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    emit(report, format, &mut f)?;
    f.flush()?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&args.config)?;
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if matches!(args.format, OutputFormat::Csv | OutputFormat::Both) {
        write_report(&args.out.join("report.csv"), &report, Format::Csv)?;
    }
    if matches!(args.format, OutputFormat::Json | OutputFormat::Both) {
        write_report(&args.out.join("report.json"), &report, Format::Json)?;
    }
    eprintln!("{} checkpoint rows written to {}", report.rows.len(), args.out.display());
    if args.summary {
        print!("{}", format_summary(&report_summary(&report.csv_records()?)));
    }
    Ok(())
}

fn summarize(path: &Path) -> Result<()> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = read_csv(f)?;
    if records.is_empty() {
        bail!("{} has no rows", path.display());
    }
    print!("{}", format_summary(&report_summary(&records)));
    Ok(())
}

fn run_checks(full: bool, ids: &[usize]) -> Result<bool> {
    let scale = if full { Scale::Full } else { Scale::Quick };
    let ids: Vec<usize> = if ids.is_empty() {
        check::CHECKS.iter().map(|c| c.0).collect()
    } else {
        ids.to_vec()
    };
    let mut all = true;
    for id in ids {
        let Some(outcome) = check::run_check(id, scale) else {
            bail!("unknown check id {id}");
        };
        println!("{}", outcome.line());
        all &= outcome.passed && (!full || outcome.within_budget());
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeTask { kind } => make_task(kind).map(|_| true),
        Command::Run(args) => run(args).map(|_| true),
        Command::Summarize { report } => summarize(&report).map(|_| true),
        Command::Check { full, ids } => run_checks(full, &ids),
        Command::DefaultConfig { manifest } => {
            let task = match manifest {
                Some(p) => udabound::experiment::TaskSource::Manifest(p),
                None => udabound::experiment::TaskSource::Synthetic(SyntheticSpec::two_blobs(20_000, 20_000, 0)),
            };
            serde_json::to_string_pretty(&ExperimentConfig::new(task))
                .map(|s| println!("{s}"))
                .map(|_| true)
                .map_err(Into::into)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
