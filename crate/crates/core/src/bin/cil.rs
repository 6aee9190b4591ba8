use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use cil::harness::{self, ExperimentConfig, GenConfig, Prop1File, ReportFormat, RunOptions, RunRecord, SweepAxis};
use cil::theorycheck;
use cil::Error;

#[derive(Parser)]
#[command(name = "cil", version, about = "Invariance learning over continuous domains")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct RunFlags {
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Retrain runs that already have records.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of an experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run an experiment once per value of one axis.
    Sweep {
        config: PathBuf,
        /// split, lambda or penalty_width
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Summarize every record under a results directory.
    Report {
        dir: PathBuf,
        /// markdown, csv or plotdata
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo checks of the theory.
    Theory {
        #[command(subcommand)]
        which: Theory,
    },
    /// Write dataset snapshots described by a dataset config.
    Gen { config: PathBuf },
}

#[derive(Subcommand)]
enum Theory {
    /// Failure rate of variance-penalty feature selection.
    Prop1 { config: PathBuf },
}

fn load_experiment(path: &Path, flags: &RunFlags) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seeds) = &flags.seed_list {
        cfg.seeds = seeds.clone();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn options(flags: &RunFlags) -> RunOptions {
    RunOptions {
        force: flags.force,
        jobs: flags.jobs,
    }
}

fn print_records(records: &[RunRecord]) {
    for r in records {
        let setting = match (&r.axis, r.value) {
            (Some(a), Some(v)) => format!(" {a}={v}"),
            _ => String::new(),
        };
        println!(
            "{}{} seed {}: id {:.4} ood {:.4} penalty {:.4e}",
            r.method, setting, r.seed, r.id_accuracy, r.ood_accuracy, r.final_penalty
        );
    }
    print!("{}", harness::render_markdown(&harness::summarize(records)));
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Run { config, flags } => {
            let cfg = load_experiment(&config, &flags)?;
            let records = harness::run(&cfg, &options(&flags))?;
            print_records(&records);
            eprintln!("results in {}", cfg.run_root().display());
        }
        Cmd::Sweep {
            config,
            axis,
            values,
            flags,
        } => {
            let cfg = load_experiment(&config, &flags)?;
            let axis: SweepAxis = axis.parse()?;
            let records = harness::sweep(&cfg, axis, &values, &options(&flags))?;
            print_records(&records);
        }
        Cmd::Report { dir, format, out } => {
            let format: ReportFormat = format.parse()?;
            let text = harness::report(&dir, format)?;
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
        Cmd::Theory {
            which: Theory::Prop1 { config },
        } => {
            let file = Prop1File::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let rows = file.simulate()?;
            for (c, r) in &rows {
                eprintln!(
                    "n={} |T|={}: failure rate {:.4} [{:.4}, {:.4}] over {} trials",
                    c.n, c.envs, r.rate, r.ci_low, r.ci_high, r.trials
                );
            }
            match &file.output {
                Some(p) => theorycheck::write_csv(p, &rows)?,
                None => theorycheck::write_csv_to(std::io::stdout().lock(), &rows)?,
            }
        }
        Cmd::Gen { config } => {
            let cfg: GenConfig = harness::read_toml(&config).with_context(|| format!("loading {}", config.display()))?;
            for dir in harness::generate(&cfg)? {
                println!("{}", dir.display());
            }
        }
    }
    Ok(())
}

/// 2: bad configuration, 3: training diverged, 4: data file missing.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => 3,
        Some(Error::MissingData(_)) => 4,
        Some(Error::Schema { .. } | Error::Validation(_) | Error::Spec(_) | Error::Io { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
