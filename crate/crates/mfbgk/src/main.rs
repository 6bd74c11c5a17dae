//! Command-line front end: run a configured simulation, benchmark it across
//! worker counts, or profile the per-phase time breakdown.

use clap::{Parser, Subcommand};
use mfbgk::cli_io::{
    self, diagnostics_csv, load_config, snapshot_path, write_snapshot, write_text, SnapshotFormat,
};
use mfbgk::solver::Solver;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mfbgk", about = "Meshfree ALE solver for the BGK kinetic equation")]
struct Cli {
    /// Reserved for future stochastic extensions; the method itself is
    /// deterministic and ignores the seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write snapshots plus diagnostics.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Override the configured number of steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Override the snapshot cadence.
        #[arg(long)]
        snapshot_every: Option<u64>,
        /// Override the worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Snapshot format: csv or vtk.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Time the run across worker counts and resolutions.
    Bench {
        config: PathBuf,
        /// Comma-separated worker counts; the first is the speedup baseline.
        #[arg(long, default_value = "1")]
        workers: String,
        /// Comma-separated n_per_axis values; default: the configured one.
        #[arg(long)]
        resolutions: Option<String>,
        /// Override the configured number of steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Also write the table as csv to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report the per-phase time breakdown of a run.
    Profile {
        config: PathBuf,
        /// Override the configured number of steps.
        #[arg(long)]
        steps: Option<u64>,
    },
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, mfbgk::Error> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| mfbgk::Error::InvalidParam(format!("bad {what} list entry `{p}`")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), mfbgk::Error> {
    match cli.command {
        Command::Run {
            config,
            out_dir,
            steps,
            snapshot_every,
            workers,
            format,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = steps {
                cfg.n_steps = s;
            }
            if let Some(s) = snapshot_every {
                cfg.snapshot_every = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let format = match format.as_str() {
                "csv" => SnapshotFormat::Csv,
                "vtk" => SnapshotFormat::VtkLegacyPoints,
                other => {
                    return Err(mfbgk::Error::InvalidParam(format!(
                        "unknown snapshot format `{other}`"
                    )))
                }
            };
            std::fs::create_dir_all(&out_dir).map_err(|source| mfbgk::Error::Io {
                path: out_dir.clone(),
                source,
            })?;
            let mut solver = Solver::new(cfg)?;
            let summary = solver.run_with(|s| {
                write_snapshot(s, &snapshot_path(&out_dir, s.step_index(), format), format)
            })?;
            write_text(&out_dir.join("diagnostics.csv"), &diagnostics_csv(&solver))?;
            let last = summary.diagnostics.last();
            println!(
                "completed {} steps, {} particles, workers = {}",
                summary.steps,
                summary.particles,
                solver.workers()
            );
            if let Some(d) = last {
                println!(
                    "mean density {:.6e}, stable_dt {:.3e}, max wall flux (rel) {:.3e}",
                    d.mean_density, d.stable_dt, d.max_wall_flux_rel
                );
            }
            Ok(())
        }
        Command::Bench {
            config,
            workers,
            resolutions,
            steps,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = steps {
                cfg.n_steps = s;
            }
            let worker_counts: Vec<usize> = parse_list(&workers, "workers")?;
            let resolutions: Vec<usize> = match resolutions {
                Some(raw) => parse_list(&raw, "resolutions")?,
                None => vec![cfg.n_per_axis],
            };
            let table = cli_io::bench(&cfg, &worker_counts, &resolutions)?;
            print!("{}", table.to_text());
            if let Some(path) = out {
                write_text(&path, &table.to_csv())?;
            }
            Ok(())
        }
        Command::Profile { config, steps } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = steps {
                cfg.n_steps = s;
            }
            let report = cli_io::profile(&cfg)?;
            print!("{report}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
