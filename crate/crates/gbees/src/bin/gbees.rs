//! Command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical abort,
//! 4 i/o failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gbees::config::RunConfig;
use gbees::diagnostics::{kl_divergence_bits, rotation_exact_solution};
use gbees::error::GbeesError;
use gbees::grid::SparseGrid;
use gbees::runner::run_scenario;

#[derive(Parser)]
#[command(name = "gbees", about = "Grid-based Bayesian estimation on a sparse phase-space grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario described by a run-config file.
    Run {
        config: PathBuf,
        /// Output directory (default: $GBEES_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the flux passes (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Override the config's RNG seed for synthetic measurements.
        #[arg(long)]
        seed: Option<u64>,
        /// Add snapshots every T time units on top of the config's list.
        #[arg(long)]
        snapshot_every: Option<f64>,
    },
    /// Parse and check a run-config file without running it.
    Validate { config: PathBuf },
    /// Offline KL divergence of a snapshot from a reference.
    ///
    /// The reference is either another snapshot file or a spec of the
    /// form `rotation:mx,my,sx,sy,mu` (the analytic rotation solution,
    /// evaluated at the snapshot's time).
    Kl {
        snapshot: PathBuf,
        reference: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                GbeesError::Config(_) => 2,
                GbeesError::Io(_) => 4,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: Cli) -> gbees::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            seed,
            snapshot_every,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(every) = snapshot_every {
                if !(every > 0.0) {
                    return Err(GbeesError::Config("--snapshot-every must be positive".into()));
                }
                let mut t = 0.0;
                while t <= cfg.t_final + 1e-12 {
                    cfg.snapshot_times.push(t.min(cfg.t_final));
                    t += every;
                }
                cfg.snapshot_times.sort_by(f64::total_cmp);
                cfg.snapshot_times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            }
            let out_dir = out
                .or_else(|| std::env::var_os("GBEES_OUT").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            let run = || -> gbees::Result<()> {
                let (summary, _grid) = run_scenario(&cfg, &out_dir)?;
                println!(
                    "done: t={} steps={} active_cells={} mass={:.6} measurements={} snapshots={} wall={:.2}s",
                    summary.final_time,
                    summary.steps,
                    summary.active_cells,
                    summary.final_mass,
                    summary.measurements_applied,
                    summary.snapshots_written,
                    summary.wall_seconds
                );
                Ok(())
            };
            match workers {
                #[cfg(feature = "parallel")]
                Some(n) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(n.max(1))
                        .build()
                        .map_err(|e| GbeesError::Config(e.to_string()))?;
                    pool.install(run)
                }
                #[cfg(not(feature = "parallel"))]
                Some(_) => run(),
                None => run(),
            }
        }
        Command::Validate { config } => {
            let cfg = RunConfig::from_file(&config)?;
            println!(
                "ok: model dim={} spacing={:?} threshold={} t_final={}",
                cfg.dim, cfg.spacing, cfg.threshold, cfg.t_final
            );
            Ok(())
        }
        Command::Kl {
            snapshot,
            reference,
        } => {
            let file = std::fs::File::open(&snapshot)?;
            let (grid, t) = SparseGrid::read_snapshot(&mut std::io::BufReader::new(file))?;
            let kl = if let Some(spec) = reference.strip_prefix("rotation:") {
                let vals: Vec<f64> = spec
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|e| GbeesError::Config(format!("reference spec: {e}")))
                    })
                    .collect::<gbees::Result<_>>()?;
                if vals.len() != 5 {
                    return Err(GbeesError::Config(
                        "rotation reference spec needs mx,my,sx,sy,mu".into(),
                    ));
                }
                let r = rotation_exact_solution([vals[0], vals[1]], [vals[2], vals[3]], vals[4])?;
                kl_divergence_bits(&r, t, &grid, true)?
            } else {
                let rfile = std::fs::File::open(PathBuf::from(&reference))?;
                let (rgrid, _) = SparseGrid::read_snapshot(&mut std::io::BufReader::new(rfile))?;
                gbees::diagnostics::kl_divergence_bits_grids(&rgrid, &grid, true)?
            };
            println!("{kl}");
            Ok(())
        }
    }
}
