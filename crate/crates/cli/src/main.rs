use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dispatch_cli::{config, export, report, run};
use dispatch_core::netlist::Netlist;
use dispatch_core::simulator::{simulate, FrequencySweep};
use std::path::PathBuf;
use std::process::ExitCode;

/// Two-step sample-efficient design-space exploration.
#[derive(Parser)]
#[command(name = "dispatch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a configured run (exit 0 success, 2 best-effort, 1 error).
    Run {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Parallel evaluation workers.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: config, then $DISPATCH_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a netlist file and print the response as CSV.
    Simulate {
        #[arg(long)]
        netlist: PathBuf,
        /// Sweep as `fmin,fmax,count` (log-spaced).
        #[arg(long)]
        sweep: String,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a simulation log.
    Report {
        #[arg(long)]
        log: PathBuf,
    },
    /// Export a checkpointed surrogate as an LP-format feasibility program.
    ExportLp {
        #[arg(long)]
        model: PathBuf,
        /// JSON design specification.
        #[arg(long)]
        spec: PathBuf,
        /// Write the LP file here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_sweep(text: &str) -> Result<FrequencySweep> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        bail!("sweep must be fmin,fmax,count, got {text:?}");
    }
    let f_min: f64 = parts[0].trim().parse().context("bad fmin")?;
    let f_max: f64 = parts[1].trim().parse().context("bad fmax")?;
    let count: usize = parts[2].trim().parse().context("bad count")?;
    Ok(FrequencySweep::log_spaced(f_min, f_max, count)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config: config_path, workers, seed, out } => {
            let mut config = config::load_config(&config_path)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if workers.is_some() {
                config.workers = workers;
            }
            let started = std::time::Instant::now();
            let outcome = run(&config, out.as_deref())?;
            print!("{}", outcome.summary);
            println!("artifacts: {}", outcome.out_dir.display());
            println!("wall_time_s: {:.1}", started.elapsed().as_secs_f64());
            Ok(ExitCode::from(outcome.status.exit_code() as u8))
        }
        Command::Simulate { netlist, sweep, out } => {
            let text = std::fs::read_to_string(&netlist)
                .with_context(|| format!("reading netlist {}", netlist.display()))?;
            let parsed = Netlist::parse(&text)?;
            let curve = simulate(&parsed, &parse_sweep(&sweep)?)?;
            match out {
                Some(path) => std::fs::write(path, curve.to_csv())?,
                None => print!("{}", curve.to_csv()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { log } => {
            let (_, text) = report::report(&log)?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportLp { model, spec, out } => {
            match out {
                Some(path) => {
                    let mut file = std::fs::File::create(&path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    export::export_lp(&model, &spec, &mut file)?;
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    export::export_lp(&model, &spec, &mut stdout)?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
