use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochch::eigen::EigenConfig;
use stochch::harness::{
    convergence_study, eigen_trace, monte_carlo, run_realization, Axis, Ladder, Mode, RunConfig, RunOutput, TraceRecord,
};
use stochch::{Error, Result};

/// Adaptive finite element solver for the stochastic Cahn-Hilliard equation.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one realization.
    Run {
        #[command(flatten)]
        common: Common,
        /// Realization index within the seed's stream family.
        #[arg(long, default_value_t = 0)]
        realization: u64,
    },
    /// Run a Monte Carlo ensemble and aggregate it.
    Mc {
        #[command(flatten)]
        common: Common,
        /// Worker threads (0 = one per core).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the noise-free problem.
    Det {
        #[command(flatten)]
        common: Common,
    },
    /// Coupled-path convergence study of the linear scheme.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Axis::Time)]
        axis: Axis,
        /// Step counts (time axis) or mesh widths (space axis) of the rungs.
        #[arg(long, value_delimiter = ',')]
        rungs: Option<Vec<f64>>,
        /// Mesh width (time axis) or step count (space axis) shared by all rungs.
        #[arg(long)]
        fixed: Option<f64>,
        /// Step count (time axis) or mesh width (space axis) of the reference.
        #[arg(long)]
        reference: Option<f64>,
    },
    /// Principal eigenvalue of stored states.
    EigTrace {
        /// Checkpoint files, or directories searched for `*.ckpt`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// CSV file for the `t,lambda` table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    realizations: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        if let Some(m) = self.realizations {
            cfg.realizations = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn single(cfg: &RunConfig, r: u64) -> Result<TraceRecord> {
    let out = match cfg.output_dir() {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join("config.toml");
            std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
            RunOutput::under(&dir, "")
        }
        None => RunOutput::default(),
    };
    let trace = run_realization(cfg, r, &out)?;
    let last = trace.steps.last().expect("the initial level is always recorded");
    println!("levels     {}", trace.steps.len());
    println!("final t    {}", last.t);
    println!("energy     {:.8} -> {:.8}", trace.steps[0].energy, last.energy);
    println!("mass       {:.3e} drift", (last.mass - trace.steps[0].mass).abs());
    match trace.peak_time {
        Some(t) => println!("peak time  {t}"),
        None => println!("peak time  -"),
    }
    if let Some(f) = &trace.failure {
        println!("failed     {f}");
    }
    Ok(trace)
}

fn checkpoints(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
            for entry in entries.flatten() {
                let path = entry.path();
                if path.extension().is_some_and(|x| x == "ckpt") {
                    files.push(path);
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Input("no checkpoints found".into()));
    }
    Ok(files)
}

fn write_lambda_csv(path: &Path, trace: &[(f64, f64)]) -> Result<()> {
    let fail = |e: csv::Error| Error::Encoding(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(["t", "lambda"]).map_err(fail)?;
    for (t, l) in trace {
        w.write_record([t.to_string(), l.to_string()]).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ladder(axis: Axis, rungs: Option<Vec<f64>>, fixed: Option<f64>, reference: Option<f64>) -> Ladder {
    match axis {
        Axis::Time => {
            let steps: Vec<usize> =
                rungs.unwrap_or_else(|| vec![64.0, 128.0, 256.0, 512.0]).iter().map(|&s| s as usize).collect();
            Ladder::time(fixed.unwrap_or(1.0 / 16.0), &steps, reference.unwrap_or(8192.0) as usize)
        }
        Axis::Space => {
            let hs = rungs.unwrap_or_else(|| vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]);
            Ladder::space(&hs, reference.unwrap_or(1.0 / 128.0), fixed.unwrap_or(64.0) as usize)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, realization } => {
            single(&common.config()?, realization)?;
        }
        Command::Det { common } => {
            let mut cfg = common.config()?;
            cfg.mode = Mode::Deterministic;
            single(&cfg, 0)?;
        }
        Command::Mc { common, workers } => {
            let mut cfg = common.config()?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let (summary, _) = monte_carlo(&cfg)?;
            println!("realizations {} ({} failed)", summary.realizations.len(), summary.failures);
            if let Some(e) = summary.expectations.last() {
                println!("E[energy](T) {:.8}", e.energy.mean);
                if let Some(l) = e.lambda {
                    println!("E[lambda](T) {:.6}", l.mean);
                }
            }
            match summary.histogram.mode() {
                Some(m) => println!("peak-time mode {m}"),
                None => println!("peak-time mode -"),
            }
        }
        Command::Converge { common, axis, rungs, fixed, reference } => {
            let cfg = common.config()?;
            let table = convergence_study(&cfg, &ladder(axis, rungs, fixed, reference))?;
            println!("{table}");
        }
        Command::EigTrace { inputs, out } => {
            let files = checkpoints(&inputs)?;
            let trace = eigen_trace(&files, &EigenConfig::default())?;
            for (t, l) in &trace {
                println!("{t:.8} {l:.6}");
            }
            if let Some(path) = out {
                write_lambda_csv(&path, &trace)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
