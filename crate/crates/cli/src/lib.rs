//! Command-line front end: `gen`, `train`, `eval`, `bounds` and `sweep`.

pub mod error;
pub mod run;
pub mod sweep;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ebmdiv::bounds::Theorem;
use ebmdiv::dataio::{save_csv, Generator, RunConfig};

use crate::error::{CliError, CliResult};
use crate::sweep::{beta_label, SweepSpec};

#[derive(Parser, Debug)]
#[command(name = "ebmdiv", version, about = "Diversity-regularized energy-based regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DatasetArg {
    A,
    B,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TheoremArg {
    T1,
    T2,
    T3,
    T4,
    All,
}

impl TheoremArg {
    fn theorems(self) -> Vec<Theorem> {
        match self {
            TheoremArg::T1 => vec![Theorem::T1],
            TheoremArg::T2 => vec![Theorem::T2],
            TheoremArg::T3 => vec![Theorem::T3],
            TheoremArg::T4 => vec![Theorem::T4],
            TheoremArg::All => Theorem::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    Gen {
        #[arg(long, value_enum)]
        dataset: DatasetArg,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output root; overrides `output.dir` and EBMDIV_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute KL / NLL for a trained run.
    Eval {
        #[arg(long)]
        run: PathBuf,
    },
    /// Check the generalization bounds on a trained run.
    Bounds {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, value_enum, default_value = "all")]
        theorem: TheoremArg,
    },
    /// Run a beta x sigma1 x seed grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inline `betas=..;sigma1s=..;seeds=N`, or a file holding one.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    if !path.is_file() {
        return Err(CliError::Io(format!("{}: no such config file", path.display())));
    }
    Ok(RunConfig::load(path)?)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { dataset, n, seed, out } => {
            let g = match dataset {
                DatasetArg::A => Generator::A,
                DatasetArg::B => Generator::B,
            };
            let data = g.generate(n as usize, seed)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
            }
            save_csv(&data, &out)?;
            println!("wrote {} rows to {}", data.len(), out.display());
        }
        Command::Train { config, out } => {
            let cfg = load_config(&config)?;
            let root = run::output_root(out.as_deref(), Some(&cfg));
            let (dir, _, report) = run::train_run(&cfg, &root)?;
            println!(
                "{}: loss {:.6} -> {:.6} over {} epochs",
                dir.display(),
                report.initial_loss,
                report.final_loss(),
                report.epochs.len()
            );
        }
        Command::Eval { run: dir } => {
            let out = run::eval_run(&dir)?;
            match out.kl {
                Some(kl) => println!("kl {kl:.6e}  nll {:.6} ({} used, {} excluded)", out.nll.mean, out.nll.n_used, out.nll.n_excluded),
                None => println!("nll {:.6} ({} used, {} excluded)", out.nll.mean, out.nll.n_used, out.nll.n_excluded),
            }
        }
        Command::Bounds { run: dir, tau, delta, theorem } => {
            let reports = run::bounds_run(&dir, &theorem.theorems(), tau, delta)?;
            for r in &reports {
                println!(
                    "{}: gap {:.4e} <= rhs {:.4e} : {}",
                    r.theorem,
                    r.gap.gap,
                    r.rhs,
                    if r.holds { "holds" } else { "VIOLATED" }
                );
            }
        }
        Command::Sweep { config, sweep, jobs, out } => {
            let cfg = load_config(&config)?;
            let spec = match sweep {
                Some(s) => SweepSpec::from_arg(&s)?,
                None => SweepSpec::default(),
            };
            let root = run::output_root(out.as_deref(), Some(&cfg));
            let result = sweep::run_sweep(&cfg, &spec, &root, jobs)?;
            print!("{}", sweep::table_csv(&result));
            for (s, best, base) in result.best_vs_baseline() {
                println!(
                    "sigma1={s}: best {} {:.6e} vs beta=0 {:.6e}",
                    beta_label(best.beta),
                    best.mean,
                    base.mean
                );
            }
            let failed: Vec<_> = result.failures().collect();
            if !failed.is_empty() {
                for r in &failed {
                    eprintln!("{}: {}", r.run_id, r.outcome.as_ref().err().map_or("", |e| e.as_str()));
                }
                return Err(CliError::Failed(format!("{} of {} runs failed", failed.len(), result.runs.len())));
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 64 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
