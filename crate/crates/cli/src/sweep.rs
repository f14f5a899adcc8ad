//! β × σ₁ × seed sweeps and their aggregate tables.
//!
//! Every cell of the grid is a full run (train, evaluate, T2 bound check)
//! written under `<root>/<run_id>`. The root also receives
//!
//! * `table.csv`: one row per β (`beta=0` first when present), one column
//!   per σ₁, cells holding the mean metric over seeds;
//! * `per_seed.csv`: one row per run;
//! * `summary.csv`: mean, standard error and count per cell.

use std::fmt::Write as _;
use std::path::Path;

use ebmdiv::bounds::{BoundReport, Theorem};
use ebmdiv::dataio::{Metric, RunConfig};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::run::{bound_options, bound_reports, evaluate, train_run, write_bounds, write_eval};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub betas: Vec<f64>,
    pub sigma1s: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            betas: vec![0.0, 1e-11, 1e-12, 1e-13],
            sigma1s: vec![0.05, 0.1, 0.2],
            seeds: 20,
        }
    }
}

impl SweepSpec {
    /// Parses `betas=0,1e-11;sigma1s=0.05,0.1;seeds=20`. Entries may also
    /// be separated by newlines; omitted keys keep their defaults.
    pub fn parse(text: &str) -> CliResult<SweepSpec> {
        let mut spec = SweepSpec::default();
        for entry in text.split([';', '\n']).map(str::trim).filter(|e| !e.is_empty() && !e.starts_with('#')) {
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("sweep entry `{entry}` is not key=value")))?;
            let list = |v: &str| -> CliResult<Vec<f64>> {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| CliError::Usage(format!("bad number `{x}` in sweep spec")))
                    })
                    .collect()
            };
            match k.trim() {
                "betas" => spec.betas = list(v)?,
                "sigma1s" => spec.sigma1s = list(v)?,
                "seeds" => {
                    spec.seeds = v
                        .trim()
                        .parse()
                        .map_err(|_| CliError::Usage(format!("bad seed count `{v}`")))?
                }
                other => return Err(CliError::Usage(format!("unknown sweep key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// An inline spec, or the contents of a file when `arg` names one.
    pub fn from_arg(arg: &str) -> CliResult<SweepSpec> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{arg}: {e}")))?;
            Self::parse(&text)
        } else {
            Self::parse(arg)
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.betas.is_empty() || self.sigma1s.is_empty() || self.seeds == 0 {
            return Err(CliError::Usage("sweep needs at least one beta, one sigma1 and one seed".into()));
        }
        if self.betas.iter().any(|&b| b < 0.0) || self.sigma1s.iter().any(|&s| s <= 0.0) {
            return Err(CliError::Usage("betas must be >= 0 and sigma1s > 0".into()));
        }
        Ok(())
    }

    /// βs in table order: the baseline first, the rest as given.
    pub fn ordered_betas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.betas.iter().copied().filter(|&b| b == 0.0).take(1).collect();
        for &b in &self.betas {
            if b != 0.0 && !out.contains(&b) {
                out.push(b);
            }
        }
        out
    }

    pub fn ordered_sigma1s(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &s in &self.sigma1s {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }
}

pub fn beta_label(beta: f64) -> String {
    if beta == 0.0 {
        "beta=0".into()
    } else {
        format!("beta={beta:e}")
    }
}

pub fn run_id(beta: f64, sigma1: f64, seed: usize) -> String {
    format!("{}_sigma1={sigma1}_seed={seed}", beta_label(beta))
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub metric: Metric,
    pub value: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub bound: BoundReport,
}

#[derive(Clone, Debug)]
pub struct SweepRun {
    pub run_id: String,
    pub beta: f64,
    pub sigma1: f64,
    pub seed_index: usize,
    pub outcome: Result<RunSummary, String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub beta: f64,
    pub sigma1: f64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub metric: Metric,
    /// In table order: β, then σ₁, then seed.
    pub runs: Vec<SweepRun>,
    pub cells: Vec<Cell>,
}

impl SweepResult {
    pub fn failures(&self) -> impl Iterator<Item = &SweepRun> {
        self.runs.iter().filter(|r| r.outcome.is_err())
    }

    pub fn cell(&self, beta: f64, sigma1: f64) -> Option<&Cell> {
        self.cells.iter().find(|c| c.beta == beta && c.sigma1 == sigma1)
    }

    /// Per σ₁: the best regularized cell and the baseline, when both
    /// exist. Lower metric is better.
    pub fn best_vs_baseline(&self) -> Vec<(f64, Cell, Cell)> {
        let mut out = Vec::new();
        for s in self.spec.ordered_sigma1s() {
            let Some(base) = self.cell(0.0, s) else { continue };
            let best = self
                .cells
                .iter()
                .filter(|c| c.sigma1 == s && c.beta > 0.0 && c.n > 0)
                .min_by(|a, b| a.mean.total_cmp(&b.mean));
            if let Some(best) = best {
                out.push((s, *best, *base));
            }
        }
        out
    }
}

fn one_run(cfg: &RunConfig, root: &Path) -> CliResult<RunSummary> {
    let (dir, data, report) = train_run(cfg, root)?;
    let eval = evaluate(cfg, &report.model, &data)?;
    write_eval(&dir, cfg, &report.model, &data, &eval)?;
    let bounds = bound_reports(&report.model, &data, &[Theorem::T2], &bound_options(cfg))?;
    write_bounds(&dir, &bounds)?;
    Ok(RunSummary {
        metric: eval.metric,
        value: eval.value().expect("metric checked in evaluate"),
        initial_loss: report.initial_loss,
        final_loss: report.final_loss(),
        bound: bounds.into_iter().next().expect("one theorem requested"),
    })
}

/// Runs the whole grid with up to `jobs` runs at a time and writes the
/// aggregate tables. Failed runs are recorded and left out of the means.
pub fn run_sweep(base: &RunConfig, spec: &SweepSpec, root: &Path, jobs: usize) -> CliResult<SweepResult> {
    spec.validate()?;
    base.validate()?;
    std::fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
    let mut plan = Vec::new();
    for &beta in &spec.ordered_betas() {
        for &sigma1 in &spec.ordered_sigma1s() {
            for k in 0..spec.seeds {
                let mut cfg = base.clone();
                cfg.run_id = run_id(beta, sigma1, k);
                cfg.seed = base.seed + k as u64;
                cfg.nce.sigma1 = sigma1;
                cfg.nce.sigma2 = 8.0 * sigma1;
                cfg.reg.beta = beta;
                cfg.output_dir = Some(root.to_path_buf());
                plan.push((beta, sigma1, k, cfg));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Failed(format!("worker pool: {e}")))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        plan.par_iter()
            .map(|(beta, sigma1, k, cfg)| SweepRun {
                run_id: cfg.run_id.clone(),
                beta: *beta,
                sigma1: *sigma1,
                seed_index: *k,
                outcome: one_run(cfg, root).map_err(|e| e.to_string()),
            })
            .collect()
    });

    let mut cells = Vec::new();
    for &beta in &spec.ordered_betas() {
        for &sigma1 in &spec.ordered_sigma1s() {
            let vals: Vec<f64> = runs
                .iter()
                .filter(|r| r.beta == beta && r.sigma1 == sigma1)
                .filter_map(|r| r.outcome.as_ref().ok().map(|s| s.value))
                .collect();
            let n = vals.len();
            let mean = if n > 0 { vals.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let stderr = if n > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                f64::NAN
            };
            cells.push(Cell {
                beta,
                sigma1,
                n,
                mean,
                stderr,
            });
        }
    }
    let result = SweepResult {
        spec: spec.clone(),
        metric: base.metric(),
        runs,
        cells,
    };
    write_tables(&result, root)?;
    Ok(result)
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

pub fn table_csv(result: &SweepResult) -> String {
    let sig = result.spec.ordered_sigma1s();
    let mut s = String::from("beta");
    for sigma in &sig {
        let _ = write!(s, ",sigma1={sigma}");
    }
    s.push('\n');
    for beta in result.spec.ordered_betas() {
        s.push_str(&beta_label(beta));
        for &sigma in &sig {
            let m = result.cell(beta, sigma).map_or(f64::NAN, |c| c.mean);
            let _ = write!(s, ",{}", num(m));
        }
        s.push('\n');
    }
    s
}

pub fn per_seed_csv(result: &SweepResult) -> String {
    let mut s = String::from("run_id,beta,sigma1,seed,metric,value,initial_loss,final_loss,t2_gap,t2_rhs,t2_holds,status\n");
    for r in &result.runs {
        let _ = write!(s, "{},{:e},{},{},{},", r.run_id, r.beta, r.sigma1, r.seed_index, result.metric);
        match &r.outcome {
            Ok(o) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},ok",
                    num(o.value),
                    num(o.initial_loss),
                    num(o.final_loss),
                    num(o.bound.gap.gap),
                    num(o.bound.rhs),
                    o.bound.holds
                );
            }
            Err(e) => {
                let _ = writeln!(s, ",,,,,,\"failed: {}\"", e.replace('"', "'"));
            }
        }
    }
    s
}

pub fn summary_csv(result: &SweepResult) -> String {
    let mut s = String::from("beta,sigma1,metric,n,mean,stderr\n");
    for c in &result.cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            beta_label(c.beta),
            c.sigma1,
            result.metric,
            c.n,
            num(c.mean),
            num(c.stderr)
        );
    }
    s
}

fn write_tables(result: &SweepResult, root: &Path) -> CliResult<()> {
    for (name, body) in [
        ("table.csv", table_csv(result)),
        ("per_seed.csv", per_seed_csv(result)),
        ("summary.csv", summary_csv(result)),
    ] {
        let p = root.join(name);
        std::fs::write(&p, body).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
