//! One run: train, evaluate and check bounds, with its files on disk.
//!
//! Layout of a run directory:
//!
//! ```text
//! <root>/<run_id>/config.cfg        the resolved configuration
//!                 train.csv, heldout.csv, test.csv
//!                 model.json        final parameters
//!                 train_report.csv  per-epoch losses
//!                 eval_report.csv   KL / NLL
//!                 density_<i>.csv   model (and true) density at test input i
//!                 bound_report.csv, bound_report.txt
//! ```
//!
//! Wall-clock time appears only on `# meta` lines, so re-running a command
//! rewrites every other byte identically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ebmdiv::bounds::{bound_report, BoundOptions, BoundReport, RadMethod, Theorem};
use ebmdiv::dataio::{load_csv, save_csv, Dataset, Metric, RunConfig, RunData, Split};
use ebmdiv::energy::EbmModel;
use ebmdiv::evaluation::{mean_kl, model_density, nll_grid, true_density, GridAxis, NllResult};
use ebmdiv::training::{train, TrainReport};

use crate::error::{CliError, CliResult};

/// Number of test inputs whose densities are exported.
pub const N_DENSITY_EXPORTS: usize = 5;

pub const OUTPUT_ENV: &str = "EBMDIV_OUT";

/// `flag`, else the config's `output.dir`, else `$EBMDIV_OUT`, else `out`.
pub fn output_root(flag: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn train_report_csv(report: &TrainReport) -> String {
    let mut s = format!(
        "# meta: seed={} wall_time_s={:.3}\nepoch,nce,penalty,total\n",
        report.seed,
        report.wall_time.as_secs_f64()
    );
    let _ = writeln!(s, "0,{},,", fmt_f(report.initial_loss));
    for (i, e) in report.epochs.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", i + 1, fmt_f(e.nce), fmt_f(e.penalty), fmt_f(e.total));
    }
    s
}

/// Trains `cfg` and writes the run directory under `root`.
pub fn train_run(cfg: &RunConfig, root: &Path) -> CliResult<(PathBuf, RunData, TrainReport)> {
    cfg.validate()?;
    let data = cfg.load_data()?;
    let report = train(cfg, &data.train)?;
    let dir = root.join(&cfg.run_id);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut stored = cfg.clone();
    stored.output_dir = Some(root.to_path_buf());
    write(&dir.join("config.cfg"), &stored.to_config_string())?;
    save_csv(&data.train, &dir.join("train.csv"))?;
    save_csv(&data.heldout, &dir.join("heldout.csv"))?;
    save_csv(&data.test, &dir.join("test.csv"))?;
    let json = serde_json::to_string_pretty(&report.model)
        .map_err(|e| CliError::Failed(format!("serializing model: {e}")))?;
    write(&dir.join("model.json"), &json)?;
    write(&dir.join("train_report.csv"), &train_report_csv(&report))?;
    Ok((dir, data, report))
}

/// A completed run read back from its directory.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub cfg: RunConfig,
    pub model: EbmModel,
    pub data: RunData,
}

fn require(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(format!("{} not found", path.display())))
    }
}

pub fn load_run(dir: &Path) -> CliResult<LoadedRun> {
    for name in ["config.cfg", "model.json", "train.csv", "heldout.csv", "test.csv"] {
        require(&dir.join(name))?;
    }
    let cfg = RunConfig::load(&dir.join("config.cfg"))?;
    let json_path = dir.join("model.json");
    let text = fs::read_to_string(&json_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", json_path.display())))?;
    let model: EbmModel = serde_json::from_str(&text)
        .map_err(|e| CliError::Failed(format!("{}: {e}", json_path.display())))?;
    model.validate()?;
    let with_split = |name: &str, split: Split| -> CliResult<Dataset> {
        let mut d = load_csv(&dir.join(name))?;
        d.split = split;
        Ok(d)
    };
    let mut data = RunData {
        train: with_split("train.csv", Split::Train)?,
        heldout: with_split("heldout.csv", Split::Heldout)?,
        test: with_split("test.csv", Split::Test)?,
    };
    // keep the generator attached so KL stays available
    if let Some(src) = cfg.load_data().ok().map(|d| d.train.source) {
        data.train.source = src.clone();
        data.heldout.source = src.clone();
        data.test.source = src;
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        cfg,
        model,
        data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOutcome {
    /// Unavailable for data without a known density.
    pub kl: Option<f64>,
    pub nll: NllResult,
    pub metric: Metric,
}

impl EvalOutcome {
    /// The configured headline metric.
    pub fn value(&self) -> Option<f64> {
        match self.metric {
            Metric::Kl => self.kl,
            Metric::Nll => Some(self.nll.mean),
        }
    }
}

fn grid_axis(cfg: &RunConfig, data: &RunData) -> CliResult<GridAxis> {
    Ok(cfg.grid.axis(&data.train.y)?)
}

pub fn evaluate(cfg: &RunConfig, model: &EbmModel, data: &RunData) -> CliResult<EvalOutcome> {
    let axis = grid_axis(cfg, data)?;
    let kl = match cfg.generator() {
        Some(g) => Some(mean_kl(model, g, &data.test.x, &axis)?),
        None => None,
    };
    let nll = nll_grid(model, &data.test, &axis)?;
    let metric = cfg.metric();
    if metric == Metric::Kl && kl.is_none() {
        return Err(CliError::Usage("eval.metric = kl needs a synthetic dataset".into()));
    }
    Ok(EvalOutcome { kl, nll, metric })
}

pub fn eval_report_csv(cfg: &RunConfig, data: &RunData, out: &EvalOutcome) -> String {
    let kl = out.kl.map(fmt_f).unwrap_or_default();
    format!(
        "source,metric,kl,nll,nll_used,nll_excluded,grid_points\n\"{}\",{},{},{},{},{},{}\n",
        data.train.source,
        out.metric,
        kl,
        fmt_f(out.nll.mean),
        out.nll.n_used,
        out.nll.n_excluded,
        cfg.grid.n_points
    )
}

fn density_csv(cfg: &RunConfig, model: &EbmModel, axis: &GridAxis, x: f64) -> CliResult<String> {
    let q = model_density(model, &[x], axis)?;
    let p = match cfg.generator() {
        Some(g) => Some(true_density(g, x, axis)?),
        None => None,
    };
    let mut s = String::from("x,y,model_density,true_density\n");
    let (qd, pd) = (q.density(), p.as_ref().map(|p| p.density()));
    for (i, y) in axis.points().into_iter().enumerate() {
        let t = pd.as_ref().map(|d| fmt_f(d[i])).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", fmt_f(x), fmt_f(y), fmt_f(qd[i]), t);
    }
    Ok(s)
}

/// Evaluates a run directory, writing `eval_report.csv` and the density
/// exports.
pub fn eval_run(dir: &Path) -> CliResult<EvalOutcome> {
    let run = load_run(dir)?;
    let out = evaluate(&run.cfg, &run.model, &run.data)?;
    write_eval(&run.dir, &run.cfg, &run.model, &run.data, &out)?;
    Ok(out)
}

pub fn write_eval(dir: &Path, cfg: &RunConfig, model: &EbmModel, data: &RunData, out: &EvalOutcome) -> CliResult<()> {
    write(&dir.join("eval_report.csv"), &eval_report_csv(cfg, data, out))?;
    let axis = grid_axis(cfg, data)?;
    for (i, &x) in data.test.x.iter().take(N_DENSITY_EXPORTS).enumerate() {
        write(&dir.join(format!("density_{i}.csv")), &density_csv(cfg, model, &axis, x)?)?;
    }
    Ok(())
}

pub fn bound_options(cfg: &RunConfig) -> BoundOptions {
    BoundOptions {
        tau: cfg.bounds.tau,
        delta: cfg.bounds.delta,
        n_draws: cfg.bounds.n_draws,
        rad_used: RadMethod::MassartUpper,
        seed: cfg.seed,
    }
}

pub fn bound_reports(
    model: &EbmModel,
    data: &RunData,
    theorems: &[Theorem],
    opts: &BoundOptions,
) -> CliResult<Vec<BoundReport>> {
    theorems
        .iter()
        .map(|&t| Ok(bound_report(model, t, &data.train, &data.heldout, opts)?))
        .collect()
}

pub fn write_bounds(dir: &Path, reports: &[BoundReport]) -> CliResult<()> {
    let mut csv = format!("{}\n", BoundReport::CSV_HEADER);
    let mut txt = String::from(
        "R_m(F) is approximated on the finite class of realized features {+-phi_1..+-phi_D}; inputs are measured in-sample.\n\n",
    );
    for r in reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        txt.push_str(&r.text_block());
        txt.push('\n');
    }
    write(&dir.join("bound_report.csv"), &csv)?;
    write(&dir.join("bound_report.txt"), &txt)
}

/// Checks bounds on a run directory. The run's τ, δ and draw count apply
/// unless overridden.
pub fn bounds_run(
    dir: &Path,
    theorems: &[Theorem],
    tau: Option<f64>,
    delta: Option<f64>,
) -> CliResult<Vec<BoundReport>> {
    let run = load_run(dir)?;
    let mut opts = bound_options(&run.cfg);
    if let Some(t) = tau {
        opts.tau = t;
    }
    if let Some(d) = delta {
        opts.delta = d;
    }
    if !(opts.tau > 0.0 && opts.tau <= 1.0) || !(opts.delta > 0.0 && opts.delta < 1.0) {
        return Err(CliError::Usage("need 0 < tau <= 1 and 0 < delta < 1".into()));
    }
    let reports = bound_reports(&run.model, &run.data, theorems, &opts)?;
    write_bounds(&run.dir, &reports)?;
    Ok(reports)
}
