//! Synthetic 1-D regression data, CSV files and run configuration.
//!
//! Two generators with known conditional densities:
//!
//! * `a`: `x ~ U[−3, 3]`, `y = sin(2x)(1 + ½·1[x>0]) + ε`,
//!   `ε ~ N(0, (0.15 + 0.25·1[x>0])²)`, a heteroscedastic sinusoid.
//! * `b`: `x ~ U[0, 1]`, `y = 2x + ε` or `y = 1 − 2x + ε` with equal
//!   probability, `ε ~ N(0, 0.05²)`, a branching bimodal density.
//!
//! Both are stand-ins with the qualitative shape of well-known 1-D
//! benchmarks, not copies of them. Real data can be supplied as CSV.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::{Architecture, EnergyKind};
use crate::error::{ensure_finite, Error, Result};
use crate::evaluation::GridSpec;
use crate::numerics::{rng_from_seed, Matrix};
use crate::training::{FeatureTap, NceConfig, RegularizerConfig};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn normal_logpdf(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// A synthetic source with an analytic conditional density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generator {
    A,
    B,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::A => "a",
            Generator::B => "b",
        }
    }

    /// Default sample size.
    pub fn default_n(self) -> usize {
        match self {
            Generator::A => 2000,
            Generator::B => 1700,
        }
    }

    /// `log p(y | x)`.
    pub fn log_density(self, x: f64, y: f64) -> f64 {
        match self {
            Generator::A => {
                let pos = if x > 0.0 { 1.0 } else { 0.0 };
                let mean = (2.0 * x).sin() * (1.0 + 0.5 * pos);
                normal_logpdf(y, mean, 0.15 + 0.25 * pos)
            }
            Generator::B => {
                let a = normal_logpdf(y, 2.0 * x, 0.05);
                let b = normal_logpdf(y, 1.0 - 2.0 * x, 0.05);
                let m = a.max(b);
                m + (0.5 * (a - m).exp() + 0.5 * (b - m).exp()).ln()
            }
        }
    }

    /// `E[y | x]`.
    pub fn conditional_mean(self, x: f64) -> f64 {
        match self {
            Generator::A => (2.0 * x).sin() * if x > 0.0 { 1.5 } else { 1.0 },
            Generator::B => 0.5,
        }
    }

    pub fn generate(self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Config("dataset size must be at least 1".into()));
        }
        let mut rng = rng_from_seed(seed, 0);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            match self {
                Generator::A => {
                    let xi: f64 = rng.random_range(-3.0..=3.0);
                    let pos = if xi > 0.0 { 1.0 } else { 0.0 };
                    x.push(xi);
                    y.push((2.0 * xi).sin() * (1.0 + 0.5 * pos) + (0.15 + 0.25 * pos) * z);
                }
                Generator::B => {
                    let xi: f64 = rng.random_range(0.0..=1.0);
                    let mean = if rng.random_bool(0.5) { 2.0 * xi } else { 1.0 - 2.0 * xi };
                    x.push(xi);
                    y.push(mean + 0.05 * z);
                }
            }
        }
        Ok(Dataset {
            x,
            y,
            source: DataSource::Generated { generator: self, seed },
            split: Split::Full,
        })
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(Generator::A),
            "b" | "B" => Ok(Generator::B),
            _ => Err(Error::Config(format!("unknown generator `{s}` (expected a or b)"))),
        }
    }
}

pub fn gen_dataset_a(n: usize, seed: u64) -> Result<Dataset> {
    Generator::A.generate(n, seed)
}

pub fn gen_dataset_b(n: usize, seed: u64) -> Result<Dataset> {
    Generator::B.generate(n, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Generated { generator: Generator, seed: u64 },
    Csv(PathBuf),
    Other,
}

impl DataSource {
    pub fn generator(&self) -> Option<Generator> {
        match self {
            DataSource::Generated { generator, .. } => Some(*generator),
            _ => None,
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Generated { generator, seed } => {
                write!(f, "synthetic stand-in {generator} (seed {seed})")
            }
            DataSource::Csv(p) => write!(f, "csv {}", p.display()),
            DataSource::Other => f.write_str("in-memory"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Full,
    Train,
    Heldout,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub source: DataSource,
    pub split: Split,
}

impl Dataset {
    pub fn from_xy(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!("{} inputs, {} targets", x.len(), y.len())));
        }
        ensure_finite("x", &x)?;
        ensure_finite("y", &y)?;
        Ok(Dataset {
            x,
            y,
            source: DataSource::Other,
            split: Split::Full,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Inputs as an `n × 1` matrix.
    pub fn x_matrix(&self) -> Matrix {
        Matrix::column(&self.x).expect("dataset values are finite")
    }

    pub fn max_abs_y(&self) -> f64 {
        self.y.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn subset(&self, idx: &[usize], split: Split) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            source: self.source.clone(),
            split,
        }
    }

    /// Seeded disjoint split into (train, heldout); the heldout part gets
    /// `round(n · heldout_fraction)` rows.
    pub fn split(&self, heldout_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&heldout_fraction) {
            return Err(Error::Config(format!(
                "heldout fraction must lie in [0, 1), got {heldout_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng_from_seed(seed, 1));
        let n_held = ((self.len() as f64) * heldout_fraction).round() as usize;
        let (held, train) = idx.split_at(n_held);
        Ok((self.subset(train, Split::Train), self.subset(held, Split::Heldout)))
    }
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(48 * (data.len() + 1));
    out.push_str("x,y\n");
    for (x, y) in data.x.iter().zip(&data.y) {
        let _ = writeln!(out, "{x:.16e},{y:.16e}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x,y" => {}
        Some((_, h)) => return Err(parse_err(1, format!("expected header `x,y`, found `{h}`"))),
        None => return Err(parse_err(1, "empty file".into())),
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let (Some(a), Some(b), None) = (cells.next(), cells.next(), cells.next()) else {
            return Err(parse_err(line_no, "expected two columns".into()));
        };
        let num = |c: &str| {
            c.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("not a finite number: `{}`", c.trim())))
        };
        x.push(num(a)?);
        y.push(num(b)?);
    }
    if x.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    Ok(Dataset {
        x,
        y,
        source: DataSource::Csv(path.to_path_buf()),
        split: Split::Full,
    })
}

/// Where a run's data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Generated { generator: Generator, n: usize, seed: u64 },
    Csv { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Kl,
    Nll,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Kl => "kl",
            Metric::Nll => "nll",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(Metric::Kl),
            "nll" => Ok(Metric::Nll),
            _ => Err(Error::Config(format!("unknown metric `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundSettings {
    pub tau: f64,
    pub delta: f64,
    /// σ-draws for the Monte Carlo Rademacher estimate.
    pub n_draws: usize,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            tau: 0.95,
            delta: 0.05,
            n_draws: 2000,
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub heldout_fraction: f64,
    /// Size of the fresh test sample for generated data.
    pub n_test: usize,
    pub energy: EnergyKind,
    pub hidden: usize,
    pub n_features: usize,
    pub nce: NceConfig,
    pub reg: RegularizerConfig,
    pub grid: GridSpec,
    pub bounds: BoundSettings,
    /// Defaults to KL for generator `a`, NLL otherwise.
    pub metric: Option<Metric>,
    /// Output root; when unset the caller picks one.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            seed: 0,
            dataset: DatasetSpec::Generated {
                generator: Generator::A,
                n: Generator::A.default_n(),
                seed: 0,
            },
            heldout_fraction: 0.2,
            n_test: 200,
            energy: EnergyKind::JointMlp,
            hidden: 10,
            n_features: 10,
            nce: NceConfig::default(),
            reg: RegularizerConfig::default(),
            grid: GridSpec::default(),
            bounds: BoundSettings::default(),
            metric: None,
            output_dir: None,
        }
    }
}

/// Train, heldout and test sets of a run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub train: Dataset,
    pub heldout: Dataset,
    /// A fresh sample for generated data; the heldout set for CSV data.
    pub test: Dataset,
}

impl RunConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.hidden,
            n_features: self.n_features,
            ..Architecture::default()
        }
    }

    pub fn generator(&self) -> Option<Generator> {
        match self.dataset {
            DatasetSpec::Generated { generator, .. } => Some(generator),
            DatasetSpec::Csv { .. } => None,
        }
    }

    pub fn metric(&self) -> Metric {
        self.metric.unwrap_or(match self.generator() {
            Some(Generator::A) => Metric::Kl,
            _ => Metric::Nll,
        })
    }

    /// Loads or generates the data. The split depends only on the dataset
    /// seed, so runs that differ in training seed share their data.
    pub fn load_data(&self) -> Result<RunData> {
        let (full, split_seed) = match &self.dataset {
            DatasetSpec::Generated { generator, n, seed } => (generator.generate(*n, *seed)?, *seed),
            DatasetSpec::Csv { path } => (load_csv(path)?, 0),
        };
        let (train, heldout) = full.split(self.heldout_fraction, split_seed)?;
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let test = match &self.dataset {
            DatasetSpec::Generated { generator, seed, .. } => {
                let mut t = generator.generate(self.n_test.max(1), seed.wrapping_add(0x7e57))?;
                t.split = Split::Test;
                t
            }
            DatasetSpec::Csv { .. } => {
                let mut t = heldout.clone();
                t.split = Split::Test;
                t
            }
        };
        Ok(RunData { train, heldout, test })
    }

    /// Parses the flat `key = value` format. Unknown or repeated keys are
    /// errors; `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<RunConfig> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(err(i + 1, format!("expected `key = value`, found `{line}`")));
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if kv.insert(k.clone(), (i + 1, v)).is_some() {
                return Err(err(i + 1, format!("duplicate key `{k}`")));
            }
        }

        let mut cfg = RunConfig::default();
        let mut take = |key: &str| kv.remove(key);
        fn val<T: FromStr>(e: &dyn Fn(usize, String) -> Error, key: &str, (line, v): (usize, String)) -> Result<T> {
            v.parse().map_err(|_| e(line, format!("bad value `{v}` for `{key}`")))
        }
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(entry) = take($key) {
                    $field = val(&err, $key, entry)?;
                }
            };
        }

        if let Some((_, v)) = take("run_id") {
            cfg.run_id = v;
        }
        set!("seed", cfg.seed);
        let source = take("dataset.source");
        let mut n = None;
        let mut data_seed = 0u64;
        let mut path = None;
        if let Some(e) = take("dataset.n") {
            n = Some(val::<usize>(&err, "dataset.n", e)?);
        }
        set!("dataset.seed", data_seed);
        if let Some((_, p)) = take("dataset.path") {
            path = Some(PathBuf::from(p));
        }
        cfg.dataset = match source {
            None => DatasetSpec::Generated {
                generator: Generator::A,
                n: n.unwrap_or(Generator::A.default_n()),
                seed: data_seed,
            },
            Some((_, s)) if s == "csv" => DatasetSpec::Csv {
                path: path.ok_or_else(|| Error::Config("dataset.source = csv needs dataset.path".into()))?,
            },
            Some((line, s)) => {
                let generator: Generator = s.parse().map_err(|_| err(line, format!("unknown dataset source `{s}`")))?;
                DatasetSpec::Generated {
                    generator,
                    n: n.unwrap_or(generator.default_n()),
                    seed: data_seed,
                }
            }
        };
        set!("dataset.heldout_fraction", cfg.heldout_fraction);
        set!("dataset.n_test", cfg.n_test);
        set!("model.energy", cfg.energy);
        set!("model.hidden", cfg.hidden);
        set!("model.features", cfg.n_features);
        let mut sigma2 = None;
        set!("nce.sigma1", cfg.nce.sigma1);
        if let Some(e) = take("nce.sigma2") {
            sigma2 = Some(val::<f64>(&err, "nce.sigma2", e)?);
        }
        cfg.nce.sigma2 = sigma2.unwrap_or(8.0 * cfg.nce.sigma1);
        set!("nce.m_samples", cfg.nce.m_samples);
        set!("nce.batch_size", cfg.nce.batch_size);
        set!("nce.epochs", cfg.nce.epochs);
        set!("nce.lr", cfg.nce.lr);
        set!("reg.beta", cfg.reg.beta);
        set!("reg.feature_tap", cfg.reg.feature_tap);
        set!("grid.n_points", cfg.grid.n_points);
        set!("grid.pad_sd", cfg.grid.pad_sd);
        set!("bounds.tau", cfg.bounds.tau);
        set!("bounds.delta", cfg.bounds.delta);
        set!("bounds.n_draws", cfg.bounds.n_draws);
        if let Some(e) = take("eval.metric") {
            cfg.metric = Some(val(&err, "eval.metric", e)?);
        }
        if let Some((_, v)) = take("output.dir") {
            cfg.output_dir = Some(PathBuf::from(v));
        }
        if let Some((k, (line, _))) = kv.into_iter().next() {
            return Err(err(line, format!("unknown key `{k}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.nce.validate()?;
        if !(self.reg.beta >= 0.0 && self.reg.beta.is_finite()) {
            return Err(Error::Config(format!("reg.beta must be >= 0, got {}", self.reg.beta)));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::Config("dataset.heldout_fraction must lie in [0, 1)".into()));
        }
        if self.hidden == 0 || self.n_features == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.grid.n_points < 2 || !(self.grid.pad_sd >= 0.0) {
            return Err(Error::Config("grid needs n_points >= 2 and pad_sd >= 0".into()));
        }
        let b = &self.bounds;
        if !(b.tau > 0.0 && b.tau <= 1.0) || !(b.delta > 0.0 && b.delta < 1.0) || b.n_draws == 0 {
            return Err(Error::Config("bounds need tau in (0, 1], delta in (0, 1), n_draws >= 1".into()));
        }
        if let DatasetSpec::Generated { n: 0, .. } = self.dataset {
            return Err(Error::Config("dataset.n must be at least 1".into()));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::Config(format!("bad run_id `{}`", self.run_id)));
        }
        if let FeatureTap::Hidden(k) = self.reg.feature_tap {
            if k >= 2 {
                return Err(Error::Config(format!("x-branch has no hidden layer {k}")));
            }
        }
        Ok(())
    }

    /// Reads a config file. A relative `dataset.path` is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        if let DatasetSpec::Csv { path: p } = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// The config in the file format; `parse` reads it back unchanged.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("run_id", &self.run_id);
        kv("seed", &self.seed);
        match &self.dataset {
            DatasetSpec::Generated { generator, n, seed } => {
                kv("dataset.source", generator);
                kv("dataset.n", n);
                kv("dataset.seed", seed);
            }
            DatasetSpec::Csv { path } => {
                kv("dataset.source", &"csv");
                kv("dataset.path", &path.display());
            }
        }
        kv("dataset.heldout_fraction", &self.heldout_fraction);
        kv("dataset.n_test", &self.n_test);
        kv("model.energy", &self.energy);
        kv("model.hidden", &self.hidden);
        kv("model.features", &self.n_features);
        kv("nce.sigma1", &self.nce.sigma1);
        kv("nce.sigma2", &self.nce.sigma2);
        kv("nce.m_samples", &self.nce.m_samples);
        kv("nce.batch_size", &self.nce.batch_size);
        kv("nce.epochs", &self.nce.epochs);
        kv("nce.lr", &self.nce.lr);
        kv("reg.beta", &self.reg.beta);
        kv("reg.feature_tap", &self.reg.feature_tap);
        kv("grid.n_points", &self.grid.n_points);
        kv("grid.pad_sd", &self.grid.pad_sd);
        kv("bounds.tau", &self.bounds.tau);
        kv("bounds.delta", &self.bounds.delta);
        kv("bounds.n_draws", &self.bounds.n_draws);
        if let Some(m) = self.metric {
            kv("eval.metric", &m);
        }
        if let Some(dir) = &self.output_dir {
            kv("output.dir", &dir.display());
        }
        s
    }
}
