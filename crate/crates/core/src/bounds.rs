//! Empirical Rademacher complexity, generalization-bound right-hand sides
//! and their checks on trained models.
//!
//! With `h_B = ‖w‖∞ √(DA² − ϑ²)` (the sup of `|wᵀΦ(x)|` for non-negative
//! features whose diversity statistic is at least `ϑ²`), `ε = √(log(2/δ) / 2m)`
//! and `R = R_m(F)`:
//!
//! | id | energy           | right-hand side                                   |
//! |----|------------------|---------------------------------------------------|
//! | T1 | `½(G − y)²`      | `4D‖w‖∞(h_B + B)R + ½(h_B + B)² ε`                |
//! | T2 | `|G − y|`        | `4D‖w‖∞R + (h_B + B) ε`                           |
//! | T3 | `−yG`            | `4D‖w‖∞R + h_B ε`                                 |
//! | T4 | `½(G₁ − G₂)²`    | `8(√J₁ + √J₂)(D₁‖w₁‖∞R₁ + D₂‖w₂‖∞R₂) + (J₁ + J₂) ε` |
//!
//! where `Jₖ = ‖wₖ‖∞²(DₖAₖ² − ϑₖ²)`. Each holds with probability at least
//! `(1 − δ)τ` (`(1 − δ)τ₁τ₂` for T4).
//!
//! `R_m(F)` for learned features has no closed form. It is approximated by
//! the finite class `{±φ₁, …, ±φ_D}` of realized features, estimated by
//! Monte Carlo over σ and bounded above by Massart's finite-class lemma.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;

use crate::dataio::Dataset;
use crate::diversity::{estimate_theta_tau, DiversityEstimate, FeatureBatch};
use crate::energy::{EbmModel, EnergyKind};
use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadMethod {
    FiniteClassMc,
    MassartUpper,
}

impl fmt::Display for RadMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RadMethod::FiniteClassMc => "finite_class_mc",
            RadMethod::MassartUpper => "massart_upper",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RademacherEstimate {
    pub value: f64,
    /// Monte Carlo standard error; zero for the Massart bound.
    pub stderr: f64,
    pub n_sigma_draws: usize,
    pub method: RadMethod,
}

/// Rademacher complexity of a finite function class on a sample.
///
/// `values` holds `f_k(x_j)` at row `j`, column `k`. With `symmetric` the
/// class is `{±f_k}`, otherwise `{f_k}` as given.
pub fn estimate_rademacher_class(
    values: &Matrix,
    symmetric: bool,
    n_draws: usize,
    method: RadMethod,
    seed: u64,
) -> Result<RademacherEstimate> {
    let (m, k) = values.shape();
    if m == 0 || k == 0 {
        return Err(Error::Contract("Rademacher estimate needs a non-empty sample and class".into()));
    }
    match method {
        RadMethod::MassartUpper => {
            let n_class = if symmetric { 2 * k } else { k };
            let max_norm = (0..k)
                .map(|c| (0..m).map(|r| values.get(r, c).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            Ok(RademacherEstimate {
                value: max_norm / m as f64 * (2.0 * (n_class as f64).ln()).sqrt(),
                stderr: 0.0,
                n_sigma_draws: 0,
                method,
            })
        }
        RadMethod::FiniteClassMc => {
            if n_draws == 0 {
                return Err(Error::Contract("Monte Carlo estimate needs n_draws >= 1".into()));
            }
            let mut rng = rng_from_seed(seed, 0x5a);
            let mut corr = vec![0.0; k];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..n_draws {
                corr.iter_mut().for_each(|c| *c = 0.0);
                for r in 0..m {
                    let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    for (c, v) in corr.iter_mut().zip(values.row(r)) {
                        *c += s * v;
                    }
                }
                let sup = corr
                    .iter()
                    .map(|c| if symmetric { c.abs() } else { *c })
                    .fold(f64::NEG_INFINITY, f64::max)
                    / m as f64;
                sum += sup;
                sum_sq += sup * sup;
            }
            let n = n_draws as f64;
            let mean = sum / n;
            let var = if n_draws > 1 {
                ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            Ok(RademacherEstimate {
                value: mean,
                stderr: (var / n).sqrt(),
                n_sigma_draws: n_draws,
                method,
            })
        }
    }
}

/// `R_m(F)` for the realized features `{±φ₁, …, ±φ_D}` on the batch's rows.
pub fn estimate_rademacher(
    features: &FeatureBatch,
    n_draws: usize,
    method: RadMethod,
    seed: u64,
) -> Result<RademacherEstimate> {
    estimate_rademacher_class(features.values(), true, n_draws, method, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Theorem {
    T1,
    T2,
    T3,
    T4,
}

impl Theorem {
    pub const ALL: [Theorem; 4] = [Theorem::T1, Theorem::T2, Theorem::T3, Theorem::T4];

    /// The energy each bound is stated for.
    pub fn energy_kind(self) -> EnergyKind {
        match self {
            Theorem::T1 => EnergyKind::E2Regression,
            Theorem::T2 => EnergyKind::E1Regression,
            Theorem::T3 => EnergyKind::BinaryClassification,
            Theorem::T4 => EnergyKind::ImplicitRegression,
        }
    }

    /// Lemmas behind the sup-energy and Rademacher steps.
    fn lemma_ids(self) -> (u8, u8) {
        match self {
            Theorem::T1 => (3, 4),
            Theorem::T2 => (5, 6),
            Theorem::T3 => (7, 8),
            Theorem::T4 => (9, 10),
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Theorem::T1 => "t1",
            Theorem::T2 => "t2",
            Theorem::T3 => "t3",
            Theorem::T4 => "t4",
        })
    }
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Theorem::T1),
            "t2" => Ok(Theorem::T2),
            "t3" => Ok(Theorem::T3),
            "t4" => Ok(Theorem::T4),
            _ => Err(Error::Config(format!("unknown theorem `{s}` (expected t1..t4)"))),
        }
    }
}

/// Per-branch quantities: features, their diversity and head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchInputs {
    pub d: usize,
    pub a_bound: f64,
    pub theta: f64,
    pub tau: f64,
    pub w_inf: f64,
    /// `R_m(F)` of the branch's features.
    pub rad_f: f64,
}

impl BranchInputs {
    pub fn from_estimate(est: &DiversityEstimate, w_inf: f64, rad_f: f64) -> Self {
        BranchInputs {
            d: est.d,
            a_bound: est.a_bound,
            theta: est.theta,
            tau: est.tau,
            w_inf,
            rad_f,
        }
    }

    /// `DA² − ϑ²`. A measured ϑ can exceed `√D·A` by rounding only; that
    /// is clamped to zero, anything larger is a contract error.
    pub fn radicand(&self) -> Result<f64> {
        let cap = self.d as f64 * self.a_bound * self.a_bound;
        let r = cap - self.theta * self.theta;
        if r >= 0.0 {
            Ok(r)
        } else if r >= -1e-12 * cap.max(f64::MIN_POSITIVE) {
            Ok(0.0)
        } else {
            Err(Error::Contract(format!(
                "theta^2 = {} exceeds D*A^2 = {cap}",
                self.theta * self.theta
            )))
        }
    }

    /// `Jₖ = ‖w‖∞²(DA² − ϑ²)`.
    pub fn j_term(&self) -> Result<f64> {
        Ok(self.w_inf * self.w_inf * self.radicand()?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub branch: BranchInputs,
    /// B, the bound on `|y|`.
    pub b_bound: f64,
    pub m: usize,
    pub delta: f64,
    /// The second inner model, for T4.
    pub second: Option<BranchInputs>,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Contract(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.m == 0 {
            return Err(Error::Contract("bounds need m >= 1".into()));
        }
        for b in std::iter::once(&self.branch).chain(self.second.as_ref()) {
            b.radicand()?;
            if !(b.w_inf >= 0.0 && b.rad_f >= 0.0 && b.a_bound >= 0.0 && b.theta >= 0.0) {
                return Err(Error::Contract("bound inputs must be non-negative".into()));
            }
        }
        if !(self.b_bound >= 0.0) {
            return Err(Error::Contract("B must be non-negative".into()));
        }
        Ok(())
    }

    /// `√(log(2/δ) / 2m)`.
    pub fn confidence_term(&self) -> f64 {
        ((2.0 / self.delta).ln() / (2.0 * self.m as f64)).sqrt()
    }

    fn second(&self, theorem: Theorem) -> Result<&BranchInputs> {
        self.second
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{theorem} needs second-branch inputs")))
    }
}

/// `‖w‖∞ √(DA² − ϑ²)`.
pub fn sup_h_bound(branch: &BranchInputs) -> Result<f64> {
    Ok(branch.w_inf * branch.radicand()?.sqrt())
}

/// The theorem's bound on the generalization gap.
pub fn theorem_rhs(theorem: Theorem, inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let eps = inputs.confidence_term();
    // every theorem has the form 2·R_m(energy class) + sup|E|·ε
    let sup_e = lemma_sup_energy(theorem, inputs)?;
    let rad_e = lemma_rademacher_rhs(theorem, inputs)?;
    Ok(2.0 * rad_e + sup_e * eps)
}

/// The theorem's right-hand side written out term by term, as stated.
pub fn theorem_rhs_direct(theorem: Theorem, inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let b = &inputs.branch;
    let eps = inputs.confidence_term();
    let d = b.d as f64;
    let h = sup_h_bound(b)?;
    Ok(match theorem {
        Theorem::T1 => 4.0 * d * b.w_inf * (h + inputs.b_bound) * b.rad_f + 0.5 * (h + inputs.b_bound).powi(2) * eps,
        Theorem::T2 => 4.0 * d * b.w_inf * b.rad_f + (h + inputs.b_bound) * eps,
        Theorem::T3 => 4.0 * d * b.w_inf * b.rad_f + h * eps,
        Theorem::T4 => {
            let s = inputs.second(theorem)?;
            let (j1, j2) = (b.j_term()?, s.j_term()?);
            8.0 * (j1.sqrt() + j2.sqrt()) * (d * b.w_inf * b.rad_f + s.d as f64 * s.w_inf * s.rad_f)
                + (j1 + j2) * eps
        }
    })
}

/// Nominal probability with which the theorem holds.
pub fn confidence_level(theorem: Theorem, inputs: &BoundInputs) -> Result<f64> {
    let base = 1.0 - inputs.delta;
    Ok(match theorem {
        Theorem::T4 => base * inputs.branch.tau * inputs.second(theorem)?.tau,
        _ => base * inputs.branch.tau,
    })
}

/// Upper bound on the energy: `½(h_B + B)²`, `h_B + B`, `h_B`, `J₁ + J₂`.
pub fn lemma_sup_energy(theorem: Theorem, inputs: &BoundInputs) -> Result<f64> {
    let h = sup_h_bound(&inputs.branch)?;
    let b = inputs.b_bound;
    Ok(match theorem {
        Theorem::T1 => 0.5 * (h + b).powi(2),
        Theorem::T2 => h + b,
        Theorem::T3 => h,
        Theorem::T4 => inputs.branch.j_term()? + inputs.second(theorem)?.j_term()?,
    })
}

/// Bound on the Rademacher complexity of the energy class in terms of
/// `R_m(F)`.
pub fn lemma_rademacher_rhs(theorem: Theorem, inputs: &BoundInputs) -> Result<f64> {
    let br = &inputs.branch;
    let d = br.d as f64;
    Ok(match theorem {
        Theorem::T1 => 2.0 * d * br.w_inf * (sup_h_bound(br)? + inputs.b_bound) * br.rad_f,
        Theorem::T2 | Theorem::T3 => 2.0 * d * br.w_inf * br.rad_f,
        Theorem::T4 => {
            let s = inputs.second(theorem)?;
            4.0 * (br.j_term()?.sqrt() + s.j_term()?.sqrt())
                * (d * br.w_inf * br.rad_f + s.d as f64 * s.w_inf * s.rad_f)
        }
    })
}

/// Mean energies on two sets; `gap = heldout − train`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapMeasurement {
    pub train_mean_energy: f64,
    pub heldout_mean_energy: f64,
    pub gap: f64,
}

/// Energy of every example.
pub fn example_energies(model: &EbmModel, data: &Dataset) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..data.len()).collect();
    model.energies(&data.x_matrix(), &rows, &data.y)
}

pub fn measure_gap(model: &EbmModel, train: &Dataset, heldout: &Dataset) -> Result<GapMeasurement> {
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::Contract("gap needs non-empty train and heldout sets".into()));
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let train_mean_energy = mean(example_energies(model, train)?);
    let heldout_mean_energy = mean(example_energies(model, heldout)?);
    Ok(GapMeasurement {
        train_mean_energy,
        heldout_mean_energy,
        gap: heldout_mean_energy - train_mean_energy,
    })
}

/// `±1` labels from a regression target, `y ≥ 0 → +1`.
pub fn sign_labels(data: &Dataset) -> Dataset {
    let mut out = data.clone();
    for y in &mut out.y {
        *y = if *y >= 0.0 { 1.0 } else { -1.0 };
    }
    out
}

/// The targets a theorem's energy sees: sign labels for T3, `y` otherwise.
pub fn theorem_targets(theorem: Theorem, data: &Dataset) -> Dataset {
    match theorem {
        Theorem::T3 => sign_labels(data),
        _ => data.clone(),
    }
}

/// The linear-head model a theorem is checked on. A model of the matching
/// kind is used as is; otherwise the trained branches are kept and the
/// heads are refit by least squares on the (training) targets.
pub fn bound_model(trained: &EbmModel, theorem: Theorem, train: &Dataset) -> Result<EbmModel> {
    let kind = theorem.energy_kind();
    if trained.kind == kind {
        return Ok(trained.clone());
    }
    if kind == EnergyKind::ImplicitRegression && trained.y_features.is_none() {
        return Err(Error::Contract(format!(
            "{theorem} needs a model with a y-branch, got {}",
            trained.kind
        )));
    }
    let targets = theorem_targets(theorem, train);
    let mut m = trained.with_readout(&targets.x_matrix(), &targets.y)?;
    m.kind = kind;
    m.trunk = None;
    if kind != EnergyKind::ImplicitRegression {
        m.y_features = None;
        m.y_head = None;
    }
    m.validate()?;
    Ok(m)
}

/// One lemma's sup bound checked example by example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaCheck {
    pub lemma: u8,
    /// Largest observed value on the training set.
    pub observed_sup: f64,
    pub bound: f64,
    /// Fraction of training examples above the bound.
    pub violation_in: f64,
    /// Same on the heldout set.
    pub violation_out: f64,
}

/// The Rademacher step: the energy class against its bound via `R_m(F)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RademacherChainCheck {
    pub lemma: u8,
    /// Monte Carlo estimate for `{±E}` over the realized energies.
    pub energy_rad: RademacherEstimate,
    pub rhs: f64,
    pub holds: bool,
}

fn violation_rate(values: &[f64], bound: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v > bound).count() as f64 / values.len() as f64
}

/// Checks the sup lemmas (|h| for each branch, then the energy) on the
/// training and heldout sets against bounds built from `inputs`.
pub fn verify_lemmas(
    model: &EbmModel,
    theorem: Theorem,
    inputs: &BoundInputs,
    train: &Dataset,
    heldout: &Dataset,
) -> Result<Vec<LemmaCheck>> {
    let train = theorem_targets(theorem, train);
    let heldout = theorem_targets(theorem, heldout);
    let abs = |v: Vec<f64>| v.into_iter().map(f64::abs).collect::<Vec<_>>();
    let check = |lemma: u8, ins: Vec<f64>, outs: Vec<f64>, bound: f64| LemmaCheck {
        lemma,
        observed_sup: ins.iter().copied().fold(0.0, f64::max),
        bound,
        violation_in: violation_rate(&ins, bound),
        violation_out: violation_rate(&outs, bound),
    };
    let mut out = Vec::new();
    let h_in = abs(model.inner_value(&train.x_matrix())?.0);
    let h_out = abs(model.inner_value(&heldout.x_matrix())?.0);
    out.push(check(2, h_in, h_out, sup_h_bound(&inputs.branch)?));
    if theorem == Theorem::T4 {
        let s = inputs.second(theorem)?;
        let g_in = abs(model.inner_value_y(&train.y)?.0);
        let g_out = abs(model.inner_value_y(&heldout.y)?.0);
        out.push(check(2, g_in, g_out, sup_h_bound(s)?));
    }
    let (energy_lemma, _) = theorem.lemma_ids();
    // the implicit and classification energies can be negative only for
    // classification; the lemma bounds |E|
    let e_in = abs(example_energies(model, &train)?);
    let e_out = abs(example_energies(model, &heldout)?);
    out.push(check(energy_lemma, e_in, e_out, lemma_sup_energy(theorem, inputs)?));
    Ok(out)
}

/// Everything measured for one theorem on one trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub inputs: BoundInputs,
    pub rad_mc: RademacherEstimate,
    pub rad_massart: RademacherEstimate,
    pub rad_mc_2: Option<RademacherEstimate>,
    pub rad_massart_2: Option<RademacherEstimate>,
    /// Which estimate `inputs` carries.
    pub rad_used: RadMethod,
    pub rhs: f64,
    pub confidence: f64,
    pub gap: GapMeasurement,
    pub holds: bool,
    pub lemmas: Vec<LemmaCheck>,
    pub chain: RademacherChainCheck,
}

/// Settings for [`bound_report`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundOptions {
    pub tau: f64,
    pub delta: f64,
    pub n_draws: usize,
    pub rad_used: RadMethod,
    pub seed: u64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions {
            tau: 0.95,
            delta: 0.05,
            n_draws: 2000,
            rad_used: RadMethod::MassartUpper,
            seed: 0,
        }
    }
}

fn branch_inputs(
    phi: &FeatureBatch,
    w_inf: f64,
    opts: &BoundOptions,
    stream: u64,
) -> Result<(BranchInputs, RademacherEstimate, RademacherEstimate)> {
    let est = estimate_theta_tau(phi, opts.tau)?;
    let mc = estimate_rademacher(phi, opts.n_draws, RadMethod::FiniteClassMc, opts.seed ^ stream)?;
    let massart = estimate_rademacher(phi, 0, RadMethod::MassartUpper, 0)?;
    let rad = match opts.rad_used {
        RadMethod::FiniteClassMc => mc.value,
        RadMethod::MassartUpper => massart.value,
    };
    let mut branch = BranchInputs::from_estimate(&est, w_inf, rad);
    // ϑ² is the exact quantile; keep it so in-sample coverage is exact
    branch.theta = est.theta_sq.sqrt();
    Ok((branch, mc, massart))
}

/// Measures the inputs of `theorem` in-sample on `train`, evaluates its
/// right-hand side and compares it to the heldout − train energy gap.
pub fn bound_report(
    trained: &EbmModel,
    theorem: Theorem,
    train: &Dataset,
    heldout: &Dataset,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    if train.is_empty() {
        return Err(Error::Contract("bounds need a non-empty training set".into()));
    }
    let model = bound_model(trained, theorem, train)?;
    let targets = theorem_targets(theorem, train);
    let phi = model.features_of(&targets.x_matrix())?;
    let (branch, rad_mc, rad_massart) = branch_inputs(&phi, model.w_inf(), opts, 1)?;
    let (second, rad_mc_2, rad_massart_2) = if theorem == Theorem::T4 {
        let phi_y = model.y_features_of(&targets.y)?;
        let w2 = model.y_w_inf().expect("implicit model has a y-head");
        let (b, mc, ms) = branch_inputs(&phi_y, w2, opts, 2)?;
        (Some(b), Some(mc), Some(ms))
    } else {
        (None, None, None)
    };
    let inputs = BoundInputs {
        branch,
        b_bound: targets.max_abs_y(),
        m: train.len(),
        delta: opts.delta,
        second,
    };
    let rhs = theorem_rhs(theorem, &inputs)?;
    let confidence = confidence_level(theorem, &inputs)?;
    let gap = measure_gap(&model, &targets, &theorem_targets(theorem, heldout))?;
    let lemmas = verify_lemmas(&model, theorem, &inputs, train, heldout)?;

    let energies = example_energies(&model, &targets)?;
    let e_col = Matrix::column(&energies)?;
    let energy_rad = estimate_rademacher_class(&e_col, true, opts.n_draws, RadMethod::FiniteClassMc, opts.seed ^ 3)?;
    let chain_rhs = lemma_rademacher_rhs(theorem, &inputs)?;
    let chain = RademacherChainCheck {
        lemma: theorem.lemma_ids().1,
        energy_rad,
        rhs: chain_rhs,
        holds: energy_rad.value <= chain_rhs,
    };
    Ok(BoundReport {
        theorem,
        inputs,
        rad_mc,
        rad_massart,
        rad_mc_2,
        rad_massart_2,
        rad_used: opts.rad_used,
        rhs,
        confidence,
        holds: gap.gap <= rhs,
        gap,
        lemmas,
        chain,
    })
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "theorem,theta,tau,A,w_inf,B,m,delta,rad_f_mc,rad_f_mc_stderr,rad_f_massart,rad_used,theta2,A2,w_inf2,rad_f2_mc,rad_f2_massart,rhs,confidence,train_energy,heldout_energy,gap,holds,lemma_h_viol_in,lemma_h_viol_out,lemma_e_viol_in,lemma_e_viol_out,lemma_rad_energy,lemma_rad_rhs,lemma_rad_holds";

    pub fn csv_row(&self) -> String {
        let i = &self.inputs;
        let b = &i.branch;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.10e}"));
        let h = self.lemmas.first().expect("the |h| check always comes first");
        let e = self.lemmas.last().expect("energy lemma is always checked");
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{:.10e},{},{:.10e},{:.10e},{:.10e},{},{},{:.10e},{:.10e},{:.10e},{},",
            self.theorem,
            b.theta,
            b.tau,
            b.a_bound,
            b.w_inf,
            i.b_bound,
            i.m,
            i.delta,
            self.rad_mc.value,
            self.rad_mc.stderr,
            self.rad_massart.value,
            self.rad_used,
        );
        let _ = write!(
            s,
            "{},{},{},{},{},",
            opt(i.second.map(|x| x.theta)),
            opt(i.second.map(|x| x.a_bound)),
            opt(i.second.map(|x| x.w_inf)),
            opt(self.rad_mc_2.map(|x| x.value)),
            opt(self.rad_massart_2.map(|x| x.value)),
        );
        let _ = write!(
            s,
            "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{},{:.6},{:.6},{:.6},{:.6},{:.10e},{:.10e},{}",
            self.rhs,
            self.confidence,
            self.gap.train_mean_energy,
            self.gap.heldout_mean_energy,
            self.gap.gap,
            self.holds,
            h.violation_in,
            h.violation_out,
            e.violation_in,
            e.violation_out,
            self.chain.energy_rad.value,
            self.chain.rhs,
            self.chain.holds,
        );
        s
    }

    pub fn text_block(&self) -> String {
        let i = &self.inputs;
        let b = &i.branch;
        let mut s = String::new();
        let _ = writeln!(s, "bound {} ({} energy)", self.theorem, self.theorem.energy_kind());
        let _ = writeln!(
            s,
            "  D = {}, A = {:.6}, theta = {:.6}, tau = {}, |w|_inf = {:.6}, B = {:.6}, m = {}, delta = {}",
            b.d, b.a_bound, b.theta, b.tau, b.w_inf, i.b_bound, i.m, i.delta
        );
        if let Some(s2) = &i.second {
            let _ = writeln!(
                s,
                "  second branch: D = {}, A = {:.6}, theta = {:.6}, tau = {}, |w|_inf = {:.6}",
                s2.d, s2.a_bound, s2.theta, s2.tau, s2.w_inf
            );
        }
        let _ = writeln!(
            s,
            "  R_m(F) over realized features: mc = {:.6e} (+/- {:.1e}), massart = {:.6e}; using {}",
            self.rad_mc.value, self.rad_mc.stderr, self.rad_massart.value, self.rad_used
        );
        let _ = writeln!(
            s,
            "  gap = {:.6e} (heldout {:.6} - train {:.6}), rhs = {:.6e}: {} at nominal level {:.4}",
            self.gap.gap,
            self.gap.heldout_mean_energy,
            self.gap.train_mean_energy,
            self.rhs,
            if self.holds { "holds" } else { "VIOLATED" },
            self.confidence
        );
        for l in &self.lemmas {
            let _ = writeln!(
                s,
                "  lemma {}: sup {:.6} vs bound {:.6}, violations {:.4} in-sample, {:.4} heldout",
                l.lemma, l.observed_sup, l.bound, l.violation_in, l.violation_out
            );
        }
        let _ = writeln!(
            s,
            "  lemma {}: R_m(energy) {:.6e} vs {:.6e}: {}",
            self.chain.lemma,
            self.chain.energy_rad.value,
            self.chain.rhs,
            if self.chain.holds { "ok" } else { "exceeded" }
        );
        s
    }
}
