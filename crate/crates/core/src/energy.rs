//! Energy functions, their gradients, and inference `y* = argmin_y E`.
//!
//! Four of the energies act on the linear inner model `G(x) = wᵀΦ(x)`:
//!
//! | kind             | energy                    |
//! |------------------|---------------------------|
//! | `e2`             | `½ (G(x) − y)²`           |
//! | `e1`             | `|G(x) − y|`              |
//! | `classification` | `−y G(x)`, `y ∈ {−1, +1}` |
//! | `implicit`       | `½ (G₁(x) − G₂(y))²`      |
//!
//! The fifth, `joint_mlp`, is the network used for the regression
//! experiments: the x-branch features and a one-layer y-embedding are
//! concatenated and fed through a small trunk whose scalar output is the
//! energy. It still carries linear heads so the bound machinery can read
//! out `G(x)` and `G₂(y)` from its branches.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diversity::FeatureBatch;
use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{Activation, Dense, Matrix, MlpCache, MlpParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    E2Regression,
    E1Regression,
    BinaryClassification,
    ImplicitRegression,
    JointMlp,
}

impl EnergyKind {
    pub const ALL: [EnergyKind; 5] = [
        EnergyKind::E2Regression,
        EnergyKind::E1Regression,
        EnergyKind::BinaryClassification,
        EnergyKind::ImplicitRegression,
        EnergyKind::JointMlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnergyKind::E2Regression => "e2",
            EnergyKind::E1Regression => "e1",
            EnergyKind::BinaryClassification => "classification",
            EnergyKind::ImplicitRegression => "implicit",
            EnergyKind::JointMlp => "joint_mlp",
        }
    }

    /// Kinds whose energy is a function of the scalar `G(x)` and `y`.
    pub fn is_linear_head(self) -> bool {
        matches!(
            self,
            EnergyKind::E2Regression | EnergyKind::E1Regression | EnergyKind::BinaryClassification
        )
    }
}

impl fmt::Display for EnergyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnergyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnergyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown energy kind `{s}`")))
    }
}

/// Inner-model values an energy is evaluated on.
#[derive(Clone, Copy, Debug)]
pub enum Inner<'a> {
    Scalar(f64),
    /// Outputs of the two branches of an implicit-regression model.
    Pair(&'a [f64], &'a [f64]),
}

/// Energy of one configuration. For `joint_mlp` the scalar inner value is
/// the network output and is returned as is.
pub fn energy(kind: EnergyKind, inner: Inner<'_>, y: f64) -> Result<f64> {
    match (kind, inner) {
        (EnergyKind::ImplicitRegression, Inner::Pair(a, b)) => {
            if a.len() != b.len() {
                return Err(Error::Dimension("implicit branches differ in length".into()));
            }
            Ok(0.5 * a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        }
        (EnergyKind::ImplicitRegression, Inner::Scalar(_)) => Err(Error::Contract(
            "implicit energy needs the outputs of both branches".into(),
        )),
        (EnergyKind::JointMlp, Inner::Scalar(g)) => Ok(g),
        (_, Inner::Pair(..)) => Err(Error::Contract(format!(
            "{kind} energy takes a single inner value"
        ))),
        (_, Inner::Scalar(g)) => scalar_energy(kind, g, y).map(|(e, _, _)| e),
    }
}

/// `(E, ∂E/∂g, ∂E/∂y)` for the linear-head kinds.
fn scalar_energy(kind: EnergyKind, g: f64, y: f64) -> Result<(f64, f64, f64)> {
    match kind {
        EnergyKind::E2Regression => {
            let r = g - y;
            Ok((0.5 * r * r, r, -r))
        }
        EnergyKind::E1Regression => {
            let r = g - y;
            let s = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            Ok((r.abs(), s, -s))
        }
        EnergyKind::BinaryClassification => {
            if y != 1.0 && y != -1.0 {
                return Err(Error::Contract(format!(
                    "classification labels must be -1 or +1, got {y}"
                )));
            }
            Ok((-y * g, -y, -g))
        }
        _ => unreachable!("not a linear-head kind"),
    }
}

/// Widths of the networks inside an [`EbmModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    /// D, the number of x-branch features.
    pub n_features: usize,
    /// Width of the y-branch (its feature count D₂).
    pub y_width: usize,
    pub trunk_hidden: usize,
    pub trunk_layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_dim: 1,
            hidden: 10,
            n_features: 10,
            y_width: 10,
            trunk_hidden: 10,
            trunk_layers: 4,
        }
    }
}

/// Parameters of an energy-based model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EbmModel {
    pub kind: EnergyKind,
    /// The x-branch feature network Φ.
    pub features: MlpParams,
    /// w, one weight per feature.
    pub head: Vec<f64>,
    /// Φ₂ on y: the second implicit branch, or the joint model's
    /// y-embedding.
    pub y_features: Option<MlpParams>,
    pub y_head: Option<Vec<f64>>,
    /// Joint-model energy network on `[Φ(x), Φ₂(y)]`.
    pub trunk: Option<MlpParams>,
}

fn glorot_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let layer = Dense::glorot(n, 1, Activation::Identity, rng);
    layer.weights.into_data()
}

impl EbmModel {
    pub fn new<R: Rng + ?Sized>(kind: EnergyKind, arch: &Architecture, rng: &mut R) -> Self {
        let features =
            MlpParams::feature_extractor(arch.input_dim, arch.hidden, arch.n_features, rng);
        let head = glorot_vec(arch.n_features, rng);
        let (y_features, y_head, trunk) = match kind {
            EnergyKind::ImplicitRegression => {
                let yf = MlpParams::feature_extractor(1, arch.hidden, arch.y_width, rng);
                let yh = glorot_vec(arch.y_width, rng);
                (Some(yf), Some(yh), None)
            }
            EnergyKind::JointMlp => {
                let yf = MlpParams::glorot(&[1, arch.y_width], &[Activation::Relu], rng)
                    .expect("valid widths");
                let yh = glorot_vec(arch.y_width, rng);
                let mut sizes = vec![arch.n_features + arch.y_width];
                sizes.extend(std::iter::repeat_n(arch.trunk_hidden, arch.trunk_layers));
                sizes.push(1);
                let mut acts = vec![Activation::Relu; arch.trunk_layers];
                acts.push(Activation::Identity);
                let trunk = MlpParams::glorot(&sizes, &acts, rng).expect("valid widths");
                (Some(yf), Some(yh), Some(trunk))
            }
            _ => (None, None, None),
        };
        EbmModel {
            kind,
            features,
            head,
            y_features,
            y_head,
            trunk,
        }
    }

    /// Checks that the parts fit together for the model's kind.
    pub fn validate(&self) -> Result<()> {
        if self.head.len() != self.features.output_dim() {
            return Err(Error::Dimension(format!(
                "head has {} weights for {} features",
                self.head.len(),
                self.features.output_dim()
            )));
        }
        ensure_finite("head", &self.head)?;
        if let (Some(yf), Some(yh)) = (&self.y_features, &self.y_head) {
            if yf.input_dim() != 1 || yh.len() != yf.output_dim() {
                return Err(Error::Dimension("y-branch shapes".into()));
            }
            ensure_finite("y_head", yh)?;
        }
        let needs_y = matches!(
            self.kind,
            EnergyKind::ImplicitRegression | EnergyKind::JointMlp
        );
        if needs_y && (self.y_features.is_none() || self.y_head.is_none()) {
            return Err(Error::Contract(format!("{} model needs a y-branch", self.kind)));
        }
        if self.kind == EnergyKind::JointMlp {
            let trunk = self
                .trunk
                .as_ref()
                .ok_or_else(|| Error::Contract("joint model needs a trunk".into()))?;
            let y_width = self.y_features.as_ref().map_or(0, MlpParams::output_dim);
            if trunk.input_dim() != self.n_features() + y_width || trunk.output_dim() != 1 {
                return Err(Error::Dimension("trunk shapes".into()));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.features.input_dim()
    }

    pub fn n_features(&self) -> usize {
        self.features.output_dim()
    }

    /// `‖w‖∞`.
    pub fn w_inf(&self) -> f64 {
        self.head.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    pub fn y_w_inf(&self) -> Option<f64> {
        self.y_head
            .as_ref()
            .map(|h| h.iter().fold(0.0_f64, |m, w| m.max(w.abs())))
    }

    pub fn n_params(&self) -> usize {
        self.features.n_params()
            + self.head.len()
            + self.y_features.as_ref().map_or(0, MlpParams::n_params)
            + self.y_head.as_ref().map_or(0, Vec::len)
            + self.trunk.as_ref().map_or(0, MlpParams::n_params)
    }

    /// All parameters in a fixed order: features, head, y-features,
    /// y-head, trunk.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.features.write_flat(&mut out);
        out.extend_from_slice(&self.head);
        if let Some(yf) = &self.y_features {
            yf.write_flat(&mut out);
        }
        if let Some(yh) = &self.y_head {
            out.extend_from_slice(yh);
        }
        if let Some(t) = &self.trunk {
            t.write_flat(&mut out);
        }
        out
    }

    pub fn assign_flat(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "model has {} parameters, got {}",
                self.n_params(),
                src.len()
            )));
        }
        let mut at = self.features.read_flat(src)?;
        let n = self.head.len();
        self.head.copy_from_slice(&src[at..at + n]);
        at += n;
        if let Some(yf) = &mut self.y_features {
            at += yf.read_flat(&src[at..])?;
        }
        if let Some(yh) = &mut self.y_head {
            let n = yh.len();
            yh.copy_from_slice(&src[at..at + n]);
            at += n;
        }
        if let Some(t) = &mut self.trunk {
            at += t.read_flat(&src[at..])?;
        }
        debug_assert_eq!(at, src.len());
        Ok(())
    }

    /// Φ(x) for every row of `x`.
    pub fn features_of(&self, x: &Matrix) -> Result<FeatureBatch> {
        FeatureBatch::new(self.features.predict(x)?)
    }

    /// Φ₂(y), when the model has a y-branch.
    pub fn y_features_of(&self, y: &[f64]) -> Result<FeatureBatch> {
        let yf = self
            .y_features
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no y-branch".into()))?;
        FeatureBatch::new(yf.predict(&Matrix::column(y)?)?)
    }

    /// `G(x) = wᵀΦ(x)` for every row, together with Φ(x).
    pub fn inner_value(&self, x: &Matrix) -> Result<(Vec<f64>, FeatureBatch)> {
        let phi = self.features_of(x)?;
        let g = phi.rows().map(|r| dot(&self.head, r)).collect();
        Ok((g, phi))
    }

    /// `G₂(y) = w₂ᵀΦ₂(y)`.
    pub fn inner_value_y(&self, y: &[f64]) -> Result<(Vec<f64>, FeatureBatch)> {
        let phi = self.y_features_of(y)?;
        let head = self.y_head.as_ref().expect("validated y-branch");
        let g = phi.rows().map(|r| dot(head, r)).collect();
        Ok((g, phi))
    }

    /// Energies of the configurations `(x[rows[p]], ys[p])`, keeping what
    /// the backward pass needs.
    pub fn forward_pairs(&self, x: &Matrix, rows: &[usize], ys: &[f64]) -> Result<EnergyPass> {
        if rows.len() != ys.len() {
            return Err(Error::Dimension("one row index per target".into()));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(Error::Dimension(format!("row index {r} out of range")));
        }
        ensure_finite("targets", ys)?;
        let (phi, x_cache) = self.features.forward(x)?;
        let g: Vec<f64> = phi.row_iter().map(|r| dot(&self.head, r)).collect();
        let mut pass = EnergyPass {
            kind: self.kind,
            rows: rows.to_vec(),
            ys: ys.to_vec(),
            energies: Vec::with_capacity(ys.len()),
            x_cache,
            phi,
            g,
            y_cache: None,
            phi_y: None,
            g2: None,
            trunk_cache: None,
        };
        match self.kind {
            EnergyKind::E2Regression
            | EnergyKind::E1Regression
            | EnergyKind::BinaryClassification => {
                for (&r, &y) in rows.iter().zip(ys) {
                    pass.energies.push(scalar_energy(self.kind, pass.g[r], y)?.0);
                }
            }
            EnergyKind::ImplicitRegression => {
                let yf = self.y_features.as_ref().expect("validated y-branch");
                let yh = self.y_head.as_ref().expect("validated y-branch");
                let (phi_y, y_cache) = yf.forward(&Matrix::column(ys)?)?;
                let g2: Vec<f64> = phi_y.row_iter().map(|r| dot(yh, r)).collect();
                for (&r, &b) in rows.iter().zip(&g2) {
                    let d = pass.g[r] - b;
                    pass.energies.push(0.5 * d * d);
                }
                pass.y_cache = Some(y_cache);
                pass.phi_y = Some(phi_y);
                pass.g2 = Some(g2);
            }
            EnergyKind::JointMlp => {
                let yf = self.y_features.as_ref().expect("validated y-branch");
                let trunk = self.trunk.as_ref().expect("validated trunk");
                let (emb, y_cache) = yf.forward(&Matrix::column(ys)?)?;
                let dx = pass.phi.cols();
                let de = emb.cols();
                let mut input = Matrix::zeros(ys.len(), dx + de);
                for (p, &r) in rows.iter().enumerate() {
                    let dst = input.row_mut(p);
                    dst[..dx].copy_from_slice(pass.phi.row(r));
                    dst[dx..].copy_from_slice(emb.row(p));
                }
                let (out, trunk_cache) = trunk.forward(&input)?;
                pass.energies = out.into_data();
                pass.y_cache = Some(y_cache);
                pass.phi_y = Some(emb);
                pass.trunk_cache = Some(trunk_cache);
            }
        }
        ensure_finite("energies", &pass.energies)?;
        Ok(pass)
    }

    /// Energies without the backward bookkeeping.
    pub fn energies(&self, x: &Matrix, rows: &[usize], ys: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_pairs(x, rows, ys)?.energies)
    }

    /// Gradients of `L = Σ_p d_energy[p] · E_p + (tap terms)` with respect to
    /// every parameter (flattened as in [`flatten`](Self::flatten)) and to
    /// each target `y_p`. `x_taps` adds `∂L/∂a_l` on x-branch layer outputs.
    pub fn backward_pairs(
        &self,
        pass: &EnergyPass,
        d_energy: &[f64],
        x_taps: &[(usize, &Matrix)],
    ) -> Result<EnergyGrads> {
        if pass.kind != self.kind {
            return Err(Error::Contract("energy pass belongs to another model".into()));
        }
        if d_energy.len() != pass.energies.len() {
            return Err(Error::Dimension("one upstream value per energy".into()));
        }
        let n_rows = pass.phi.rows();
        let d = pass.phi.cols();
        let mut dy = vec![0.0; pass.ys.len()];
        let mut d_head = vec![0.0; d];
        let mut d_yf: Option<Vec<f64>> = None;
        let mut d_yh: Option<Vec<f64>> = None;
        let mut d_trunk: Option<Vec<f64>> = None;
        let mut d_phi = Matrix::zeros(n_rows, d);

        match self.kind {
            EnergyKind::E2Regression
            | EnergyKind::E1Regression
            | EnergyKind::BinaryClassification => {
                let mut dg = vec![0.0; n_rows];
                for (p, (&r, &y)) in pass.rows.iter().zip(&pass.ys).enumerate() {
                    let (_, de_dg, de_dy) = scalar_energy(self.kind, pass.g[r], y)?;
                    dg[r] += d_energy[p] * de_dg;
                    dy[p] = d_energy[p] * de_dy;
                }
                self.spread_head_grad(&pass.phi, &dg, &mut d_head, &mut d_phi);
            }
            EnergyKind::ImplicitRegression => {
                let yf = self.y_features.as_ref().expect("validated y-branch");
                let yh = self.y_head.as_ref().expect("validated y-branch");
                let g2 = pass.g2.as_ref().expect("implicit pass");
                let phi_y = pass.phi_y.as_ref().expect("implicit pass");
                let mut dg = vec![0.0; n_rows];
                let mut dyh = vec![0.0; yh.len()];
                let mut d_phi_y = Matrix::zeros(phi_y.rows(), phi_y.cols());
                for (p, &r) in pass.rows.iter().enumerate() {
                    let diff = pass.g[r] - g2[p];
                    dg[r] += d_energy[p] * diff;
                    let dg2 = -d_energy[p] * diff;
                    for (k, (&f, &w)) in phi_y.row(p).iter().zip(yh).enumerate() {
                        dyh[k] += dg2 * f;
                        d_phi_y.set(p, k, dg2 * w);
                    }
                }
                self.spread_head_grad(&pass.phi, &dg, &mut d_head, &mut d_phi);
                let yg = yf.backward(pass.y_cache.as_ref().expect("implicit pass"), &d_phi_y)?;
                dy.copy_from_slice(yg.input.data());
                let mut flat = Vec::with_capacity(yf.n_params());
                yg.write_flat(&mut flat);
                d_yf = Some(flat);
                d_yh = Some(dyh);
            }
            EnergyKind::JointMlp => {
                let yf = self.y_features.as_ref().expect("validated y-branch");
                let trunk = self.trunk.as_ref().expect("validated trunk");
                let up = Matrix::from_vec(d_energy.len(), 1, d_energy.to_vec())?;
                let tg = trunk.backward(pass.trunk_cache.as_ref().expect("joint pass"), &up)?;
                let de = yf.output_dim();
                let mut d_emb = Matrix::zeros(pass.ys.len(), de);
                for (p, &r) in pass.rows.iter().enumerate() {
                    let src = tg.input.row(p);
                    for (acc, v) in d_phi.row_mut(r).iter_mut().zip(&src[..d]) {
                        *acc += v;
                    }
                    d_emb.row_mut(p).copy_from_slice(&src[d..]);
                }
                let yg = yf.backward(pass.y_cache.as_ref().expect("joint pass"), &d_emb)?;
                dy.copy_from_slice(yg.input.data());
                let mut flat = Vec::with_capacity(yf.n_params());
                yg.write_flat(&mut flat);
                d_yf = Some(flat);
                d_yh = Some(vec![0.0; self.y_head.as_ref().map_or(0, Vec::len)]);
                let mut flat = Vec::with_capacity(trunk.n_params());
                tg.write_flat(&mut flat);
                d_trunk = Some(flat);
            }
        }

        let xg = self
            .features
            .backward_tapped(&pass.x_cache, &d_phi, x_taps)?;
        let mut params = Vec::with_capacity(self.n_params());
        xg.write_flat(&mut params);
        params.extend_from_slice(&d_head);
        if let Some(yf) = &self.y_features {
            match d_yf {
                Some(v) => params.extend(v),
                None => params.extend(std::iter::repeat_n(0.0, yf.n_params())),
            }
        }
        if let Some(yh) = &self.y_head {
            match d_yh {
                Some(v) => params.extend(v),
                None => params.extend(std::iter::repeat_n(0.0, yh.len())),
            }
        }
        if let Some(t) = &self.trunk {
            match d_trunk {
                Some(v) => params.extend(v),
                None => params.extend(std::iter::repeat_n(0.0, t.n_params())),
            }
        }
        ensure_finite("parameter gradient", &params)?;
        ensure_finite("target gradient", &dy)?;
        Ok(EnergyGrads { params, dy })
    }

    fn spread_head_grad(&self, phi: &Matrix, dg: &[f64], d_head: &mut [f64], d_phi: &mut Matrix) {
        for (r, &g) in dg.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (k, &f) in phi.row(r).iter().enumerate() {
                d_head[k] += g * f;
            }
            for (dst, &w) in d_phi.row_mut(r).iter_mut().zip(&self.head) {
                *dst += g * w;
            }
        }
    }

    /// Refits the linear heads by ridge least squares: `w` so that
    /// `wᵀΦ(x) ≈ y`, and `w₂` so that `w₂ᵀΦ₂(y) ≈ y`. Used to read linear
    /// inner models out of a trained joint network.
    pub fn with_readout(&self, x: &Matrix, y: &[f64]) -> Result<EbmModel> {
        let mut out = self.clone();
        let phi = self.features_of(x)?;
        out.head = ridge_fit(phi.values(), y)?;
        if self.y_features.is_some() {
            let phi_y = self.y_features_of(y)?;
            out.y_head = Some(ridge_fit(phi_y.values(), y)?);
        }
        Ok(out)
    }
}

fn ridge_fit(phi: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let (n, d) = phi.shape();
    if n != y.len() || n == 0 {
        return Err(Error::Dimension("readout needs one target per feature row".into()));
    }
    let a = DMatrix::from_row_slice(n, d, phi.data());
    let mut gram = a.transpose() * &a;
    let scale = (0..d).map(|i| gram[(i, i)]).sum::<f64>() / d as f64;
    let lambda = 1e-8 * scale.max(1e-12) + 1e-12;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = a.transpose() * DVector::from_column_slice(y);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::NonFinite("readout normal equations".into()))?;
    let w = chol.solve(&rhs);
    let w: Vec<f64> = w.iter().copied().collect();
    ensure_finite("readout", &w)?;
    Ok(w)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Forward state for [`EbmModel::backward_pairs`].
#[derive(Clone, Debug)]
pub struct EnergyPass {
    kind: EnergyKind,
    rows: Vec<usize>,
    ys: Vec<f64>,
    pub energies: Vec<f64>,
    x_cache: MlpCache,
    phi: Matrix,
    g: Vec<f64>,
    y_cache: Option<MlpCache>,
    phi_y: Option<Matrix>,
    g2: Option<Vec<f64>>,
    trunk_cache: Option<MlpCache>,
}

impl EnergyPass {
    /// Φ(x) for the rows of the batch.
    pub fn features(&self) -> &Matrix {
        &self.phi
    }

    /// Post-activation output of x-branch layer `l`.
    pub fn x_layer_output(&self, l: usize) -> &Matrix {
        self.x_cache.layer_output(l)
    }

    /// `G(x)` per batch row.
    pub fn inner(&self) -> &[f64] {
        &self.g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGrads {
    /// Flattened like [`EbmModel::flatten`].
    pub params: Vec<f64>,
    /// `∂L/∂y` per configuration.
    pub dy: Vec<f64>,
}

/// Energy and its gradients for a single configuration.
pub fn energy_grads(model: &EbmModel, x: &[f64], y: f64) -> Result<(f64, EnergyGrads)> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let pass = model.forward_pairs(&xm, &[0], &[y])?;
    let grads = model.backward_pairs(&pass, &[1.0], &[])?;
    Ok((pass.energies[0], grads))
}

/// Minimizes the energy over `y` for input `x`: a scan over `grid_n`
/// evenly spaced points of `y_range`, then up to `refine_steps` steps of a
/// sign-gradient line search from the best grid point, kept inside the
/// range. Ties go to the smaller `y`. Classification models choose between
/// the labels −1 and +1 instead.
pub fn infer_y(
    model: &EbmModel,
    x: &[f64],
    y_range: (f64, f64),
    grid_n: usize,
    refine_steps: usize,
) -> Result<f64> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    if model.kind == EnergyKind::BinaryClassification {
        let e = model.energies(&xm, &[0, 0], &[-1.0, 1.0])?;
        return Ok(if e[1] < e[0] { 1.0 } else { -1.0 });
    }
    let (lo, hi) = y_range;
    if !(lo < hi) || grid_n < 2 {
        return Err(Error::Contract(format!(
            "need lo < hi and grid_n >= 2, got [{lo}, {hi}] with {grid_n}"
        )));
    }
    let spacing = (hi - lo) / (grid_n - 1) as f64;
    let grid: Vec<f64> = (0..grid_n).map(|i| lo + spacing * i as f64).collect();
    let energies = model
        .energies(&xm, &vec![0; grid_n], &grid)
        .map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("energy on inference grid: {m}")),
            other => other,
        })?;
    let mut best = 0;
    for (i, &e) in energies.iter().enumerate() {
        if e < energies[best] {
            best = i;
        }
    }
    let mut y = grid[best];
    let mut e = energies[best];
    let mut step = spacing;
    for _ in 0..refine_steps {
        if step <= 1e-13 * (1.0 + y.abs()) {
            break;
        }
        let (_, g) = energy_grads(model, x, y)?;
        let slope = g.dy[0];
        if slope == 0.0 {
            break;
        }
        let cand = (y - step * slope.signum()).clamp(lo, hi);
        let ec = model.energies(&xm, &[0], &[cand])?[0];
        if ec < e {
            y = cand;
            e = ec;
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    Ok(y)
}
