//! Fully-connected networks with cached forward passes and exact
//! reverse-mode gradients.
//!
//! Weights are stored `(out_dim, in_dim)` row-major, so a layer computes
//! `z = x Wᵀ + b` for a batch `x` of shape `(batch, in_dim)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(0, z)`; the derivative at `z = 0` is taken as 0.
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            weights: Matrix::from_vec(out_dim, in_dim, data).expect("finite glorot sample"),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn n_params(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

/// Parameters of a feed-forward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, consumed by
/// [`MlpParams::backward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    fingerprint: u64,
    /// `inputs[l]` is the input to layer `l`.
    inputs: Vec<Matrix>,
    /// `pre[l]` is the pre-activation of layer `l`.
    pre: Vec<Matrix>,
    output: Matrix,
}

impl MlpCache {
    pub fn batch(&self) -> usize {
        self.inputs[0].rows()
    }

    /// Post-activation output of layer `l`.
    pub fn layer_output(&self, l: usize) -> &Matrix {
        if l + 1 < self.inputs.len() {
            &self.inputs[l + 1]
        } else {
            &self.output
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrads>,
    /// Gradient with respect to the network input.
    pub input: Matrix,
}

impl MlpGrads {
    /// Appends the parameter gradients in the same order as
    /// [`MlpParams::write_flat`].
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for g in &self.layers {
            out.extend_from_slice(g.weights.data());
            out.extend_from_slice(&g.bias);
        }
    }
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    l + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Dimension(format!("layer {l} bias length")));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Network with the given layer widths (`sizes[0]` is the input width)
    /// and one activation per layer, Glorot-initialized.
    pub fn glorot<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Contract(
                "need one activation per layer and at least two widths".into(),
            ));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| Dense::glorot(w[0], w[1], a, rng))
            .collect();
        Self::from_layers(layers)
    }

    /// `input → hidden → hidden → features`, ReLU after every layer, so
    /// the produced features are non-negative.
    pub fn feature_extractor<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        features: usize,
        rng: &mut R,
    ) -> Self {
        Self::glorot(
            &[input, hidden, hidden, features],
            &[Activation::Relu; 3],
            rng,
        )
        .expect("valid widths")
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.bias);
        }
    }

    /// Overwrites the parameters from `src`, returning how many values were
    /// consumed.
    pub fn read_flat(&mut self, src: &[f64]) -> Result<usize> {
        if src.len() < self.n_params() {
            return Err(Error::Dimension(format!(
                "need {} parameters, got {}",
                self.n_params(),
                src.len()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.data().len();
            layer
                .weights
                .data_mut()
                .copy_from_slice(&src[at..at + nw]);
            at += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&src[at..at + nb]);
            at += nb;
        }
        Ok(at)
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over shapes and parameter bits.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for layer in &self.layers {
            mix(layer.in_dim() as u64);
            mix(layer.out_dim() as u64);
            for v in layer.weights.data().iter().chain(&layer.bias) {
                mix(v.to_bits());
            }
        }
        h
    }

    /// Output only, without keeping intermediate values.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut z = dense_linear(layer, &cur);
            for v in z.data_mut() {
                *v = layer.activation.apply(*v);
            }
            cur = z;
        }
        check_output(&cur)?;
        Ok(cur)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let z = dense_linear(layer, &cur);
            let mut a = z.clone();
            for v in a.data_mut() {
                *v = layer.activation.apply(*v);
            }
            inputs.push(cur);
            pre.push(z);
            cur = a;
        }
        check_output(&cur)?;
        Ok((
            cur.clone(),
            MlpCache {
                fingerprint: self.fingerprint(),
                inputs,
                pre,
                output: cur,
            },
        ))
    }

    /// Gradients of a scalar loss given `∂L/∂output`.
    pub fn backward(&self, cache: &MlpCache, upstream: &Matrix) -> Result<MlpGrads> {
        self.backward_tapped(cache, upstream, &[])
    }

    /// Like [`backward`](Self::backward), with extra loss terms attached to
    /// hidden-layer outputs: each `(l, g)` in `taps` adds `g` to `∂L/∂a_l`,
    /// where `a_l` is the post-activation output of layer `l`.
    pub fn backward_tapped(
        &self,
        cache: &MlpCache,
        upstream: &Matrix,
        taps: &[(usize, &Matrix)],
    ) -> Result<MlpGrads> {
        if cache.fingerprint != self.fingerprint() || cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract(
                "forward cache does not belong to these parameters".into(),
            ));
        }
        let batch = cache.batch();
        if upstream.shape() != (batch, self.output_dim()) {
            return Err(Error::Dimension(format!(
                "upstream gradient is {:?}, expected {:?}",
                upstream.shape(),
                (batch, self.output_dim())
            )));
        }
        for &(l, g) in taps {
            if l >= self.layers.len() || g.shape() != (batch, self.layers[l].out_dim()) {
                return Err(Error::Dimension(format!("bad tap on layer {l}")));
            }
        }

        let mut grads: Vec<DenseGrads> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for &(tl, g) in taps {
                if tl == l {
                    for (d, t) in delta.data_mut().iter_mut().zip(g.data()) {
                        *d += t;
                    }
                }
            }
            let z = &cache.pre[l];
            for (d, &zv) in delta.data_mut().iter_mut().zip(z.data()) {
                *d *= layer.activation.derivative(zv);
            }
            let input = &cache.inputs[l];
            let (n_out, n_in) = layer.weights.shape();
            let mut dw = Matrix::zeros(n_out, n_in);
            let mut db = vec![0.0; n_out];
            let mut dx = Matrix::zeros(batch, n_in);
            let w = layer.weights.data();
            for r in 0..batch {
                let x_row = input.row(r);
                let d_row = delta.row(r);
                let dx_row = dx.row_mut(r);
                for o in 0..n_out {
                    let d = d_row[o];
                    if d == 0.0 {
                        continue;
                    }
                    db[o] += d;
                    let w_row = &w[o * n_in..(o + 1) * n_in];
                    let dw_row = &mut dw.data_mut()[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        dw_row[i] += d * x_row[i];
                        dx_row[i] += d * w_row[i];
                    }
                }
            }
            grads.push(DenseGrads {
                weights: dw,
                bias: db,
            });
            delta = dx;
        }
        grads.reverse();
        if grads
            .iter()
            .any(|g| !g.weights.is_finite() || g.bias.iter().any(|v| !v.is_finite()))
            || !delta.is_finite()
        {
            return Err(Error::NonFinite("network gradient".into()));
        }
        Ok(MlpGrads {
            layers: grads,
            input: delta,
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

fn check_output(m: &Matrix) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("network output".into()))
    }
}

fn dense_linear(layer: &Dense, x: &Matrix) -> Matrix {
    let (n_out, n_in) = layer.weights.shape();
    let w = layer.weights.data();
    let mut z = Matrix::zeros(x.rows(), n_out);
    for r in 0..x.rows() {
        let x_row = x.row(r);
        let z_row = z.row_mut(r);
        for o in 0..n_out {
            let w_row = &w[o * n_in..(o + 1) * n_in];
            let mut acc = layer.bias[o];
            for i in 0..n_in {
                acc += w_row[i] * x_row[i];
            }
            z_row[o] = acc;
        }
    }
    z
}
