//! Correction networks: a bounded-output MLP and an Elman recurrent network,
//! plus the feature assembly that feeds them.

mod elman;
mod features;

pub use elman::{default_elman_layout, init_elman, rnn_step, Elman, ElmanLayout, ElmanStep};
pub use features::{FeatureSpec, PcaBasis, N_PCA};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Layer widths of the default feedforward corrector.
pub const MLP_SIZES: [usize; 5] = [13, 15, 25, 15, 16];
pub const RNN_INPUTS: usize = 13;
pub const RNN_HIDDEN: usize = 25;
pub const RNN_OUTPUTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    LeakyRelu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::LeakyRelu => {
                if a >= 0.0 {
                    a
                } else {
                    LEAKY_SLOPE * a
                }
            }
            Activation::Identity => a,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::LeakyRelu => {
                if y > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Glorot-style uniform draw into `w`.
pub(crate) fn fill_uniform(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    for v in w {
        *v = dist.sample(rng);
    }
}

/// Architecture of a dense feedforward stack; parameters live elsewhere as a
/// flat slice laid out layer by layer as `W_l` (row-major, out × in) then `b_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

/// Per-layer outputs kept from the forward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpWorkspace {
    acts: Vec<Vec<f64>>,
    grad: Vec<f64>,
    grad_next: Vec<f64>,
}

impl MlpWorkspace {
    /// Output of the last forward pass.
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Config(format!(
                "{} layer sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        if sizes.iter().any(|s| *s == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(Self { sizes, activations })
    }

    pub fn n_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// `(weight offset, bias offset)` of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes[..=l].windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        (start, start + self.sizes[l + 1] * self.sizes[l])
    }

    pub fn workspace(&self) -> MlpWorkspace {
        let widest = *self.sizes.iter().max().expect("non-empty");
        MlpWorkspace {
            acts: self.sizes.iter().map(|s| vec![0.0; *s]).collect(),
            grad: vec![0.0; widest],
            grad_next: vec![0.0; widest],
        }
    }

    /// Forward pass keeping every layer's output in `ws`; returns the output.
    pub fn forward<'w>(&self, params: &[f64], x: &[f64], ws: &'w mut MlpWorkspace) -> &'w [f64] {
        debug_assert_eq!(params.len(), self.n_params());
        ws.acts[0].copy_from_slice(x);
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[offset..offset + n_out * n_in];
            let b = &params[offset + n_out * n_in..offset + n_out * n_in + n_out];
            offset += n_out * n_in + n_out;
            let act = self.activations[l];
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            let output = &mut tail[0];
            for (i, o) in output.iter_mut().enumerate() {
                let row = &w[i * n_in..(i + 1) * n_in];
                let mut acc = b[i];
                for (wij, xj) in row.iter().zip(input.iter()) {
                    acc += wij * xj;
                }
                *o = act.apply(acc);
            }
        }
        ws.acts.last().expect("non-empty")
    }

    /// Accumulates `∂L/∂params` into `grad_params` given `∂L/∂output` for the
    /// pass stored in `ws`. Writes `∂L/∂input` when requested.
    pub fn backward(
        &self,
        params: &[f64],
        ws: &mut MlpWorkspace,
        grad_output: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        let layers = self.n_layers();
        let top = self.sizes[layers];
        {
            let out = &ws.acts[layers];
            let act = self.activations[layers - 1];
            for i in 0..top {
                ws.grad[i] = grad_output[i] * act.derivative_at_output(out[i]);
            }
        }
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let w = &params[w_off..b_off];
            let input = &ws.acts[l];
            {
                let (gw, gb) = grad_params[w_off..b_off + n_out].split_at_mut(n_out * n_in);
                for i in 0..n_out {
                    let g = ws.grad[i];
                    if g == 0.0 {
                        continue;
                    }
                    gb[i] += g;
                    for (gwij, xj) in gw[i * n_in..(i + 1) * n_in].iter_mut().zip(input) {
                        *gwij += g * xj;
                    }
                }
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            let gn = &mut ws.grad_next[..n_in];
            gn.fill(0.0);
            for i in 0..n_out {
                let g = ws.grad[i];
                if g == 0.0 {
                    continue;
                }
                for (gj, wij) in gn.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                    *gj += g * wij;
                }
            }
            if l > 0 {
                let act = self.activations[l - 1];
                for j in 0..n_in {
                    ws.grad[j] = ws.grad_next[j] * act.derivative_at_output(input[j]);
                }
            }
        }
        if let Some(gi) = grad_input {
            gi.copy_from_slice(&ws.grad_next[..self.sizes[0]]);
        }
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.n_params()];
        for l in 0..self.n_layers() {
            let (w_off, b_off) = self.layer_offsets(l);
            fill_uniform(&mut params[w_off..b_off], self.sizes[l], self.sizes[l + 1], rng);
        }
        params
    }
}

/// Feedforward corrector `x_{l+1} = σ(W_l x_l + b_l)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    #[serde(flatten)]
    pub shape: MlpShape,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(shape: MlpShape) -> Self {
        let params = vec![0.0; shape.n_params()];
        Self { shape, params }
    }

    pub fn seeded(shape: MlpShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shape.init_params(&mut rng);
        Self { shape, params }
    }

    pub fn from_parts(shape: MlpShape, params: Vec<f64>) -> Result<Self> {
        check_len("mlp parameters", shape.n_params(), params.len())?;
        Ok(Self { shape, params })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = self.shape.workspace();
        self.shape.forward(&self.params, x, &mut ws).to_vec()
    }
}

/// The default tanh stack 13 → 15 → 25 → 15 → 16.
pub fn default_mlp_shape() -> MlpShape {
    MlpShape::new(MLP_SIZES.to_vec(), vec![Activation::Tanh; MLP_SIZES.len() - 1])
        .expect("static shape")
}

/// Fan-scaled uniform weights, zero biases; deterministic per seed.
pub fn init_mlp(seed: u64) -> Mlp {
    Mlp::seeded(default_mlp_shape(), seed)
}

pub fn mlp_forward(params: &Mlp, features: &[f64]) -> Result<Vec<f64>> {
    check_len("features", params.shape.n_inputs(), features.len())?;
    Ok(params.forward(features))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Fnn,
    Rnn,
}

/// Either corrector, with a flat parameter view for the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrectionNet {
    Mlp(Mlp),
    Elman(Elman),
}

impl CorrectionNet {
    pub fn kind(&self) -> NetKind {
        match self {
            CorrectionNet::Mlp(_) => NetKind::Fnn,
            CorrectionNet::Elman(_) => NetKind::Rnn,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            CorrectionNet::Mlp(n) => &n.params,
            CorrectionNet::Elman(n) => &n.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            CorrectionNet::Mlp(n) => &mut n.params,
            CorrectionNet::Elman(n) => &mut n.params,
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            CorrectionNet::Mlp(n) => n.shape.n_inputs(),
            CorrectionNet::Elman(n) => n.layout.n_in,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            CorrectionNet::Mlp(n) => n.shape.n_outputs(),
            CorrectionNet::Elman(n) => n.layout.n_out,
        }
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        out.params_mut().fill(0.0);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straightforward nested-loop evaluation used as an independent check.
    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..net.shape.n_layers() {
            let (ni, no) = (net.shape.sizes[l], net.shape.sizes[l + 1]);
            let mut next = vec![0.0; no];
            for (i, nx) in next.iter_mut().enumerate() {
                let mut s = 0.0;
                for (j, c) in cur.iter().enumerate() {
                    s += net.params[off + i * ni + j] * c;
                }
                s += net.params[off + ni * no + i];
                *nx = match net.shape.activations[l] {
                    Activation::Tanh => s.tanh(),
                    Activation::LeakyRelu => s.max(0.0) + 0.01 * s.min(0.0),
                    Activation::Identity => s,
                };
            }
            off += ni * no + no;
            cur = next;
        }
        cur
    }

    #[test]
    fn default_parameter_count() {
        assert_eq!(default_mlp_shape().n_params(), 13 * 15 + 15 + 15 * 25 + 25 + 25 * 15 + 15 + 15 * 16 + 16);
    }

    #[test]
    fn same_seed_same_params() {
        assert_eq!(init_mlp(5), init_mlp(5));
        assert_ne!(init_mlp(5), init_mlp(6));
        let net = init_mlp(5);
        let (w0, b0) = net.shape.layer_offsets(0);
        assert!(net.params[b0..b0 + 15].iter().all(|b| *b == 0.0));
        let limit = (6.0f64 / 28.0).sqrt();
        assert!(net.params[w0..b0].iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(default_mlp_shape());
        let out = mlp_forward(&net, &[0.3; 13]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        assert_eq!(out.len(), 16);
        assert!(mlp_forward(&net, &[0.3; 12]).is_err());
    }

    #[test]
    fn scalar_layer_hand_value() {
        let shape = MlpShape::new(vec![1, 1], vec![Activation::Tanh]).unwrap();
        let net = Mlp::from_parts(shape, vec![2.0, 0.5]).unwrap();
        let y = net.forward(&[0.25])[0];
        assert!((y - 1.0f64.tanh()).abs() < 1e-15);
        assert!((y - 0.76159).abs() < 1e-5);
    }

    #[test]
    fn matches_naive_loops() {
        let shape = MlpShape::new(
            vec![13, 15, 25, 15, 16],
            vec![Activation::Tanh, Activation::LeakyRelu, Activation::Identity, Activation::Tanh],
        )
        .unwrap();
        for seed in 0..20 {
            let net = Mlp::seeded(shape.clone(), seed);
            let x: Vec<f64> = (0..13).map(|i| ((i as f64 + seed as f64) * 0.37).sin() * 2.0).collect();
            let a = net.forward(&x);
            let b = naive_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_validation() {
        assert!(MlpShape::new(vec![3], vec![]).is_err());
        assert!(MlpShape::new(vec![3, 2], vec![]).is_err());
        assert!(MlpShape::new(vec![3, 0], vec![Activation::Tanh]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn tanh_output_is_bounded(seed in 0u64..1000, scale in 0.0f64..1e3) {
            let net = init_mlp(seed);
            let x: Vec<f64> = (0..13).map(|i| scale * ((i as f64 * 1.3 + seed as f64).cos())).collect();
            for v in net.forward(&x) {
                prop_assert!(v.abs() <= 1.0);
                prop_assert!(v.is_finite());
            }
        }
    }
}
