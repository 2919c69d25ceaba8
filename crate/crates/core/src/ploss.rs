//! Static power-loss map `u = g(z; φ)` with per-channel conduction,
//! temperature and switching-like coefficients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Temperature coefficients must stay strictly inside `±K_BOUND` 1/K.
pub const K_BOUND: f64 = 0.01;
const K_CLAMP: f64 = 0.0099;
const R_FLOOR: f64 = 1e-12;

/// Ambient / reference temperature used throughout, K.
pub const T_REF: f64 = 298.15;

/// Per-channel coefficients; `u_j = r_j I² (1 + k_j ΔT) + s_j |I|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// W/A²
    pub r: Vec<f64>,
    /// 1/K
    pub k: Vec<f64>,
    /// W/A
    pub s: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlossInput {
    /// A
    pub current: f64,
    /// K
    pub feedback_temperature: f64,
    /// K
    pub reference_temperature: f64,
}

impl PlossInput {
    pub fn new(current: f64, feedback_temperature: f64) -> Self {
        Self {
            current,
            feedback_temperature,
            reference_temperature: T_REF,
        }
    }

    pub fn delta_t(&self) -> f64 {
        self.feedback_temperature - self.reference_temperature
    }
}

impl LossParams {
    pub fn n_channels(&self) -> usize {
        self.r.len()
    }

    /// Flattened `[r_0, k_0, s_0, r_1, ...]`, length `3 m`.
    pub fn phi(&self) -> Vec<f64> {
        (0..self.n_channels())
            .flat_map(|j| [self.r[j], self.k[j], self.s[j]])
            .collect()
    }

    pub fn from_phi(phi: &[f64]) -> Result<Self> {
        if phi.len() % 3 != 0 {
            return Err(Error::Config(format!(
                "loss parameter vector length {} is not a multiple of 3",
                phi.len()
            )));
        }
        let m = phi.len() / 3;
        let mut out = LossParams {
            r: Vec::with_capacity(m),
            k: Vec::with_capacity(m),
            s: Vec::with_capacity(m),
        };
        for c in phi.chunks_exact(3) {
            out.r.push(c[0]);
            out.k.push(c[1]);
            out.s.push(c[2]);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_channels();
        check_len("temperature coefficients", m, self.k.len())?;
        check_len("linear coefficients", m, self.s.len())?;
        for j in 0..m {
            let (r, k, s) = (self.r[j], self.k[j], self.s[j]);
            if !(r.is_finite() && k.is_finite() && s.is_finite()) {
                return Err(Error::Config(format!("channel {j}: non-finite loss parameter")));
            }
            if r <= 0.0 || s < 0.0 || k.abs() >= K_BOUND {
                return Err(Error::Config(format!(
                    "channel {j}: loss parameters out of range (r={r}, k={k}, s={s})"
                )));
            }
        }
        Ok(())
    }

    /// Writes the loss of every channel into `out`.
    pub fn eval_into(&self, z: &PlossInput, out: &mut [f64]) {
        let i = z.current;
        let i2 = i * i;
        let dt = z.delta_t();
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.r[j] * i2 * (1.0 + self.k[j] * dt) + self.s[j] * i.abs();
        }
    }

    pub fn eval(&self, z: &PlossInput) -> Vec<f64> {
        let mut out = vec![0.0; self.n_channels()];
        self.eval_into(z, &mut out);
        out
    }

    fn clamped(mut self) -> Self {
        for j in 0..self.n_channels() {
            self.r[j] = self.r[j].max(R_FLOOR);
            self.k[j] = self.k[j].clamp(-K_CLAMP, K_CLAMP);
            self.s[j] = self.s[j].max(0.0);
        }
        self
    }
}

/// `φ_i = φ̃_i + e_i`, `e_i ~ U([m − δ, m + δ])` with `m = offset φ̃_i` and
/// `δ = half_width |φ̃_i|`, so a positive offset scales every coefficient up
/// in magnitude. Results are clamped into the valid range.
pub fn perturb_loss_params(
    nominal: &LossParams,
    offset: f64,
    half_width: f64,
    seed: u64,
) -> Result<LossParams> {
    if !(half_width.is_finite() && half_width >= 0.0) || !offset.is_finite() {
        return Err(Error::Config(format!(
            "invalid perturbation offset={offset} half_width={half_width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi: Vec<f64> = nominal
        .phi()
        .into_iter()
        .map(|p| {
            let mean = offset * p;
            let delta = half_width * p.abs();
            let e = if delta == 0.0 {
                mean
            } else {
                Uniform::new_inclusive(mean - delta, mean + delta)
                    .expect("ordered finite bounds")
                    .sample(&mut rng)
            };
            p + e
        })
        .collect();
    Ok(LossParams::from_phi(&phi)?.clamped())
}

/// `g(z; φ*) − g(z; φ̃)`: the loss error a perfect corrector must emit.
pub fn true_loss_gap(true_p: &LossParams, nominal_p: &LossParams, z: &PlossInput) -> Vec<f64> {
    true_p
        .eval(z)
        .into_iter()
        .zip(nominal_p.eval(z))
        .map(|(t, n)| t - n)
        .collect()
}

/// Rectangular operating envelope in current and temperature rise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// A
    pub current_max: f64,
    /// K
    pub delta_t_max: f64,
}

impl Default for Envelope {
    fn default() -> Self {
        Self {
            current_max: 1000.0,
            delta_t_max: 80.0,
        }
    }
}

impl Envelope {
    /// Regular grid over `[-I_max, I_max] × [-ΔT_max, ΔT_max]`.
    pub fn grid(&self, points: usize) -> Vec<PlossInput> {
        let points = points.max(2);
        let lin = |lim: f64, i: usize| -lim + 2.0 * lim * i as f64 / (points - 1) as f64;
        let mut out = Vec::with_capacity(points * points);
        for a in 0..points {
            for b in 0..points {
                out.push(PlossInput::new(
                    lin(self.current_max, a),
                    T_REF + lin(self.delta_t_max, b),
                ));
            }
        }
        out
    }
}

/// Largest `‖g(z; φ_i) − g(z; φ̃)‖₂` over all sets and the envelope grid.
pub fn max_gap_norm(sets: &[LossParams], nominal: &LossParams, envelope: &Envelope) -> f64 {
    let grid = envelope.grid(41);
    sets.iter()
        .flat_map(|set| {
            grid.iter().map(move |z| {
                true_loss_gap(set, nominal, z)
                    .iter()
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .fold(0.0, f64::max)
}
