use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DiscreteRom;
use crate::error::{check_len, Error, Result};

/// Diagonal scaling between physical and normalized model coordinates.
///
/// `ū = u / u_max`, `x̄ = T x` with `T = diag(state_scale)`, `ȳ = y / y_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub u_max: Vec<f64>,
    pub y_max: Vec<f64>,
    pub state_scale: Vec<f64>,
}

fn scale(values: &[f64], factors: &[f64], out: &mut [f64], invert: bool) {
    for ((o, v), f) in out.iter_mut().zip(values).zip(factors) {
        *o = if invert { v * f } else { v / f };
    }
}

impl NormalizationTransform {
    pub fn normalize_u_into(&self, u: &[f64], out: &mut [f64]) {
        scale(u, &self.u_max, out, false);
    }

    pub fn denormalize_u_into(&self, u: &[f64], out: &mut [f64]) {
        scale(u, &self.u_max, out, true);
    }

    pub fn normalize_u(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.normalize_u_into(u, &mut out);
        out
    }

    pub fn denormalize_u(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.denormalize_u_into(u, &mut out);
        out
    }

    pub fn normalize_y(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        scale(y, &self.y_max, &mut out, false);
        out
    }

    pub fn denormalize_y(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        scale(y, &self.y_max, &mut out, true);
        out
    }

    pub fn normalize_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.state_scale).map(|(v, t)| v * t).collect()
    }

    pub fn denormalize_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.state_scale).map(|(v, t)| v / t).collect()
    }
}

/// Rescales `rom` so that, from rest and under inputs in `[0, u_max]`, every
/// state lies in `[0, 1]`.
///
/// The state scale is the reciprocal of the steady state reached under
/// `u_max`; for a positive system that steady state bounds the whole
/// trajectory from above.
pub fn normalize(
    rom: &DiscreteRom,
    u_max: &[f64],
    y_max: &[f64],
) -> Result<(DiscreteRom, NormalizationTransform)> {
    check_len("u_max", rom.n_inputs(), u_max.len())?;
    check_len("y_max", rom.n_outputs(), y_max.len())?;
    if u_max.iter().chain(y_max).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Config("u_max and y_max must be strictly positive".into()));
    }
    let x_ss = rom.steady_state(u_max)?;
    let peak = x_ss.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut state_scale = Vec::with_capacity(x_ss.len());
    for (index, v) in x_ss.iter().enumerate() {
        if !(*v > 1e-12 * peak) || !v.is_finite() {
            return Err(Error::UnreachableState { index });
        }
        state_scale.push(1.0 / v);
    }

    let n = rom.n_states();
    let m = rom.n_inputs();
    let p = rom.n_outputs();
    let ad = DMatrix::from_fn(n, n, |i, j| state_scale[i] * rom.ad[(i, j)] / state_scale[j]);
    let bd = DMatrix::from_fn(n, m, |i, j| state_scale[i] * rom.bd[(i, j)] * u_max[j]);
    let c = DMatrix::from_fn(p, n, |i, j| rom.c[(i, j)] / (y_max[i] * state_scale[j]));
    Ok((
        DiscreteRom {
            ad,
            bd,
            c,
            dt: rom.dt,
        },
        NormalizationTransform {
            u_max: u_max.to_vec(),
            y_max: y_max.to_vec(),
            state_scale,
        },
    ))
}
