use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DiscreteRom, NormalizationTransform};
use crate::error::{check_len, Result};

/// On-disk form of a discrete model and, optionally, its normalization.
///
/// Matrices are stored row-major. The normalization fields are empty when
/// the model was written without one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomFile {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub dt: f64,
    #[serde(rename = "A_d")]
    pub a_d: Vec<f64>,
    #[serde(rename = "B_d")]
    pub b_d: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    pub theta: Vec<f64>,
    pub u_max: Vec<f64>,
    pub y_max: Vec<f64>,
    pub state_scale: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl RomFile {
    pub fn new(rom: &DiscreteRom, theta: &[f64], transform: Option<&NormalizationTransform>) -> Self {
        Self {
            n: rom.n_states(),
            m: rom.n_inputs(),
            p: rom.n_outputs(),
            dt: rom.dt,
            a_d: row_major(&rom.ad),
            b_d: row_major(&rom.bd),
            c: row_major(&rom.c),
            theta: theta.to_vec(),
            u_max: transform.map(|t| t.u_max.clone()).unwrap_or_default(),
            y_max: transform.map(|t| t.y_max.clone()).unwrap_or_default(),
            state_scale: transform.map(|t| t.state_scale.clone()).unwrap_or_default(),
        }
    }

    pub fn rom(&self) -> Result<DiscreteRom> {
        check_len("A_d entries", self.n * self.n, self.a_d.len())?;
        check_len("B_d entries", self.n * self.m, self.b_d.len())?;
        check_len("C entries", self.p * self.n, self.c.len())?;
        Ok(DiscreteRom {
            ad: DMatrix::from_row_slice(self.n, self.n, &self.a_d),
            bd: DMatrix::from_row_slice(self.n, self.m, &self.b_d),
            c: DMatrix::from_row_slice(self.p, self.n, &self.c),
            dt: self.dt,
        })
    }

    pub fn transform(&self) -> Option<NormalizationTransform> {
        if self.state_scale.is_empty() {
            return None;
        }
        Some(NormalizationTransform {
            u_max: self.u_max.clone(),
            y_max: self.y_max.clone(),
            state_scale: self.state_scale.clone(),
        })
    }
}
