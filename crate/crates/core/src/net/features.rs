use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::ploss::PlossInput;
use crate::rom::Series;

/// Principal components kept from the normalized ROM state.
pub const N_PCA: usize = 3;

/// Mean and leading loading vectors of the normalized ROM state.
///
/// An empty basis is a placeholder written before any trajectories exist.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
}

impl PcaBasis {
    pub fn is_fitted(&self) -> bool {
        !self.components.is_empty()
    }

    /// Fits `count` components to the rows of `states` (pooled).
    pub fn fit<'a>(states: impl IntoIterator<Item = &'a Series>, count: usize) -> Result<Self> {
        let mut dim = None;
        let mut rows = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut collected: Vec<&Series> = Vec::new();
        for s in states {
            let d = *dim.get_or_insert(s.dim);
            check_len("state width", d, s.dim)?;
            if sum.is_empty() {
                sum = vec![0.0; d];
            }
            for row in s.rows() {
                for (a, v) in sum.iter_mut().zip(row) {
                    *a += v;
                }
                rows += 1;
            }
            collected.push(s);
        }
        let dim = dim.ok_or_else(|| Error::Config("PCA needs at least one trajectory".into()))?;
        if rows < 2 || count == 0 || count > dim {
            return Err(Error::Config(format!(
                "cannot fit {count} components to {rows} samples of width {dim}"
            )));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        let mut centered = vec![0.0; dim];
        for s in collected {
            for row in s.rows() {
                for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
                    *c = v - m;
                }
                for i in 0..dim {
                    let ci = centered[i];
                    for j in i..dim {
                        cov[(i, j)] += ci * centered[j];
                    }
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[(i, j)] / (rows - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let components = order[..count]
            .iter()
            .map(|&k| {
                let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
                // sign convention: the largest-magnitude loading is positive
                let pivot = v
                    .iter()
                    .copied()
                    .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
                if pivot < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect();
        Ok(Self { mean, components })
    }

    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.components) {
            *o = comp
                .iter()
                .zip(x.iter().zip(&self.mean))
                .map(|(c, (v, m))| c * (v - m))
                .sum();
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.is_fitted() {
            return Err(Error::Config("PCA basis has not been fitted".into()));
        }
        check_len("state", self.mean.len(), x.len())?;
        let mut out = vec![0.0; self.components.len()];
        self.project_into(x, &mut out);
        Ok(out)
    }
}

/// Scales and layout of the corrector input:
/// `[I / I_max, (T_fb − T_ref) / y_max_fb, ȳ (p), pca(x̄) (3)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// A
    pub current_scale: f64,
    /// K, normally the normalization bound of the feedback output.
    pub feedback_scale: f64,
    pub pca: PcaBasis,
}

impl FeatureSpec {
    pub fn n_features(&self, p: usize) -> usize {
        2 + p + self.pca.components.len()
    }

    pub fn check(&self) -> Result<()> {
        if !self.pca.is_fitted() {
            return Err(Error::Config("PCA basis has not been fitted".into()));
        }
        if !(self.current_scale > 0.0 && self.feedback_scale > 0.0) {
            return Err(Error::Config("feature scales must be positive".into()));
        }
        Ok(())
    }

    /// Unchecked assembly into `out`; see [`FeatureSpec::assemble`].
    pub fn assemble_into(&self, z: &PlossInput, y_norm: &[f64], x_norm: &[f64], out: &mut [f64]) {
        let p = y_norm.len();
        out[0] = z.current / self.current_scale;
        out[1] = z.delta_t() / self.feedback_scale;
        out[2..2 + p].copy_from_slice(y_norm);
        self.pca.project_into(x_norm, &mut out[2 + p..]);
    }

    pub fn assemble(&self, z: &PlossInput, y_norm: &[f64], x_norm: &[f64]) -> Result<Vec<f64>> {
        self.check()?;
        check_len("state", self.pca.mean.len(), x_norm.len())?;
        let mut out = vec![0.0; self.n_features(y_norm.len())];
        self.assemble_into(z, y_norm, x_norm, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature".into()));
        }
        Ok(out)
    }
}
