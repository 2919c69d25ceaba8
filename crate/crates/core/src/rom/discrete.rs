use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Continuous-time model `dx/dt = A x + B u`, `y = C x`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousRom {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl ContinuousRom {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_metzler(&self) -> bool {
        let n = self.n_states();
        (0..n).all(|i| (0..n).all(|j| i == j || self.a[(i, j)] >= 0.0))
            && self.b.iter().all(|v| *v >= 0.0)
    }

    /// Largest real part among the eigenvalues of `A`.
    pub fn spectral_abscissa(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_hurwitz(&self) -> bool {
        self.spectral_abscissa() < 0.0
    }
}

/// Discrete-time model `x_{k+1} = Ad x_k + Bd u_k`, `y_k = C x_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteRom {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// seconds
    pub dt: f64,
}

impl DiscreteRom {
    pub fn n_states(&self) -> usize {
        self.ad.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.bd.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.ad
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// `(I - Ad)^{-1} Bd`, the state response to a unit constant input.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        let n = self.n_states();
        let lhs = DMatrix::<f64>::identity(n, n) - &self.ad;
        lhs.lu()
            .solve(&self.bd)
            .ok_or_else(|| Error::Numerical("I - Ad is singular".into()))
    }

    /// Steady state reached under the constant input `u`.
    pub fn steady_state(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("input", self.n_inputs(), u.len())?;
        let gain = self.dc_gain()?;
        Ok((gain * DVector::from_column_slice(u)).as_slice().to_vec())
    }

    /// Output-space steady state `C (I - Ad)^{-1} Bd u`.
    pub fn steady_output(&self, u: &[f64]) -> Result<Vec<f64>> {
        let x = self.steady_state(u)?;
        let mut y = vec![0.0; self.n_outputs()];
        self.output_into(&x, &mut y);
        Ok(y)
    }

    /// One step of the recursion: returns `(Ad x + Bd u, C x)`.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("state", self.n_states(), x.len())?;
        check_len("input", self.n_inputs(), u.len())?;
        let mut next = vec![0.0; self.n_states()];
        let mut y = vec![0.0; self.n_outputs()];
        self.output_into(x, &mut y);
        self.advance_into(x, u, &mut next);
        Ok((next, y))
    }

    /// `next = Ad x + Bd u` without allocation; lengths are the caller's job.
    pub fn advance_into(&self, x: &[f64], u: &[f64], next: &mut [f64]) {
        debug_assert_eq!(next.len(), self.n_states());
        next.fill(0.0);
        for (j, xj) in x.iter().enumerate() {
            if *xj != 0.0 {
                axpy(*xj, self.ad.column(j).as_slice(), next);
            }
        }
        for (j, uj) in u.iter().enumerate() {
            if *uj != 0.0 {
                axpy(*uj, self.bd.column(j).as_slice(), next);
            }
        }
    }

    pub fn output_into(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (j, xj) in x.iter().enumerate() {
            if *xj != 0.0 {
                axpy(*xj, self.c.column(j).as_slice(), y);
            }
        }
    }
}

#[inline]
fn axpy(alpha: f64, col: &[f64], out: &mut [f64]) {
    for (o, c) in out.iter_mut().zip(col) {
        *o += alpha * c;
    }
}

/// Zero-order-hold sampling through the exponential of the augmented matrix
/// `[[A, B], [0, 0]] dt`, whose top blocks are `Ad` and `Bd`.
pub fn discretize_zoh(rom: &ContinuousRom, dt: f64) -> Result<DiscreteRom> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if rom.a.iter().chain(rom.b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("continuous model has non-finite entries".into()));
    }
    if !rom.is_hurwitz() {
        return Err(Error::Unstable(format!(
            "spectral abscissa {} >= 0",
            rom.spectral_abscissa()
        )));
    }
    let n = rom.n_states();
    let m = rom.b.ncols();
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&rom.a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(&rom.b * dt));
    let e = aug.exp();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential produced non-finite entries".into()));
    }
    let out = DiscreteRom {
        ad: e.view((0, 0), (n, n)).into_owned(),
        bd: e.view((0, n), (n, m)).into_owned(),
        c: rom.c.clone(),
        dt,
    };
    let rho = out.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::Unstable(format!("spectral radius {rho} >= 1")));
    }
    Ok(out)
}

/// Row-major time series: `len` rows of `dim` values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Series {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, len: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * len),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Self {
        let mut out = Self::with_capacity(dim, rows.len());
        for r in rows {
            out.push(r.as_ref());
        }
        out
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "series row width");
        self.data.extend_from_slice(row);
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// Aligned inputs, losses, states and outputs of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub z: Series,
    pub u: Series,
    pub x: Series,
    pub y: Series,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Checks the shared-length and `y_k = C x_k` invariants.
    pub fn check(&self, rom: &DiscreteRom, tol: f64) -> Result<()> {
        let k = self.len();
        for (what, s) in [("u", &self.u), ("y", &self.y)] {
            if s.len() != k {
                return Err(Error::Dimension {
                    what: if what == "u" { "u sequence" } else { "y sequence" },
                    expected: k,
                    got: s.len(),
                });
            }
        }
        if self.z.dim > 0 && self.z.len() != k {
            return Err(Error::Dimension {
                what: "z sequence",
                expected: k,
                got: self.z.len(),
            });
        }
        let mut y = vec![0.0; rom.n_outputs()];
        for step in 0..k {
            rom.output_into(self.x.row(step), &mut y);
            let stored = self.y.row(step);
            if y.iter().zip(stored).any(|(a, b)| (a - b).abs() > tol * (1.0 + a.abs())) {
                return Err(Error::Numerical(format!("y != C x at step {step}")));
            }
        }
        Ok(())
    }
}

/// Open-loop simulation of `rom` from `x0` under `u_seq`.
pub fn simulate(rom: &DiscreteRom, u_seq: &Series, x0: &[f64]) -> Result<Trajectory> {
    check_len("initial state", rom.n_states(), x0.len())?;
    check_len("input width", rom.n_inputs(), u_seq.dim)?;
    let steps = u_seq.len();
    let mut traj = Trajectory {
        z: Series::new(0),
        u: u_seq.clone(),
        x: Series::with_capacity(rom.n_states(), steps),
        y: Series::with_capacity(rom.n_outputs(), steps),
    };
    let mut x = x0.to_vec();
    let mut next = vec![0.0; rom.n_states()];
    let mut y = vec![0.0; rom.n_outputs()];
    for u in u_seq.rows() {
        rom.output_into(&x, &mut y);
        traj.x.push(&x);
        traj.y.push(&y);
        rom.advance_into(&x, u, &mut next);
        std::mem::swap(&mut x, &mut next);
    }
    Ok(traj)
}
