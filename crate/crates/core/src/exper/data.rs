//! Current profiles, ground-truth simulation and the train/val/test split.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::ploss::{LossParams, PlossInput};
use crate::rom::{DiscreteRom, NormalizationTransform, Series, Trajectory};
use crate::train::MeasuredRun;

/// Constant current levels of profiles 1 to 5, A.
pub const LEVELS: [f64; 5] = [200.0, 400.0, 480.0, 600.0, 800.0];
pub const N_PROFILES: usize = 6;
/// Profile reserved for testing.
pub const TEST_PROFILE: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentProfile {
    /// 1 to 6.
    pub id: usize,
    /// A, one value per step.
    pub values: Vec<f64>,
}

/// Profiles 1 to 5 hold a constant level; profile 6 is
/// `600 + amplitude · sin(k / 10)`.
pub fn generate_profiles(k_steps: usize, sine_amplitude: f64) -> Result<Vec<CurrentProfile>> {
    if k_steps == 0 {
        return Err(Error::Config("k_steps must be positive".into()));
    }
    let mut out: Vec<CurrentProfile> = LEVELS
        .iter()
        .enumerate()
        .map(|(i, &level)| CurrentProfile {
            id: i + 1,
            values: vec![level; k_steps],
        })
        .collect();
    out.push(CurrentProfile {
        id: TEST_PROFILE,
        values: (0..k_steps)
            .map(|k| 600.0 + sine_amplitude * (k as f64 / 10.0).sin())
            .collect(),
    });
    Ok(out)
}

/// Simulates the true device from ambient equilibrium. The loss model reads
/// the feedback sensor's current temperature before each state update.
/// `z` holds `[I, T_fb]`, `u` the true losses in W, `x`/`y` deviations in K.
pub fn simulate_ground_truth(
    rom: &DiscreteRom,
    losses: &LossParams,
    current: &[f64],
    feedback_output: usize,
    reference_temperature: f64,
) -> Result<Trajectory> {
    let (n, m, p) = (rom.n_states(), rom.n_inputs(), rom.n_outputs());
    check_len("loss channels", m, losses.n_channels())?;
    if feedback_output >= p {
        return Err(Error::Config(format!("feedback output {feedback_output} out of range")));
    }
    let len = current.len();
    let mut traj = Trajectory {
        z: Series::with_capacity(2, len),
        u: Series::with_capacity(m, len),
        x: Series::with_capacity(n, len),
        y: Series::with_capacity(p, len),
    };
    let (mut x, mut next) = (vec![0.0; n], vec![0.0; n]);
    let (mut y, mut u) = (vec![0.0; p], vec![0.0; m]);
    for &i in current {
        rom.output_into(&x, &mut y);
        let t_fb = reference_temperature + y[feedback_output];
        let z = PlossInput {
            current: i,
            feedback_temperature: t_fb,
            reference_temperature,
        };
        losses.eval_into(&z, &mut u);
        traj.z.push(&[i, t_fb]);
        traj.u.push(&u);
        traj.x.push(&x);
        traj.y.push(&y);
        rom.advance_into(&x, &u, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("ground-truth state became non-finite".into()));
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSplit {
    Train,
    Val,
    Test,
}

/// Split membership of trajectory `(device, profile)`; ids are
/// `device * N_PROFILES + (profile - 1)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_devices: usize,
    pub unseen_device: usize,
    pub assignment: Vec<DataSplit>,
}

impl SplitPlan {
    pub fn id(device: usize, profile: usize) -> usize {
        device * N_PROFILES + (profile - 1)
    }

    pub fn device_of(id: usize) -> usize {
        id / N_PROFILES
    }

    pub fn profile_of(id: usize) -> usize {
        id % N_PROFILES + 1
    }

    pub fn ids(&self, split: DataSplit) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == split).collect()
    }

    /// Disjointness, the test-only profile and the test-only device.
    pub fn audit(&self) -> Result<()> {
        for (id, s) in self.assignment.iter().enumerate() {
            let device = Self::device_of(id);
            let profile = Self::profile_of(id);
            if (profile == TEST_PROFILE || device == self.unseen_device) && *s != DataSplit::Test {
                return Err(Error::Config(format!("trajectory {id} must be test-only")));
            }
        }
        Ok(())
    }
}

/// Test: every trajectory of one unseen device plus profile 6 of all the
/// others. Validation: `val_fraction` of all trajectories drawn from the rest.
pub fn plan_split(n_devices: usize, val_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if n_devices < 3 {
        return Err(Error::Config(format!(
            "need at least 3 devices to hold one out without using an extreme one, got {n_devices}"
        )));
    }
    let total = n_devices * N_PROFILES;
    let n_val = (val_fraction * total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unseen_device = rng.random_range(1..n_devices - 1);
    let mut assignment = vec![DataSplit::Train; total];
    let mut pool = Vec::new();
    for (id, slot) in assignment.iter_mut().enumerate() {
        if SplitPlan::device_of(id) == unseen_device || SplitPlan::profile_of(id) == TEST_PROFILE {
            *slot = DataSplit::Test;
        } else {
            pool.push(id);
        }
    }
    if n_val == 0 || n_val >= pool.len() {
        return Err(Error::Config(format!(
            "cannot draw {n_val} validation trajectories from {} candidates",
            pool.len()
        )));
    }
    pool.shuffle(&mut rng);
    for &id in &pool[..n_val] {
        assignment[id] = DataSplit::Val;
    }
    let plan = SplitPlan {
        n_devices,
        unseen_device,
        assignment,
    };
    plan.audit()?;
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: usize,
    pub device: usize,
    pub profile: usize,
    pub split: DataSplit,
    /// Physical ground truth.
    pub truth: Trajectory,
}

impl Record {
    /// What the hybrid model may see: current, measured feedback temperature
    /// and the normalized measured outputs.
    pub fn measured(&self, transform: &NormalizationTransform, reference_temperature: f64) -> MeasuredRun {
        let z = self
            .truth
            .z
            .rows()
            .map(|r| PlossInput {
                current: r[0],
                feedback_temperature: r[1],
                reference_temperature,
            })
            .collect();
        let mut y = Series::with_capacity(self.truth.y.dim, self.truth.y.len());
        for row in self.truth.y.rows() {
            y.push(&transform.normalize_y(row));
        }
        MeasuredRun { id: self.id, z, y }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn profile_values() {
        let p = generate_profiles(2000, 1.0).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p[2].values.iter().all(|v| *v == 480.0));
        assert_eq!(p[5].values[0], 600.0);
        // sin(5π) vanishes up to rounding of the argument
        let k = 50.0 * std::f64::consts::PI;
        assert!((600.0 + (k / 10.0).sin() - 600.0).abs() < 1e-12);
        assert!(generate_profiles(0, 1.0).is_err());
    }

    #[test]
    fn split_constraints() {
        for seed in 0..20 {
            let plan = plan_split(10, 0.1, seed).unwrap();
            assert_eq!(plan.ids(DataSplit::Test).len(), 15);
            assert_eq!(plan.ids(DataSplit::Val).len(), 6);
            assert_eq!(plan.ids(DataSplit::Train).len(), 39);
            assert!(plan.unseen_device > 0 && plan.unseen_device < 9);
            for id in plan.ids(DataSplit::Train).into_iter().chain(plan.ids(DataSplit::Val)) {
                assert_ne!(SplitPlan::profile_of(id), TEST_PROFILE);
                assert_ne!(SplitPlan::device_of(id), plan.unseen_device);
            }
        }
        assert!(plan_split(2, 0.1, 0).is_err());
        assert!(plan_split(3, 0.9, 0).is_err());
    }

    #[test]
    fn ground_truth_feedback_and_zero_current() {
        let rom = DiscreteRom {
            ad: DMatrix::from_element(1, 1, 0.5),
            bd: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
            dt: 1.0,
        };
        let losses = LossParams {
            r: vec![1e-4],
            k: vec![0.005],
            s: vec![0.0],
        };
        let t = simulate_ground_truth(&rom, &losses, &[0.0; 5], 0, 298.15).unwrap();
        assert!(t.u.data.iter().all(|v| *v == 0.0));
        let t = simulate_ground_truth(&rom, &losses, &[100.0; 3], 0, 298.15).unwrap();
        // step 1 sees y = 1 K of heating
        assert_eq!(t.u.row(0)[0], 1.0);
        assert!((t.u.row(1)[0] - 1.005).abs() < 1e-15);
        assert_eq!(t.z.row(1)[1], 299.15);
    }
}
