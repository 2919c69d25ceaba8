use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ContinuousRom;
use crate::error::{Error, Result};

/// Fraction of the nominal magnitude below which a perturbed parameter is clamped.
const CLAMP_FRACTION: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    /// W/K
    pub conductance: f64,
}

/// Physical parameters of a lumped RC thermal network.
///
/// Temperatures are deviations from ambient, so every node is tied to the
/// ambient reference through `ambient` (possibly zero) and to its neighbours
/// through `links`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    /// J/K, one per node.
    pub capacitances: Vec<f64>,
    pub links: Vec<Link>,
    /// W/K, one per node.
    pub ambient: Vec<f64>,
    /// Node receiving each loss channel.
    pub injection: Vec<usize>,
    /// Node observed by each output.
    pub sensors: Vec<usize>,
}

impl ThermalParams {
    pub fn n_nodes(&self) -> usize {
        self.capacitances.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.injection.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.sensors.len()
    }

    /// Flattened physical parameter vector: capacitances, link conductances,
    /// ambient conductances.
    pub fn theta(&self) -> Vec<f64> {
        let mut out = self.capacitances.clone();
        out.extend(self.links.iter().map(|l| l.conductance));
        out.extend_from_slice(&self.ambient);
        out
    }

    /// Inverse of [`ThermalParams::theta`] keeping this topology.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let n = self.n_nodes();
        let l = self.links.len();
        crate::error::check_len("theta", 2 * n + l, theta.len())?;
        let mut out = self.clone();
        out.capacitances.copy_from_slice(&theta[..n]);
        for (link, g) in out.links.iter_mut().zip(&theta[n..n + l]) {
            link.conductance = *g;
        }
        out.ambient.copy_from_slice(&theta[n + l..]);
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(Error::InvalidThermalParams("network has no nodes".into()));
        }
        if self.ambient.len() != n {
            return Err(Error::Dimension {
                what: "ambient conductances",
                expected: n,
                got: self.ambient.len(),
            });
        }
        if let Some(i) = self
            .capacitances
            .iter()
            .position(|c| !(c.is_finite() && *c > 0.0))
        {
            return Err(Error::InvalidThermalParams(format!(
                "capacitance of node {i} must be positive and finite"
            )));
        }
        if let Some(i) = self
            .ambient
            .iter()
            .position(|g| !(g.is_finite() && *g >= 0.0))
        {
            return Err(Error::InvalidThermalParams(format!(
                "ambient conductance of node {i} must be nonnegative and finite"
            )));
        }
        for (k, link) in self.links.iter().enumerate() {
            if link.a >= n || link.b >= n || link.a == link.b {
                return Err(Error::InvalidThermalParams(format!(
                    "link {k} joins invalid nodes ({}, {})",
                    link.a, link.b
                )));
            }
            if !(link.conductance.is_finite() && link.conductance >= 0.0) {
                return Err(Error::InvalidThermalParams(format!(
                    "link {k} conductance must be nonnegative and finite"
                )));
            }
        }
        if let Some(j) = self.injection.iter().position(|&node| node >= n) {
            return Err(Error::InvalidThermalParams(format!(
                "loss channel {j} injects into missing node"
            )));
        }
        if let Some(i) = self.sensors.iter().position(|&node| node >= n) {
            return Err(Error::InvalidThermalParams(format!(
                "output {i} observes missing node"
            )));
        }
        self.check_grounded()
    }

    fn check_grounded(&self) -> Result<()> {
        let n = self.n_nodes();
        let mut adjacency = vec![Vec::new(); n];
        for link in self.links.iter().filter(|l| l.conductance > 0.0) {
            adjacency[link.a].push(link.b);
            adjacency[link.b].push(link.a);
        }
        let mut reached = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| self.ambient[i] > 0.0).collect();
        for &i in &queue {
            reached[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match reached.iter().position(|r| !r) {
            Some(node) => Err(Error::Ungrounded { node }),
            None => Ok(()),
        }
    }
}

/// Random connected, grounded network of `n` nodes with `m` injections and
/// `p` sensors; used by property tests.
pub fn random_thermal_params(n: usize, m: usize, p: usize, seed: u64) -> ThermalParams {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacitances = (0..n).map(|_| 10f64.powf(rng.random_range(-0.5..2.0))).collect();
    let mut links = Vec::new();
    // spanning tree first, then a few shortcuts
    for b in 1..n {
        let a = rng.random_range(0..b);
        links.push(Link {
            a,
            b,
            conductance: rng.random_range(0.05..5.0),
        });
    }
    for _ in 0..n / 2 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            links.push(Link {
                a,
                b,
                conductance: rng.random_range(0.05..5.0),
            });
        }
    }
    let mut ambient = vec![0.0; n];
    let grounded = rng.random_range(0..n);
    ambient[grounded] = rng.random_range(0.1..5.0);
    for g in ambient.iter_mut() {
        if rng.random_bool(0.2) {
            *g = rng.random_range(0.1..5.0);
        }
    }
    ThermalParams {
        capacitances,
        links,
        ambient,
        injection: (0..m).map(|_| rng.random_range(0..n)).collect(),
        sensors: (0..p).map(|_| rng.random_range(0..n)).collect(),
    }
}

/// Assembles `A = -diag(1/C) (L + diag(g_amb))`, the injection matrix and the
/// sensor selector from an RC network.
pub fn synthesize_rc_network(params: &ThermalParams) -> Result<ContinuousRom> {
    params.validate()?;
    let n = params.n_nodes();
    let m = params.n_inputs();
    let p = params.n_outputs();

    let mut conductance = DMatrix::<f64>::zeros(n, n);
    for link in &params.links {
        let g = link.conductance;
        conductance[(link.a, link.a)] += g;
        conductance[(link.b, link.b)] += g;
        conductance[(link.a, link.b)] -= g;
        conductance[(link.b, link.a)] -= g;
    }
    for (i, g) in params.ambient.iter().enumerate() {
        conductance[(i, i)] += g;
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let inv_c = 1.0 / params.capacitances[i];
        for j in 0..n {
            let v = -inv_c * conductance[(i, j)];
            // keep structural zeros as +0.0
            a[(i, j)] = if v == 0.0 { 0.0 } else { v };
        }
    }
    let mut b = DMatrix::<f64>::zeros(n, m);
    for (j, &node) in params.injection.iter().enumerate() {
        b[(node, j)] = 1.0 / params.capacitances[node];
    }
    let mut c = DMatrix::<f64>::zeros(p, n);
    for (i, &node) in params.sensors.iter().enumerate() {
        c[(i, node)] = 1.0;
    }
    Ok(ContinuousRom { a, b, c })
}

/// Gaussian perturbation `θ̃_i = θ*_i + ν_i`, `ν_i ~ N(0, (tau |θ*_i|)^2)`.
///
/// Draws below `1e-6 |θ*_i|` are clamped so the result stays a valid network.
pub fn perturb_thermal_params(params: &ThermalParams, tau: f64, seed: u64) -> Result<ThermalParams> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Config(format!("tau must be >= 0, got {tau}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = params
        .theta()
        .into_iter()
        .map(|nominal| {
            let std = tau * nominal.abs();
            if std == 0.0 {
                return nominal;
            }
            let nu = Normal::new(0.0, std)
                .expect("finite positive std")
                .sample(&mut rng);
            let floor = CLAMP_FRACTION * nominal.abs();
            (nominal + nu).max(floor)
        })
        .collect();
    let out = params.with_theta(&theta)?;
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> ThermalParams {
        ThermalParams {
            capacitances: vec![1.0, 1.0],
            links: vec![Link {
                a: 0,
                b: 1,
                conductance: 1.0,
            }],
            ambient: vec![1.0, 0.0],
            injection: vec![1],
            sensors: vec![0],
        }
    }

    #[test]
    fn single_node_closed_form() {
        let params = ThermalParams {
            capacitances: vec![1.0],
            links: vec![],
            ambient: vec![1.0],
            injection: vec![0],
            sensors: vec![0],
        };
        let rom = synthesize_rc_network(&params).unwrap();
        assert_eq!(rom.a[(0, 0)], -1.0);
        assert_eq!(rom.b[(0, 0)], 1.0);
        assert_eq!(rom.c[(0, 0)], 1.0);
    }

    #[test]
    fn two_node_laplacian() {
        let rom = synthesize_rc_network(&two_node()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -1.0]);
        assert_eq!(rom.a, expected);
        assert_eq!(rom.b, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        assert!(rom.is_metzler());
        assert!(rom.is_hurwitz());
    }

    #[test]
    fn ungrounded_rejected() {
        let mut params = two_node();
        params.ambient = vec![0.0, 0.0];
        assert!(matches!(
            synthesize_rc_network(&params),
            Err(Error::Ungrounded { .. })
        ));
        // a zero-conductance link does not connect
        let mut params = two_node();
        params.links[0].conductance = 0.0;
        assert!(matches!(
            synthesize_rc_network(&params),
            Err(Error::Ungrounded { node: 1 })
        ));
    }

    #[test]
    fn invalid_indices_rejected() {
        let mut params = two_node();
        params.sensors = vec![5];
        assert!(matches!(
            params.validate(),
            Err(Error::InvalidThermalParams(_))
        ));
        let mut params = two_node();
        params.capacitances[1] = 0.0;
        assert!(params.validate().is_err());
    }

    #[test]
    fn zero_tau_is_identity() {
        let params = two_node();
        assert_eq!(perturb_thermal_params(&params, 0.0, 9).unwrap(), params);
    }

    #[test]
    fn perturbation_is_seeded() {
        let params = two_node();
        let a = perturb_thermal_params(&params, 0.05, 3).unwrap();
        let b = perturb_thermal_params(&params, 0.05, 3).unwrap();
        let c = perturb_thermal_params(&params, 0.05, 4).unwrap();
        let bits = |p: &ThermalParams| p.theta().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
        // zero-valued ambient conductance stays zero
        assert_eq!(a.ambient[1], 0.0);
    }

    #[test]
    fn perturbation_std_monte_carlo() {
        let params = ThermalParams {
            capacitances: vec![40.0],
            links: vec![],
            ambient: vec![2.0],
            injection: vec![0],
            sensors: vec![0],
        };
        let samples: Vec<f64> = (0..10_000)
            .map(|s| perturb_thermal_params(&params, 0.05, s).unwrap().capacitances[0])
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        let target = 0.05 * 40.0;
        assert!((var.sqrt() - target).abs() < 0.1 * target, "std {}", var.sqrt());
    }
}
