//! Synthetic 24-node power module used as the simulated testbed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ploss::LossParams;
use crate::rom::{Link, ThermalParams};

pub const MODULES: usize = 4;
pub const CHIPS_PER_MODULE: usize = 4;
/// Chips, a substrate and a heatsink per module.
pub const NODES_PER_MODULE: usize = CHIPS_PER_MODULE + 2;
pub const N_NODES: usize = MODULES * NODES_PER_MODULE;
pub const N_CHANNELS: usize = MODULES * CHIPS_PER_MODULE;
pub const N_SENSORS: usize = 2 * MODULES;

/// Lateral conductances (W/K) tying each unsensored chip to its sensored
/// neighbour; weak links leave those channels poorly observable.
const LATERAL: [f64; 8] = [8.0, 1.0, 5.0, 2.0, 1.2, 6.0, 3.0, 0.6];

fn chip(module: usize, c: usize) -> usize {
    module * NODES_PER_MODULE + c
}

fn substrate(module: usize) -> usize {
    module * NODES_PER_MODULE + CHIPS_PER_MODULE
}

fn heatsink(module: usize) -> usize {
    module * NODES_PER_MODULE + CHIPS_PER_MODULE + 1
}

/// Thermal network of the module: chips sit on a substrate, substrates on
/// heatsinks, heatsinks are chained and cooled to ambient. Chips 0 and 2 of
/// each module carry a sensor; chips 1 and 3 reach them through a lateral link.
/// `seed` jitters every value by up to ±20 % so no two channels are identical.
pub fn synthetic_thermal(seed: u64) -> ThermalParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |v: f64| v * rng.random_range(0.8..1.2);
    let mut capacitances = vec![0.0; N_NODES];
    let mut ambient = vec![0.0; N_NODES];
    let mut links = Vec::new();
    let mut link = |a, b, g| links.push(Link { a, b, conductance: g });
    for g in 0..MODULES {
        for c in 0..CHIPS_PER_MODULE {
            capacitances[chip(g, c)] = jitter(4.0);
            link(chip(g, c), substrate(g), jitter(4.0));
        }
        link(chip(g, 0), chip(g, 1), LATERAL[2 * g]);
        link(chip(g, 2), chip(g, 3), LATERAL[2 * g + 1]);
        capacitances[substrate(g)] = jitter(40.0);
        capacitances[heatsink(g)] = jitter(400.0);
        link(substrate(g), heatsink(g), jitter(8.0));
        ambient[heatsink(g)] = jitter(4.0);
        if g + 1 < MODULES {
            link(heatsink(g), heatsink(g + 1), jitter(2.0));
        }
    }
    let injection = (0..MODULES)
        .flat_map(|g| (0..CHIPS_PER_MODULE).map(move |c| chip(g, c)))
        .collect();
    let sensors = (0..MODULES).flat_map(|g| [chip(g, 0), chip(g, 2)]).collect();
    ThermalParams {
        capacitances,
        links,
        ambient,
        injection,
        sensors,
    }
}

/// Nominal loss coefficients: about 25 W per chip at 800 A.
pub fn synthetic_losses(seed: u64) -> LossParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Vec::with_capacity(N_CHANNELS);
    let mut k = Vec::with_capacity(N_CHANNELS);
    let mut s = Vec::with_capacity(N_CHANNELS);
    for _ in 0..N_CHANNELS {
        r.push(3e-5 * rng.random_range(0.85..1.15));
        k.push(0.003 * rng.random_range(0.7..1.3));
        s.push(0.006 * rng.random_range(0.8..1.2));
    }
    LossParams { r, k, s }
}

/// Checks that requested dimensions match the synthetic design.
pub fn check_dimensions(n: usize, m: usize, p: usize) -> Result<()> {
    if (n, m, p) != (N_NODES, N_CHANNELS, N_SENSORS) {
        return Err(Error::Config(format!(
            "the synthetic device has n={N_NODES}, m={N_CHANNELS}, p={N_SENSORS}; got n={n}, m={m}, p={p}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rom::synthesize_rc_network;

    #[test]
    fn network_is_valid_and_stable() {
        let t = synthetic_thermal(0);
        t.validate().unwrap();
        let rom = synthesize_rc_network(&t).unwrap();
        assert!(rom.is_metzler() && rom.is_hurwitz());
        assert_eq!((t.n_nodes(), t.n_inputs(), t.n_outputs()), (24, 16, 8));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synthetic_thermal(3), synthetic_thermal(3));
        assert_ne!(synthetic_thermal(3), synthetic_thermal(4));
        assert_eq!(synthetic_losses(1), synthetic_losses(1));
        synthetic_losses(1).validate().unwrap();
    }

    #[test]
    fn dimension_guard() {
        check_dimensions(24, 16, 8).unwrap();
        assert!(check_dimensions(24, 16, 7).is_err());
    }
}
