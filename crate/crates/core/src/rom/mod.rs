//! Linear thermal reduced-order model: construction from an RC network,
//! zero-order-hold discretization, simulation and normalization.

mod discrete;
mod file;
mod network;
mod normalize;

pub use discrete::{discretize_zoh, simulate, ContinuousRom, DiscreteRom, Series, Trajectory};
pub use file::RomFile;
pub use network::{perturb_thermal_params, random_thermal_params, synthesize_rc_network, Link, ThermalParams};
pub use normalize::{normalize, NormalizationTransform};
