use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::device;
use crate::error::{Error, Result};
use crate::net::NetKind;
use crate::train::{Hyperparams, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// The hybrid model's thermal parameters equal the true ones.
    Accurate,
    /// Thermal parameters perturbed with relative std `tau`.
    Noisy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// s
    pub dt: f64,
    pub k_steps: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            n: device::N_NODES,
            m: device::N_CHANNELS,
            p: device::N_SENSORS,
            dt: 1.0,
            k_steps: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub tau: f64,
    pub n_devices: usize,
    /// Mean relative parameter error of the first and last device; the
    /// others are evenly spaced in between.
    pub offset_min: f64,
    pub offset_max: f64,
    /// Half-width of the per-parameter uniform error.
    pub delta: f64,
    /// A, amplitude of the test profile's ripple.
    pub sine_amplitude: f64,
    /// A, current normalization.
    pub i_max: f64,
    pub feedback_output: usize,
    pub val_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Accurate,
            tau: 0.05,
            n_devices: 10,
            offset_min: -0.5,
            offset_max: 0.5,
            delta: 0.1,
            sine_amplitude: 1.0,
            i_max: 1000.0,
            feedback_output: 0,
            val_fraction: 0.1,
        }
    }
}

impl ScenarioConfig {
    pub fn offsets(&self) -> Vec<f64> {
        let n = self.n_devices;
        if n == 1 {
            return vec![0.5 * (self.offset_min + self.offset_max)];
        }
        (0..n)
            .map(|i| self.offset_min + (self.offset_max - self.offset_min) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub kind: NetKind,
    pub bootstrap: bool,
    /// Hidden sizes of the optional recurrent output head.
    pub head: Option<Vec<usize>>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            kind: NetKind::Fnn,
            bootstrap: true,
            head: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub refresh_every: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub n_seq: usize,
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub buffer_factor: usize,
    pub sample_stride: usize,
    pub window_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        Self {
            epochs: h.epochs,
            refresh_every: h.refresh_every,
            lr: h.lr,
            lr_decay: h.lr_decay,
            n_seq: h.n_seq,
            alpha: h.weights.alpha,
            beta: h.weights.beta,
            batch_size: h.batch_size,
            buffer_factor: h.buffer_factor,
            sample_stride: h.sample_stride,
            window_stride: h.window_stride,
        }
    }
}

/// Everything one experiment depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: Dims,
    pub scenario: ScenarioConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Seeds the device, scenario and split generation.
    pub seed: u64,
    /// Seeds initialization and training.
    pub train_seed: u64,
    pub output_dir: PathBuf,
    /// Simulation workers; 1 keeps everything single-threaded.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: Dims::default(),
            scenario: ScenarioConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            train_seed: 0,
            output_dir: PathBuf::from("out"),
            workers: 1,
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {msg}"))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        device::check_dimensions(d.n, d.m, d.p)?;
        if !(d.dt.is_finite() && d.dt > 0.0) {
            return Err(field("dims.dt", "must be positive"));
        }
        if d.k_steps < 2 {
            return Err(field("dims.k_steps", "must be at least 2"));
        }
        let s = &self.scenario;
        if !(s.tau.is_finite() && s.tau >= 0.0) {
            return Err(field("scenario.tau", "must be >= 0"));
        }
        if s.n_devices < 3 {
            return Err(field("scenario.n_devices", "must be at least 3"));
        }
        if !(s.offset_min.is_finite() && s.offset_max.is_finite() && s.offset_min <= s.offset_max) {
            return Err(field("scenario.offset_min/offset_max", "must be finite and ordered"));
        }
        if s.offset_min - s.delta <= -1.0 {
            return Err(field("scenario.offset_min", "offset - delta must stay above -1 so losses keep their sign"));
        }
        if !(s.delta.is_finite() && s.delta >= 0.0) {
            return Err(field("scenario.delta", "must be >= 0"));
        }
        if !s.sine_amplitude.is_finite() {
            return Err(field("scenario.sine_amplitude", "must be finite"));
        }
        if !(s.i_max.is_finite() && s.i_max > 0.0) {
            return Err(field("scenario.i_max", "must be positive"));
        }
        if s.feedback_output >= d.p {
            return Err(field("scenario.feedback_output", format!("must be < {}", d.p)));
        }
        if !(s.val_fraction > 0.0 && s.val_fraction < 1.0) {
            return Err(field("scenario.val_fraction", "must lie in (0, 1)"));
        }
        if self.workers == 0 {
            return Err(field("workers", "must be >= 1"));
        }
        if let Some(h) = &self.net.head {
            if h.iter().any(|v| *v == 0) {
                return Err(field("net.head", "hidden sizes must be positive"));
            }
        }
        self.hyperparams(1.0)
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))
    }

    pub fn hyperparams(&self, zeta: f64) -> Hyperparams {
        let t = &self.train;
        Hyperparams {
            epochs: t.epochs,
            refresh_every: t.refresh_every,
            bootstrap: self.net.bootstrap && self.net.kind == NetKind::Fnn,
            lr: t.lr,
            lr_decay: t.lr_decay,
            batch_size: t.batch_size,
            buffer_factor: t.buffer_factor,
            sample_stride: t.sample_stride,
            n_seq: t.n_seq,
            window_stride: t.window_stride,
            weights: LossWeights {
                mse: 1.0,
                alpha: t.alpha,
                beta: t.beta,
                zeta,
            },
            seed: self.train_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_values() {
        let c = ExperimentConfig::default();
        assert_eq!(c.train.epochs, 6000);
        assert_eq!(c.train.refresh_every, 60);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.train.lr_decay, 0.9999);
        assert_eq!(c.train.n_seq, 50);
        assert_eq!(c.scenario.tau, 0.05);
        assert_eq!(c.scenario.n_devices, 10);
        c.validate().unwrap();
    }

    #[test]
    fn offsets_evenly_spaced() {
        let o = ScenarioConfig::default().offsets();
        assert_eq!(o.len(), 10);
        assert_eq!(o[0], -0.5);
        assert_eq!(o[9], 0.5);
        assert!((o[1] - o[0] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn field_level_errors() {
        let mut c = ExperimentConfig::default();
        c.scenario.tau = -1.0;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("scenario.tau"), "{e}");
        let mut c = ExperimentConfig::default();
        c.dims.p = 3;
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
        let partial: ExperimentConfig = serde_json::from_str(r#"{"train": {"epochs": 10}}"#).unwrap();
        assert_eq!(partial.train.epochs, 10);
        assert_eq!(partial.train.lr, 0.01);
    }
}
