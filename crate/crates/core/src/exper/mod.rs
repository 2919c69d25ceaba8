//! Simulated testbed: synthetic device, true and nominal models, dataset
//! generation, training entry points, evaluation and sensitivity analysis.

mod compare;
mod config;
mod data;
pub mod device;
mod metrics;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use compare::{compare_architectures, median, ArchResult, Architecture};
pub use config::{Dims, ExperimentConfig, NetConfig, ScenarioConfig, ScenarioKind, TrainConfig};
pub use data::{
    generate_profiles, plan_split, simulate_ground_truth, CurrentProfile, DataSplit, Record, SplitPlan, LEVELS,
    N_PROFILES, TEST_PROFILE,
};
pub use metrics::{
    evaluate, sensitivity, spearman, training_input_gradients, ChannelSensitivity, DeviceMetrics, ErrorStats,
    Histogram, MetricsReport, ModelMetrics, SensitivityReport,
};

use crate::error::{Error, Result};
use crate::io::digest_f64;
use crate::net::{default_elman_layout, default_mlp_shape, CorrectionNet, Elman, FeatureSpec, Mlp, NetKind, PcaBasis, N_PCA};
use crate::ploss::{max_gap_norm, perturb_loss_params, Envelope, LossParams, PlossInput, T_REF};
use crate::rom::{
    discretize_zoh, normalize, perturb_thermal_params, simulate, synthesize_rc_network, DiscreteRom,
    NormalizationTransform, RomFile, ThermalParams,
};
use crate::train::{bootstrap_train, closed_loop_loss, train_rnn, HybridModel, TrainData, TrainOutcome};

/// Jitter seed of the synthetic device; fixed so every experiment shares
/// the same hardware.
pub const DESIGN_SEED: u64 = 7;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_NOISY: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_DEVICE: u64 = 100;
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceLosses {
    pub device: usize,
    pub offset: f64,
    pub params: LossParams,
}

/// Output of the synthesis step: true and nominal models of the device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceBundle {
    pub config: ExperimentConfig,
    pub true_thermal: ThermalParams,
    pub nominal_thermal: ThermalParams,
    pub true_rom: RomFile,
    /// Physical nominal ROM with its normalization.
    pub nominal_rom: RomFile,
    pub nominal_losses: LossParams,
    pub devices: Vec<DeviceLosses>,
    pub transform: NormalizationTransform,
    /// Placeholder until trajectories exist.
    pub pca: PcaBasis,
    /// Largest loss-gap norm over the operating envelope, W.
    pub zeta: f64,
}

/// Builds the device bundle for `config`.
pub fn synthesize(config: &ExperimentConfig) -> Result<DeviceBundle> {
    config.validate()?;
    let true_thermal = device::synthetic_thermal(DESIGN_SEED);
    let nominal_thermal = match config.scenario.kind {
        ScenarioKind::Accurate => true_thermal.clone(),
        ScenarioKind::Noisy => {
            perturb_thermal_params(&true_thermal, config.scenario.tau, derive_seed(config.seed, STREAM_NOISY))?
        }
    };
    let dt = config.dims.dt;
    let true_rom = discretize_zoh(&synthesize_rc_network(&true_thermal)?, dt)?;
    let nominal_rom = discretize_zoh(&synthesize_rc_network(&nominal_thermal)?, dt)?;
    let nominal_losses = device::synthetic_losses(DESIGN_SEED);
    let devices = config
        .scenario
        .offsets()
        .into_iter()
        .enumerate()
        .map(|(i, offset)| {
            let params = perturb_loss_params(
                &nominal_losses,
                offset,
                config.scenario.delta,
                derive_seed(config.seed, STREAM_DEVICE + i as u64),
            )?;
            Ok(DeviceLosses {
                device: i,
                offset,
                params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let envelope = Envelope::default();
    let peak = *LEVELS.last().expect("levels");
    let u_max: Vec<f64> = nominal_losses
        .eval(&PlossInput::new(peak, T_REF + envelope.delta_t_max))
        .iter()
        .map(|v| 2.0 * v)
        .collect();
    let y_max = nominal_rom.steady_output(&u_max)?;
    let (_, transform) = normalize(&nominal_rom, &u_max, &y_max)?;
    let sets: Vec<LossParams> = devices.iter().map(|d| d.params.clone()).collect();
    let zeta = max_gap_norm(&sets, &nominal_losses, &envelope);
    Ok(DeviceBundle {
        config: config.clone(),
        true_rom: RomFile::new(&true_rom, &true_thermal.theta(), None),
        nominal_rom: RomFile::new(&nominal_rom, &nominal_thermal.theta(), Some(&transform)),
        true_thermal,
        nominal_thermal,
        nominal_losses,
        devices,
        transform,
        pca: PcaBasis::default(),
        zeta,
    })
}

/// Dataset summary written next to the bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub plan: SplitPlan,
    pub pca: PcaBasis,
    pub k_steps: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// SHA-256 over every ground-truth loss and output sample.
    pub digest: String,
}

/// Bundle plus generated trajectories and the assembled hybrid model.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub bundle: DeviceBundle,
    pub plan: SplitPlan,
    /// Indexed by trajectory id.
    pub records: Vec<Record>,
    pub model: HybridModel,
    pub data: TrainData,
}

fn ground_truth_chunk(
    rom: &DiscreteRom,
    bundle: &DeviceBundle,
    plan: &SplitPlan,
    profiles: &[CurrentProfile],
    ids: std::ops::Range<usize>,
) -> Result<Vec<Record>> {
    let fb = bundle.config.scenario.feedback_output;
    ids.map(|id| {
        let device = SplitPlan::device_of(id);
        let profile = SplitPlan::profile_of(id);
        let truth = simulate_ground_truth(rom, &bundle.devices[device].params, &profiles[profile - 1].values, fb, T_REF)?;
        Ok(Record {
            id,
            device,
            profile,
            split: plan.assignment[id],
            truth,
        })
    })
    .collect()
}

impl Experiment {
    /// Simulates every (device, profile) pair, splits them and fits the PCA
    /// basis on the nominal model's normalized training states.
    pub fn generate(bundle: DeviceBundle) -> Result<Self> {
        let config = &bundle.config;
        config.validate()?;
        let plan = plan_split(
            config.scenario.n_devices,
            config.scenario.val_fraction,
            derive_seed(config.seed, STREAM_SPLIT),
        )?;
        let profiles = generate_profiles(config.dims.k_steps, config.scenario.sine_amplitude)?;
        let true_rom = bundle.true_rom.rom()?;
        let total = plan.assignment.len();
        let workers = config.workers.min(total).max(1);
        let records = if workers == 1 {
            ground_truth_chunk(&true_rom, &bundle, &plan, &profiles, 0..total)?
        } else {
            let chunk = total.div_ceil(workers);
            let parts: Vec<Result<Vec<Record>>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let range = (w * chunk).min(total)..((w + 1) * chunk).min(total);
                        let (rom, b, pl, pr) = (&true_rom, &bundle, &plan, &profiles);
                        s.spawn(move || ground_truth_chunk(rom, b, pl, pr, range))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            let mut out = Vec::with_capacity(total);
            for p in parts {
                out.extend(p?);
            }
            out
        };

        let nominal = bundle.nominal_rom.rom()?;
        let transform = bundle.transform.clone();
        let (rom_norm, _) = normalize(&nominal, &transform.u_max, &transform.y_max)?;
        let mut model = HybridModel {
            rom: rom_norm,
            transform: transform.clone(),
            nominal: bundle.nominal_losses.clone(),
            features: FeatureSpec {
                current_scale: config.scenario.i_max,
                feedback_scale: transform.y_max[config.scenario.feedback_output],
                pca: PcaBasis::default(),
            },
        };
        let mut train = Vec::new();
        let mut val = Vec::new();
        for rec in &records {
            match rec.split {
                DataSplit::Train => train.push(rec.measured(&transform, T_REF)),
                DataSplit::Val => val.push(rec.measured(&transform, T_REF)),
                DataSplit::Test => {}
            }
        }
        // zero-correction closed loop equals an open-loop run on nominal losses
        let x0 = vec![0.0; model.rom.n_states()];
        let states = train
            .iter()
            .map(|run| simulate(&model.rom, &model.nominal_inputs(&run.z), &x0).map(|t| t.x))
            .collect::<Result<Vec<_>>>()?;
        model.features.pca = PcaBasis::fit(states.iter(), N_PCA)?;
        Ok(Self {
            bundle,
            plan,
            records,
            model,
            data: TrainData { train, val },
        })
    }

    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        Self::generate(synthesize(config)?)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.bundle.config
    }

    pub fn manifest(&self) -> DataManifest {
        let digest = digest_f64(
            self.records
                .iter()
                .flat_map(|r| r.truth.u.data.iter().chain(&r.truth.y.data)),
        );
        DataManifest {
            plan: self.plan.clone(),
            pca: self.model.features.pca.clone(),
            k_steps: self.config().dims.k_steps,
            train: self.plan.ids(DataSplit::Train),
            val: self.plan.ids(DataSplit::Val),
            test: self.plan.ids(DataSplit::Test),
            digest,
        }
    }

    pub fn test_records(&self) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == DataSplit::Test).collect()
    }

    pub fn true_rom(&self) -> Result<DiscreteRom> {
        self.bundle.true_rom.rom()
    }

    /// Freshly initialized corrector for `net`, seeded from `train_seed`.
    pub fn init_net(&self, net: &NetConfig, train_seed: u64) -> Result<CorrectionNet> {
        let seed = derive_seed(train_seed, STREAM_INIT);
        Ok(match net.kind {
            NetKind::Fnn => CorrectionNet::Mlp(Mlp::seeded(default_mlp_shape(), seed)),
            NetKind::Rnn => CorrectionNet::Elman(Elman::seeded(default_elman_layout(net.head.clone())?, seed)),
        })
    }

    /// Trains the corrector described by `net` with `train`.
    pub fn train(&self, net: &NetConfig, train: &TrainConfig, train_seed: u64) -> Result<TrainOutcome> {
        let mut cfg = self.config().clone();
        cfg.net = net.clone();
        cfg.train = train.clone();
        cfg.train_seed = train_seed;
        cfg.validate()?;
        let mut hyper = cfg.hyperparams(self.bundle.zeta);
        hyper.seed = derive_seed(train_seed, STREAM_TRAIN);
        let init = self.init_net(net, train_seed)?;
        match net.kind {
            NetKind::Fnn => bootstrap_train(&self.model, &self.data, init, &hyper),
            NetKind::Rnn => train_rnn(&self.model, &self.data, init, &hyper),
        }
    }

    /// Training run with the bundle's own network and training settings.
    pub fn train_default(&self) -> Result<TrainOutcome> {
        let c = self.config();
        self.train(&c.net, &c.train, c.train_seed)
    }

    /// Closed-loop validation loss of `net` (comparable across architectures).
    pub fn closed_loop_val(&self, net: &CorrectionNet) -> Result<f64> {
        let hyper = self.config().hyperparams(self.bundle.zeta);
        Ok(closed_loop_loss(&self.model, net, &self.data.val, &hyper.weights)?.total)
    }

    pub fn evaluate(&self, net: &CorrectionNet) -> Result<(MetricsReport, Vec<Histogram>)> {
        evaluate(&self.model, net, &self.test_records(), T_REF)
    }

    pub fn sensitivity(&self, net: &CorrectionNet) -> Result<SensitivityReport> {
        let hyper = self.config().hyperparams(self.bundle.zeta);
        sensitivity(&self.model, net, &self.data.train, &self.test_records(), &hyper, T_REF)
    }

    /// Normalized true loss gap of record `id`, step by step: the correction
    /// a perfect corrector would emit.
    pub fn oracle_corrections(&self, id: usize) -> Result<crate::rom::Series> {
        let rec = self
            .records
            .get(id)
            .ok_or_else(|| Error::Config(format!("no trajectory {id}")))?;
        let truth = &self.bundle.devices[rec.device].params;
        let m = self.model.rom.n_inputs();
        let mut out = crate::rom::Series::with_capacity(m, rec.truth.len());
        for row in rec.truth.z.rows() {
            let z = PlossInput::new(row[0], row[1]);
            let gap = crate::ploss::true_loss_gap(truth, &self.model.nominal, &z);
            out.push(&self.model.transform.normalize_u(&gap));
        }
        Ok(out)
    }
}

/// Small experiment shared by unit tests across modules.
#[cfg(test)]
pub(crate) fn small_experiment(kind: ScenarioKind) -> Experiment {
    let mut c = ExperimentConfig::default();
    c.dims.k_steps = 240;
    c.scenario.kind = kind;
    c.scenario.n_devices = 3;
    c.train.epochs = 4;
    c.train.refresh_every = 2;
    c.train.sample_stride = 20;
    c.train.batch_size = 32;
    c.train.n_seq = 10;
    c.train.window_stride = 60;
    Experiment::build(&c).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_mlp;
    use crate::train::{simulate_closed_loop, NetCorrector, OracleCorrector, ZeroCorrector};

    #[test]
    fn accurate_scenario_shares_the_true_rom() {
        let exp = small_experiment(ScenarioKind::Accurate);
        let (t, n) = (exp.bundle.true_rom.rom().unwrap(), exp.bundle.nominal_rom.rom().unwrap());
        assert_eq!(t.ad, n.ad);
        assert_eq!(t.bd, n.bd);
        assert_eq!(t.c, n.c);
        let noisy = small_experiment(ScenarioKind::Noisy);
        assert_ne!(noisy.bundle.true_rom.rom().unwrap().ad, noisy.bundle.nominal_rom.rom().unwrap().ad);
    }

    #[test]
    fn noisy_with_zero_tau_is_exact() {
        let mut c = small_experiment(ScenarioKind::Noisy).bundle.config;
        c.scenario.tau = 0.0;
        let b = synthesize(&c).unwrap();
        assert_eq!(b.true_thermal, b.nominal_thermal);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let exp = small_experiment(ScenarioKind::Accurate);
        let again = synthesize(&exp.bundle.config).unwrap();
        assert_eq!(
            crate::io::to_json_string(&exp.bundle).unwrap(),
            crate::io::to_json_string(&again).unwrap()
        );
        assert_eq!(exp.bundle.devices.len(), 3);
        assert_eq!(ExperimentConfig::default().scenario.offsets().len(), 10);
    }

    #[test]
    fn zero_net_reproduces_nominal_cascade() {
        let exp = small_experiment(ScenarioKind::Accurate);
        let run = &exp.data.train[0];
        let x0 = vec![0.0; exp.model.rom.n_states()];
        let mut net = init_mlp(0);
        net.params.fill(0.0);
        let net = CorrectionNet::Mlp(net);
        let hybrid = simulate_closed_loop(&exp.model, &mut NetCorrector::new(&net), &run.z, &x0).unwrap();
        let plain = simulate(&exp.model.rom, &exp.model.nominal_inputs(&run.z), &x0).unwrap();
        assert_eq!(hybrid.traj.y, plain.y);
        assert_eq!(hybrid.traj.x, plain.x);
        let zero = simulate_closed_loop(&exp.model, &mut ZeroCorrector, &run.z, &x0).unwrap();
        assert_eq!(zero.traj.y, plain.y);
    }

    #[test]
    fn bounded_corrections_give_bounded_outputs() {
        let exp = small_experiment(ScenarioKind::Accurate);
        let gain = exp.model.rom.dc_gain().unwrap();
        let c_gain = &exp.model.rom.c * gain;
        let x0 = vec![0.0; exp.model.rom.n_states()];
        for seed in 0..3 {
            let net = CorrectionNet::Mlp(init_mlp(seed));
            for run in &exp.data.train {
                let nominal = exp.model.nominal_inputs(&run.z);
                let u_peak = nominal.data.iter().fold(0.0_f64, |a, v| a.max(v.abs())) + 1.0;
                let cl = simulate_closed_loop(&exp.model, &mut NetCorrector::new(&net), &run.z, &x0).unwrap();
                assert!(cl.correction.data.iter().all(|v| v.abs() < 1.0));
                for row in cl.traj.y.rows() {
                    for (i, y) in row.iter().enumerate() {
                        let bound: f64 = c_gain.row(i).iter().map(|g| g.abs()).sum::<f64>() * u_peak;
                        assert!(y.abs() <= bound + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_correction_reproduces_truth() {
        let exp = small_experiment(ScenarioKind::Accurate);
        let x0 = vec![0.0; exp.model.rom.n_states()];
        for rec in exp.records.iter().take(4) {
            let run = rec.measured(&exp.model.transform, T_REF);
            let mut oracle = OracleCorrector {
                corrections: exp.oracle_corrections(rec.id).unwrap(),
            };
            let cl = simulate_closed_loop(&exp.model, &mut oracle, &run.z, &x0).unwrap();
            for (a, b) in cl.traj.y.data.iter().zip(&run.y.data) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oracle_metrics_vanish_and_evaluation_repeats() {
        let exp = small_experiment(ScenarioKind::Accurate);
        let test = exp.test_records();
        let ((t, l), count) = oracle_errors(&exp, &test);
        assert!(count > 0);
        assert!(t < 1e-9 && l < 1e-9, "{t} {l}");
        let net = CorrectionNet::Mlp(init_mlp(1));
        let (a, _) = exp.evaluate(&net).unwrap();
        let (b, _) = exp.evaluate(&net).unwrap();
        assert_eq!(a, b);
    }

    /// Mean absolute temperature and loss error of the oracle-corrected model.
    fn oracle_errors(exp: &Experiment, test: &[&Record]) -> ((f64, f64), usize) {
        let x0 = vec![0.0; exp.model.rom.n_states()];
        let (mut t_err, mut l_err, mut count) = (0.0, 0.0, 0);
        for rec in test {
            let run = rec.measured(&exp.model.transform, T_REF);
            let mut oracle = OracleCorrector {
                corrections: exp.oracle_corrections(rec.id).unwrap(),
            };
            let cl = simulate_closed_loop(&exp.model, &mut oracle, &run.z, &x0).unwrap();
            for k in 0..rec.truth.len() {
                let y = exp.model.transform.denormalize_y(cl.traj.y.row(k));
                t_err += y.iter().zip(rec.truth.y.row(k)).map(|(a, b)| (a - b).abs()).sum::<f64>();
                l_err += cl.traj.u.row(k).iter().zip(rec.truth.u.row(k)).map(|(a, b)| (a - b).abs()).sum::<f64>();
                count += 1;
            }
        }
        let n = count as f64;
        ((t_err / n, l_err / n), count)
    }
}
