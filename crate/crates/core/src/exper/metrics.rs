//! Test-split error statistics, histograms and the sensitivity analysis.

use serde::{Deserialize, Serialize};

use super::data::Record;
use crate::autodiff::{input_gradients, Batch, Cascade, CascadeRom};
use crate::error::{Error, Result};
use crate::net::CorrectionNet;
use crate::train::{
    simulate_closed_loop, step_samples, window_samples, Corrector, HybridModel, Hyperparams, LossWeights,
    MeasuredRun, NetCorrector, SequenceSample, Split, StepSample, ZeroCorrector,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl ErrorStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        }
    }
}

/// Absolute errors of one model: temperatures in K, losses in W.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub temperature: ErrorStats,
    pub loss: ErrorStats,
    /// Share of corrected loss samples below zero.
    pub negative_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceMetrics {
    pub device: usize,
    pub trajectories: usize,
    pub nominal: ModelMetrics,
    pub hybrid: ModelMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nominal: ModelMetrics,
    pub hybrid: ModelMetrics,
    /// `1 - hybrid / nominal` of the mean absolute errors.
    pub temperature_reduction: f64,
    pub loss_reduction: f64,
    pub per_device: Vec<DeviceMetrics>,
    pub test_trajectories: usize,
    pub test_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub quantity: String,
    pub model: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const HIST_BINS: usize = 50;

fn histogram(quantity: &str, model: &str, values: &[f64], top: f64) -> Histogram {
    let top = if top > 0.0 { top } else { 1.0 };
    let width = top / HIST_BINS as f64;
    let mut counts = vec![0usize; HIST_BINS];
    for v in values {
        let bin = ((v / width) as usize).min(HIST_BINS - 1);
        counts[bin] += 1;
    }
    Histogram {
        quantity: quantity.into(),
        model: model.into(),
        edges: (0..=HIST_BINS).map(|i| i as f64 * width).collect(),
        counts,
    }
}

#[derive(Default)]
struct Errors {
    temperature: Vec<f64>,
    loss: Vec<f64>,
    negative: usize,
    loss_samples: usize,
}

impl Errors {
    fn metrics(&self) -> ModelMetrics {
        ModelMetrics {
            temperature: ErrorStats::of(&self.temperature),
            loss: ErrorStats::of(&self.loss),
            negative_fraction: if self.loss_samples == 0 {
                0.0
            } else {
                self.negative as f64 / self.loss_samples as f64
            },
        }
    }
}

fn collect_errors(model: &HybridModel, corrector: &mut dyn Corrector, rec: &Record, run: &MeasuredRun, out: &mut Errors) -> Result<()> {
    let x0 = vec![0.0; model.rom.n_states()];
    let cl = simulate_closed_loop(model, corrector, &run.z, &x0)?;
    for k in 0..rec.truth.len() {
        let y = model.transform.denormalize_y(cl.traj.y.row(k));
        for (a, b) in y.iter().zip(rec.truth.y.row(k)) {
            out.temperature.push((a - b).abs());
        }
        for (a, b) in cl.traj.u.row(k).iter().zip(rec.truth.u.row(k)) {
            out.loss.push((a - b).abs());
            out.loss_samples += 1;
            if *a < 0.0 {
                out.negative += 1;
            }
        }
    }
    Ok(())
}

fn reduction(nominal: f64, hybrid: f64) -> f64 {
    if nominal > 0.0 {
        1.0 - hybrid / nominal
    } else {
        0.0
    }
}

/// Errors of the nominal (zero-correction) and hybrid models on `test`.
pub fn evaluate(
    model: &HybridModel,
    net: &CorrectionNet,
    test: &[&Record],
    reference_temperature: f64,
) -> Result<(MetricsReport, Vec<Histogram>)> {
    if test.is_empty() {
        return Err(Error::Config("empty test split".into()));
    }
    let mut nominal = Errors::default();
    let mut hybrid = Errors::default();
    let mut devices: Vec<usize> = test.iter().map(|r| r.device).collect();
    devices.sort_unstable();
    devices.dedup();
    let mut per_device = Vec::new();
    for &d in &devices {
        let mut dn = Errors::default();
        let mut dh = Errors::default();
        let recs: Vec<&&Record> = test.iter().filter(|r| r.device == d).collect();
        for rec in &recs {
            let run = rec.measured(&model.transform, reference_temperature);
            collect_errors(model, &mut ZeroCorrector, rec, &run, &mut dn)?;
            let mut corrector = NetCorrector::new(net);
            collect_errors(model, &mut corrector, rec, &run, &mut dh)?;
        }
        per_device.push(DeviceMetrics {
            device: d,
            trajectories: recs.len(),
            nominal: dn.metrics(),
            hybrid: dh.metrics(),
        });
        nominal.temperature.extend(dn.temperature);
        nominal.loss.extend(dn.loss);
        nominal.negative += dn.negative;
        nominal.loss_samples += dn.loss_samples;
        hybrid.temperature.extend(dh.temperature);
        hybrid.loss.extend(dh.loss);
        hybrid.negative += dh.negative;
        hybrid.loss_samples += dh.loss_samples;
    }
    let (nm, hm) = (nominal.metrics(), hybrid.metrics());
    let top = |a: &[f64], b: &[f64]| a.iter().chain(b).fold(0.0_f64, |m, v| m.max(*v));
    let t_top = top(&nominal.temperature, &hybrid.temperature);
    let l_top = top(&nominal.loss, &hybrid.loss);
    let hists = vec![
        histogram("temperature", "nominal", &nominal.temperature, t_top),
        histogram("temperature", "hybrid", &hybrid.temperature, t_top),
        histogram("loss", "nominal", &nominal.loss, l_top),
        histogram("loss", "hybrid", &hybrid.loss, l_top),
    ];
    let report = MetricsReport {
        nominal: nm,
        hybrid: hm,
        temperature_reduction: reduction(nm.temperature.mean, hm.temperature.mean),
        loss_reduction: reduction(nm.loss.mean, hm.loss.mean),
        per_device,
        test_trajectories: test.len(),
        test_steps: test.iter().map(|r| r.truth.len()).sum(),
    };
    Ok((report, hists))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSensitivity {
    pub channel: usize,
    /// Mean `|∂L/∂u_j|` over the training data, 1/W.
    pub mean_abs_gradient: f64,
    /// Mean squared loss reconstruction error on the test split, W².
    pub loss_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub channels: Vec<ChannelSensitivity>,
    pub spearman: f64,
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ties share the average rank
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with tie-averaged ranks; 0 when either side
/// is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Per-channel input gradients over `train` (physical units) against the
/// per-channel loss MSE over `test`.
pub fn sensitivity(
    model: &HybridModel,
    net: &CorrectionNet,
    train: &[MeasuredRun],
    test: &[&Record],
    hyper: &Hyperparams,
    reference_temperature: f64,
) -> Result<SensitivityReport> {
    let grads = training_input_gradients(model, net, train, hyper, &hyper.weights)?;
    let m = model.rom.n_inputs();
    let mut sq = vec![0.0; m];
    let mut count = 0usize;
    for rec in test {
        let run = rec.measured(&model.transform, reference_temperature);
        let mut corrector = NetCorrector::new(net);
        let cl = simulate_closed_loop(model, &mut corrector, &run.z, &vec![0.0; model.rom.n_states()])?;
        for k in 0..rec.truth.len() {
            for ((s, a), b) in sq.iter_mut().zip(cl.traj.u.row(k)).zip(rec.truth.u.row(k)) {
                *s += (a - b) * (a - b);
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("empty test split".into()));
    }
    let channels: Vec<ChannelSensitivity> = (0..m)
        .map(|j| ChannelSensitivity {
            channel: j,
            mean_abs_gradient: grads[j],
            loss_mse: sq[j] / count as f64,
        })
        .collect();
    let g: Vec<f64> = channels.iter().map(|c| c.mean_abs_gradient).collect();
    let e: Vec<f64> = channels.iter().map(|c| c.loss_mse).collect();
    Ok(SensitivityReport {
        spearman: spearman(&g, &e),
        channels,
    })
}

/// Mean `|∂L/∂u_j|` in 1/W over closed-loop samples of the training runs.
pub fn training_input_gradients(
    model: &HybridModel,
    net: &CorrectionNet,
    train: &[MeasuredRun],
    hyper: &Hyperparams,
    weights: &LossWeights,
) -> Result<Vec<f64>> {
    let rom = CascadeRom::new(&model.rom);
    let cascade = Cascade {
        rom: &rom,
        features: &model.features,
    };
    let normalized = match net {
        CorrectionNet::Mlp(_) => {
            let mut samples: Vec<StepSample> = Vec::new();
            let mut corrector = NetCorrector::new(net);
            for run in train {
                samples.extend(step_samples(model, &mut corrector, run, hyper.sample_stride, 0, 0, Split::Train)?);
            }
            let refs: Vec<&StepSample> = samples.iter().collect();
            input_gradients(cascade, net, Batch::Steps(&refs), weights)?
        }
        CorrectionNet::Elman(_) => {
            let mut samples: Vec<SequenceSample> = Vec::new();
            for run in train {
                samples.extend(window_samples(model, run, hyper.n_seq, hyper.window_stride, 0, Split::Train)?);
            }
            let refs: Vec<&SequenceSample> = samples.iter().collect();
            input_gradients(cascade, net, Batch::Sequences(&refs), weights)?
        }
    };
    Ok(normalized
        .iter()
        .zip(&model.transform.u_max)
        .map(|(g, u)| g / u)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_and_histogram() {
        let s = ErrorStats::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.count), (2.0, 1.0, 2));
        let h = histogram("t", "m", &[0.0, 0.5, 1.0], 1.0);
        assert_eq!(h.counts.iter().sum::<usize>(), 3);
        assert_eq!(h.counts[HIST_BINS - 1], 1);
        assert_eq!(h.edges.len(), HIST_BINS + 1);
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        // tied ranks: [1, 2.5, 2.5, 4] vs [1, 2, 3, 4]
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]);
        let expected = 4.5 / (4.5f64 * 5.0).sqrt();
        assert!((r - expected).abs() < 1e-12);
    }
}
