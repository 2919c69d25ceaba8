use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, lr_decay, BestSnapshot, TrainState};
use super::buffer::{ReplayBuffer, SampleTag, SequenceSample, Split, StepSample, Tagged};
use super::hybrid::{simulate_closed_loop, Corrector, HybridModel, NetCorrector, ZeroCorrector};
use super::loss::{physics_loss, LossBreakdown, LossWeights};
use crate::autodiff::{backward_cascade, evaluate_loss, Batch, Cascade, CascadeRom};
use crate::error::{Error, Result};
use crate::net::{CorrectionNet, NetKind};
use crate::ploss::PlossInput;
use crate::rom::Series;

/// Inputs and normalized measured outputs of one recorded trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRun {
    pub id: usize,
    pub z: Vec<PlossInput>,
    pub y: Series,
}

impl MeasuredRun {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainData {
    pub train: Vec<MeasuredRun>,
    pub val: Vec<MeasuredRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub epochs: usize,
    /// Refresh period in epochs.
    pub refresh_every: usize,
    pub bootstrap: bool,
    pub lr: f64,
    pub lr_decay: f64,
    /// Samples per batch; for sequences, steps per batch.
    pub batch_size: usize,
    /// Buffer capacity as a multiple of the initial sample count.
    pub buffer_factor: usize,
    /// Spacing of one-step samples along a trajectory.
    pub sample_stride: usize,
    pub n_seq: usize,
    /// Spacing of sequence window starts.
    pub window_stride: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs: 6000,
            refresh_every: 60,
            bootstrap: true,
            lr: 0.01,
            lr_decay: 0.9999,
            batch_size: 256,
            buffer_factor: 3,
            sample_stride: 40,
            n_seq: 50,
            window_stride: 1000,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let positive = [
            ("epochs", self.epochs),
            ("refresh_every", self.refresh_every),
            ("batch_size", self.batch_size),
            ("buffer_factor", self.buffer_factor),
            ("sample_stride", self.sample_stride),
            ("n_seq", self.n_seq),
            ("window_stride", self.window_stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One history row. Loss terms are the weighted contributions averaged
/// over the epoch's training batches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub mse_term: f64,
    pub penalty_term: f64,
    pub reg_term: f64,
    pub refresh: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum SampleBuffer {
    Steps(ReplayBuffer<StepSample>),
    Sequences(ReplayBuffer<SequenceSample>),
}

/// Result of a training run; everything needed to resume it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub best: CorrectionNet,
    /// Parameters after the last completed epoch.
    pub last: CorrectionNet,
    pub history: Vec<EpochLog>,
    pub state: TrainState,
    pub buffer: SampleBuffer,
    pub hyper: Hyperparams,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Sample layouts the training loop understands.
pub trait SampleKind: Tagged + Sized {
    fn batch<'a>(refs: &'a [&'a Self]) -> Batch<'a>;
    fn wrap(buffer: ReplayBuffer<Self>) -> SampleBuffer;
}

impl SampleKind for StepSample {
    fn batch<'a>(refs: &'a [&'a Self]) -> Batch<'a> {
        Batch::Steps(refs)
    }

    fn wrap(buffer: ReplayBuffer<Self>) -> SampleBuffer {
        SampleBuffer::Steps(buffer)
    }
}

impl SampleKind for SequenceSample {
    fn batch<'a>(refs: &'a [&'a Self]) -> Batch<'a> {
        Batch::Sequences(refs)
    }

    fn wrap(buffer: ReplayBuffer<Self>) -> SampleBuffer {
        SampleBuffer::Sequences(buffer)
    }
}

fn tag(run: &MeasuredRun, step: usize, epoch: usize, split: Split) -> SampleTag {
    SampleTag {
        trajectory: run.id,
        step,
        epoch,
        split,
    }
}

/// Simulates `run` in closed loop with `corrector` and keeps every
/// `stride`-th transition starting at `offset`.
pub fn step_samples(
    model: &HybridModel,
    corrector: &mut dyn Corrector,
    run: &MeasuredRun,
    stride: usize,
    offset: usize,
    epoch: usize,
    split: Split,
) -> Result<Vec<StepSample>> {
    let x0 = vec![0.0; model.rom.n_states()];
    let cl = simulate_closed_loop(model, corrector, &run.z, &x0)?;
    let last = run.len().saturating_sub(1);
    Ok((offset..last)
        .step_by(stride.max(1))
        .map(|k| StepSample {
            features: cl.features.row(k).to_vec(),
            u_nom: cl.u_nom.row(k).to_vec(),
            x: cl.traj.x.row(k).to_vec(),
            y_next: run.y.row(k + 1).to_vec(),
            tag: tag(run, k, epoch, split),
        })
        .collect())
}

/// Windows of `n_seq` steps cut from the nominal (uncorrected) closed-loop
/// run, starting at `offset` and every `stride` steps.
pub fn window_samples(
    model: &HybridModel,
    run: &MeasuredRun,
    n_seq: usize,
    stride: usize,
    offset: usize,
    split: Split,
) -> Result<Vec<SequenceSample>> {
    let x0 = vec![0.0; model.rom.n_states()];
    let cl = simulate_closed_loop(model, &mut ZeroCorrector, &run.z, &x0)?;
    let m = model.rom.n_inputs();
    let p = model.rom.n_outputs();
    let mut out = Vec::new();
    let mut k0 = offset;
    while k0 + n_seq < run.len() {
        let mut u_nom = Series::with_capacity(m, n_seq);
        let mut y_next = Series::with_capacity(p, n_seq);
        for t in k0..k0 + n_seq {
            u_nom.push(cl.u_nom.row(t));
            y_next.push(run.y.row(t + 1));
        }
        out.push(SequenceSample {
            x0: cl.traj.x.row(k0).to_vec(),
            z: run.z[k0..k0 + n_seq].to_vec(),
            u_nom,
            y_next,
            tag: tag(run, k0, 0, split),
        });
        k0 += stride.max(1);
    }
    Ok(out)
}

/// Mean loss of `net` over `samples`.
pub fn evaluate_samples<S: SampleKind>(
    model: &HybridModel,
    net: &CorrectionNet,
    samples: &[&S],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let rom = CascadeRom::new(&model.rom);
    let cascade = Cascade {
        rom: &rom,
        features: &model.features,
    };
    evaluate_loss(cascade, net, S::batch(samples), weights)
}

/// Per-step loss of the free-running hybrid model against the measured
/// outputs, averaged over every step of `runs`.
pub fn closed_loop_loss(
    model: &HybridModel,
    net: &CorrectionNet,
    runs: &[MeasuredRun],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut total = LossBreakdown::default();
    let mut count = 0usize;
    let mut u = vec![0.0; model.rom.n_inputs()];
    for run in runs {
        let mut corrector = NetCorrector::new(net);
        let x0 = vec![0.0; model.rom.n_states()];
        let cl = simulate_closed_loop(model, &mut corrector, &run.z, &x0)?;
        for k in 0..run.len() {
            for ((ui, a), b) in u.iter_mut().zip(cl.u_nom.row(k)).zip(cl.correction.row(k)) {
                *ui = a + b;
            }
            let l = physics_loss(run.y.row(k), cl.traj.y.row(k), &u, cl.correction.row(k), weights);
            total.add(&l);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("no validation steps".into()));
    }
    Ok(total.scaled(1.0 / count as f64))
}

struct Session<'a, S> {
    model: &'a HybridModel,
    val_runs: &'a [MeasuredRun],
    cascade_rom: CascadeRom,
    hyper: Hyperparams,
    net: CorrectionNet,
    state: TrainState,
    buffer: ReplayBuffer<S>,
    history: Vec<EpochLog>,
}

impl<S: SampleKind> Session<'_, S> {
    fn cascade(&self) -> Cascade<'_> {
        Cascade {
            rom: &self.cascade_rom,
            features: &self.model.features,
        }
    }

    /// Free-running loss over the validation trajectories; one-step scores
    /// miss corrections that drift once fed back.
    fn val_loss(&self, net: &CorrectionNet) -> Result<LossBreakdown> {
        closed_loop_loss(self.model, net, self.val_runs, &self.hyper.weights)
    }

    fn train_loss(&self) -> Result<LossBreakdown> {
        let refs: Vec<&S> = self.buffer.train().iter().collect();
        evaluate_loss(self.cascade(), &self.net, S::batch(&refs), &self.hyper.weights)
    }

    fn note_best(&mut self, epoch: usize, val: f64) {
        let better = match &self.state.best {
            None => true,
            Some(b) => val < b.val_loss,
        };
        if better && val.is_finite() {
            self.state.best = Some(BestSnapshot {
                epoch,
                val_loss: val,
                params: self.net.params().to_vec(),
            });
        }
    }

    fn log_initial(&mut self) -> Result<()> {
        let train = self.train_loss()?;
        let val = self.val_loss(&self.net)?;
        self.history.push(EpochLog {
            epoch: 0,
            lr: self.state.lr,
            train_loss: train.total,
            val_loss: val.total,
            mse_term: train.mse,
            penalty_term: train.penalty,
            reg_term: train.reg,
            refresh: false,
        });
        self.note_best(0, val.total);
        Ok(())
    }

    /// One epoch of shuffled mini-batch updates.
    fn epoch(&mut self, per_batch: usize) -> Result<LossBreakdown> {
        let mut order: Vec<usize> = (0..self.buffer.train().len()).collect();
        order.shuffle(&mut self.state.rng);
        let mut sum = LossBreakdown::default();
        let mut seen = 0usize;
        for chunk in order.chunks(per_batch) {
            let refs: Vec<&S> = chunk.iter().map(|&i| &self.buffer.train()[i]).collect();
            let cascade = Cascade {
                rom: &self.cascade_rom,
                features: &self.model.features,
            };
            let (loss, grad) = backward_cascade(cascade, &self.net, S::batch(&refs), &self.hyper.weights, false)?;
            adam_step(&mut self.state, self.net.params_mut(), &grad.params)?;
            sum.add(&loss.scaled(chunk.len() as f64));
            seen += chunk.len();
        }
        Ok(sum.scaled(1.0 / seen.max(1) as f64))
    }

    fn run(
        mut self,
        per_batch: usize,
        mut refresh: impl FnMut(&CorrectionNet, usize, &mut TrainState, &mut ReplayBuffer<S>) -> Result<()>,
    ) -> Result<TrainOutcome> {
        let mut diverged = None;
        while self.state.epoch < self.hyper.epochs {
            let e = self.state.epoch + 1;
            let refreshed = self.hyper.bootstrap && e % self.hyper.refresh_every == 0;
            let lr = self.state.lr;
            let step = (|| -> Result<(LossBreakdown, LossBreakdown)> {
                if refreshed {
                    refresh(&self.net, e, &mut self.state, &mut self.buffer)?;
                }
                let train = self.epoch(per_batch)?;
                let val = self.val_loss(&self.net)?;
                val.ensure_finite("validation loss")?;
                Ok((train, val))
            })();
            let (train, val) = match step {
                Ok(v) => v,
                Err(Error::Divergence(msg)) => {
                    diverged = Some(format!("epoch {e}: {msg}"));
                    break;
                }
                Err(other) => return Err(other),
            };
            self.history.push(EpochLog {
                epoch: e,
                lr,
                train_loss: train.total,
                val_loss: val.total,
                mse_term: train.mse,
                penalty_term: train.penalty,
                reg_term: train.reg,
                refresh: refreshed,
            });
            self.note_best(e, val.total);
            lr_decay(&mut self.state);
            self.state.epoch = e;
        }
        let mut best = self.net.clone();
        if let Some(b) = &self.state.best {
            best.params_mut().copy_from_slice(&b.params);
        }
        Ok(TrainOutcome {
            best,
            last: self.net,
            history: self.history,
            state: self.state,
            buffer: S::wrap(self.buffer),
            hyper: self.hyper,
            diverged,
        })
    }
}

fn check_data(data: &TrainData) -> Result<()> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    Ok(())
}

fn fnn_refresh<'a>(
    model: &'a HybridModel,
    data: &'a TrainData,
    stride: usize,
) -> impl FnMut(&CorrectionNet, usize, &mut TrainState, &mut ReplayBuffer<StepSample>) -> Result<()> + 'a {
    move |net, epoch, state, buffer| {
        let offset = state.rng.random_range(0..stride);
        let mut corrector = NetCorrector::new(net);
        for run in &data.train {
            buffer.push_train(step_samples(model, &mut corrector, run, stride, offset, epoch, Split::Train)?)?;
        }
        for run in &data.val {
            buffer.push_val(step_samples(model, &mut corrector, run, stride, offset, epoch, Split::Val)?)?;
        }
        Ok(())
    }
}

/// Feedforward training on one-step transitions with periodic closed-loop
/// re-simulation of every training and validation trajectory.
pub fn bootstrap_train(
    model: &HybridModel,
    data: &TrainData,
    init: CorrectionNet,
    hyper: &Hyperparams,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    check_data(data)?;
    model.check()?;
    if init.kind() != NetKind::Fnn {
        return Err(Error::Config("bootstrap training needs the feedforward corrector".into()));
    }
    let mut state = TrainState::new(init.params().len(), hyper.lr, hyper.lr_decay, hyper.seed)?;
    let stride = hyper.sample_stride;
    let offset = state.rng.random_range(0..stride);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for run in &data.train {
        train.extend(step_samples(model, &mut ZeroCorrector, run, stride, offset, 0, Split::Train)?);
    }
    for run in &data.val {
        val.extend(step_samples(model, &mut ZeroCorrector, run, stride, offset, 0, Split::Val)?);
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("trajectories too short for the sample stride".into()));
    }
    let mut buffer = ReplayBuffer::new(hyper.buffer_factor * train.len(), hyper.buffer_factor * val.len())?;
    buffer.push_train(train)?;
    buffer.push_val(val)?;
    let mut session = Session {
        model,
        val_runs: &data.val,
        cascade_rom: CascadeRom::new(&model.rom),
        hyper: hyper.clone(),
        net: init,
        state,
        buffer,
        history: Vec::new(),
    };
    session.log_initial()?;
    session.run(hyper.batch_size, fnn_refresh(model, data, stride))
}

/// Recurrent training by back-propagation through time over fixed windows
/// of the nominal closed-loop trajectories; no refresh.
pub fn train_rnn(
    model: &HybridModel,
    data: &TrainData,
    init: CorrectionNet,
    hyper: &Hyperparams,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    check_data(data)?;
    model.check()?;
    if init.kind() != NetKind::Rnn {
        return Err(Error::Config("sequence training needs the recurrent corrector".into()));
    }
    let mut hyper = hyper.clone();
    hyper.bootstrap = false;
    let state = TrainState::new(init.params().len(), hyper.lr, hyper.lr_decay, hyper.seed)?;
    let buffer = rnn_buffer(model, data, &hyper)?;
    let mut session = Session {
        model,
        val_runs: &data.val,
        cascade_rom: CascadeRom::new(&model.rom),
        hyper: hyper.clone(),
        net: init,
        state,
        buffer,
        history: Vec::new(),
    };
    session.log_initial()?;
    let per_batch = (hyper.batch_size / hyper.n_seq).max(1);
    session.run(per_batch, |_, _, _, _| Ok(()))
}

fn rnn_buffer(model: &HybridModel, data: &TrainData, hyper: &Hyperparams) -> Result<ReplayBuffer<SequenceSample>> {
    let offset = hyper.window_stride / 2;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for run in &data.train {
        train.extend(window_samples(model, run, hyper.n_seq, hyper.window_stride, offset.min(run.len() / 2), Split::Train)?);
    }
    for run in &data.val {
        val.extend(window_samples(model, run, hyper.n_seq, hyper.window_stride, offset.min(run.len() / 2), Split::Val)?);
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("trajectories too short for the sequence length".into()));
    }
    let mut buffer = ReplayBuffer::new(train.len(), val.len())?;
    buffer.push_train(train)?;
    buffer.push_val(val)?;
    Ok(buffer)
}

/// Continues a run from a saved outcome up to `hyper.epochs`.
pub fn resume_train(
    model: &HybridModel,
    data: &TrainData,
    saved: TrainOutcome,
    epochs: usize,
) -> Result<TrainOutcome> {
    model.check()?;
    let mut hyper = saved.hyper.clone();
    hyper.epochs = epochs;
    hyper.validate()?;
    if saved.diverged.is_some() {
        return Err(Error::Divergence("cannot resume a diverged run".into()));
    }
    let cascade_rom = CascadeRom::new(&model.rom);
    match saved.buffer {
        SampleBuffer::Steps(buffer) => {
            let stride = hyper.sample_stride;
            let session = Session {
                model,
                val_runs: &data.val,
                cascade_rom,
                hyper: hyper.clone(),
                net: saved.last,
                state: saved.state,
                buffer,
                history: saved.history,
            };
            session.run(hyper.batch_size, fnn_refresh(model, data, stride))
        }
        SampleBuffer::Sequences(buffer) => {
            let session = Session {
                model,
                val_runs: &data.val,
                cascade_rom,
                hyper: hyper.clone(),
                net: saved.last,
                state: saved.state,
                buffer,
                history: saved.history,
            };
            let per_batch = (hyper.batch_size / hyper.n_seq).max(1);
            session.run(per_batch, |_, _, _, _| Ok(()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exper::{small_experiment, Experiment, ScenarioKind};
    use crate::net::{default_elman_layout, init_mlp, Elman};
    use crate::rom::simulate;

    fn setup() -> (Experiment, Hyperparams) {
        let exp = small_experiment(ScenarioKind::Accurate);
        let mut hyper = exp.config().hyperparams(exp.bundle.zeta);
        hyper.seed = 9;
        (exp, hyper)
    }

    fn steps(outcome: &TrainOutcome) -> &ReplayBuffer<StepSample> {
        match &outcome.buffer {
            SampleBuffer::Steps(b) => b,
            SampleBuffer::Sequences(_) => panic!("expected step samples"),
        }
    }

    #[test]
    fn refresh_period_beyond_epochs_means_static_data() {
        let (exp, mut hyper) = setup();
        hyper.refresh_every = hyper.epochs + 1;
        let out = bootstrap_train(&exp.model, &exp.data, CorrectionNet::Mlp(init_mlp(1)), &hyper).unwrap();
        assert!(out.history.iter().all(|h| !h.refresh));
        let b = steps(&out);
        assert!(b.train().iter().chain(b.val()).all(|s| s.tag.epoch == 0));
        assert_eq!(b.train().len() * hyper.buffer_factor, b.train_capacity());
    }

    #[test]
    fn refresh_at_capacity_evicts_oldest_and_tags_provenance() {
        let (exp, mut hyper) = setup();
        hyper.buffer_factor = 1;
        hyper.refresh_every = 2;
        hyper.epochs = 4;
        let out = bootstrap_train(&exp.model, &exp.data, CorrectionNet::Mlp(init_mlp(1)), &hyper).unwrap();
        let refreshes: Vec<usize> = out.history.iter().filter(|h| h.refresh).map(|h| h.epoch).collect();
        assert_eq!(refreshes, vec![2, 4]);
        let b = steps(&out);
        assert_eq!(b.train().len(), b.train_capacity());
        assert_eq!(b.val().len(), b.val_capacity());
        // capacity equals one refresh, so only the last one survives
        assert!(b.train().iter().chain(b.val()).all(|s| s.tag.epoch == 4));
        assert!(b.audit());
    }

    #[test]
    fn training_is_deterministic_and_keeps_the_best_snapshot() {
        let (exp, hyper) = setup();
        let a = bootstrap_train(&exp.model, &exp.data, CorrectionNet::Mlp(init_mlp(2)), &hyper).unwrap();
        let b = bootstrap_train(&exp.model, &exp.data, CorrectionNet::Mlp(init_mlp(2)), &hyper).unwrap();
        assert_eq!(a, b);
        let best = a.state.best.as_ref().unwrap();
        assert!(a.history.iter().all(|h| best.val_loss <= h.val_loss));
        assert_eq!(a.best.params(), &best.params[..]);
        let val = closed_loop_loss(&exp.model, &a.best, &exp.data.val, &hyper.weights).unwrap();
        assert_eq!(val.total, best.val_loss);
        assert_eq!(a.history.len(), hyper.epochs + 1);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (exp, hyper) = setup();
        let full = bootstrap_train(&exp.model, &exp.data, CorrectionNet::Mlp(init_mlp(3)), &hyper).unwrap();
        let mut short = hyper.clone();
        short.epochs = 1;
        let part = bootstrap_train(&exp.model, &exp.data, CorrectionNet::Mlp(init_mlp(3)), &short).unwrap();
        let saved: TrainOutcome = serde_json::from_str(&crate::io::to_json_string(&part).unwrap()).unwrap();
        let resumed = resume_train(&exp.model, &exp.data, saved, hyper.epochs).unwrap();
        assert_eq!(resumed.history, full.history);
        assert_eq!(resumed.best, full.best);
    }

    #[test]
    fn zero_recurrent_net_starts_at_the_nominal_loss() {
        let (exp, hyper) = setup();
        let init = CorrectionNet::Elman(Elman::zeros(default_elman_layout(None).unwrap()));
        let out = train_rnn(&exp.model, &exp.data, init, &hyper).unwrap();
        let x0 = vec![0.0; exp.model.rom.n_states()];
        let p = exp.model.rom.n_outputs() as f64;
        let mse = |run: &MeasuredRun, k: usize, y: &Series| -> f64 {
            run.y.row(k).iter().zip(y.row(k)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p
        };
        let (mut val, mut count) = (0.0, 0);
        for run in &exp.data.val {
            let nominal = simulate(&exp.model.rom, &exp.model.nominal_inputs(&run.z), &x0).unwrap();
            for k in 0..run.len() {
                val += mse(run, k, &nominal.y);
                count += 1;
            }
        }
        let val = val / count as f64;
        assert!((out.history[0].val_loss - val).abs() <= 1e-12 * val);
        let windows = match &out.buffer {
            SampleBuffer::Sequences(b) => b.train().clone(),
            SampleBuffer::Steps(_) => panic!("expected sequences"),
        };
        let (mut train, mut count) = (0.0, 0);
        for w in &windows {
            let run = exp.data.train.iter().find(|r| r.id == w.tag.trajectory).unwrap();
            let nominal = simulate(&exp.model.rom, &exp.model.nominal_inputs(&run.z), &x0).unwrap();
            for t in w.tag.step..w.tag.step + w.len() {
                train += mse(run, t + 1, &nominal.y);
                count += 1;
            }
        }
        let train = train / count as f64;
        assert!((out.history[0].train_loss - train).abs() <= 1e-12 * train);
        assert!(out.history.iter().all(|h| !h.refresh));
    }

    #[test]
    fn wrong_architecture_rejected() {
        let (exp, hyper) = setup();
        let rnn = CorrectionNet::Elman(Elman::zeros(default_elman_layout(None).unwrap()));
        assert!(matches!(bootstrap_train(&exp.model, &exp.data, rnn, &hyper), Err(Error::Config(_))));
        assert!(matches!(
            train_rnn(&exp.model, &exp.data, CorrectionNet::Mlp(init_mlp(0)), &hyper),
            Err(Error::Config(_))
        ));
    }
}
