//! Physics-informed loss, optimizer, replay buffer, closed-loop hybrid
//! simulation and the two training drivers.

mod adam;
mod bootstrap;
mod buffer;
mod hybrid;
mod loss;

pub use adam::{adam_step, lr_decay, AdamConfig, BestSnapshot, TrainState};
pub use bootstrap::{
    bootstrap_train, closed_loop_loss, evaluate_samples, resume_train, step_samples, train_rnn, window_samples,
    EpochLog, Hyperparams, MeasuredRun, SampleBuffer, SampleKind, TrainData, TrainOutcome,
};
pub use buffer::{ReplayBuffer, SampleTag, SequenceSample, Split, StepSample, Tagged};
pub use hybrid::{
    simulate_closed_loop, ClosedLoopRun, Corrector, ElmanCorrector, HybridModel, MlpCorrector, NetCorrector,
    OracleCorrector, ZeroCorrector,
};
pub use loss::{physics_loss, LossBreakdown, LossWeights};
