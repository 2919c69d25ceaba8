use serde::{Deserialize, Serialize};

use super::{Experiment, ExperimentConfig, NetConfig, ScenarioKind};
use crate::error::Result;
use crate::net::NetKind;
use crate::train::EpochLog;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    FnnBootstrap,
    Fnn,
    Rnn,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::FnnBootstrap, Architecture::Fnn, Architecture::Rnn];

    pub fn net_config(self) -> NetConfig {
        match self {
            Architecture::FnnBootstrap => NetConfig {
                kind: NetKind::Fnn,
                bootstrap: true,
                head: None,
            },
            Architecture::Fnn => NetConfig {
                kind: NetKind::Fnn,
                bootstrap: false,
                head: None,
            },
            Architecture::Rnn => NetConfig {
                kind: NetKind::Rnn,
                bootstrap: false,
                head: None,
            },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Architecture::FnnBootstrap => "fnn_bootstrap",
            Architecture::Fnn => "fnn",
            Architecture::Rnn => "rnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchResult {
    pub architecture: Architecture,
    pub scenario: ScenarioKind,
    pub seed: u64,
    /// Lowest logged validation loss of the run.
    pub best_val_loss: f64,
    /// Closed-loop validation loss of the returned net.
    pub final_val_loss: f64,
    pub history: Vec<EpochLog>,
}

/// Trains every architecture on every scenario and seed. The dataset of a
/// scenario is shared by all of its runs.
pub fn compare_architectures(
    base: &ExperimentConfig,
    scenarios: &[ScenarioKind],
    architectures: &[Architecture],
    seeds: &[u64],
) -> Result<Vec<ArchResult>> {
    let mut out = Vec::new();
    for &scenario in scenarios {
        let mut cfg = base.clone();
        cfg.scenario.kind = scenario;
        let exp = Experiment::build(&cfg)?;
        for &arch in architectures {
            for &seed in seeds {
                let outcome = exp.train(&arch.net_config(), &cfg.train, seed)?;
                let best_val_loss = outcome
                    .history
                    .iter()
                    .map(|h| h.val_loss)
                    .fold(f64::INFINITY, f64::min);
                out.push(ArchResult {
                    architecture: arch,
                    scenario,
                    seed,
                    best_val_loss,
                    final_val_loss: exp.closed_loop_val(&outcome.best)?,
                    history: outcome.history,
                });
            }
        }
    }
    Ok(out)
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
