//! Command-line front end.
//!
//! Every command reads and writes artifacts inside one output directory:
//!
//! | command       | reads                        | writes                                        |
//! |---------------|------------------------------|-----------------------------------------------|
//! | `synth`       | config                       | `bundle.json`                                 |
//! | `gen-data`    | `bundle.json`                | `manifest.json`, optional `series/*.csv`      |
//! | `train`       | `bundle.json`                | `checkpoint.json`, `train_state.json`, `history.csv` |
//! | `eval`        | `bundle.json`, checkpoint    | `metrics.json`, `error_hist.csv`, `trace.csv` |
//! | `sensitivity` | `bundle.json`, checkpoint    | `sensitivity.csv`, `sensitivity.json`         |
//! | `report`      | `metrics.json`               | `summary.md`                                  |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exper::{DataManifest, DeviceBundle, Experiment, ExperimentConfig, MetricsReport, ScenarioKind, SensitivityReport};
use crate::io::{read_json, write_json, CsvTable, Cell};
use crate::net::{CorrectionNet, NetKind, PcaBasis};
use crate::ploss::T_REF;
use crate::train::{resume_train, simulate_closed_loop, NetCorrector, TrainOutcome};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const STATE_FILE: &str = "train_state.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const HIST_FILE: &str = "error_hist.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const SENSITIVITY_CSV: &str = "sensitivity.csv";
pub const SENSITIVITY_JSON: &str = "sensitivity.json";
pub const SUMMARY_FILE: &str = "summary.md";

#[derive(Debug, Parser)]
#[command(name = "losstwin", version, about = "Hybrid power-loss identification through a thermal reduced-order model")]
pub struct Cli {
    /// JSON experiment configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory, overriding `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Simulation workers; training itself stays single-threaded.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the true and nominal device models.
    Synth(SynthArgs),
    /// Simulate every device and profile and write the split manifest.
    GenData(GenDataArgs),
    /// Train the loss corrector.
    Train(TrainArgs),
    /// Test-split error metrics of the trained hybrid model.
    Eval,
    /// Per-channel gradient magnitudes against loss reconstruction errors.
    Sensitivity,
    /// Markdown summary of the evaluation.
    Report,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Seed for the device, scenario and split.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// Thermal-parameter perturbation of the noisy scenario.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Also write every physical trajectory as CSV.
    #[arg(long)]
    pub series: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Seed for initialization, shuffling and refresh offsets.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub net: Option<NetArg>,
    #[arg(long, value_enum)]
    pub bootstrap: Option<Switch>,
    /// Total epochs; with `--resume`, the epoch to continue up to.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Continue from `train_state.json`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScenarioArg {
    Accurate,
    Noisy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NetArg {
    Fnn,
    Rnn,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// Trained corrector plus what is needed to check it against a bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Effective configuration of the training run.
    pub config: ExperimentConfig,
    pub train_seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub pca: PcaBasis,
    pub net: CorrectionNet,
}

/// `metrics.json`: the evaluation with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config: ExperimentConfig,
    pub train_seed: u64,
    pub best_epoch: usize,
    pub metrics: MetricsReport,
}

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence(_) | Error::Numerical(_) => 3,
        Error::MissingArtifact(_) => 4,
        Error::Io(_) => 1,
        _ => 2,
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => synth(cli, args),
        Command::GenData(args) => gen_data(cli, args),
        Command::Train(args) => train(cli, args),
        Command::Eval => eval(cli),
        Command::Sensitivity => sensitivity(cli),
        Command::Report => report(cli),
    }
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => read_json(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    Ok(base_config(cli)?.output_dir)
}

fn load_experiment(cli: &Cli, dir: &Path) -> Result<Experiment> {
    let mut bundle: DeviceBundle = read_json(&dir.join(BUNDLE_FILE))?;
    if let Some(w) = cli.workers {
        bundle.config.workers = w;
    }
    let exp = Experiment::generate(bundle)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let manifest: DataManifest = read_json(&manifest_path)?;
        if manifest.digest != exp.manifest().digest {
            return Err(Error::Config(format!(
                "{} does not match the data regenerated from {}",
                manifest_path.display(),
                BUNDLE_FILE
            )));
        }
    }
    Ok(exp)
}

fn load_checkpoint(exp: &Experiment, dir: &Path) -> Result<Checkpoint> {
    let ckpt: Checkpoint = read_json(&dir.join(CHECKPOINT_FILE))?;
    if ckpt.pca != exp.model.features.pca {
        return Err(Error::Config("checkpoint was trained on a different dataset".into()));
    }
    if ckpt.net.n_inputs() != exp.model.n_features() || ckpt.net.n_outputs() != exp.model.rom.n_inputs() {
        return Err(Error::Config("checkpoint network does not fit the device".into()));
    }
    Ok(ckpt)
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut cfg = base_config(cli)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(s) = args.scenario {
        cfg.scenario.kind = match s {
            ScenarioArg::Accurate => ScenarioKind::Accurate,
            ScenarioArg::Noisy => ScenarioKind::Noisy,
        };
    }
    if let Some(tau) = args.tau {
        cfg.scenario.tau = tau;
    }
    let bundle = crate::exper::synthesize(&cfg)?;
    let dir = cfg.output_dir.clone();
    write_json(&dir.join(BUNDLE_FILE), &bundle)?;
    println!(
        "synth: {} devices, zeta {:.3} W -> {}",
        bundle.devices.len(),
        bundle.zeta,
        dir.join(BUNDLE_FILE).display()
    );
    Ok(())
}

fn gen_data(cli: &Cli, args: &GenDataArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let bundle: DeviceBundle = read_json(&dir.join(BUNDLE_FILE))?;
    let mut bundle = bundle;
    if let Some(w) = cli.workers {
        bundle.config.workers = w;
    }
    let exp = Experiment::generate(bundle)?;
    let manifest = exp.manifest();
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    if args.series {
        for rec in &exp.records {
            series_table(rec).write(&dir.join("series").join(format!("trajectory_{:03}.csv", rec.id)))?;
        }
    }
    println!(
        "gen-data: {} train / {} val / {} test trajectories, digest {}",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
        &manifest.digest[..12]
    );
    Ok(())
}

fn series_table(rec: &crate::exper::Record) -> CsvTable {
    let t = &rec.truth;
    let mut header = vec!["step".to_string(), "current".into(), "t_fb".into()];
    header.extend((0..t.u.dim).map(|j| format!("u_{j}")));
    header.extend((0..t.y.dim).map(|i| format!("y_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = CsvTable::new(&header);
    for k in 0..t.len() {
        let mut cells = vec![Cell::Int(k as i64)];
        cells.extend(t.z.row(k).iter().chain(t.u.row(k)).chain(t.y.row(k)).map(|v| Cell::Float(*v)));
        table.row(&cells);
    }
    table
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let exp = load_experiment(cli, &dir)?;
    let outcome = if args.resume {
        let saved: TrainOutcome = read_json(&dir.join(STATE_FILE))?;
        let epochs = args.epochs.unwrap_or(saved.hyper.epochs);
        if epochs < saved.state.epoch {
            return Err(Error::Config(format!(
                "--epochs {epochs} is below the {} epochs already trained",
                saved.state.epoch
            )));
        }
        resume_train(&exp.model, &exp.data, saved, epochs)?
    } else {
        let mut cfg = exp.config().clone();
        if let Some(net) = args.net {
            cfg.net.kind = match net {
                NetArg::Fnn => NetKind::Fnn,
                NetArg::Rnn => NetKind::Rnn,
            };
        }
        if let Some(b) = args.bootstrap {
            cfg.net.bootstrap = matches!(b, Switch::On);
        }
        if let Some(e) = args.epochs {
            cfg.train.epochs = e;
        }
        if let Some(a) = args.alpha {
            cfg.train.alpha = a;
        }
        if let Some(b) = args.beta {
            cfg.train.beta = b;
        }
        exp.train(&cfg.net, &cfg.train, args.seed)?
    };
    let mut config = exp.config().clone();
    config.net.kind = outcome.best.kind();
    config.net.bootstrap = outcome.hyper.bootstrap;
    config.train.epochs = outcome.hyper.epochs;
    config.train.alpha = outcome.hyper.weights.alpha;
    config.train.beta = outcome.hyper.weights.beta;
    config.train_seed = args.seed;
    let best = outcome.state.best.as_ref();
    let ckpt = Checkpoint {
        config,
        train_seed: args.seed,
        best_epoch: best.map_or(0, |b| b.epoch),
        best_val_loss: best.map_or(f64::NAN, |b| b.val_loss),
        pca: exp.model.features.pca.clone(),
        net: outcome.best.clone(),
    };
    history_table(&outcome).write(&dir.join(HISTORY_FILE))?;
    write_json(&dir.join(STATE_FILE), &outcome)?;
    write_json(&dir.join(CHECKPOINT_FILE), &ckpt)?;
    if let Some(msg) = &outcome.diverged {
        return Err(Error::Divergence(format!("{msg}; history kept in {}", dir.join(HISTORY_FILE).display())));
    }
    println!(
        "train: {} epochs, best validation loss {:.6e} at epoch {}",
        outcome.state.epoch, ckpt.best_val_loss, ckpt.best_epoch
    );
    Ok(())
}

pub fn history_table(outcome: &TrainOutcome) -> CsvTable {
    let mut t = CsvTable::new(&[
        "epoch",
        "lr",
        "train_loss",
        "val_loss",
        "mse_term",
        "penalty_term",
        "reg_term",
        "refresh",
    ]);
    for h in &outcome.history {
        t.row(&[
            Cell::Int(h.epoch as i64),
            Cell::Float(h.lr),
            Cell::Float(h.train_loss),
            Cell::Float(h.val_loss),
            Cell::Float(h.mse_term),
            Cell::Float(h.penalty_term),
            Cell::Float(h.reg_term),
            Cell::Int(h.refresh as i64),
        ]);
    }
    t
}

fn eval(cli: &Cli) -> Result<()> {
    let dir = out_dir(cli)?;
    let exp = load_experiment(cli, &dir)?;
    let ckpt = load_checkpoint(&exp, &dir)?;
    let (report, hists) = exp.evaluate(&ckpt.net)?;
    let mut table = CsvTable::new(&["quantity", "model", "bin_lo", "bin_hi", "count"]);
    for h in &hists {
        for (i, c) in h.counts.iter().enumerate() {
            table.row(&[
                Cell::Text(&h.quantity),
                Cell::Text(&h.model),
                Cell::Float(h.edges[i]),
                Cell::Float(h.edges[i + 1]),
                Cell::Int(*c as i64),
            ]);
        }
    }
    table.write(&dir.join(HIST_FILE))?;
    trace_table(&exp, &ckpt.net)?.write(&dir.join(TRACE_FILE))?;
    println!(
        "eval: temperature {:.3} -> {:.3} K ({:.1} %), loss {:.3} -> {:.3} W ({:.1} %)",
        report.nominal.temperature.mean,
        report.hybrid.temperature.mean,
        100.0 * report.temperature_reduction,
        report.nominal.loss.mean,
        report.hybrid.loss.mean,
        100.0 * report.loss_reduction
    );
    let file = MetricsFile {
        config: ckpt.config,
        train_seed: ckpt.train_seed,
        best_epoch: ckpt.best_epoch,
        metrics: report,
    };
    write_json(&dir.join(METRICS_FILE), &file)
}

/// True against hybrid outputs and losses along the first test trajectory.
fn trace_table(exp: &Experiment, net: &CorrectionNet) -> Result<CsvTable> {
    let rec = exp
        .test_records()
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config("empty test split".into()))?;
    let run = rec.measured(&exp.model.transform, T_REF);
    let x0 = vec![0.0; exp.model.rom.n_states()];
    let cl = simulate_closed_loop(&exp.model, &mut NetCorrector::new(net), &run.z, &x0)?;
    let (m, p) = (rec.truth.u.dim, rec.truth.y.dim);
    let mut header = vec!["step".to_string(), "current".into()];
    header.extend((0..p).map(|i| format!("y_true_{i}")));
    header.extend((0..p).map(|i| format!("y_hybrid_{i}")));
    header.extend((0..m).map(|j| format!("u_true_{j}")));
    header.extend((0..m).map(|j| format!("u_nominal_{j}")));
    header.extend((0..m).map(|j| format!("u_hybrid_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = CsvTable::new(&header);
    for k in 0..rec.truth.len() {
        let y_hyb = exp.model.transform.denormalize_y(cl.traj.y.row(k));
        let u_nom = exp.model.transform.denormalize_u(cl.u_nom.row(k));
        let mut cells = vec![Cell::Int(k as i64), Cell::Float(rec.truth.z.row(k)[0])];
        cells.extend(
            rec.truth
                .y
                .row(k)
                .iter()
                .chain(&y_hyb)
                .chain(rec.truth.u.row(k))
                .chain(&u_nom)
                .chain(cl.traj.u.row(k))
                .map(|v| Cell::Float(*v)),
        );
        table.row(&cells);
    }
    Ok(table)
}

fn sensitivity(cli: &Cli) -> Result<()> {
    let dir = out_dir(cli)?;
    let exp = load_experiment(cli, &dir)?;
    let ckpt = load_checkpoint(&exp, &dir)?;
    let mut exp = exp;
    exp.bundle.config.train.alpha = ckpt.config.train.alpha;
    exp.bundle.config.train.beta = ckpt.config.train.beta;
    let rep = exp.sensitivity(&ckpt.net)?;
    let mut table = CsvTable::new(&["channel", "mean_abs_gradient", "loss_mse"]);
    for c in &rep.channels {
        table.row(&[
            Cell::Int(c.channel as i64),
            Cell::Float(c.mean_abs_gradient),
            Cell::Float(c.loss_mse),
        ]);
    }
    table.write(&dir.join(SENSITIVITY_CSV))?;
    write_json(&dir.join(SENSITIVITY_JSON), &rep)?;
    println!("sensitivity: spearman {:.3}", rep.spearman);
    Ok(())
}

fn report(cli: &Cli) -> Result<()> {
    let dir = out_dir(cli)?;
    let metrics: MetricsFile = read_json(&dir.join(METRICS_FILE))?;
    let sens_path = dir.join(SENSITIVITY_JSON);
    let sens: Option<SensitivityReport> = if sens_path.exists() {
        Some(read_json(&sens_path)?)
    } else {
        None
    };
    let text = summary_markdown(&metrics, sens.as_ref());
    std::fs::write(dir.join(SUMMARY_FILE), &text)?;
    print!("{text}");
    Ok(())
}

/// Table of nominal against hybrid errors on the test split.
pub fn summary_markdown(file: &MetricsFile, sens: Option<&SensitivityReport>) -> String {
    let m = &file.metrics;
    let scenario = match file.config.scenario.kind {
        ScenarioKind::Accurate => "accurate thermal model",
        ScenarioKind::Noisy => "noisy thermal model",
    };
    let net = match (file.config.net.kind, file.config.net.bootstrap) {
        (NetKind::Fnn, true) => "FNN + bootstrap",
        (NetKind::Fnn, false) => "FNN",
        (NetKind::Rnn, _) => "RNN",
    };
    let mut s = String::new();
    let _ = writeln!(s, "# Hybrid model estimation performance\n");
    let _ = writeln!(
        s,
        "Scenario: {scenario}. Corrector: {net}, train seed {}, best epoch {}. Test split: {} trajectories, {} steps.\n",
        file.train_seed, file.best_epoch, m.test_trajectories, m.test_steps
    );
    let _ = writeln!(s, "| Model | Temperature error (K) | Loss error (W) | Negative losses |");
    let _ = writeln!(s, "|---|---|---|---|");
    for (name, row) in [("Nominal", &m.nominal), ("Hybrid", &m.hybrid)] {
        let _ = writeln!(
            s,
            "| {name} | {:.3} ± {:.3} | {:.3} ± {:.3} | {:.2} % |",
            row.temperature.mean,
            row.temperature.std,
            row.loss.mean,
            row.loss.std,
            100.0 * row.negative_fraction
        );
    }
    let _ = writeln!(
        s,
        "\nReduction: temperature {:.1} %, loss {:.1} %.",
        100.0 * m.temperature_reduction,
        100.0 * m.loss_reduction
    );
    if let Some(sens) = sens {
        let _ = writeln!(
            s,
            "\nSensitivity: Spearman correlation between mean |dL/du| and loss MSE over {} channels is {:.3}.",
            sens.channels.len(),
            sens.spearman
        );
    }
    s
}
