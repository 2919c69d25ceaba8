use crate::error::{check_len, Error, Result};
use crate::net::{CorrectionNet, Elman, ElmanStep, FeatureSpec, Mlp, MlpWorkspace};
use crate::ploss::{LossParams, PlossInput};
use crate::rom::{DiscreteRom, NormalizationTransform, Series, Trajectory};

/// Normalized nominal ROM, nominal loss model and feature map: everything
/// the hybrid model may read.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    pub rom: DiscreteRom,
    pub transform: NormalizationTransform,
    pub nominal: LossParams,
    pub features: FeatureSpec,
}

impl HybridModel {
    pub fn check(&self) -> Result<()> {
        self.features.check()?;
        check_len("nominal loss channels", self.rom.n_inputs(), self.nominal.n_channels())?;
        check_len("PCA width", self.rom.n_states(), self.features.pca.mean.len())?;
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.features.n_features(self.rom.n_outputs())
    }

    /// Normalized nominal losses for every input step.
    pub fn nominal_inputs(&self, z_seq: &[PlossInput]) -> Series {
        let m = self.rom.n_inputs();
        let mut out = Series::with_capacity(m, z_seq.len());
        let (mut u, mut un) = (vec![0.0; m], vec![0.0; m]);
        for z in z_seq {
            self.nominal.eval_into(z, &mut u);
            self.transform.normalize_u_into(&u, &mut un);
            out.push(&un);
        }
        out
    }
}

/// Source of additive corrections in normalized loss units.
pub trait Corrector {
    /// Called once before a trajectory starts.
    fn reset(&mut self);
    fn correct(&mut self, step: usize, features: &[f64], out: &mut [f64]);
}

pub struct ZeroCorrector;

impl Corrector for ZeroCorrector {
    fn reset(&mut self) {}

    fn correct(&mut self, _: usize, _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

pub struct MlpCorrector<'a> {
    net: &'a Mlp,
    ws: MlpWorkspace,
}

impl<'a> MlpCorrector<'a> {
    pub fn new(net: &'a Mlp) -> Self {
        Self {
            net,
            ws: net.shape.workspace(),
        }
    }
}

impl Corrector for MlpCorrector<'_> {
    fn reset(&mut self) {}

    fn correct(&mut self, _: usize, features: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.net.shape.forward(&self.net.params, features, &mut self.ws));
    }
}

pub struct ElmanCorrector<'a> {
    net: &'a Elman,
    h: Vec<f64>,
    step: ElmanStep,
}

impl<'a> ElmanCorrector<'a> {
    pub fn new(net: &'a Elman) -> Self {
        Self {
            net,
            h: vec![0.0; net.hidden_size()],
            step: net.new_step(),
        }
    }
}

impl Corrector for ElmanCorrector<'_> {
    fn reset(&mut self) {
        self.h.fill(0.0);
    }

    fn correct(&mut self, _: usize, features: &[f64], out: &mut [f64]) {
        self.net.step_into(&self.h, features, &mut self.step);
        self.h.copy_from_slice(&self.step.h);
        out.copy_from_slice(&self.step.out);
    }
}

/// Replays a precomputed correction sequence, ignoring the features.
pub struct OracleCorrector {
    pub corrections: Series,
}

impl Corrector for OracleCorrector {
    fn reset(&mut self) {}

    fn correct(&mut self, step: usize, _: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.corrections.row(step));
    }
}

pub enum NetCorrector<'a> {
    Mlp(MlpCorrector<'a>),
    Elman(ElmanCorrector<'a>),
}

impl<'a> NetCorrector<'a> {
    pub fn new(net: &'a CorrectionNet) -> Self {
        match net {
            CorrectionNet::Mlp(n) => NetCorrector::Mlp(MlpCorrector::new(n)),
            CorrectionNet::Elman(n) => NetCorrector::Elman(ElmanCorrector::new(n)),
        }
    }
}

impl Corrector for NetCorrector<'_> {
    fn reset(&mut self) {
        match self {
            NetCorrector::Mlp(c) => c.reset(),
            NetCorrector::Elman(c) => c.reset(),
        }
    }

    fn correct(&mut self, step: usize, features: &[f64], out: &mut [f64]) {
        match self {
            NetCorrector::Mlp(c) => c.correct(step, features, out),
            NetCorrector::Elman(c) => c.correct(step, features, out),
        }
    }
}

/// Closed-loop hybrid run. `traj` holds `z = [I, T_fb]`, the corrected
/// losses in W and the normalized states and outputs; the remaining series
/// keep the normalized quantities needed to build training samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClosedLoopRun {
    pub traj: Trajectory,
    pub features: Series,
    pub u_nom: Series,
    pub correction: Series,
}

const DIVERGENCE_BOUND: f64 = 1e6;

/// Runs the hybrid model over `z_seq` from normalized state `x0`.
pub fn simulate_closed_loop(
    model: &HybridModel,
    corrector: &mut dyn Corrector,
    z_seq: &[PlossInput],
    x0: &[f64],
) -> Result<ClosedLoopRun> {
    let rom = &model.rom;
    let (n, m, p) = (rom.n_states(), rom.n_inputs(), rom.n_outputs());
    check_len("initial state", n, x0.len())?;
    model.check()?;
    let nf = model.n_features();
    let len = z_seq.len();
    let mut run = ClosedLoopRun {
        traj: Trajectory {
            z: Series::with_capacity(2, len),
            u: Series::with_capacity(m, len),
            x: Series::with_capacity(n, len),
            y: Series::with_capacity(p, len),
        },
        features: Series::with_capacity(nf, len),
        u_nom: model.nominal_inputs(z_seq),
        correction: Series::with_capacity(m, len),
    };
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut y = vec![0.0; p];
    let mut feat = vec![0.0; nf];
    let mut corr = vec![0.0; m];
    let mut u = vec![0.0; m];
    let mut u_phys = vec![0.0; m];
    corrector.reset();
    for (k, z) in z_seq.iter().enumerate() {
        rom.output_into(&x, &mut y);
        model.features.assemble_into(z, &y, &x, &mut feat);
        corrector.correct(k, &feat, &mut corr);
        for ((ui, nom), c) in u.iter_mut().zip(run.u_nom.row(k)).zip(&corr) {
            *ui = nom + c;
        }
        model.transform.denormalize_u_into(&u, &mut u_phys);
        run.traj.z.push(&[z.current, z.feedback_temperature]);
        run.traj.u.push(&u_phys);
        run.traj.x.push(&x);
        run.traj.y.push(&y);
        run.features.push(&feat);
        run.correction.push(&corr);
        rom.advance_into(&x, &u, &mut next);
        if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Divergence(format!("hybrid state left the bounded region at step {k}")));
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(run)
}
