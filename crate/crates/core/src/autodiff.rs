//! Hand-written reverse-mode gradients of the training loss through the
//! corrector, the normalized ROM recursion and the feature map.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{Activation, CorrectionNet, Elman, FeatureSpec, Mlp, MlpWorkspace};
use crate::rom::DiscreteRom;
use crate::train::{LossBreakdown, LossWeights, SequenceSample, StepSample};

/// Dense row-major copies of a normalized ROM plus the one-step products
/// `C A` and `C B` used by one-step training.
#[derive(Clone, Debug)]
pub struct CascadeRom {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    ad: Vec<f64>,
    bd: Vec<f64>,
    c: Vec<f64>,
    cad: Vec<f64>,
    cbd: Vec<f64>,
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

// out = M v, M row-major rows × cols
#[inline]
fn matvec(mat: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(mat.chunks_exact(cols)) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

// out += Mᵀ v
#[inline]
fn matvec_t_add(mat: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (vi, row) in v.iter().zip(mat.chunks_exact(cols)) {
        if *vi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += vi * a;
        }
    }
}

impl CascadeRom {
    pub fn new(rom: &DiscreteRom) -> Self {
        let cad = &rom.c * &rom.ad;
        let cbd = &rom.c * &rom.bd;
        Self {
            n: rom.n_states(),
            m: rom.n_inputs(),
            p: rom.n_outputs(),
            ad: row_major(&rom.ad),
            bd: row_major(&rom.bd),
            c: row_major(&rom.c),
            cad: row_major(&cad),
            cbd: row_major(&cbd),
        }
    }
}

/// Gradient aligned with the flat parameter vector, plus the per-step
/// adjoints at the ROM input when requested (`m` values per step, in
/// normalized input units, with respect to the per-sample summed loss).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientVector {
    pub params: Vec<f64>,
    pub inputs: Option<Vec<Vec<f64>>>,
}

/// Training batch in the layout each mode expects.
#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    Steps(&'a [&'a StepSample]),
    Sequences(&'a [&'a SequenceSample]),
}

impl Batch<'_> {
    fn is_empty(&self) -> bool {
        match self {
            Batch::Steps(s) => s.is_empty(),
            Batch::Sequences(s) => s.is_empty(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Cascade<'a> {
    pub rom: &'a CascadeRom,
    pub features: &'a FeatureSpec,
}

/// Mean loss over the batch and its exact gradient.
///
/// One-step samples need a feedforward net; sequences need the Elman net and
/// are back-propagated through both the hidden state and the ROM recursion.
pub fn backward_cascade(
    cascade: Cascade<'_>,
    net: &CorrectionNet,
    batch: Batch<'_>,
    weights: &LossWeights,
    keep_inputs: bool,
) -> Result<(LossBreakdown, GradientVector)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let (loss, grad) = match (net, batch) {
        (CorrectionNet::Mlp(mlp), Batch::Steps(s)) => backward_steps(cascade.rom, mlp, s, weights, keep_inputs, true),
        (CorrectionNet::Elman(el), Batch::Sequences(s)) => backward_sequences(cascade, el, s, weights, keep_inputs, true),
        _ => {
            return Err(Error::Config(
                "feedforward nets train on one-step samples and recurrent nets on sequences".into(),
            ))
        }
    };
    loss.ensure_finite("loss")?;
    if let Some(i) = grad.params.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!(
            "non-finite gradient at parameter {i}; loss components {}",
            serde_json::to_string(&loss).unwrap_or_default()
        )));
    }
    Ok((loss, grad))
}

/// Loss only, no gradient.
pub fn evaluate_loss(
    cascade: Cascade<'_>,
    net: &CorrectionNet,
    batch: Batch<'_>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let loss = match (net, batch) {
        (CorrectionNet::Mlp(mlp), Batch::Steps(s)) => backward_steps(cascade.rom, mlp, s, weights, false, false).0,
        (CorrectionNet::Elman(el), Batch::Sequences(s)) => {
            backward_sequences(cascade, el, s, weights, false, false).0
        }
        _ => return Err(Error::Config("net kind does not match the batch layout".into())),
    };
    Ok(loss)
}

/// Per-channel mean of `|∂L/∂ū_j|` over every step of every sample.
pub fn input_gradients(
    cascade: Cascade<'_>,
    net: &CorrectionNet,
    batch: Batch<'_>,
    weights: &LossWeights,
) -> Result<Vec<f64>> {
    let (_, grad) = backward_cascade(cascade, net, batch, weights, true)?;
    let inputs = grad.inputs.expect("requested");
    let m = cascade.rom.m;
    let mut acc = vec![0.0; m];
    for row in &inputs {
        for (a, g) in acc.iter_mut().zip(row) {
            *a += g.abs();
        }
    }
    let count = inputs.len().max(1) as f64;
    Ok(acc.into_iter().map(|a| a / count).collect())
}

fn step_loss(
    r: &[f64],
    u: &[f64],
    f: &[f64],
    weights: &LossWeights,
    p: usize,
) -> (LossBreakdown, f64) {
    let mse = weights.mse * r.iter().map(|v| v * v).sum::<f64>() / p as f64;
    let penalty = weights.alpha * u.iter().filter(|v| **v < 0.0).map(|v| v * v).sum::<f64>();
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let reg = weights.beta * norm;
    (
        LossBreakdown {
            total: mse + penalty + reg,
            mse,
            penalty,
            reg,
        },
        norm,
    )
}

/// `∂/∂ū` of the penalty plus the `Bᵀ`-propagated state adjoint is added
/// by the caller; this writes the local penalty gradient into `gu`.
#[inline]
fn add_penalty_grad(u: &[f64], alpha: f64, gu: &mut [f64]) {
    for (g, v) in gu.iter_mut().zip(u) {
        if *v < 0.0 {
            *g += 2.0 * alpha * v;
        }
    }
}

#[inline]
fn add_reg_grad(f: &[f64], norm: f64, beta: f64, gf: &mut [f64]) {
    if norm > 0.0 && beta != 0.0 {
        for (g, v) in gf.iter_mut().zip(f) {
            *g += beta * v / norm;
        }
    }
}

fn backward_steps(
    rom: &CascadeRom,
    mlp: &Mlp,
    samples: &[&StepSample],
    weights: &LossWeights,
    keep_inputs: bool,
    want_grad: bool,
) -> (LossBreakdown, GradientVector) {
    let (n, m, p) = (rom.n, rom.m, rom.p);
    let mut ws: MlpWorkspace = mlp.shape.workspace();
    let mut grad = vec![0.0; if want_grad { mlp.params.len() } else { 0 }];
    let mut inputs = keep_inputs.then(|| Vec::with_capacity(samples.len()));
    let mut total = LossBreakdown::default();
    let (mut u, mut y, mut r) = (vec![0.0; m], vec![0.0; p], vec![0.0; p]);
    let (mut gy, mut gu) = (vec![0.0; p], vec![0.0; m]);
    let mut y_free = vec![0.0; p];
    for s in samples {
        let f = mlp.shape.forward(&mlp.params, &s.features, &mut ws);
        for ((ui, nom), fi) in u.iter_mut().zip(&s.u_nom).zip(f) {
            *ui = nom + fi;
        }
        matvec(&rom.cad, n, &s.x, &mut y_free);
        matvec(&rom.cbd, m, &u, &mut y);
        for i in 0..p {
            y[i] += y_free[i];
            r[i] = y[i] - s.y_next[i];
        }
        let (l, norm) = step_loss(&r, &u, f, weights, p);
        total.add(&l);
        if !(want_grad || keep_inputs) {
            continue;
        }
        for (g, ri) in gy.iter_mut().zip(&r) {
            *g = weights.mse * 2.0 * ri / p as f64;
        }
        gu.fill(0.0);
        matvec_t_add(&rom.cbd, m, &gy, &mut gu);
        add_penalty_grad(&u, weights.alpha, &mut gu);
        if let Some(inp) = inputs.as_mut() {
            inp.push(gu.clone());
        }
        if want_grad {
            let mut gf = gu.clone();
            let f = ws.output();
            add_reg_grad(f, norm, weights.beta, &mut gf);
            mlp.shape.backward(&mlp.params, &mut ws, &gf, &mut grad, None);
        }
    }
    let scale = 1.0 / samples.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (
        total.scaled(scale),
        GradientVector {
            params: grad,
            inputs,
        },
    )
}

/// Values kept from one forward step of a sequence.
struct Tape {
    feat: Vec<f64>,
    h: Vec<f64>,
    f: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    norm: f64,
    head_ws: Option<MlpWorkspace>,
}

fn backward_sequences(
    cascade: Cascade<'_>,
    el: &Elman,
    samples: &[&SequenceSample],
    weights: &LossWeights,
    keep_inputs: bool,
    want_grad: bool,
) -> (LossBreakdown, GradientVector) {
    let rom = cascade.rom;
    let spec = cascade.features;
    let (n, m, p) = (rom.n, rom.m, rom.p);
    let lay = &el.layout;
    let (ni, nh, no) = (lay.n_in, lay.n_hidden, lay.n_out);
    let params = &el.params;
    let mut grad = vec![0.0; if want_grad { params.len() } else { 0 }];
    let mut inputs = keep_inputs.then(Vec::new);
    let mut total = LossBreakdown::default();
    let mut steps = 0usize;
    let mut step = el.new_step();
    let mut tape: Vec<Tape> = Vec::new();
    let (mut x, mut x_next, mut y) = (vec![0.0; n], vec![0.0; n], vec![0.0; p]);
    let mut h_prev = vec![0.0; nh];
    let n_pca = spec.pca.components.len();
    // adjoint buffers
    let (mut gx_next, mut gx1, mut gx) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut gh_next, mut gh, mut ga) = (vec![0.0; nh], vec![0.0; nh], vec![0.0; nh]);
    let (mut gy, mut gu, mut gfeat) = (vec![0.0; p], vec![0.0; m], vec![0.0; ni]);
    let mut go = vec![0.0; no];
    let zero_h = vec![0.0; nh];

    for s in samples {
        let len = s.len();
        tape.clear();
        x.copy_from_slice(&s.x0);
        h_prev.fill(0.0);
        for t in 0..len {
            let mut feat = vec![0.0; ni];
            matvec(&rom.c, n, &x, &mut y);
            spec.assemble_into(&s.z[t], &y, &x, &mut feat);
            el.step_into(&h_prev, &feat, &mut step);
            let u: Vec<f64> = s.u_nom.row(t).iter().zip(&step.out).map(|(a, b)| a + b).collect();
            matvec(&rom.ad, n, &x, &mut x_next);
            for (row, ui) in rom.bd.chunks_exact(m).zip(0..n) {
                x_next[ui] += row.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
            }
            matvec(&rom.c, n, &x_next, &mut y);
            let r: Vec<f64> = y.iter().zip(s.y_next.row(t)).map(|(a, b)| a - b).collect();
            let (l, norm) = step_loss(&r, &u, &step.out, weights, p);
            total.add(&l);
            steps += 1;
            tape.push(Tape {
                feat,
                h: step.h.clone(),
                f: step.out.clone(),
                u,
                r,
                norm,
                head_ws: step.head_ws.clone(),
            });
            std::mem::swap(&mut x, &mut x_next);
            h_prev.copy_from_slice(&step.h);
        }
        if !(want_grad || keep_inputs) {
            continue;
        }
        gx_next.fill(0.0);
        gh_next.fill(0.0);
        let mut seq_inputs = vec![Vec::new(); if keep_inputs { len } else { 0 }];
        for t in (0..len).rev() {
            let tp = &mut tape[t];
            for (g, ri) in gy.iter_mut().zip(&tp.r) {
                *g = weights.mse * 2.0 * ri / p as f64;
            }
            gx1.copy_from_slice(&gx_next);
            matvec_t_add(&rom.c, n, &gy, &mut gx1);
            gu.fill(0.0);
            matvec_t_add(&rom.bd, m, &gx1, &mut gu);
            add_penalty_grad(&tp.u, weights.alpha, &mut gu);
            if keep_inputs {
                seq_inputs[t] = gu.clone();
            }
            // state adjoint through the ROM transition
            gx.fill(0.0);
            matvec_t_add(&rom.ad, n, &gx1, &mut gx);
            let mut gf = gu.clone();
            add_reg_grad(&tp.f, tp.norm, weights.beta, &mut gf);
            // output layer
            gh.fill(0.0);
            match (&lay.head, tp.head_ws.as_mut()) {
                (Some(head), Some(ws)) => {
                    let range = lay.head_range();
                    let mut dummy;
                    let gslice: &mut [f64] = if want_grad {
                        &mut grad[range.clone()]
                    } else {
                        dummy = vec![0.0; range.len()];
                        &mut dummy
                    };
                    head.backward(&params[range.clone()], ws, &gf, gslice, Some(&mut gh));
                }
                _ => {
                    let w_hy = &params[lay.w_hy()];
                    for o in 0..no {
                        go[o] = gf[o] * (1.0 - tp.f[o] * tp.f[o]);
                    }
                    if want_grad {
                        let (wr, br) = (lay.w_hy(), lay.b_y());
                        for o in 0..no {
                            if go[o] == 0.0 {
                                continue;
                            }
                            grad[br.start + o] += go[o];
                            for (g, hv) in grad[wr.start + o * nh..wr.start + (o + 1) * nh].iter_mut().zip(&tp.h) {
                                *g += go[o] * hv;
                            }
                        }
                    }
                    matvec_t_add(w_hy, nh, &go, &mut gh);
                }
            }
            for (a, b) in gh.iter_mut().zip(&gh_next) {
                *a += b;
            }
            for i in 0..nh {
                ga[i] = gh[i] * Activation::LeakyRelu.derivative_at_output(tp.h[i]);
            }
            let h_before: &[f64] = if t == 0 { &zero_h } else { &tape[t - 1].h };
            let tp = &tape[t];
            if want_grad {
                let (wx, wh, bh) = (lay.w_xh(), lay.w_hh(), lay.b_h());
                for i in 0..nh {
                    let g = ga[i];
                    if g == 0.0 {
                        continue;
                    }
                    grad[bh.start + i] += g;
                    for (gw, v) in grad[wx.start + i * ni..wx.start + (i + 1) * ni].iter_mut().zip(&tp.feat) {
                        *gw += g * v;
                    }
                    for (gw, v) in grad[wh.start + i * nh..wh.start + (i + 1) * nh].iter_mut().zip(h_before) {
                        *gw += g * v;
                    }
                }
            }
            gh_next.fill(0.0);
            matvec_t_add(&params[lay.w_hh()], nh, &ga, &mut gh_next);
            gfeat.fill(0.0);
            matvec_t_add(&params[lay.w_xh()], ni, &ga, &mut gfeat);
            // features depend on x̄_t through ȳ = C̄ x̄ and the PCA projection
            matvec_t_add(&rom.c, n, &gfeat[2..2 + p], &mut gx);
            for (c, comp) in spec.pca.components.iter().enumerate().take(n_pca) {
                let g = gfeat[2 + p + c];
                for (a, v) in gx.iter_mut().zip(comp) {
                    *a += g * v;
                }
            }
            gx_next.copy_from_slice(&gx);
        }
        if let Some(inp) = inputs.as_mut() {
            inp.extend(seq_inputs);
        }
    }
    let scale = 1.0 / steps.max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (
        total.scaled(scale),
        GradientVector {
            params: grad,
            inputs,
        },
    )
}

/// Largest relative gap between `analytic` and central differences of `f`
/// at `point`, over a seeded random subset of `coords` coordinates (all of
/// them when the dimension is smaller). Relative error uses
/// `max(|a|, |fd|, 1e-7)` as denominator.
pub fn finite_diff_check<F>(f: F, point: &[f64], analytic: &[f64], step: f64, coords: usize, seed: u64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(point.len(), analytic.len());
    let dim = point.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = if coords >= dim {
        (0..dim).collect()
    } else {
        sample(&mut rng, dim, coords).into_vec()
    };
    let mut probe = point.to_vec();
    let mut worst = 0.0_f64;
    for i in picked {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, ElmanLayout, MlpShape, PcaBasis};
    use crate::ploss::PlossInput;
    use crate::rom::Series;
    use crate::train::{SampleTag, Split};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn tag() -> SampleTag {
        SampleTag {
            trajectory: 0,
            step: 0,
            epoch: 0,
            split: Split::Train,
        }
    }

    struct Fixture {
        rom: CascadeRom,
        spec: FeatureSpec,
        n: usize,
        m: usize,
        p: usize,
    }

    fn fixture(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize, n_pca: usize) -> Fixture {
        let mut ad = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        let rho = ad.row_sum().max();
        ad /= rho / 0.9;
        let bd = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..0.1));
        let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(0.0..1.0) / n as f64);
        let rom = DiscreteRom { ad, bd, c, dt: 1.0 };
        let spec = FeatureSpec {
            current_scale: 1000.0,
            feedback_scale: 50.0,
            pca: PcaBasis {
                mean: (0..n).map(|_| rng.random_range(0.0..0.5)).collect(),
                components: (0..n_pca)
                    .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
            },
        };
        Fixture {
            rom: CascadeRom::new(&rom),
            spec,
            n,
            m,
            p,
        }
    }

    fn rand_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(lo..hi)).collect()
    }

    fn step_sample(rng: &mut ChaCha8Rng, fx: &Fixture, n_in: usize) -> StepSample {
        StepSample {
            features: rand_vec(rng, n_in, -1.0, 1.0),
            // some nominal losses sit near zero so the penalty is active
            u_nom: rand_vec(rng, fx.m, -0.2, 0.8),
            x: rand_vec(rng, fx.n, 0.0, 1.0),
            y_next: rand_vec(rng, fx.p, 0.0, 1.0),
            tag: tag(),
        }
    }

    fn seq_sample(rng: &mut ChaCha8Rng, fx: &Fixture, len: usize) -> SequenceSample {
        let mut u_nom = Series::new(fx.m);
        let mut y_next = Series::new(fx.p);
        let mut z = Vec::new();
        for _ in 0..len {
            u_nom.push(&rand_vec(rng, fx.m, -0.2, 0.8));
            y_next.push(&rand_vec(rng, fx.p, 0.0, 1.0));
            z.push(PlossInput::new(rng.random_range(0.0..1000.0), 298.15 + rng.random_range(0.0..60.0)));
        }
        SequenceSample {
            x0: rand_vec(rng, fx.n, 0.0, 1.0),
            z,
            u_nom,
            y_next,
            tag: tag(),
        }
    }

    fn weights(alpha: f64, beta: f64) -> LossWeights {
        LossWeights {
            mse: 1.0,
            alpha,
            beta,
            zeta: 1.0,
        }
    }

    fn with_params(net: &CorrectionNet, params: &[f64]) -> CorrectionNet {
        let mut out = net.clone();
        out.params_mut().copy_from_slice(params);
        out
    }

    fn scaled_net(net: CorrectionNet, factor: f64) -> CorrectionNet {
        let mut net = net;
        net.params_mut().iter_mut().for_each(|v| *v *= factor);
        net
    }

    fn fd_discrepancy(fx: &Fixture, net: &CorrectionNet, batch: Batch<'_>, w: &LossWeights, step: f64, seed: u64) -> f64 {
        let cascade = Cascade {
            rom: &fx.rom,
            features: &fx.spec,
        };
        let (_, grad) = backward_cascade(cascade, net, batch, w, false).unwrap();
        finite_diff_check(
            |p| evaluate_loss(cascade, &with_params(net, p), batch, w).unwrap().total,
            net.params(),
            &grad.params,
            step,
            200,
            seed,
        )
    }

    #[test]
    fn perfect_fit_zero_net_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fx = fixture(&mut rng, 4, 3, 2, 2);
        let n_in = 2 + fx.p + 2;
        let net = CorrectionNet::Mlp(Mlp::zeros(MlpShape::new(vec![n_in, 5, fx.m], vec![Activation::Tanh; 2]).unwrap()));
        let mut s = step_sample(&mut rng, &fx, n_in);
        s.u_nom = vec![0.3; fx.m];
        let mut y = vec![0.0; fx.p];
        let mut y2 = vec![0.0; fx.p];
        matvec(&fx.rom.cad, fx.n, &s.x, &mut y);
        matvec(&fx.rom.cbd, fx.m, &s.u_nom, &mut y2);
        s.y_next = y.iter().zip(&y2).map(|(a, b)| a + b).collect();
        let cascade = Cascade {
            rom: &fx.rom,
            features: &fx.spec,
        };
        let (loss, grad) = backward_cascade(cascade, &net, Batch::Steps(&[&s]), &weights(1.0, 1e-3), false).unwrap();
        assert!(loss.total.abs() < 1e-30);
        assert!(grad.params.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn scalar_chain_rule() {
        // x' = a x + b u, y = c x', u = u0 + tanh(w f + v)
        let (a, b, c) = (0.8, 0.3, 1.5);
        let rom = DiscreteRom {
            ad: DMatrix::from_element(1, 1, a),
            bd: DMatrix::from_element(1, 1, b),
            c: DMatrix::from_element(1, 1, c),
            dt: 1.0,
        };
        let cr = CascadeRom::new(&rom);
        let spec = FeatureSpec {
            current_scale: 1.0,
            feedback_scale: 1.0,
            pca: PcaBasis::default(),
        };
        let (w, v) = (0.7, -0.2);
        let net = CorrectionNet::Mlp(Mlp::from_parts(MlpShape::new(vec![1, 1], vec![Activation::Tanh]).unwrap(), vec![w, v]).unwrap());
        let (feat, u0, x, target) = (0.9, -0.5, 0.4, 0.1);
        let s = StepSample {
            features: vec![feat],
            u_nom: vec![u0],
            x: vec![x],
            y_next: vec![target],
            tag: tag(),
        };
        let (alpha, beta) = (2.0, 0.3);
        let f = (w * feat + v).tanh();
        let u = u0 + f;
        assert!(u < 0.0);
        let y = c * (a * x + b * u);
        let loss = (y - target).powi(2) + alpha * u * u + beta * f.abs();
        let dl_du = 2.0 * (y - target) * c * b + 2.0 * alpha * u;
        let dl_df = dl_du + beta * f.signum();
        let dl_dpre = dl_df * (1.0 - f * f);
        let cascade = Cascade { rom: &cr, features: &spec };
        let (l, g) = backward_cascade(cascade, &net, Batch::Steps(&[&s]), &weights(alpha, beta), true).unwrap();
        assert!((l.total - loss).abs() < 1e-14);
        assert!((g.params[0] - dl_dpre * feat).abs() < 1e-14);
        assert!((g.params[1] - dl_dpre).abs() < 1e-14);
        let ig = input_gradients(cascade, &net, Batch::Steps(&[&s]), &weights(alpha, beta)).unwrap();
        assert!((ig[0] - dl_du.abs()).abs() < 1e-14);
    }

    #[test]
    fn mlp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for inst in 0..10 {
            let fx = fixture(&mut rng, 6, 4, 3, 2);
            let n_in = 2 + fx.p + 2;
            let shape = MlpShape::new(vec![n_in, 7, 5, fx.m], vec![Activation::Tanh; 3]).unwrap();
            let net = scaled_net(CorrectionNet::Mlp(Mlp::seeded(shape, inst)), 2.0);
            let samples: Vec<StepSample> = (0..8).map(|_| step_sample(&mut rng, &fx, n_in)).collect();
            let refs: Vec<&StepSample> = samples.iter().collect();
            let d = fd_discrepancy(&fx, &net, Batch::Steps(&refs), &weights(1.0, 0.05), 1e-5, inst);
            assert!(d <= 1e-4, "instance {inst}: {d}");
        }
    }

    #[test]
    fn elman_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for inst in 0..10 {
            let fx = fixture(&mut rng, 5, 3, 2, 2);
            let n_in = 2 + fx.p + 2;
            let head = (inst % 2 == 1).then(|| MlpShape::new(vec![6, 4, fx.m], vec![Activation::Tanh; 2]).unwrap());
            let layout = ElmanLayout {
                n_in,
                n_hidden: 6,
                n_out: fx.m,
                head,
            };
            let net = scaled_net(CorrectionNet::Elman(Elman::seeded(layout, inst)), 1.5);
            let samples: Vec<SequenceSample> = (0..3).map(|_| seq_sample(&mut rng, &fx, 6)).collect();
            let refs: Vec<&SequenceSample> = samples.iter().collect();
            let d = fd_discrepancy(&fx, &net, Batch::Sequences(&refs), &weights(1.0, 0.05), 1e-5, inst);
            assert!(d <= 1e-4, "instance {inst}: {d}");
        }
    }

    #[test]
    fn zero_input_column_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut fx = fixture(&mut rng, 4, 3, 2, 2);
        for i in 0..fx.n {
            fx.rom.bd[i * fx.m + 1] = 0.0;
        }
        for i in 0..fx.p {
            fx.rom.cbd[i * fx.m + 1] = 0.0;
        }
        let n_in = 2 + fx.p + 2;
        let shape = MlpShape::new(vec![n_in, 5, fx.m], vec![Activation::Tanh; 2]).unwrap();
        let net = CorrectionNet::Mlp(Mlp::seeded(shape, 0));
        let mut samples: Vec<StepSample> = (0..5).map(|_| step_sample(&mut rng, &fx, n_in)).collect();
        samples.iter_mut().for_each(|s| s.u_nom[1] = 2.0);
        let refs: Vec<&StepSample> = samples.iter().collect();
        let cascade = Cascade {
            rom: &fx.rom,
            features: &fx.spec,
        };
        let g = input_gradients(cascade, &net, Batch::Steps(&refs), &weights(1.0, 0.0)).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(g[0] > 0.0 && g[2] > 0.0);
    }

    #[test]
    fn doubling_mse_doubles_input_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fx = fixture(&mut rng, 5, 3, 2, 2);
        let layout = ElmanLayout {
            n_in: 2 + fx.p + 2,
            n_hidden: 4,
            n_out: fx.m,
            head: None,
        };
        let net = CorrectionNet::Elman(Elman::seeded(layout, 2));
        let samples: Vec<SequenceSample> = (0..2).map(|_| seq_sample(&mut rng, &fx, 5)).collect();
        let refs: Vec<&SequenceSample> = samples.iter().collect();
        let cascade = Cascade {
            rom: &fx.rom,
            features: &fx.spec,
        };
        let w1 = weights(0.0, 0.0);
        let w2 = LossWeights { mse: 2.0, ..w1 };
        let g1 = input_gradients(cascade, &net, Batch::Sequences(&refs), &w1).unwrap();
        let g2 = input_gradients(cascade, &net, Batch::Sequences(&refs), &w2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(*b, 2.0 * a);
        }
    }

    #[test]
    fn gradients_are_additive_over_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fx = fixture(&mut rng, 4, 3, 2, 2);
        let n_in = 2 + fx.p + 2;
        let shape = MlpShape::new(vec![n_in, 5, fx.m], vec![Activation::Tanh; 2]).unwrap();
        let net = CorrectionNet::Mlp(Mlp::seeded(shape, 1));
        let samples: Vec<StepSample> = (0..6).map(|_| step_sample(&mut rng, &fx, n_in)).collect();
        let all: Vec<&StepSample> = samples.iter().collect();
        let cascade = Cascade {
            rom: &fx.rom,
            features: &fx.spec,
        };
        let w = weights(1.0, 0.1);
        let (_, g_all) = backward_cascade(cascade, &net, Batch::Steps(&all), &w, false).unwrap();
        let (_, g_a) = backward_cascade(cascade, &net, Batch::Steps(&all[..2]), &w, false).unwrap();
        let (_, g_b) = backward_cascade(cascade, &net, Batch::Steps(&all[2..]), &w, false).unwrap();
        for i in 0..g_all.params.len() {
            let sum = (2.0 * g_a.params[i] + 4.0 * g_b.params[i]) / 6.0;
            assert!((g_all.params[i] - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
        }
    }

    #[test]
    fn unused_output_branch_gets_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fx = fixture(&mut rng, 4, 3, 2, 2);
        let layout = ElmanLayout {
            n_in: 2 + fx.p + 2,
            n_hidden: 5,
            n_out: fx.m,
            head: Some(MlpShape::new(vec![5, 4, fx.m], vec![Activation::Tanh; 2]).unwrap()),
        };
        let (w_hy, b_y) = (layout.w_hy(), layout.b_y());
        let mut el = Elman::seeded(layout, 3);
        el.params[w_hy.clone()].iter_mut().for_each(|v| *v = 0.3);
        let net = CorrectionNet::Elman(el);
        let samples: Vec<SequenceSample> = (0..2).map(|_| seq_sample(&mut rng, &fx, 4)).collect();
        let refs: Vec<&SequenceSample> = samples.iter().collect();
        let cascade = Cascade {
            rom: &fx.rom,
            features: &fx.spec,
        };
        let (_, g) = backward_cascade(cascade, &net, Batch::Sequences(&refs), &weights(1.0, 0.1), false).unwrap();
        assert!(g.params[w_hy].iter().chain(&g.params[b_y]).all(|v| *v == 0.0));
        assert!(g.params.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn length_one_sequence_equals_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fx = fixture(&mut rng, 5, 3, 2, 2);
        let n_in = 2 + fx.p + 2;
        let nh = 6;
        let layout = ElmanLayout {
            n_in,
            n_hidden: nh,
            n_out: fx.m,
            head: None,
        };
        let el = Elman::seeded(layout.clone(), 4);
        let shape = MlpShape::new(vec![n_in, nh, fx.m], vec![Activation::LeakyRelu, Activation::Tanh]).unwrap();
        let mut mp = Vec::new();
        mp.extend_from_slice(&el.params[layout.w_xh()]);
        mp.extend_from_slice(&el.params[layout.b_h()]);
        mp.extend_from_slice(&el.params[layout.w_hy()]);
        mp.extend_from_slice(&el.params[layout.b_y()]);
        let mlp = CorrectionNet::Mlp(Mlp::from_parts(shape, mp).unwrap());
        let seq = seq_sample(&mut rng, &fx, 1);
        let mut y = vec![0.0; fx.p];
        matvec(&fx.rom.c, fx.n, &seq.x0, &mut y);
        let step = StepSample {
            features: fx.spec.assemble(&seq.z[0], &y, &seq.x0).unwrap(),
            u_nom: seq.u_nom.row(0).to_vec(),
            x: seq.x0.clone(),
            y_next: seq.y_next.row(0).to_vec(),
            tag: tag(),
        };
        let cascade = Cascade {
            rom: &fx.rom,
            features: &fx.spec,
        };
        let w = weights(1.0, 0.1);
        let (ls, gs) = backward_cascade(cascade, &CorrectionNet::Elman(el), Batch::Sequences(&[&seq]), &w, false).unwrap();
        let (lm, gm) = backward_cascade(cascade, &mlp, Batch::Steps(&[&step]), &w, false).unwrap();
        assert!((ls.total - lm.total).abs() < 1e-14);
        let pairs = [
            (layout.w_xh(), 0..nh * n_in),
            (layout.b_h(), nh * n_in..nh * n_in + nh),
            (layout.w_hy(), nh * n_in + nh..nh * n_in + nh + fx.m * nh),
            (layout.b_y(), nh * n_in + nh + fx.m * nh..gm.params.len()),
        ];
        for (re, rm) in pairs {
            for (a, b) in gs.params[re].iter().zip(&gm.params[rm]) {
                assert!((a - b).abs() < 1e-14, "{a} vs {b}");
            }
        }
        assert!(gs.params[layout.w_hh()].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn finite_difference_harness() {
        let point: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin()).collect();
        let center: Vec<f64> = point.iter().map(|v| v + 0.01).collect();
        let quad = |p: &[f64]| {
            p.iter()
                .zip(&center)
                .enumerate()
                .map(|(i, (v, c))| (1.0 + i as f64 * 0.01) * (v - c) * (v - c))
                .sum::<f64>()
        };
        let grad: Vec<f64> = point
            .iter()
            .zip(&center)
            .enumerate()
            .map(|(i, (v, c))| 2.0 * (1.0 + i as f64 * 0.01) * (v - c))
            .collect();
        assert!(finite_diff_check(quad, &point, &grad, 1e-5, 250, 0) <= 1e-10);

        let wavy = |p: &[f64]| p.iter().map(|v| (2.0 * v).sin()).sum::<f64>();
        let wgrad: Vec<f64> = point.iter().map(|v| 2.0 * (2.0 * v).cos()).collect();
        let small = finite_diff_check(wavy, &point, &wgrad, 1e-4, 250, 0);
        let large = finite_diff_check(wavy, &point, &wgrad, 1e-3, 250, 0);
        assert!(large > small);
    }

    #[test]
    fn mismatched_layout_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let fx = fixture(&mut rng, 4, 3, 2, 2);
        let n_in = 2 + fx.p + 2;
        let net = CorrectionNet::Mlp(Mlp::seeded(MlpShape::new(vec![n_in, fx.m], vec![Activation::Tanh]).unwrap(), 0));
        let seq = seq_sample(&mut rng, &fx, 2);
        let cascade = Cascade {
            rom: &fx.rom,
            features: &fx.spec,
        };
        assert!(backward_cascade(cascade, &net, Batch::Sequences(&[&seq]), &weights(1.0, 0.0), false).is_err());
        assert!(backward_cascade(cascade, &net, Batch::Steps(&[]), &weights(1.0, 0.0), false).is_err());
    }
}
