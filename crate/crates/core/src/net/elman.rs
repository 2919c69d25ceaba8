use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fill_uniform, Activation, MlpShape, MlpWorkspace, RNN_HIDDEN, RNN_INPUTS, RNN_OUTPUTS};
use crate::error::{check_len, Error, Result};

/// Offsets of each block inside the flat Elman parameter vector:
/// `W_xh | W_hh | b_h | W_hy | b_y | head`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElmanLayout {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    /// Optional multi-layer output head replacing `W_hy`/`b_y`.
    pub head: Option<MlpShape>,
}

impl ElmanLayout {
    pub fn w_xh(&self) -> std::ops::Range<usize> {
        0..self.n_hidden * self.n_in
    }

    pub fn w_hh(&self) -> std::ops::Range<usize> {
        let s = self.w_xh().end;
        s..s + self.n_hidden * self.n_hidden
    }

    pub fn b_h(&self) -> std::ops::Range<usize> {
        let s = self.w_hh().end;
        s..s + self.n_hidden
    }

    pub fn w_hy(&self) -> std::ops::Range<usize> {
        let s = self.b_h().end;
        s..s + self.n_out * self.n_hidden
    }

    pub fn b_y(&self) -> std::ops::Range<usize> {
        let s = self.w_hy().end;
        s..s + self.n_out
    }

    pub fn head_range(&self) -> std::ops::Range<usize> {
        let s = self.b_y().end;
        s..s + self.head.as_ref().map_or(0, MlpShape::n_params)
    }

    pub fn n_params(&self) -> usize {
        self.head_range().end
    }
}

/// Elman network: `h_k = leaky(W_xh x_k + W_hh h_{k-1} + b_h)`, output
/// `tanh(W_hy h_k + b_y)` or the optional head applied to `h_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Elman {
    pub layout: ElmanLayout,
    pub params: Vec<f64>,
}

/// Intermediate values of one recurrent step, enough to back-propagate it.
#[derive(Clone, Debug, Default)]
pub struct ElmanStep {
    pub h: Vec<f64>,
    pub out: Vec<f64>,
    pub head_ws: Option<MlpWorkspace>,
}

impl Elman {
    pub fn zeros(layout: ElmanLayout) -> Self {
        let params = vec![0.0; layout.n_params()];
        Self { layout, params }
    }

    pub fn seeded(layout: ElmanLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.n_params()];
        let (ni, nh, no) = (layout.n_in, layout.n_hidden, layout.n_out);
        fill_uniform(&mut params[layout.w_xh()], ni, nh, &mut rng);
        fill_uniform(&mut params[layout.w_hh()], nh, nh, &mut rng);
        fill_uniform(&mut params[layout.w_hy()], nh, no, &mut rng);
        if let Some(head) = &layout.head {
            let hp = head.init_params(&mut rng);
            params[layout.head_range()].copy_from_slice(&hp);
        }
        Self { layout, params }
    }

    pub fn from_parts(layout: ElmanLayout, params: Vec<f64>) -> Result<Self> {
        check_len("elman parameters", layout.n_params(), params.len())?;
        Ok(Self { layout, params })
    }

    pub fn hidden_size(&self) -> usize {
        self.layout.n_hidden
    }

    pub fn new_step(&self) -> ElmanStep {
        ElmanStep {
            h: vec![0.0; self.layout.n_hidden],
            out: vec![0.0; self.layout.n_out],
            head_ws: self.layout.head.as_ref().map(MlpShape::workspace),
        }
    }

    /// One recurrent step writing the new hidden state and output into `step`.
    pub fn step_into(&self, h_prev: &[f64], x: &[f64], step: &mut ElmanStep) {
        let l = &self.layout;
        let (ni, nh) = (l.n_in, l.n_hidden);
        let w_xh = &self.params[l.w_xh()];
        let w_hh = &self.params[l.w_hh()];
        let b_h = &self.params[l.b_h()];
        for i in 0..nh {
            let mut a = b_h[i];
            for (w, v) in w_xh[i * ni..(i + 1) * ni].iter().zip(x) {
                a += w * v;
            }
            for (w, v) in w_hh[i * nh..(i + 1) * nh].iter().zip(h_prev) {
                a += w * v;
            }
            step.h[i] = Activation::LeakyRelu.apply(a);
        }
        match (&l.head, step.head_ws.as_mut()) {
            (Some(head), Some(ws)) => {
                let out = head.forward(&self.params[l.head_range()], &step.h, ws);
                step.out.copy_from_slice(out);
            }
            _ => {
                let w_hy = &self.params[l.w_hy()];
                let b_y = &self.params[l.b_y()];
                for (o, out) in step.out.iter_mut().enumerate() {
                    let mut a = b_y[o];
                    for (w, v) in w_hy[o * nh..(o + 1) * nh].iter().zip(&step.h) {
                        a += w * v;
                    }
                    *out = a.tanh();
                }
            }
        }
    }
}

/// Default Elman corrector, 13 inputs, 25 hidden units, 16 outputs.
pub fn default_elman_layout(head_hidden: Option<Vec<usize>>) -> Result<ElmanLayout> {
    let head = match head_hidden {
        None => None,
        Some(hidden) => {
            let mut sizes = vec![RNN_HIDDEN];
            sizes.extend(hidden);
            sizes.push(RNN_OUTPUTS);
            let acts = vec![Activation::Tanh; sizes.len() - 1];
            Some(MlpShape::new(sizes, acts)?)
        }
    };
    Ok(ElmanLayout {
        n_in: RNN_INPUTS,
        n_hidden: RNN_HIDDEN,
        n_out: RNN_OUTPUTS,
        head,
    })
}

pub fn init_elman(seed: u64, head_hidden: Option<Vec<usize>>) -> Result<Elman> {
    Ok(Elman::seeded(default_elman_layout(head_hidden)?, seed))
}

/// `(h, correction)` for one step from `h_prev` and `features`.
pub fn rnn_step(params: &Elman, h_prev: &[f64], features: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("hidden state", params.layout.n_hidden, h_prev.len())?;
    check_len("features", params.layout.n_in, features.len())?;
    if params.params.len() != params.layout.n_params() {
        return Err(Error::Config("elman parameter vector does not match layout".into()));
    }
    let mut step = params.new_step();
    params.step_into(h_prev, features, &mut step);
    Ok((step.h, step.out))
}
