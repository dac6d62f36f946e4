//! GRU cell with dropout on the emitted hidden state.
//!
//! ```text
//! r   = σ(x·U_r + h_prev·W_r + b_r)
//! z   = σ(x·U_z + h_prev·W_z + b_z)
//! h̄   = tanh(x·U_h + (r ⊙ h_prev)·W_h + b_h)
//! h_t = m ⊙ (z ⊙ h_prev + (1 − z) ⊙ h̄)
//! ```
//!
//! `m` is an inverted-dropout mask resampled every step, entries in
//! `{0, 1/(1-p)}`. The masked state is what the next step and the output
//! layer see.

use crate::error::{Error, Result};
use crate::nn::linalg::{
    add_assign, mat_vec_acc, outer_acc, sigmoid_scalar, vec_mat_acc, Matrix, Vector,
};
use crate::nn::rng::RngStream;

/// Largest dropout probability accepted anywhere in the crate.
pub const MAX_DROPOUT: f64 = 0.95;

pub fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..=MAX_DROPOUT).contains(&p) {
        return Err(Error::Parameter(format!(
            "dropout probability {p} outside [0, {MAX_DROPOUT}]"
        )));
    }
    Ok(())
}

/// Inverted dropout mask. `p == 0` yields exact ones and leaves `rng`
/// untouched.
pub fn dropout_mask(p: f64, dim: usize, rng: &mut RngStream) -> Result<Vector> {
    check_dropout(p)?;
    if p == 0.0 {
        return Ok(Vector::filled(dim, 1.0));
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..dim)
        .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
        .collect::<Vec<_>>()
        .into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub u_r: Matrix,
    pub u_z: Matrix,
    pub u_h: Matrix,
    pub w_r: Matrix,
    pub w_z: Matrix,
    pub w_h: Matrix,
    pub b_r: Vector,
    pub b_z: Vector,
    pub b_h: Vector,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruParams {
            input_dim,
            hidden_dim,
            u_r: Matrix::zeros(input_dim, hidden_dim),
            u_z: Matrix::zeros(input_dim, hidden_dim),
            u_h: Matrix::zeros(input_dim, hidden_dim),
            w_r: Matrix::zeros(hidden_dim, hidden_dim),
            w_z: Matrix::zeros(hidden_dim, hidden_dim),
            w_h: Matrix::zeros(hidden_dim, hidden_dim),
            b_r: Vector::zeros(hidden_dim),
            b_z: Vector::zeros(hidden_dim),
            b_h: Vector::zeros(hidden_dim),
        }
    }

    /// Fan-in uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut RngStream) -> Self {
        GruParams {
            input_dim,
            hidden_dim,
            u_r: Matrix::fan_in_uniform(input_dim, hidden_dim, rng),
            u_z: Matrix::fan_in_uniform(input_dim, hidden_dim, rng),
            u_h: Matrix::fan_in_uniform(input_dim, hidden_dim, rng),
            w_r: Matrix::fan_in_uniform(hidden_dim, hidden_dim, rng),
            w_z: Matrix::fan_in_uniform(hidden_dim, hidden_dim, rng),
            w_h: Matrix::fan_in_uniform(hidden_dim, hidden_dim, rng),
            b_r: Vector::zeros(hidden_dim),
            b_z: Vector::zeros(hidden_dim),
            b_h: Vector::zeros(hidden_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        GruParams::zeros(self.input_dim, self.hidden_dim)
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 9] {
        [
            ("gru.u_r", self.u_r.data()),
            ("gru.u_z", self.u_z.data()),
            ("gru.u_h", self.u_h.data()),
            ("gru.w_r", self.w_r.data()),
            ("gru.w_z", self.w_z.data()),
            ("gru.w_h", self.w_h.data()),
            ("gru.b_r", &self.b_r),
            ("gru.b_z", &self.b_z),
            ("gru.b_h", &self.b_h),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 9] {
        [
            ("gru.u_r", self.u_r.data_mut()),
            ("gru.u_z", self.u_z.data_mut()),
            ("gru.u_h", self.u_h.data_mut()),
            ("gru.w_r", self.w_r.data_mut()),
            ("gru.w_z", self.w_z.data_mut()),
            ("gru.w_h", self.w_h.data_mut()),
            ("gru.b_r", &mut self.b_r),
            ("gru.b_z", &mut self.b_z),
            ("gru.b_h", &mut self.b_h),
        ]
    }

    fn check_shapes(&self) -> Result<()> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        let ok = [&self.u_r, &self.u_z, &self.u_h]
            .iter()
            .all(|m| m.shape() == (i, h))
            && [&self.w_r, &self.w_z, &self.w_h]
                .iter()
                .all(|m| m.shape() == (h, h))
            && [&self.b_r, &self.b_z, &self.b_h]
                .iter()
                .all(|b| b.dim() == h);
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "GruParams",
                "tensor shapes disagree with dims",
            ))
        }
    }
}

/// Everything one step's backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStepCache {
    pub x: Vector,
    pub h_prev: Vector,
    pub r: Vector,
    pub z: Vector,
    pub h_cand: Vector,
    pub mask: Vector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GruCache {
    pub steps: Vec<GruStepCache>,
}

impl GruCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

struct Gates {
    r: Vector,
    z: Vector,
    h_cand: Vector,
    state: Vector,
}

fn gates(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<Gates> {
    if x.len() != p.input_dim {
        return Err(Error::shape(
            "gru_step",
            format!("x has dim {} but input_dim is {}", x.len(), p.input_dim),
        ));
    }
    if h_prev.len() != p.hidden_dim {
        return Err(Error::shape(
            "gru_step",
            format!(
                "h_prev has dim {} but hidden_dim is {}",
                h_prev.len(),
                p.hidden_dim
            ),
        ));
    }
    p.check_shapes()?;
    let n = p.hidden_dim;

    let mut a_r = p.b_r.clone();
    vec_mat_acc(x, &p.u_r, &mut a_r);
    vec_mat_acc(h_prev, &p.w_r, &mut a_r);
    let mut a_z = p.b_z.clone();
    vec_mat_acc(x, &p.u_z, &mut a_z);
    vec_mat_acc(h_prev, &p.w_z, &mut a_z);
    let r: Vector = a_r
        .iter()
        .map(|&v| sigmoid_scalar(v))
        .collect::<Vec<_>>()
        .into();
    let z: Vector = a_z
        .iter()
        .map(|&v| sigmoid_scalar(v))
        .collect::<Vec<_>>()
        .into();

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut a_h = p.b_h.clone();
    vec_mat_acc(x, &p.u_h, &mut a_h);
    vec_mat_acc(&rh, &p.w_h, &mut a_h);
    let h_cand: Vector = a_h.iter().map(|v| v.tanh()).collect::<Vec<_>>().into();

    let state: Vector = (0..n)
        .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * h_cand[i])
        .collect::<Vec<_>>()
        .into();
    Ok(Gates {
        r,
        z,
        h_cand,
        state,
    })
}

/// One recurrent step with hidden-state dropout probability `p`.
pub fn gru_step(
    x: &[f64],
    h_prev: &[f64],
    params: &GruParams,
    p: f64,
    rng: &mut RngStream,
) -> Result<(Vector, GruStepCache)> {
    check_dropout(p)?;
    let g = gates(x, h_prev, params)?;
    let mask = dropout_mask(p, params.hidden_dim, rng)?;
    let h: Vector = g
        .state
        .iter()
        .zip(mask.iter())
        .map(|(s, m)| s * m)
        .collect::<Vec<_>>()
        .into();
    let cache = GruStepCache {
        x: x.into(),
        h_prev: h_prev.into(),
        r: g.r,
        z: g.z,
        h_cand: g.h_cand,
        mask,
    };
    Ok((h, cache))
}

/// The same step with no dropout stage at all.
pub fn gru_step_clean(x: &[f64], h_prev: &[f64], params: &GruParams) -> Result<Vector> {
    Ok(gates(x, h_prev, params)?.state)
}

/// Backpropagation through time over a recorded sequence.
///
/// `upstream[t]` is the gradient of the loss w.r.t. the emitted `h_t` from
/// everything other than the next recurrent step (the output layer, or for
/// a final-state loss, zeros everywhere but the last entry). Parameter
/// gradients are added into `grads`; returns the per-step input gradients
/// and the gradient w.r.t. the initial hidden state.
pub fn gru_backprop(
    cache: &GruCache,
    upstream: &[Vector],
    params: &GruParams,
    grads: &mut GruParams,
) -> Result<(Vec<Vector>, Vector)> {
    let n = params.hidden_dim;
    if upstream.len() != cache.len() {
        return Err(Error::Contract(format!(
            "{} upstream gradients for {} cached steps",
            upstream.len(),
            cache.len()
        )));
    }
    if grads.input_dim != params.input_dim || grads.hidden_dim != n {
        return Err(Error::Contract(
            "gradient buffers do not match params".into(),
        ));
    }
    params.check_shapes()?;
    grads.check_shapes()?;
    for (t, step) in cache.steps.iter().enumerate() {
        if step.x.dim() != params.input_dim
            || step.h_prev.dim() != n
            || step.mask.dim() != n
            || upstream[t].dim() != n
        {
            return Err(Error::Contract(format!(
                "cached step {t} does not match params (input {}, hidden {n})",
                params.input_dim
            )));
        }
    }

    let mut dx_steps = vec![Vector::zeros(params.input_dim); cache.len()];
    let mut dh_next = Vector::zeros(n);
    let mut da_r = vec![0.0; n];
    let mut da_z = vec![0.0; n];
    let mut da_h = vec![0.0; n];
    let mut d_rh = vec![0.0; n];

    for t in (0..cache.len()).rev() {
        let s = &cache.steps[t];
        let mut dh_prev = Vector::zeros(n);
        for i in 0..n {
            let dh = upstream[t][i] + dh_next[i];
            let ds = dh * s.mask[i];
            let dz = ds * (s.h_prev[i] - s.h_cand[i]);
            let dhc = ds * (1.0 - s.z[i]);
            dh_prev[i] = ds * s.z[i];
            da_h[i] = dhc * (1.0 - s.h_cand[i] * s.h_cand[i]);
            da_z[i] = dz * s.z[i] * (1.0 - s.z[i]);
        }

        let rh: Vec<f64> =
            s.r.iter()
                .zip(s.h_prev.iter())
                .map(|(a, b)| a * b)
                .collect();
        outer_acc(&mut grads.u_h, &s.x, &da_h);
        outer_acc(&mut grads.w_h, &rh, &da_h);
        add_assign(&mut grads.b_h, &da_h);
        d_rh.iter_mut().for_each(|v| *v = 0.0);
        mat_vec_acc(&params.w_h, &da_h, &mut d_rh);
        for i in 0..n {
            dh_prev[i] += d_rh[i] * s.r[i];
            let dr = d_rh[i] * s.h_prev[i];
            da_r[i] = dr * s.r[i] * (1.0 - s.r[i]);
        }

        outer_acc(&mut grads.u_z, &s.x, &da_z);
        outer_acc(&mut grads.w_z, &s.h_prev, &da_z);
        add_assign(&mut grads.b_z, &da_z);
        outer_acc(&mut grads.u_r, &s.x, &da_r);
        outer_acc(&mut grads.w_r, &s.h_prev, &da_r);
        add_assign(&mut grads.b_r, &da_r);

        mat_vec_acc(&params.w_z, &da_z, &mut dh_prev);
        mat_vec_acc(&params.w_r, &da_r, &mut dh_prev);

        let dx = &mut dx_steps[t];
        mat_vec_acc(&params.u_h, &da_h, dx);
        mat_vec_acc(&params.u_z, &da_z, dx);
        mat_vec_acc(&params.u_r, &da_r, dx);

        dh_next = dh_prev;
    }
    Ok((dx_steps, dh_next))
}
