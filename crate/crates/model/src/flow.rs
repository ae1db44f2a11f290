//! Rectified-flow objective and classifier-free-guidance combination.
//!
//! Convention fixed across the whole crate: `x_t = (1−t)·ε + t·x1`, target
//! velocity `v* = x1 − ε`, Euler integration from t=0 (pure noise) toward
//! t=1 (data).

use ndarray::ArrayD;
use xum_core::nn::{mse, Ctx};
use xum_core::{Config, Result, Scalar, Var};

use crate::dit::{dit_forward_var, CondMask};

/// Interpolant `x_t = (1−t)·ε + t·x1`.
pub fn flow_interpolate<S: Scalar>(x1: &ArrayD<S>, eps: &ArrayD<S>, t: f64) -> ArrayD<S> {
    let (a, b) = (S::from_f(1.0 - t), S::from_f(t));
    let mut out = eps.mapv(|e| e * a);
    out.zip_mut_with(x1, |o, &x| *o = *o + x * b);
    out
}

/// Target velocity `v* = x1 − ε`.
pub fn flow_target<S: Scalar>(x1: &ArrayD<S>, eps: &ArrayD<S>) -> ArrayD<S> {
    let mut out = x1.clone();
    out.zip_mut_with(eps, |o, &e| *o = *o - e);
    out
}

/// CFG combination `v_u + s·(v_c − v_u)`; `s = 1` returns `v_c` exactly.
pub fn cfg_velocity<S: Scalar>(v_uncond: &ArrayD<S>, v_cond: &ArrayD<S>, s: f64) -> ArrayD<S> {
    if s == 1.0 {
        return v_cond.clone();
    }
    let sv = S::from_f(s);
    let mut out = v_uncond.clone();
    out.zip_mut_with(v_cond, |u, &c| *u = *u + (c - *u) * sv);
    out
}

/// Flow-matching MSE on a batch. `x1`/`eps` are (B, T, L, L, C_v) data and
/// noise; `t` gives one flow time per sample; conditioning variables are as
/// in [`dit_forward_var`].
#[allow(clippy::too_many_arguments)]
pub fn flow_match_loss_var<S: Scalar>(
    ctx: &Ctx<S>,
    cfg: &Config,
    x1: &ArrayD<S>,
    eps: &ArrayD<S>,
    t: &[f64],
    ref_latent: Var,
    guidance: Var,
    z_f: Var,
    mask: &CondMask,
) -> Result<Var> {
    let tape = ctx.tape;
    let mut xt = x1.clone();
    for (b, &tb) in t.iter().enumerate() {
        let (ka, kb) = (S::from_f(1.0 - tb), S::from_f(tb));
        xt.index_axis_mut(ndarray::Axis(0), b)
            .zip_mut_with(&eps.index_axis(ndarray::Axis(0), b), |o, &e| {
                *o = e * ka + *o * kb
            });
    }
    let noised = tape.constant(xt);
    let v = dit_forward_var(ctx, cfg, noised, t, ref_latent, guidance, z_f, mask)?;
    let target = tape.constant(flow_target(x1, eps));
    Ok(mse(tape, v, target))
}
