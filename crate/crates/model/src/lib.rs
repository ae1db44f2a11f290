//! Neural model stack: motion-latent encoders, the retargeting decoder with
//! its supervision heads, the pixel↔latent packing, the flow-matched video
//! transformer with chunked sampling, and the motion prior.

pub mod dit;
pub mod encoders;
pub mod flow;
pub mod prior;
pub mod retarget;
pub mod sampler;
pub mod vae;

use ndarray::ArrayD;
use xum_core::nn::Ctx;
use xum_core::optim::GradMap;
use xum_core::tape::Grads;
use xum_core::{Scalar, Tape, Var};

pub use dit::{dit_forward_var, init_dit, timestep_features, token_layout, CondMask, GEN};
pub use encoders::{
    encode_batch_var, encode_face, encode_global, encode_hands, init_vit_encoder, kl_loss,
    sample_latent, vit_encoder_specs, ENC_FACE, ENC_GLOBAL, ENC_HAND,
};
pub use flow::{cfg_velocity, flow_interpolate, flow_match_loss_var, flow_target};
pub use prior::{
    horizon_mae, init_prior, prior_flow_loss_var, prior_forward_var, prior_sample, prior_seq_len,
    prior_specs, prior_token_dim, prior_train_step, split_motion_row, MotionSequence, PRIOR,
};
pub use retarget::{
    decode_expression, decode_hand_normals, decode_heatmaps, expression_head_var, heads_specs,
    heatmap_head_var, init_heads, init_retarget, normal_head_var, resize_guidance, retarget,
    retarget_batch_var, retarget_specs, SpatialMotionGuidance, HEAD_EXPR, HEAD_HM, HEAD_NRM, RET,
};
pub use sampler::{
    chunk_schedule, conditioning_from_latents, sample_chunk, sample_chunk_dual_branch,
    sample_video,
};
pub use vae::{decode_frame, encode_frame, latent_channels, vae_decode, vae_encode, VideoLatent};

/// Gather the gradients of every parameter the forward pass touched, keyed by
/// parameter name. Parameters bound but unreached by the loss are skipped.
pub fn collect_param_grads<S: Scalar>(ctx: &Ctx<S>, grads: &Grads<S>) -> GradMap<S> {
    let mut gm = GradMap::new();
    for (name, var) in ctx.bound_params() {
        if let Some(g) = grads.of(var) {
            gm.insert(name, g.clone());
        }
    }
    gm
}

/// Differentiable reparameterized draw z = mu + exp(logvar/2) · eps with the
/// noise held constant, so gradients flow into mu and logvar.
pub fn reparameterize<S: Scalar>(tape: &Tape<S>, mu: Var, logvar: Var, eps: ArrayD<S>) -> Var {
    let half = tape.scale(logvar, S::from_f(0.5));
    let std = tape.exp(half);
    tape.add(mu, tape.mul(std, tape.constant(eps)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use xum_core::rng_fork;

    #[test]
    fn reparameterize_matches_closed_form_and_grads() {
        let tape: Tape<f64> = Tape::new();
        let mu = tape.leaf(ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap());
        let lv = tape.leaf(ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![-0.4, 0.2, 0.0, 0.8, -1.0, 0.5]).unwrap());
        let mut rng = rng_fork(0, "rp");
        let eps = ArrayD::from_shape_vec(IxDyn(&[2, 3]), rng.normal_vec(6)).unwrap();
        let z = reparameterize(&tape, mu, lv, eps.clone());
        let zv = tape.val(z).to_owned();
        let muv = tape.val(mu).to_owned();
        let lvv = tape.val(lv).to_owned();
        for i in 0..6 {
            let want = muv.as_slice().unwrap()[i]
                + (lvv.as_slice().unwrap()[i] * 0.5).exp() * eps.as_slice().unwrap()[i];
            assert!((zv.as_slice().unwrap()[i] - want).abs() < 1e-15);
        }
        // d(sum z)/d mu = 1; d(sum z)/d logvar = eps/2 * exp(lv/2).
        let grads = tape.backward(tape.sum_all(z));
        let gm = grads.of(mu).unwrap();
        let gl = grads.of(lv).unwrap();
        for i in 0..6 {
            assert!((gm.as_slice().unwrap()[i] - 1.0).abs() < 1e-15);
            let want = 0.5 * eps.as_slice().unwrap()[i] * (lvv.as_slice().unwrap()[i] * 0.5).exp();
            assert!((gl.as_slice().unwrap()[i] - want).abs() < 1e-14);
        }
    }
}
