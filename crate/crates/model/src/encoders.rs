//! ViT motion encoders.
//!
//! Three encoders share one architecture: a global body encoder, a face-crop
//! encoder, and a single hand encoder that serves both hands — the right-hand
//! crop is horizontally flipped before encoding so one set of weights learns
//! one chirality. Each maps a square frame to a diagonal Gaussian over a
//! `latent_dim`-dimensional motion token via patchify → transformer blocks
//! over [query ++ patches] → the query token → a two-stage head emitting
//! (mu ‖ logvar).

use ndarray::{Array1, Array4, Axis};
use xum_core::nn::{
    add_param, encoder_block, encoder_block_specs, init_encoder_block, init_layer_norm,
    init_linear, layer_norm, layer_norm_specs, linear, linear_specs, Ctx, Init, ParamStore,
};
use xum_core::types::{LOGVAR_MAX, LOGVAR_MIN};
use xum_core::{Config, Error, Frame, GaussianLatent, RandomStream, Result, Scalar, Tape, Var};

/// Parameter prefix of the global body encoder.
pub const ENC_GLOBAL: &str = "enc.global";
/// Parameter prefix of the face-crop encoder.
pub const ENC_FACE: &str = "enc.face";
/// Parameter prefix of the shared hand encoder.
pub const ENC_HAND: &str = "enc.hand";

fn patch_count(cfg: &Config) -> usize {
    let g = cfg.image_size / cfg.patch_size;
    g * g
}

/// Register one ViT encoder's parameters under `prefix`.
pub fn init_vit_encoder<S: Scalar>(store: &mut ParamStore<S>, seed: u64, prefix: &str, cfg: &Config) {
    let w = cfg.encoder_width;
    let in_dim = cfg.patch_size * cfg.patch_size * 3;
    init_linear(store, seed, &format!("{prefix}.patch"), in_dim, w, Init::Normal(0.02));
    add_param(store, seed, &format!("{prefix}.pos"), &[patch_count(cfg), w], Init::Normal(0.02));
    add_param(store, seed, &format!("{prefix}.query"), &[1, 1, w], Init::Normal(0.02));
    for i in 0..cfg.encoder_depth {
        init_encoder_block(store, seed, &format!("{prefix}.blk{i}"), w);
    }
    init_layer_norm(store, seed, &format!("{prefix}.ln_out"), w);
    init_linear(store, seed, &format!("{prefix}.head.c1"), w, w, Init::Normal(0.02));
    init_linear(store, seed, &format!("{prefix}.head.c2"), w, 2 * cfg.latent_dim, Init::Normal(0.02));
}

/// Expected (name, shape) pairs for one encoder, for checkpoint validation.
pub fn vit_encoder_specs(prefix: &str, cfg: &Config) -> Vec<(String, Vec<usize>)> {
    let w = cfg.encoder_width;
    let mut v = linear_specs(&format!("{prefix}.patch"), cfg.patch_size * cfg.patch_size * 3, w);
    v.push((format!("{prefix}.pos"), vec![patch_count(cfg), w]));
    v.push((format!("{prefix}.query"), vec![1, 1, w]));
    for i in 0..cfg.encoder_depth {
        v.extend(encoder_block_specs(&format!("{prefix}.blk{i}"), w));
    }
    v.extend(layer_norm_specs(&format!("{prefix}.ln_out"), w));
    v.extend(linear_specs(&format!("{prefix}.head.c1"), w, w));
    v.extend(linear_specs(&format!("{prefix}.head.c2"), w, 2 * cfg.latent_dim));
    v
}

/// Stack frames into a (B, H, W, 3) constant after validating sizes.
pub fn frames_constant<S: Scalar>(tape: &Tape<S>, cfg: &Config, frames: &[Frame<S>]) -> Result<Var> {
    let side = cfg.image_size;
    let mut batch = Array4::<S>::zeros((frames.len(), side, side, 3));
    for (i, f) in frames.iter().enumerate() {
        if !f.is_square(side) {
            return Err(Error::shape(
                "encoder input (resizing is the caller's job)",
                &[side, side, 3],
                f.pixels.shape(),
            ));
        }
        batch.index_axis_mut(Axis(0), i).assign(&f.pixels);
    }
    Ok(tape.constant(batch.into_dyn()))
}

/// (B, H, W, 3) image variable → (B, n_patches, patch²·3) token variable.
pub fn patchify<S: Scalar>(tape: &Tape<S>, images: Var, patch: usize) -> Var {
    let sh = tape.shape(images);
    let (b, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
    let (gh, gw) = (h / patch, w / patch);
    let x = tape.reshape(images, &[b, gh, patch, gw, patch, c]);
    let x = tape.permute(x, &[0, 1, 3, 2, 4, 5]);
    tape.reshape(x, &[b, gh * gw, patch * patch * c])
}

/// Batched encoder forward. Returns (mu, logvar) variables, each (B, d);
/// logvar is clamped to the global finite range.
pub fn encode_batch_var<S: Scalar>(
    ctx: &Ctx<S>,
    cfg: &Config,
    prefix: &str,
    frames: &[Frame<S>],
) -> Result<(Var, Var)> {
    let t = ctx.tape;
    let b = frames.len();
    let images = frames_constant(t, cfg, frames)?;
    let tokens = patchify(t, images, cfg.patch_size);
    let tokens = linear(ctx, &format!("{prefix}.patch"), tokens);
    let tokens = t.add(tokens, ctx.p(&format!("{prefix}.pos")));
    let query = t.expand(ctx.p(&format!("{prefix}.query")), &[b, 1, cfg.encoder_width]);
    let mut x = t.concat(1, &[query, tokens]);
    for i in 0..cfg.encoder_depth {
        x = encoder_block(ctx, &format!("{prefix}.blk{i}"), x, cfg.encoder_heads);
    }
    let pooled = t.slice(x, 1, 0, 1);
    let pooled = layer_norm(ctx, &format!("{prefix}.ln_out"), pooled);
    let h = linear(ctx, &format!("{prefix}.head.c1"), pooled);
    let h = t.gelu(h);
    let out = linear(ctx, &format!("{prefix}.head.c2"), h);
    let out = t.reshape(out, &[b, 2 * cfg.latent_dim]);
    let mu = t.slice(out, 1, 0, cfg.latent_dim);
    let logvar = t.slice(out, 1, cfg.latent_dim, cfg.latent_dim);
    let logvar = t.clamp(logvar, S::from_f(LOGVAR_MIN), S::from_f(LOGVAR_MAX));
    Ok((mu, logvar))
}

fn encode_one<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    prefix: &str,
    frame: &Frame<S>,
) -> Result<GaussianLatent<S>> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, false);
    let (mu, logvar) = encode_batch_var(&ctx, cfg, prefix, std::slice::from_ref(frame))?;
    let take = |v: Var| -> Array1<S> {
        tape.val(v)
            .index_axis(Axis(0), 0)
            .to_owned()
            .into_dimensionality()
            .expect("latent is 1-D per row")
    };
    GaussianLatent::new(take(mu), take(logvar))
}

/// Encode a full frame with the global body encoder.
pub fn encode_global<S: Scalar>(store: &ParamStore<S>, cfg: &Config, frame: &Frame<S>) -> Result<GaussianLatent<S>> {
    encode_one(store, cfg, ENC_GLOBAL, frame)
}

/// Encode a square face crop (already resized to the model's input side).
pub fn encode_face<S: Scalar>(store: &ParamStore<S>, cfg: &Config, crop: &Frame<S>) -> Result<GaussianLatent<S>> {
    encode_one(store, cfg, ENC_FACE, crop)
}

/// Encode both hand crops with the shared hand encoder. The right crop is
/// horizontally flipped first, so `encode_hands(a, hflip(a))` yields two
/// identical latents.
pub fn encode_hands<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    lh_crop: &Frame<S>,
    rh_crop: &Frame<S>,
) -> Result<(GaussianLatent<S>, GaussianLatent<S>)> {
    let z_lh = encode_one(store, cfg, ENC_HAND, lh_crop)?;
    let z_rh = encode_one(store, cfg, ENC_HAND, &rh_crop.hflip())?;
    Ok((z_lh, z_rh))
}

/// KL(q ‖ N(0, I)) of one latent: 0.5 · Σ (mu² + e^logvar − 1 − logvar).
pub fn kl_loss<S: Scalar>(g: &GaussianLatent<S>) -> f64 {
    g.mu
        .iter()
        .zip(g.logvar.iter())
        .map(|(&m, &lv)| {
            let (m, lv) = (m.to_f(), lv.to_f());
            0.5 * (m * m + lv.exp() - 1.0 - lv)
        })
        .sum()
}

/// Reparameterized draw in train mode; the mean exactly in eval mode.
pub fn sample_latent<S: Scalar>(g: &GaussianLatent<S>, rng: &mut RandomStream, train_mode: bool) -> Array1<S> {
    if !train_mode {
        return g.mu.clone();
    }
    let mut out = g.mu.clone();
    for (o, &lv) in out.iter_mut().zip(g.logvar.iter()) {
        let std = (lv.to_f() / 2.0).exp();
        *o = *o + S::from_f(std * rng.normal_f64());
    }
    out
}
