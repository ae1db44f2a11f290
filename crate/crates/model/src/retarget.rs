//! Asymmetric ViT retargeting decoder and its supervised heads.
//!
//! The decoder fuses the body latent and both hand latents with linearly
//! projected patches of the *reference* frame: the joint token sequence
//! `[proj(z), proj(z_lh), proj(z_rh)] ++ patches(I_ref)` runs through
//! transformer blocks, the three motion tokens are dropped, and the updated
//! visual tokens become an identity-aligned spatial guidance grid. Two
//! convolutional heads supervise that grid (joint heatmaps, hand normal
//! maps); a small MLP regresses facial parameters from the face latent.

use ndarray::{Array1, Array3, Axis};
use xum_core::nn::{
    add_param, conv2d, conv2d_specs, encoder_block, encoder_block_specs, init_conv2d,
    init_encoder_block, init_layer_norm, init_linear, layer_norm, layer_norm_specs, linear,
    linear_specs, Ctx, Init, ParamStore,
};
use xum_core::{Config, Error, Frame, Result, Scalar, Tape, Var};
use xum_syndata::ExpressionSpec;

use crate::encoders::{frames_constant, patchify};

/// Parameter prefix of the retargeting decoder.
pub const RET: &str = "ret";
/// Parameter prefix of the heatmap head.
pub const HEAD_HM: &str = "head.hm";
/// Parameter prefix of the hand-normal head.
pub const HEAD_NRM: &str = "head.nrm";
/// Parameter prefix of the facial regression head.
pub const HEAD_EXPR: &str = "head.expr";

/// Identity-aligned motion guidance produced by the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMotionGuidance<S: Scalar> {
    /// Pre-resize decoder output, (C_g, G, G) with G = image/patch. The
    /// supervised heads consume this, richer, grid.
    pub grid: Array3<S>,
    /// Bilinear resize of `grid` to the video-latent side, (C_g, L, L); the
    /// generator conditions on this copy.
    pub latent_grid: Array3<S>,
}

fn grid_side(cfg: &Config) -> usize {
    cfg.image_size / cfg.patch_size
}

/// Register decoder parameters.
pub fn init_retarget<S: Scalar>(store: &mut ParamStore<S>, seed: u64, cfg: &Config) {
    let w = cfg.encoder_width;
    let d = cfg.latent_dim;
    let n = grid_side(cfg) * grid_side(cfg);
    for tok in ["proj_z", "proj_lh", "proj_rh"] {
        init_linear(store, seed, &format!("{RET}.{tok}"), d, w, Init::Normal(0.02));
    }
    init_linear(store, seed, &format!("{RET}.patch"), cfg.patch_size * cfg.patch_size * 3, w, Init::Normal(0.02));
    add_param(store, seed, &format!("{RET}.pos_motion"), &[3, w], Init::Normal(0.02));
    add_param(store, seed, &format!("{RET}.pos_patch"), &[n, w], Init::Normal(0.02));
    for i in 0..cfg.encoder_depth {
        init_encoder_block(store, seed, &format!("{RET}.blk{i}"), w);
    }
    init_layer_norm(store, seed, &format!("{RET}.ln_out"), w);
    init_linear(store, seed, &format!("{RET}.out"), w, cfg.guidance_channels, Init::Normal(0.02));
}

pub fn retarget_specs(cfg: &Config) -> Vec<(String, Vec<usize>)> {
    let w = cfg.encoder_width;
    let n = grid_side(cfg) * grid_side(cfg);
    let mut v = vec![];
    for tok in ["proj_z", "proj_lh", "proj_rh"] {
        v.extend(linear_specs(&format!("{RET}.{tok}"), cfg.latent_dim, w));
    }
    v.extend(linear_specs(&format!("{RET}.patch"), cfg.patch_size * cfg.patch_size * 3, w));
    v.push((format!("{RET}.pos_motion"), vec![3, w]));
    v.push((format!("{RET}.pos_patch"), vec![n, w]));
    for i in 0..cfg.encoder_depth {
        v.extend(encoder_block_specs(&format!("{RET}.blk{i}"), w));
    }
    v.extend(layer_norm_specs(&format!("{RET}.ln_out"), w));
    v.extend(linear_specs(&format!("{RET}.out"), w, cfg.guidance_channels));
    v
}

/// Upsampling stages for a head running G → image side by repeated ×2.
fn head_stages(cfg: &Config) -> usize {
    let ratio = cfg.patch_size;
    assert!(
        ratio.is_power_of_two(),
        "head upsampling needs image/grid ratio (= patch_size {ratio}) to be a power of two"
    );
    ratio.trailing_zeros() as usize
}

/// (cin, cout) per conv stage; the final stage emits `out_ch`.
fn head_channel_plan(cfg: &Config, out_ch: usize) -> Vec<(usize, usize)> {
    let stages = head_stages(cfg);
    let mid = |i: usize| (32usize >> i).max(8);
    (0..stages)
        .map(|i| {
            let cin = if i == 0 { cfg.guidance_channels } else { mid(i - 1) };
            let cout = if i + 1 == stages { out_ch } else { mid(i) };
            (cin, cout)
        })
        .collect()
}

/// Register one conv head; the final conv is zero-initialized so predictions
/// start at exactly zero.
fn init_head<S: Scalar>(store: &mut ParamStore<S>, seed: u64, prefix: &str, cfg: &Config, out_ch: usize) {
    let plan = head_channel_plan(cfg, out_ch);
    let last = plan.len() - 1;
    for (i, (cin, cout)) in plan.iter().enumerate() {
        let init = if i == last { Init::Zeros } else { Init::Normal(0.05) };
        init_conv2d(store, seed, &format!("{prefix}.c{i}"), *cin, *cout, 3, init);
    }
}

fn head_specs(prefix: &str, cfg: &Config, out_ch: usize) -> Vec<(String, Vec<usize>)> {
    head_channel_plan(cfg, out_ch)
        .iter()
        .enumerate()
        .flat_map(|(i, (cin, cout))| conv2d_specs(&format!("{prefix}.c{i}"), *cin, *cout, 3))
        .collect()
}

/// Register all three supervised heads.
pub fn init_heads<S: Scalar>(store: &mut ParamStore<S>, seed: u64, cfg: &Config) {
    init_head(store, seed, HEAD_HM, cfg, cfg.joints);
    init_head(store, seed, HEAD_NRM, cfg, 3);
    init_linear(store, seed, &format!("{HEAD_EXPR}.fc1"), cfg.latent_dim, cfg.encoder_width, Init::Normal(0.02));
    init_linear(store, seed, &format!("{HEAD_EXPR}.fc2"), cfg.encoder_width, ExpressionSpec::DIM, Init::Normal(0.02));
}

pub fn heads_specs(cfg: &Config) -> Vec<(String, Vec<usize>)> {
    let mut v = head_specs(HEAD_HM, cfg, cfg.joints);
    v.extend(head_specs(HEAD_NRM, cfg, 3));
    v.extend(linear_specs(&format!("{HEAD_EXPR}.fc1"), cfg.latent_dim, cfg.encoder_width));
    v.extend(linear_specs(&format!("{HEAD_EXPR}.fc2"), cfg.encoder_width, ExpressionSpec::DIM));
    v
}

/// Batched decoder forward. `z*` are (B, d) motion vectors; `refs` holds the
/// B reference frames. Returns the guidance grid (B, C_g, G, G).
pub fn retarget_batch_var<S: Scalar>(
    ctx: &Ctx<S>,
    cfg: &Config,
    z: Var,
    z_lh: Var,
    z_rh: Var,
    refs: &[Frame<S>],
) -> Result<Var> {
    let t = ctx.tape;
    let b = refs.len();
    for (name, v) in [("z", z), ("z_lh", z_lh), ("z_rh", z_rh)] {
        let sh = t.shape(v);
        if sh != [b, cfg.latent_dim] {
            return Err(Error::shape(format!("retarget {name}"), &[b, cfg.latent_dim], &sh));
        }
    }
    let w = cfg.encoder_width;
    let as_token = |prefix: &str, v: Var| -> Var {
        let p = linear(ctx, &format!("{RET}.{prefix}"), v);
        t.reshape(p, &[b, 1, w])
    };
    let motion = t.concat(
        1,
        &[as_token("proj_z", z), as_token("proj_lh", z_lh), as_token("proj_rh", z_rh)],
    );
    let motion = t.add(motion, ctx.p(&format!("{RET}.pos_motion")));
    let images = frames_constant(t, cfg, refs)?;
    let patches = patchify(t, images, cfg.patch_size);
    let patches = linear(ctx, &format!("{RET}.patch"), patches);
    let patches = t.add(patches, ctx.p(&format!("{RET}.pos_patch")));
    let mut x = t.concat(1, &[motion, patches]);
    for i in 0..cfg.encoder_depth {
        x = encoder_block(ctx, &format!("{RET}.blk{i}"), x, cfg.encoder_heads);
    }
    // Retain only the updated visual tokens.
    let g = grid_side(cfg);
    let x = t.slice(x, 1, 3, g * g);
    let x = layer_norm(ctx, &format!("{RET}.ln_out"), x);
    let x = linear(ctx, &format!("{RET}.out"), x);
    let x = t.reshape(x, &[b, g, g, cfg.guidance_channels]);
    Ok(t.permute(x, &[0, 3, 1, 2]))
}

/// Bilinearly resize guidance (B, C_g, G, G) to the video-latent side.
pub fn resize_guidance<S: Scalar>(tape: &Tape<S>, grid: Var, cfg: &Config) -> Var {
    tape.resize_bilinear(grid, cfg.image_size / cfg.vae_factor)
}

/// Heatmap head: guidance grid → (B, joints, H, W).
pub fn heatmap_head_var<S: Scalar>(ctx: &Ctx<S>, cfg: &Config, grid: Var) -> Var {
    head_forward(ctx, HEAD_HM, cfg, grid)
}

/// Hand-normal head: guidance grid → (B, 3, H, W).
pub fn normal_head_var<S: Scalar>(ctx: &Ctx<S>, cfg: &Config, grid: Var) -> Var {
    head_forward(ctx, HEAD_NRM, cfg, grid)
}

fn head_forward<S: Scalar>(ctx: &Ctx<S>, prefix: &str, cfg: &Config, grid: Var) -> Var {
    let t = ctx.tape;
    let stages = head_stages(cfg);
    let mut x = grid;
    for i in 0..stages {
        x = t.upsample_nearest2(x);
        x = conv2d(ctx, &format!("{prefix}.c{i}"), x, 3, 1);
        if i + 1 != stages {
            x = t.gelu(x);
        }
    }
    x
}

/// Facial head: (B, d) face latents → (B, 4) sigmoid expression estimates.
pub fn expression_head_var<S: Scalar>(ctx: &Ctx<S>, zf: Var) -> Var {
    let h = linear(ctx, &format!("{HEAD_EXPR}.fc1"), zf);
    let h = ctx.tape.gelu(h);
    let out = linear(ctx, &format!("{HEAD_EXPR}.fc2"), h);
    ctx.tape.sigmoid(out)
}

fn vec_constant<S: Scalar>(tape: &Tape<S>, v: &Array1<S>) -> Var {
    tape.constant(v.clone().insert_axis(Axis(0)).into_dyn())
}

/// Eval-mode retarget of one (z, z_lh, z_rh, reference) quadruple.
pub fn retarget<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    z: &Array1<S>,
    z_lh: &Array1<S>,
    z_rh: &Array1<S>,
    reference: &Frame<S>,
) -> Result<SpatialMotionGuidance<S>> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, false);
    let grid = retarget_batch_var(
        &ctx,
        cfg,
        vec_constant(&tape, z),
        vec_constant(&tape, z_lh),
        vec_constant(&tape, z_rh),
        std::slice::from_ref(reference),
    )?;
    let resized = resize_guidance(&tape, grid, cfg);
    let take = |v: Var| -> Array3<S> {
        tape.val(v)
            .index_axis(Axis(0), 0)
            .to_owned()
            .into_dimensionality()
            .expect("guidance is 3-D per sample")
    };
    Ok(SpatialMotionGuidance { grid: take(grid), latent_grid: take(resized) })
}

/// Eval-mode heatmap decoding, (joints, H, W).
pub fn decode_heatmaps<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    guidance: &SpatialMotionGuidance<S>,
) -> Result<Array3<S>> {
    eval_head(store, cfg, guidance, heatmap_head_var)
}

/// Eval-mode hand-normal decoding, returned (H, W, 3).
pub fn decode_hand_normals<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    guidance: &SpatialMotionGuidance<S>,
) -> Result<Array3<S>> {
    let chw = eval_head(store, cfg, guidance, normal_head_var)?;
    Ok(chw.view().permuted_axes([1, 2, 0]).as_standard_layout().to_owned())
}

fn eval_head<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    guidance: &SpatialMotionGuidance<S>,
    head: fn(&Ctx<S>, &Config, Var) -> Var,
) -> Result<Array3<S>> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, false);
    let grid = tape.constant(guidance.grid.clone().insert_axis(Axis(0)).into_dyn());
    let out = head(&ctx, cfg, grid);
    Ok(tape
        .val(out)
        .index_axis(Axis(0), 0)
        .to_owned()
        .into_dimensionality()
        .expect("head output is 3-D per sample"))
}

/// Eval-mode facial regression from a face latent mean.
pub fn decode_expression<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    z_f: &Array1<S>,
) -> Result<ExpressionSpec> {
    if z_f.len() != cfg.latent_dim {
        return Err(Error::shape("decode_expression", &[cfg.latent_dim], &[z_f.len()]));
    }
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, false);
    let out = expression_head_var(&ctx, vec_constant(&tape, z_f));
    let v = tape.val(out);
    let vals: Vec<f64> = v.iter().map(|x| x.to_f()).collect();
    Ok(ExpressionSpec::from_array([vals[0], vals[1], vals[2], vals[3]]))
}
