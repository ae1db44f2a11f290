//! Joint optimization of the motion encoders, retargeting decoder, dual
//! supervision heads, and the flow-matched video transformer, plus the
//! ablation variants that selectively disable pieces of that stack.
//!
//! One `ParamStore` holds every module (including the motion prior, which
//! trains in its own loop but ships in the same checkpoint); one `AdamW`
//! instance updates it with two learning-rate groups split on the `gen.`
//! name prefix.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};
use xum_core::checkpoint::save_checkpoint;
use xum_core::nn::{kl_normal, masked_mse, mse, Ctx, ParamStore};
use xum_core::optim::{AdamW, GradMap};
use xum_core::{rng_fork, Config, Error, Frame, RandomStream, Real, Result, Scalar, Tape, Var};
use xum_model::dit::stack_guidance;
use xum_model::{
    collect_param_grads, encode_batch_var, encode_frame, expression_head_var,
    flow_match_loss_var, heatmap_head_var, init_dit, init_heads, init_prior, init_retarget,
    init_vit_encoder, normal_head_var, reparameterize, resize_guidance, retarget_batch_var,
    CondMask, ENC_FACE, ENC_GLOBAL, ENC_HAND, GEN,
};
use xum_syndata::{crop_resize, CompactSample, SampleMode, TrainingSample};

use crate::infer::skeleton_align_conditioning;

/// Model variants for the ablation table. Every variant trains from the same
/// parameter template; the differences are which losses are active, which
/// conditioning modules run, and how batches are mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The complete system.
    Full,
    /// No dual decoding: heatmap and hand-normal head losses off.
    NoDual,
    /// No local motion latents: face/hand encoders skipped, their latents
    /// fed as zeros, facial supervision off, KL over the global latent only.
    NoLocal,
    /// No cross-identity synthetic pairs: augmentation-only batches.
    NoSynthPairs,
    /// Classical baseline: conditioning is a rescaled drive-skeleton heatmap
    /// stack instead of learned motion latents; only the generator trains.
    SkeletonAlign,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoDual,
        Variant::NoLocal,
        Variant::NoSynthPairs,
        Variant::SkeletonAlign,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDual => "no_dual",
            Variant::NoLocal => "no_local",
            Variant::NoSynthPairs => "no_synth_pairs",
            Variant::SkeletonAlign => "skeleton_align",
        }
    }

    pub fn index(&self) -> usize {
        Variant::ALL.iter().position(|v| v == self).expect("variant listed")
    }

    /// Effective config: the base run config with this variant's loss and
    /// data switches applied. Idempotent.
    pub fn apply(&self, base: &Config) -> Config {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoDual => {
                c.lambda_hm = 0.0;
                c.lambda_n = 0.0;
            }
            Variant::NoLocal => {
                c.lambda_f = 0.0;
            }
            Variant::NoSynthPairs => {
                c.mix_ratio = 0.0;
            }
            Variant::SkeletonAlign => {
                c.lambda_kl = 0.0;
                c.lambda_hm = 0.0;
                c.lambda_n = 0.0;
                c.lambda_f = 0.0;
            }
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {names:?}"))
            })
    }
}

/// A training run: base config plus the variant applied on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub config: Config,
    pub variant: Variant,
}

impl RunConfig {
    pub fn new(config: Config, variant: Variant) -> Self {
        RunConfig { config, variant }
    }

    pub fn effective(&self) -> Config {
        self.variant.apply(&self.config)
    }
}

/// Per-step loss report. `total` is the exact weighted sum of the parts
/// under the run's lambda weights; terms disabled by a zero weight report 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_flow: f64,
    pub l_kl: f64,
    pub l_hm: f64,
    pub l_nrm: f64,
    pub l_expr: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Compose the weighted total, rejecting any non-finite term by name.
    pub fn compose(
        cfg: &Config,
        l_flow: f64,
        l_kl: f64,
        l_hm: f64,
        l_nrm: f64,
        l_expr: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("flow loss", l_flow),
            ("kl loss", l_kl),
            ("heatmap loss", l_hm),
            ("hand-normal loss", l_nrm),
            ("expression loss", l_expr),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        let total = l_flow
            + cfg.lambda_kl * l_kl
            + cfg.lambda_hm * l_hm
            + cfg.lambda_n * l_nrm
            + cfg.lambda_f * l_expr;
        Ok(LossBreakdown { l_flow, l_kl, l_hm, l_nrm, l_expr, total })
    }
}

/// One line of the newline-delimited JSON training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub l_flow: f64,
    pub l_kl: f64,
    pub l_hm: f64,
    pub l_nrm: f64,
    pub l_expr: f64,
    pub total: f64,
    /// Seconds since the loop started.
    pub wallclock: f64,
}

impl TrainLogRecord {
    fn new(step: usize, b: &LossBreakdown, wallclock: f64) -> Self {
        TrainLogRecord {
            step,
            l_flow: b.l_flow,
            l_kl: b.l_kl,
            l_hm: b.l_hm,
            l_nrm: b.l_nrm,
            l_expr: b.l_expr,
            total: b.total,
            wallclock,
        }
    }
}

/// Per-slot joint condition dropout: with probability `p` a slot's reference,
/// guidance, and face conditions are all nulled together (the CFG
/// unconditional branch); otherwise all kept. Returns keep flags.
pub fn condition_dropout(rng: &mut RandomStream, p: f64, batch: usize) -> Vec<bool> {
    (0..batch).map(|_| !rng.bernoulli(p)).collect()
}

/// Every random draw one optimizer step consumes, in a fixed order so steps
/// are reproducible: latent noise (global, face, left hand, right hand),
/// flow noise, flow times, condition dropout.
pub struct StepDraws {
    /// (B·T, d) reparameterization noise per encoder group.
    pub eps_g: Array2<Real>,
    pub eps_f: Array2<Real>,
    pub eps_lh: Array2<Real>,
    pub eps_rh: Array2<Real>,
    /// (B, T, L, L, C_v) flow-matching noise.
    pub eps_flow: ArrayD<Real>,
    /// Per-slot flow time in (0, 1), kept off the exact endpoints.
    pub t_flow: Vec<f64>,
    /// Per-slot condition keep flags.
    pub keep: Vec<bool>,
}

impl StepDraws {
    pub fn draw(rng: &mut RandomStream, cfg: &Config, batch: usize) -> Self {
        let n = batch * cfg.clip_len;
        let d = cfg.latent_dim;
        let (l, cv) = (cfg.latent_size(), cfg.latent_channels());
        let mut mat = |rows: usize| {
            Array2::from_shape_vec((rows, d), rng.normal_vec(rows * d)).expect("noise shape")
        };
        let eps_g = mat(n);
        let eps_f = mat(n);
        let eps_lh = mat(n);
        let eps_rh = mat(n);
        let flow_len = batch * cfg.clip_len * l * l * cv;
        let eps_flow =
            ArrayD::from_shape_vec(IxDyn(&[batch, cfg.clip_len, l, l, cv]), rng.normal_vec(flow_len))
                .expect("flow noise shape");
        let t_flow = (0..batch).map(|_| rng.uniform_f64() * 0.998 + 0.001).collect();
        let keep = condition_dropout(rng, cfg.cond_drop_prob, batch);
        StepDraws { eps_g, eps_f, eps_lh, eps_rh, eps_flow, t_flow, keep }
    }
}

const VARIANT_PARAM: &str = "meta.variant";

/// Register every module's parameters (all variants share the template so
/// checkpoints stay uniform; modules a variant never touches simply keep
/// their initialization), plus a one-element marker recording the variant.
pub fn init_all_params(cfg: &Config, variant: Variant, seed: u64) -> ParamStore<Real> {
    let mut store = ParamStore::new();
    init_vit_encoder(&mut store, seed, ENC_GLOBAL, cfg);
    init_vit_encoder(&mut store, seed, ENC_FACE, cfg);
    init_vit_encoder(&mut store, seed, ENC_HAND, cfg);
    init_retarget(&mut store, seed, cfg);
    init_heads(&mut store, seed, cfg);
    init_dit(&mut store, seed, cfg);
    init_prior(&mut store, seed, cfg);
    store.insert(VARIANT_PARAM, ndarray::arr1(&[variant.index() as Real]).into_dyn());
    store
}

/// Recover the variant marker from a checkpointed store (Full if absent).
pub fn variant_from_store(store: &ParamStore<Real>) -> Variant {
    store
        .get(VARIANT_PARAM)
        .and_then(|v| v.iter().next().copied())
        .map(|ix| {
            let ix = ix.to_f().round() as usize;
            *Variant::ALL.get(ix).unwrap_or(&Variant::Full)
        })
        .unwrap_or(Variant::Full)
}

/// Assemble one batch: per slot an independent Bernoulli(mix_ratio) chooses a
/// cross-identity sample, then a uniform index into that mode's pool. If the
/// desired pool is empty the other pool substitutes.
pub fn build_batch(
    rng: &mut RandomStream,
    dataset: &[CompactSample],
    mix_ratio: f64,
    batch_size: usize,
) -> Result<Vec<TrainingSample<Real>>> {
    if dataset.is_empty() {
        return Err(Error::Data("build_batch: empty dataset".into()));
    }
    let cross: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset[i].mode == SampleMode::CrossIdentity)
        .collect();
    let same: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset[i].mode == SampleMode::SameIdentity)
        .collect();
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let want_cross = rng.bernoulli(mix_ratio);
        let pool = match (want_cross, cross.is_empty(), same.is_empty()) {
            (true, false, _) | (false, _, true) => &cross,
            _ => &same,
        };
        let ix = pool[rng.index(pool.len())];
        out.push(dataset[ix].materialize()?);
    }
    Ok(out)
}

/// Everything train-step forwards consume, precomputed off-tape.
struct BatchTensors {
    /// Full driving frames, B·T rows in (sample-major, frame-minor) order.
    drive_rows: Vec<Frame<Real>>,
    face_rows: Vec<Frame<Real>>,
    lh_rows: Vec<Frame<Real>>,
    /// Right-hand crops pre-flipped into the shared-encoder convention.
    rh_rows: Vec<Frame<Real>>,
    /// Reference frame repeated per row.
    ref_rows: Vec<Frame<Real>>,
    /// (B, T, L, L, C_v) target-clip latents.
    x1: ArrayD<Real>,
    /// (B, L, L, C_v) reference latents.
    ref_lat: ArrayD<Real>,
    /// (B·T, J, H, W) heatmap targets; empty when no head loss is active.
    hm_t: ArrayD<Real>,
    /// (B·T, 3, H, W) hand-normal targets.
    nrm_t: ArrayD<Real>,
    /// (B·T, 1, H, W) hand-pixel mask.
    mask_t: ArrayD<Real>,
    mask_sum: f64,
    /// (B·T, 4) expression targets.
    expr_t: ArrayD<Real>,
    /// (B·T, C_g, L, L) rescaled drive-skeleton heatmaps (align variant).
    align: Option<ArrayD<Real>>,
}

fn assemble_batch_tensors(
    cfg: &Config,
    variant: Variant,
    batch: &[TrainingSample<Real>],
) -> Result<BatchTensors> {
    let b = batch.len();
    let t_len = cfg.clip_len;
    let n = b * t_len;
    let side = cfg.image_size;
    let (l, cv) = (cfg.latent_size(), cfg.latent_channels());
    let need_maps = cfg.lambda_hm > 0.0 || cfg.lambda_n > 0.0;
    let need_expr = cfg.lambda_f > 0.0;

    let mut drive_rows = Vec::with_capacity(n);
    let mut face_rows = Vec::with_capacity(n);
    let mut lh_rows = Vec::with_capacity(n);
    let mut rh_rows = Vec::with_capacity(n);
    let mut ref_rows = Vec::with_capacity(n);
    let mut x1 = ArrayD::<Real>::zeros(IxDyn(&[b, t_len, l, l, cv]));
    let mut ref_lat = ArrayD::<Real>::zeros(IxDyn(&[b, l, l, cv]));
    let mut hm_t = ArrayD::<Real>::zeros(IxDyn(if need_maps {
        &[n, cfg.joints, side, side]
    } else {
        &[0, 0, 0, 0]
    }));
    let mut nrm_t =
        ArrayD::<Real>::zeros(IxDyn(if need_maps { &[n, 3, side, side] } else { &[0, 0, 0, 0] }));
    let mut mask_t =
        ArrayD::<Real>::zeros(IxDyn(if need_maps { &[n, 1, side, side] } else { &[0, 0, 0, 0] }));
    let mut mask_sum = 0.0f64;
    let mut expr_t = ArrayD::<Real>::zeros(IxDyn(&[n, 4]));
    let mut align = if variant == Variant::SkeletonAlign {
        Some(ArrayD::<Real>::zeros(IxDyn(&[n, cfg.guidance_channels, l, l])))
    } else {
        None
    };

    for (bi, s) in batch.iter().enumerate() {
        if s.clip_len() != t_len {
            return Err(Error::Data(format!(
                "batch sample {bi} has clip length {}, config expects {t_len}",
                s.clip_len()
            )));
        }
        if !s.ref_frame.is_square(side) {
            return Err(Error::shape(
                "batch reference frame",
                &[side, side, 3],
                s.ref_frame.pixels.shape(),
            ));
        }
        ref_lat
            .index_axis_mut(Axis(0), bi)
            .assign(&encode_frame(&s.ref_frame, cfg.vae_factor)?.into_dyn());
        if let Some(a) = align.as_mut() {
            let g = skeleton_align_conditioning(cfg, s)?;
            for t in 0..t_len {
                a.index_axis_mut(Axis(0), bi * t_len + t).assign(&g.index_axis(Axis(0), t));
            }
        }
        for t in 0..t_len {
            let r = bi * t_len + t;
            let drv = &s.drive_frames[t];
            drive_rows.push(drv.clone());
            face_rows.push(crop_resize(drv, &s.face_boxes[t], side));
            lh_rows.push(crop_resize(drv, &s.lh_boxes[t], side));
            rh_rows.push(crop_resize(drv, &s.rh_boxes[t], side).hflip());
            ref_rows.push(s.ref_frame.clone());
            x1.index_axis_mut(Axis(0), bi)
                .index_axis_mut(Axis(0), t)
                .assign(&encode_frame(&s.target_frames[t], cfg.vae_factor)?);
            if need_maps {
                let maps = s.supervision_maps(t);
                hm_t.index_axis_mut(Axis(0), r).assign(&maps.heatmaps.into_dyn());
                let nrm = maps
                    .normals
                    .view()
                    .permuted_axes([2, 0, 1])
                    .as_standard_layout()
                    .to_owned();
                nrm_t.index_axis_mut(Axis(0), r).assign(&nrm.into_dyn());
                mask_sum += maps.normal_mask.iter().map(|&m| m.to_f()).sum::<f64>();
                mask_t
                    .index_axis_mut(Axis(0), r)
                    .index_axis_mut(Axis(0), 0)
                    .assign(&maps.normal_mask);
            }
            if need_expr {
                let e = s.expressions[t].as_array();
                for (k, &v) in e.iter().enumerate() {
                    expr_t[[r, k]] = Real::from_f(v);
                }
            }
        }
    }
    Ok(BatchTensors {
        drive_rows,
        face_rows,
        lh_rows,
        rh_rows,
        ref_rows,
        x1,
        ref_lat,
        hm_t,
        nrm_t,
        mask_t,
        mask_sum,
        expr_t,
        align,
    })
}

/// On-tape conditioning for one batch: per-row motion latents, the guidance
/// stack at latent resolution, and the Gaussian parameters the KL term needs.
struct CondVars {
    /// (B·T, C_g, L, L).
    guidance_rows: Var,
    /// (B·T, d) face latents (zero constant when locals are disabled).
    zf_rows: Var,
    /// (B·T, C_g, G, G) retarget output; None for the align variant.
    grid: Option<Var>,
    /// (mu, logvar) per active encoder group.
    gaussians: Vec<(Var, Var)>,
}

fn conditioning_forward(
    ctx: &Ctx<Real>,
    cfg: &Config,
    variant: Variant,
    tensors: &BatchTensors,
    draws: &StepDraws,
) -> Result<CondVars> {
    let tape = ctx.tape;
    let n = tensors.drive_rows.len();
    let d = cfg.latent_dim;

    if variant == Variant::SkeletonAlign {
        let g = tensors.align.as_ref().expect("align tensors present").clone();
        return Ok(CondVars {
            guidance_rows: tape.constant(g),
            zf_rows: tape.constant(ArrayD::zeros(IxDyn(&[n, d]))),
            grid: None,
            gaussians: Vec::new(),
        });
    }

    let (mu_g, lv_g) = encode_batch_var(ctx, cfg, ENC_GLOBAL, &tensors.drive_rows)?;
    let z_g = reparameterize(tape, mu_g, lv_g, draws.eps_g.clone().into_dyn());
    let mut gaussians = vec![(mu_g, lv_g)];

    let (zf_rows, z_lh, z_rh) = if variant == Variant::NoLocal {
        let zeros = || tape.constant(ArrayD::zeros(IxDyn(&[n, d])));
        (zeros(), zeros(), zeros())
    } else {
        let (mu_f, lv_f) = encode_batch_var(ctx, cfg, ENC_FACE, &tensors.face_rows)?;
        let z_f = reparameterize(tape, mu_f, lv_f, draws.eps_f.clone().into_dyn());
        // One shared-encoder pass over left crops followed by flipped right
        // crops, matching the eval path's flip convention.
        let mut hand_rows = tensors.lh_rows.clone();
        hand_rows.extend(tensors.rh_rows.iter().cloned());
        let (mu_h, lv_h) = encode_batch_var(ctx, cfg, ENC_HAND, &hand_rows)?;
        let mu_lh = tape.slice(mu_h, 0, 0, n);
        let lv_lh = tape.slice(lv_h, 0, 0, n);
        let mu_rh = tape.slice(mu_h, 0, n, n);
        let lv_rh = tape.slice(lv_h, 0, n, n);
        let z_lh = reparameterize(tape, mu_lh, lv_lh, draws.eps_lh.clone().into_dyn());
        let z_rh = reparameterize(tape, mu_rh, lv_rh, draws.eps_rh.clone().into_dyn());
        gaussians.push((mu_f, lv_f));
        gaussians.push((mu_lh, lv_lh));
        gaussians.push((mu_rh, lv_rh));
        (z_f, z_lh, z_rh)
    };

    let grid = retarget_batch_var(ctx, cfg, z_g, z_lh, z_rh, &tensors.ref_rows)?;
    let guidance_rows = resize_guidance(tape, grid, cfg);
    Ok(CondVars { guidance_rows, zf_rows, grid: Some(grid), gaussians })
}

struct LossVars {
    total: Var,
    l_flow: Var,
    l_kl: Option<Var>,
    l_hm: Option<Var>,
    l_nrm: Option<Var>,
    l_expr: Option<Var>,
}

/// Build the full training objective on the tape. Terms with a zero weight
/// are omitted from the graph entirely so their modules receive no gradients
/// (and no weight-decay updates) at all.
fn build_losses(
    ctx: &Ctx<Real>,
    cfg: &Config,
    variant: Variant,
    tensors: &BatchTensors,
    draws: &StepDraws,
) -> Result<LossVars> {
    let tape = ctx.tape;
    let b = draws.keep.len();
    let t_len = cfg.clip_len;
    let cond = conditioning_forward(ctx, cfg, variant, tensors, draws)?;

    let guidance = stack_guidance(tape, cond.guidance_rows, b, t_len);
    let zf_seq = tape.reshape(cond.zf_rows, &[b, t_len, cfg.latent_dim]);
    let ref_latent = tape.constant(tensors.ref_lat.clone());
    let mask = CondMask::joint(&draws.keep);
    let l_flow = flow_match_loss_var(
        ctx,
        cfg,
        &tensors.x1,
        &draws.eps_flow,
        &draws.t_flow,
        ref_latent,
        guidance,
        zf_seq,
        &mask,
    )?;

    let l_kl = (cfg.lambda_kl > 0.0 && !cond.gaussians.is_empty()).then(|| {
        let mut acc: Option<Var> = None;
        for &(mu, lv) in &cond.gaussians {
            let k = kl_normal(tape, mu, lv);
            acc = Some(match acc {
                None => k,
                Some(a) => tape.add(a, k),
            });
        }
        tape.scale(acc.expect("at least one group"), Real::from_f(1.0 / cond.gaussians.len() as f64))
    });

    let l_hm = (cfg.lambda_hm > 0.0)
        .then(|| cond.grid)
        .flatten()
        .map(|grid| {
            let pred = heatmap_head_var(ctx, cfg, grid);
            mse(tape, pred, tape.constant(tensors.hm_t.clone()))
        });
    let l_nrm = (cfg.lambda_n > 0.0)
        .then(|| cond.grid)
        .flatten()
        .map(|grid| {
            let pred = normal_head_var(ctx, cfg, grid);
            masked_mse(
                tape,
                pred,
                tape.constant(tensors.nrm_t.clone()),
                tape.constant(tensors.mask_t.clone()),
                3.0 * tensors.mask_sum,
            )
        });
    let l_expr = (cfg.lambda_f > 0.0).then(|| {
        let pred = expression_head_var(ctx, cond.zf_rows);
        mse(tape, pred, tape.constant(tensors.expr_t.clone()))
    });

    let mut total = l_flow;
    for (weight, term) in [
        (cfg.lambda_kl, l_kl),
        (cfg.lambda_hm, l_hm),
        (cfg.lambda_n, l_nrm),
        (cfg.lambda_f, l_expr),
    ] {
        if let Some(v) = term {
            total = tape.add(total, tape.scale(v, Real::from_f(weight)));
        }
    }
    Ok(LossVars { total, l_flow, l_kl, l_hm, l_nrm, l_expr })
}

/// Forward + backward for one batch with explicit draws. Returns the loss
/// report and the per-parameter gradients (unclipped).
pub(crate) fn loss_grads(
    store: &ParamStore<Real>,
    cfg: &Config,
    variant: Variant,
    batch: &[TrainingSample<Real>],
    draws: &StepDraws,
) -> Result<(LossBreakdown, GradMap<Real>)> {
    let tensors = assemble_batch_tensors(cfg, variant, batch)?;
    let tape: Tape<Real> = Tape::new();
    let ctx = Ctx::new(&tape, store, true);
    let lv = build_losses(&ctx, cfg, variant, &tensors, draws)?;
    let part = |v: Option<Var>| v.map(|v| tape.scalar(v).to_f()).unwrap_or(0.0);
    let breakdown = LossBreakdown::compose(
        cfg,
        tape.scalar(lv.l_flow).to_f(),
        part(lv.l_kl),
        part(lv.l_hm),
        part(lv.l_nrm),
        part(lv.l_expr),
    )?;
    let grads = tape.backward(lv.total);
    let gm = collect_param_grads(&ctx, &grads);
    Ok((breakdown, gm))
}

/// One optimizer step: draw noise, assemble losses, backprop, clip the global
/// gradient norm, and apply the two-group AdamW update. A non-finite loss
/// term aborts before any parameter changes.
pub fn train_step(
    store: &mut ParamStore<Real>,
    opt: &mut AdamW<Real>,
    cfg: &Config,
    variant: Variant,
    batch: &[TrainingSample<Real>],
    rng: &mut RandomStream,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Data("train_step: empty batch".into()));
    }
    let draws = StepDraws::draw(rng, cfg, batch.len());
    let (breakdown, mut gm) = loss_grads(store, cfg, variant, batch, &draws)?;
    AdamW::clip_global_norm(&mut gm, cfg.grad_clip);
    let (lr_g, lr_m) = (cfg.lr_generator, cfg.lr_motion);
    let gen_prefix = format!("{GEN}.");
    opt.step(store, &gm, &|name: &str| {
        if name.starts_with(&gen_prefix) {
            lr_g
        } else {
            lr_m
        }
    });
    Ok(breakdown)
}

/// Training state bundle: effective config, variant, parameters, optimizer,
/// and the step counter that seeds each step's random draws.
pub struct Trainer {
    pub cfg: Config,
    pub variant: Variant,
    pub store: ParamStore<Real>,
    pub opt: AdamW<Real>,
    pub step: usize,
}

impl Trainer {
    pub fn new(run: &RunConfig) -> Result<Self> {
        run.config.validate()?;
        let cfg = run.effective();
        let store = init_all_params(&cfg, run.variant, cfg.seed);
        Ok(Trainer {
            opt: AdamW::new(cfg.weight_decay),
            store,
            variant: run.variant,
            step: 0,
            cfg,
        })
    }

    /// Resume from a checkpointed store (the optimizer restarts cold).
    pub fn from_store(cfg: Config, store: ParamStore<Real>) -> Self {
        let variant = variant_from_store(&store);
        Trainer { opt: AdamW::new(cfg.weight_decay), store, variant, step: 0, cfg }
    }

    pub fn next_batch(&self, dataset: &[CompactSample]) -> Result<Vec<TrainingSample<Real>>> {
        let mut rng = rng_fork(self.cfg.seed, &format!("batch/{}", self.step));
        build_batch(&mut rng, dataset, self.cfg.mix_ratio, self.cfg.batch_size)
    }

    pub fn train_step(&mut self, batch: &[TrainingSample<Real>]) -> Result<LossBreakdown> {
        let mut rng = rng_fork(self.cfg.seed, &format!("trainstep/{}", self.step));
        let out = train_step(&mut self.store, &mut self.opt, &self.cfg, self.variant, batch, &mut rng)?;
        self.step += 1;
        Ok(out)
    }
}

/// Run `config.train_steps` optimizer steps over the dataset, appending one
/// JSON record per step to `log_path` (when given) and checkpointing to
/// `out_ckpt` four times across the run plus at the end.
pub fn train_loop(
    run: &RunConfig,
    dataset: &[CompactSample],
    out_ckpt: &Path,
    log_path: Option<&Path>,
) -> Result<(Trainer, Vec<TrainLogRecord>)> {
    let mut trainer = Trainer::new(run)?;
    let steps = trainer.cfg.train_steps;
    let ckpt_every = (steps / 4).max(1);
    let mut log_file = match log_path {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?),
        None => None,
    };
    let mut records = Vec::with_capacity(steps);
    let started = Instant::now();
    for _ in 0..steps {
        let batch = trainer.next_batch(dataset)?;
        let breakdown = trainer.train_step(&batch)?;
        let rec = TrainLogRecord::new(trainer.step, &breakdown, started.elapsed().as_secs_f64());
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(&rec)?;
            writeln!(f, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        records.push(rec);
        if trainer.step % ckpt_every == 0 || trainer.step == steps {
            save_checkpoint(out_ckpt, &trainer.store, &trainer.cfg)?;
        }
    }
    if steps == 0 {
        save_checkpoint(out_ckpt, &trainer.store, &trainer.cfg)?;
    }
    Ok((trainer, records))
}

/// Per-sample loss parts extracted from one shared batched forward (the same
/// draws the batch consumed), for batch-purity diagnostics.
#[cfg(test)]
fn per_sample_losses(
    store: &ParamStore<Real>,
    cfg: &Config,
    variant: Variant,
    batch: &[TrainingSample<Real>],
    draws: &StepDraws,
) -> Result<Vec<LossBreakdown>> {
    use xum_model::{dit_forward_var, flow_target};

    let b = batch.len();
    let t_len = cfg.clip_len;
    let tensors = assemble_batch_tensors(cfg, variant, batch)?;
    let tape: Tape<Real> = Tape::new();
    let ctx = Ctx::new(&tape, store, false);
    let cond = conditioning_forward(&ctx, cfg, variant, &tensors, draws)?;

    let guidance = stack_guidance(&tape, cond.guidance_rows, b, t_len);
    let zf_seq = tape.reshape(cond.zf_rows, &[b, t_len, cfg.latent_dim]);
    let ref_latent = tape.constant(tensors.ref_lat.clone());
    let mask = CondMask::joint(&draws.keep);
    let mut xt = tensors.x1.clone();
    for (bi, &tb) in draws.t_flow.iter().enumerate() {
        let (ka, kb) = (Real::from_f(1.0 - tb), Real::from_f(tb));
        xt.index_axis_mut(Axis(0), bi)
            .zip_mut_with(&draws.eps_flow.index_axis(Axis(0), bi), |o, &e| *o = e * ka + *o * kb);
    }
    let v_pred = dit_forward_var(&ctx, cfg, tape.constant(xt), &draws.t_flow, ref_latent, guidance, zf_seq, &mask)?;
    let v_val = tape.val(v_pred).to_owned();
    let target = flow_target(&tensors.x1, &draws.eps_flow);

    let head_vals = |make: &dyn Fn(Var) -> Var, on: bool| -> Option<ArrayD<Real>> {
        if !on {
            return None;
        }
        cond.grid.map(|g| tape.val(make(g)).to_owned())
    };
    let hm_val = head_vals(&|g| heatmap_head_var(&ctx, cfg, g), cfg.lambda_hm > 0.0);
    let nrm_val = head_vals(&|g| normal_head_var(&ctx, cfg, g), cfg.lambda_n > 0.0);
    let expr_val = (cfg.lambda_f > 0.0)
        .then(|| tape.val(expression_head_var(&ctx, cond.zf_rows)).to_owned());
    let gauss_vals: Vec<(ArrayD<Real>, ArrayD<Real>)> = cond
        .gaussians
        .iter()
        .map(|&(m, l)| (tape.val(m).to_owned(), tape.val(l).to_owned()))
        .collect();

    let mse_nd = |a: ndarray::ArrayViewD<Real>, b: ndarray::ArrayViewD<Real>| -> f64 {
        let n = a.len().max(1);
        a.iter().zip(b.iter()).map(|(&x, &y)| (x.to_f() - y.to_f()).powi(2)).sum::<f64>() / n as f64
    };

    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let l_flow = mse_nd(v_val.index_axis(Axis(0), bi), target.index_axis(Axis(0), bi));
        let rows = bi * t_len..(bi + 1) * t_len;
        let l_kl = if gauss_vals.is_empty() || cfg.lambda_kl == 0.0 {
            0.0
        } else {
            let mut acc = 0.0;
            for (mu, lv) in &gauss_vals {
                let mut g = 0.0;
                for r in rows.clone() {
                    for (m, l) in mu.index_axis(Axis(0), r).iter().zip(lv.index_axis(Axis(0), r)) {
                        let (m, l) = (m.to_f(), l.to_f());
                        g += 0.5 * (m * m + l.exp() - 1.0 - l);
                    }
                }
                acc += g / t_len as f64;
            }
            acc / gauss_vals.len() as f64
        };
        let l_hm = hm_val.as_ref().map_or(0.0, |v| {
            let pred = v.slice_axis(Axis(0), ndarray::Slice::from(rows.clone()));
            let tgt = tensors.hm_t.slice_axis(Axis(0), ndarray::Slice::from(rows.clone()));
            mse_nd(pred, tgt)
        });
        let l_nrm = nrm_val.as_ref().map_or(0.0, |v| {
            let pred = v.slice_axis(Axis(0), ndarray::Slice::from(rows.clone()));
            let tgt = tensors.nrm_t.slice_axis(Axis(0), ndarray::Slice::from(rows.clone()));
            let msk = tensors.mask_t.slice_axis(Axis(0), ndarray::Slice::from(rows.clone()));
            let mut num = 0.0;
            let mut cnt = 0.0;
            for r in 0..t_len {
                let m2 = msk.index_axis(Axis(0), r);
                for c in 0..3 {
                    let p2 = pred.index_axis(Axis(0), r);
                    let p2 = p2.index_axis(Axis(0), c);
                    let t2 = tgt.index_axis(Axis(0), r);
                    let t2 = t2.index_axis(Axis(0), c);
                    for ((&p, &t), &m) in p2.iter().zip(t2.iter()).zip(m2.index_axis(Axis(0), 0)) {
                        num += m.to_f() * (p.to_f() - t.to_f()).powi(2);
                        cnt += m.to_f();
                    }
                }
            }
            num / (cnt.max(1.0))
        });
        let l_expr = expr_val.as_ref().map_or(0.0, |v| {
            let pred = v.slice_axis(Axis(0), ndarray::Slice::from(rows.clone()));
            let tgt = tensors.expr_t.slice_axis(Axis(0), ndarray::Slice::from(rows.clone()));
            mse_nd(pred, tgt)
        });
        out.push(LossBreakdown::compose(cfg, l_flow, l_kl, l_hm, l_nrm, l_expr)?);
    }
    Ok(out)
}
