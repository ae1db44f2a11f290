//! Flow sampling: single-chunk Euler integration with classifier-free
//! guidance, and sliding-window video generation with re-noised prefix
//! clamping across chunk seams.

use ndarray::{Array2, Array4, ArrayD, Axis, IxDyn};
use xum_core::nn::{Ctx, ParamStore};
use xum_core::{
    Config, Error, Frame, MotionLatentSet, RandomStream, Result, Scalar, Tape, VideoClip,
};

use crate::dit::{dit_forward_var, CondMask};
use crate::flow::cfg_velocity;
use crate::retarget::{resize_guidance, retarget_batch_var};
use crate::vae::{decode_frame, encode_frame, latent_channels};

/// One DiT velocity evaluation on plain arrays (no gradients).
#[allow(clippy::too_many_arguments)]
fn velocity<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    x: &Array4<S>,
    t: f64,
    ref_latent: &ArrayD<S>,
    guidance: &ArrayD<S>,
    zf: &ArrayD<S>,
    conditioned: bool,
) -> Result<Array4<S>> {
    let frames = x.shape()[0];
    let tape: Tape<S> = Tape::new();
    let ctx = Ctx::new(&tape, store, false);
    let mut noised_shape = vec![1];
    noised_shape.extend_from_slice(x.shape());
    let noised = tape.constant(x.clone().into_dyn().into_shape_with_order(IxDyn(&noised_shape)).expect("batch axis"));
    let mask = if conditioned { CondMask::all(1) } else { CondMask::none(1) };
    let v = dit_forward_var(
        &ctx,
        cfg,
        noised,
        &[t],
        tape.constant(ref_latent.clone()),
        tape.constant(guidance.clone()),
        tape.constant(zf.clone()),
        &mask,
    )?;
    let out = tape.val(v);
    Ok(out
        .to_owned()
        .into_shape_with_order((frames, x.shape()[1], x.shape()[2], x.shape()[3]))
        .expect("velocity shape"))
}

fn draw_noise<S: Scalar>(rng: &mut RandomStream, shape: (usize, usize, usize, usize)) -> Array4<S> {
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    Array4::from_shape_vec(shape, rng.normal_vec(n)).expect("noise shape")
}

/// Generate one chunk. `guidance_seq` is the per-frame latent-side guidance
/// (T, C_g, L, L); `zf_seq` the per-frame face latents (T, d). With
/// `clamped_prefix = Some((frames, count))`, after every Euler step the first
/// `count` frame latents are overwritten with the re-noised clean latents of
/// `frames`, which pins them exactly at t=1.
#[allow(clippy::too_many_arguments)]
pub fn sample_chunk<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    reference: &Frame<S>,
    guidance_seq: &Array4<S>,
    zf_seq: &Array2<S>,
    steps: usize,
    cfg_scale: f64,
    rng: &mut RandomStream,
    clamped_prefix: Option<(&[Frame<S>], usize)>,
) -> Result<VideoClip<S>> {
    sample_chunk_impl(
        store, cfg, reference, guidance_seq, zf_seq, steps, cfg_scale, rng, clamped_prefix, false,
    )
}

/// Diagnostic variant that always evaluates both CFG branches and combines
/// them, even at s = 1; bit-identical to [`sample_chunk`] at s = 1.
#[allow(clippy::too_many_arguments)]
pub fn sample_chunk_dual_branch<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    reference: &Frame<S>,
    guidance_seq: &Array4<S>,
    zf_seq: &Array2<S>,
    steps: usize,
    cfg_scale: f64,
    rng: &mut RandomStream,
    clamped_prefix: Option<(&[Frame<S>], usize)>,
) -> Result<VideoClip<S>> {
    sample_chunk_impl(
        store, cfg, reference, guidance_seq, zf_seq, steps, cfg_scale, rng, clamped_prefix, true,
    )
}

#[allow(clippy::too_many_arguments)]
fn sample_chunk_impl<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    reference: &Frame<S>,
    guidance_seq: &Array4<S>,
    zf_seq: &Array2<S>,
    steps: usize,
    cfg_scale: f64,
    rng: &mut RandomStream,
    clamped_prefix: Option<(&[Frame<S>], usize)>,
    force_dual: bool,
) -> Result<VideoClip<S>> {
    if steps == 0 {
        return Err(Error::Data("sample_chunk needs steps >= 1".into()));
    }
    let t_len = guidance_seq.shape()[0];
    let l = cfg.image_size / cfg.vae_factor;
    let cv = latent_channels(cfg.vae_factor);
    if guidance_seq.shape() != [t_len, cfg.guidance_channels, l, l] {
        return Err(Error::shape(
            "sample_chunk guidance",
            &[t_len, cfg.guidance_channels, l, l],
            guidance_seq.shape(),
        ));
    }
    if zf_seq.shape() != [t_len, cfg.latent_dim] {
        return Err(Error::shape("sample_chunk face latents", &[t_len, cfg.latent_dim], zf_seq.shape()));
    }

    let ref_latent = {
        let enc = encode_frame(reference, cfg.vae_factor)?;
        let mut sh = vec![1];
        sh.extend_from_slice(enc.shape());
        enc.into_dyn().into_shape_with_order(IxDyn(&sh)).expect("ref latent")
    };
    // (T, Cg, L, L) → (1, T, L, L, Cg).
    let guidance = {
        let g = guidance_seq.view().permuted_axes([0, 2, 3, 1]).as_standard_layout().to_owned();
        let mut sh = vec![1];
        sh.extend_from_slice(g.shape());
        g.into_dyn().into_shape_with_order(IxDyn(&sh)).expect("guidance layout")
    };
    let zf = {
        let mut sh = vec![1];
        sh.extend_from_slice(zf_seq.shape());
        zf_seq.clone().into_dyn().into_shape_with_order(IxDyn(&sh)).expect("zf layout")
    };
    let clean_prefix: Option<Vec<ndarray::Array3<S>>> = match clamped_prefix {
        Some((frames, count)) => {
            if count > frames.len() || count > t_len {
                return Err(Error::Data(format!(
                    "clamped prefix count {count} exceeds provided frames {} or chunk {t_len}",
                    frames.len()
                )));
            }
            Some(
                frames[..count]
                    .iter()
                    .map(|f| encode_frame(f, cfg.vae_factor))
                    .collect::<Result<_>>()?,
            )
        }
        None => None,
    };

    let mut x = draw_noise::<S>(rng, (t_len, l, l, cv));
    let dt = S::from_f(1.0 / steps as f64);
    for k in 0..steps {
        let t_k = k as f64 / steps as f64;
        let v_cond = velocity(store, cfg, &x, t_k, &ref_latent, &guidance, &zf, true)?;
        let v = if cfg_scale == 1.0 && !force_dual {
            v_cond
        } else {
            let v_null = velocity(store, cfg, &x, t_k, &ref_latent, &guidance, &zf, false)?;
            let combined = cfg_velocity(&v_null.into_dyn(), &v_cond.into_dyn(), cfg_scale);
            combined.into_dimensionality().expect("cfg velocity rank")
        };
        x.zip_mut_with(&v, |xv, &vv| *xv = *xv + dt * vv);
        if let Some(clean) = &clean_prefix {
            let t_next = (k + 1) as f64 / steps as f64;
            let (a, b) = (S::from_f(1.0 - t_next), S::from_f(t_next));
            for (f, cl) in clean.iter().enumerate() {
                let fresh = draw_noise::<S>(rng, (1, l, l, cv));
                let fresh = fresh.index_axis(Axis(0), 0);
                let mut row = x.index_axis_mut(Axis(0), f);
                row.assign(cl);
                row.zip_mut_with(&fresh, |r, &e| *r = *r * b + e * a);
            }
        }
    }

    let mut frames = Vec::with_capacity(t_len);
    for f in 0..t_len {
        frames.push(decode_frame(x.index_axis(Axis(0), f), cfg.vae_factor)?);
    }
    VideoClip::new(frames, 8.0)
}

/// Chunk schedule for a `t_total`-frame video: (start, len) per chunk. The
/// first chunk is free; every later chunk re-generates the previous chunk's
/// last `o` frames as its clamped prefix and contributes `len − o` new ones.
pub fn chunk_schedule(t_total: usize, t_c: usize, o: usize) -> Vec<(usize, usize)> {
    assert!(t_c > o, "chunk must exceed overlap");
    assert!(t_total > 0);
    let mut chunks = vec![(0usize, t_total.min(t_c))];
    let mut covered = t_total.min(t_c);
    while covered < t_total {
        let start = covered - o;
        let len = t_c.min(t_total - start);
        chunks.push((start, len));
        covered = start + len;
    }
    chunks
}

/// Turn per-frame motion latents into the guidance stack (T, C_g, L, L) and
/// face-latent matrix (T, d) for a given reference, using eval-mode means.
pub fn conditioning_from_latents<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    reference: &Frame<S>,
    motion: &[MotionLatentSet<S>],
) -> Result<(Array4<S>, Array2<S>)> {
    let t_len = motion.len();
    if t_len == 0 {
        return Err(Error::Data("empty motion sequence".into()));
    }
    let d = cfg.latent_dim;
    let stack = |pick: &dyn Fn(&MotionLatentSet<S>) -> &ndarray::Array1<S>| -> ArrayD<S> {
        let mut m = Array2::<S>::zeros((t_len, d));
        for (i, set) in motion.iter().enumerate() {
            m.row_mut(i).assign(pick(set));
        }
        m.into_dyn()
    };
    let tape: Tape<S> = Tape::new();
    let ctx = Ctx::new(&tape, store, false);
    let refs = vec![reference.clone(); t_len];
    let grid = retarget_batch_var(
        &ctx,
        cfg,
        tape.constant(stack(&|s| &s.z.mu)),
        tape.constant(stack(&|s| &s.z_lh.mu)),
        tape.constant(stack(&|s| &s.z_rh.mu)),
        &refs,
    )?;
    let resized = resize_guidance(&tape, grid, cfg);
    let guidance: Array4<S> = tape
        .val(resized)
        .to_owned()
        .into_dimensionality()
        .expect("guidance rank");
    let mut zf = Array2::<S>::zeros((t_len, d));
    for (i, set) in motion.iter().enumerate() {
        zf.row_mut(i).assign(&set.z_f.mu);
    }
    Ok((guidance, zf))
}

/// Sliding-window video generation from per-frame driving latents.
#[allow(clippy::too_many_arguments)]
pub fn sample_video<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    reference: &Frame<S>,
    motion: &[MotionLatentSet<S>],
    steps: usize,
    cfg_scale: f64,
    rng: &mut RandomStream,
) -> Result<VideoClip<S>> {
    let t_total = motion.len();
    let (guidance, zf) = conditioning_from_latents(store, cfg, reference, motion)?;
    let (t_c, o) = (cfg.chunk, cfg.overlap);
    let mut out: Vec<Frame<S>> = Vec::with_capacity(t_total);
    for (i, (start, len)) in chunk_schedule(t_total, t_c, o).into_iter().enumerate() {
        let g = guidance.slice(ndarray::s![start..start + len, .., .., ..]).to_owned();
        let z = zf.slice(ndarray::s![start..start + len, ..]).to_owned();
        let prefix: Option<Vec<Frame<S>>> =
            (i > 0).then(|| out[start..start + o].to_vec());
        let chunk = sample_chunk(
            store,
            cfg,
            reference,
            &g,
            &z,
            steps,
            cfg_scale,
            rng,
            prefix.as_deref().map(|p| (p, o)),
        )?;
        let skip = if i == 0 { 0 } else { o };
        out.extend(chunk.frames.into_iter().skip(skip));
    }
    debug_assert_eq!(out.len(), t_total);
    VideoClip::new(out, 8.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dit::init_dit;
    use crate::retarget::{init_heads, init_retarget};
    use ndarray::Array3;
    use xum_core::{rng_fork, GaussianLatent};

    fn tiny_cfg() -> Config {
        Config {
            image_size: 16,
            patch_size: 8,
            latent_dim: 4,
            clip_len: 3,
            chunk: 3,
            overlap: 1,
            vae_factor: 4,
            dit_depth: 1,
            dit_width: 16,
            dit_heads: 2,
            encoder_depth: 1,
            encoder_width: 8,
            encoder_heads: 2,
            guidance_channels: 6,
            ..Config::default()
        }
    }

    fn store_for(cfg: &Config, seed: u64) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        init_dit(&mut s, seed, cfg);
        init_retarget(&mut s, seed, cfg);
        init_heads(&mut s, seed, cfg);
        // Give the zero-init output projection signal so sampling actually
        // moves; a freshly trained model would have nonzero values here.
        for name in ["gen.out.w", "gen.out.b"] {
            let shape = s.get(name).unwrap().shape().to_vec();
            let mut rng = rng_fork(seed + 1, name);
            *s.get_mut(name).unwrap() = ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&shape),
                rng.normal_vec(shape.iter().product()),
            )
            .unwrap()
            .mapv(|v: f32| v * 0.05);
        }
        s
    }

    fn random_frame(side: usize, seed: u64) -> Frame<f32> {
        let mut rng = rng_fork(seed, "frame");
        let mut f = Frame::new(Array3::from_shape_fn((side, side, 3), |_| {
            rng.uniform_f64() as f32
        }))
        .unwrap();
        f.quantize();
        f
    }

    fn random_conditioning(cfg: &Config, t: usize, seed: u64) -> (Array4<f32>, Array2<f32>) {
        let l = cfg.image_size / cfg.vae_factor;
        let mut rng = rng_fork(seed, "cond");
        let g = Array4::from_shape_vec(
            (t, cfg.guidance_channels, l, l),
            rng.normal_vec(t * cfg.guidance_channels * l * l),
        )
        .unwrap();
        let z = Array2::from_shape_vec((t, cfg.latent_dim), rng.normal_vec(t * cfg.latent_dim)).unwrap();
        (g, z)
    }

    #[test]
    fn single_euler_step_is_noise_plus_velocity() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 1);
        let reference = random_frame(16, 2);
        let (g, z) = random_conditioning(&cfg, 2, 3);
        let clip = sample_chunk(&store, &cfg, &reference, &g, &z, 1, 1.0, &mut rng_fork(7, "s"), None).unwrap();
        // Reproduce manually with the same noise draw.
        let l = 4;
        let cv = 48;
        let eps = draw_noise::<f32>(&mut rng_fork(7, "s"), (2, l, l, cv));
        let ref_latent = {
            let enc = encode_frame(&reference, 4).unwrap();
            enc.into_dyn().into_shape_with_order(IxDyn(&[1, l, l, cv])).unwrap()
        };
        let guidance = {
            let gg = g.view().permuted_axes([0, 2, 3, 1]).as_standard_layout().to_owned();
            gg.into_dyn().into_shape_with_order(IxDyn(&[1, 2, l, l, cfg.guidance_channels])).unwrap()
        };
        let zf = z.clone().into_dyn().into_shape_with_order(IxDyn(&[1, 2, cfg.latent_dim])).unwrap();
        let v = velocity(&store, &cfg, &eps, 0.0, &ref_latent, &guidance, &zf, true).unwrap();
        let mut want = eps.clone();
        let dt = 1.0f32;
        want.zip_mut_with(&v, |x, &vv| *x = *x + dt * vv);
        let got = crate::vae::vae_encode(&clip, 4).unwrap();
        assert_eq!(got.data, want);
    }

    #[test]
    fn cfg_scale_one_is_bit_identical_to_conditional_only() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 4);
        let reference = random_frame(16, 5);
        let (g, z) = random_conditioning(&cfg, 3, 6);
        let a = sample_chunk(&store, &cfg, &reference, &g, &z, 4, 1.0, &mut rng_fork(9, "x"), None).unwrap();
        let b = sample_chunk_dual_branch(&store, &cfg, &reference, &g, &z, 4, 1.0, &mut rng_fork(9, "x"), None).unwrap();
        assert_eq!(a.len(), b.len());
        for (fa, fb) in a.frames.iter().zip(b.frames.iter()) {
            assert_eq!(fa.pixels, fb.pixels);
        }
    }

    #[test]
    fn cfg_scale_changes_output() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 10);
        let reference = random_frame(16, 11);
        let (g, z) = random_conditioning(&cfg, 2, 12);
        let a = sample_chunk(&store, &cfg, &reference, &g, &z, 2, 1.0, &mut rng_fork(13, "x"), None).unwrap();
        let b = sample_chunk(&store, &cfg, &reference, &g, &z, 2, 2.0, &mut rng_fork(13, "x"), None).unwrap();
        assert_ne!(a.frames[0].pixels, b.frames[0].pixels);
    }

    #[test]
    fn clamped_prefix_is_exact_at_final_time() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 6);
        let reference = random_frame(16, 7);
        let (g, z) = random_conditioning(&cfg, 3, 8);
        let p0 = random_frame(16, 20);
        let p1 = random_frame(16, 21);
        let prefix = vec![p0.clone(), p1.clone()];
        let clip = sample_chunk(
            &store, &cfg, &reference, &g, &z, 3, 1.5, &mut rng_fork(22, "c"), Some((&prefix, 2)),
        )
        .unwrap();
        assert_eq!(clip.frames[0].pixels, p0.pixels);
        assert_eq!(clip.frames[1].pixels, p1.pixels);
        assert_ne!(clip.frames[2].pixels, p0.pixels);
    }

    #[test]
    fn schedule_arithmetic() {
        // Degenerate: one chunk, no clamping.
        assert_eq!(chunk_schedule(8, 8, 2), vec![(0, 8)]);
        // Truncated single chunk.
        assert_eq!(chunk_schedule(5, 8, 2), vec![(0, 5)]);
        // Two chunks with the overlap emitted once.
        assert_eq!(chunk_schedule(14, 8, 2), vec![(0, 8), (6, 8)]);
        // Exhaustive coverage check over small legal combinations.
        for t_c in 2..9usize {
            for o in 1..t_c {
                for t_total in 1..40usize {
                    let chunks = chunk_schedule(t_total, t_c, o);
                    assert_eq!(chunks[0].0, 0);
                    let mut emitted = chunks[0].1;
                    for w in chunks.windows(2) {
                        let (ps, pl) = w[0];
                        let (cs, cl) = w[1];
                        assert_eq!(cs, ps + pl - o, "chunks overlap by exactly o");
                        assert!(cl > o && cl <= t_c);
                        emitted += cl - o;
                    }
                    assert_eq!(emitted, t_total, "t_total {t_total} t_c {t_c} o {o}");
                    for (s, l) in chunks {
                        assert!(s + l <= t_total);
                    }
                }
            }
        }
    }

    fn motion_sets(cfg: &Config, t: usize, seed: u64) -> Vec<MotionLatentSet<f32>> {
        let mut rng = rng_fork(seed, "motion");
        (0..t)
            .map(|_| {
                let mut g = || {
                    GaussianLatent::new(
                        ndarray::Array1::from_vec(rng.normal_vec(cfg.latent_dim)),
                        ndarray::Array1::zeros(cfg.latent_dim),
                    )
                    .unwrap()
                };
                MotionLatentSet::new(g(), g(), g(), g()).unwrap()
            })
            .collect()
    }

    #[test]
    fn video_lengths_match_for_all_schedules() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 30);
        let reference = random_frame(16, 31);
        for t_total in [3usize, 5, 7] {
            let motion = motion_sets(&cfg, t_total, 40 + t_total as u64);
            let clip = sample_video(&store, &cfg, &reference, &motion, 2, 1.0, &mut rng_fork(50, "v")).unwrap();
            assert_eq!(clip.len(), t_total, "t_total {t_total}");
        }
    }

    #[test]
    fn zero_steps_is_an_error() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, 60);
        let reference = random_frame(16, 61);
        let (g, z) = random_conditioning(&cfg, 2, 62);
        let err = sample_chunk(&store, &cfg, &reference, &g, &z, 0, 1.0, &mut rng_fork(63, "e"), None).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
