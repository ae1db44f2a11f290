//! Inference paths: eval-mode motion extraction from driving clips,
//! reference-frame reenactment for every model variant, the rescaled
//! drive-skeleton conditioning of the classical baseline, and seam
//! diagnostics for sliding-window stitching.

use ndarray::{s, Array2, Array4, ArrayD, IxDyn};
use xum_core::nn::ParamStore;
use xum_core::{
    Config, Error, Frame, GaussianLatent, MotionLatentSet, RandomStream, Real, Result, Scalar,
    VideoClip,
};
use xum_model::{chunk_schedule, encode_face, encode_global, encode_hands, sample_chunk, sample_video};
use xum_syndata::skeleton::{forward_kinematics, BONES, B_HEAD, J_TOTAL};
use xum_syndata::{crop_resize, CharacterSpec, CropBox, TrainingSample};

use crate::train::Variant;

fn zero_latent(d: usize) -> GaussianLatent<Real> {
    GaussianLatent::new(ndarray::Array1::zeros(d), ndarray::Array1::zeros(d))
        .expect("zero latent is finite")
}

/// Encode a driving clip into per-frame eval-mode motion latents. Local
/// latents come out as zero vectors under the no-local variant, so downstream
/// consumers see a uniform shape.
pub fn encode_clip_latents(
    store: &ParamStore<Real>,
    cfg: &Config,
    variant: Variant,
    frames: &[Frame<Real>],
    face_boxes: &[CropBox],
    lh_boxes: &[CropBox],
    rh_boxes: &[CropBox],
) -> Result<Vec<MotionLatentSet<Real>>> {
    if variant == Variant::SkeletonAlign {
        return Err(Error::Config(
            "the skeleton-align baseline has no motion latents to encode".into(),
        ));
    }
    let t = frames.len();
    if face_boxes.len() != t || lh_boxes.len() != t || rh_boxes.len() != t {
        return Err(Error::Data(format!(
            "crop box counts ({}, {}, {}) do not match {t} frames",
            face_boxes.len(),
            lh_boxes.len(),
            rh_boxes.len()
        )));
    }
    let mut out = Vec::with_capacity(t);
    for i in 0..t {
        let z = encode_global(store, cfg, &frames[i])?;
        let (z_f, z_lh, z_rh) = if variant == Variant::NoLocal {
            let d = cfg.latent_dim;
            (zero_latent(d), zero_latent(d), zero_latent(d))
        } else {
            let face = crop_resize(&frames[i], &face_boxes[i], cfg.image_size);
            let z_f = encode_face(store, cfg, &face)?;
            let lh = crop_resize(&frames[i], &lh_boxes[i], cfg.image_size);
            let rh = crop_resize(&frames[i], &rh_boxes[i], cfg.image_size);
            let (z_lh, z_rh) = encode_hands(store, cfg, &lh, &rh)?;
            (z_f, z_lh, z_rh)
        };
        out.push(MotionLatentSet::new(z, z_f, z_lh, z_rh)?);
    }
    Ok(out)
}

/// Fully scaled total bone length of a character (hand and head multipliers
/// included), the size proxy the skeleton-align baseline rescales with.
fn bone_length_sum(ch: &CharacterSpec) -> f64 {
    BONES
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let extra = if b.is_hand { ch.hand_scale } else { 1.0 }
                * if i == B_HEAD { ch.head_radius_scale } else { 1.0 };
            b.base_len * ch.limb_lengths[i] * extra
        })
        .sum()
}

fn to_img(p: (f64, f64), h: usize) -> (f64, f64) {
    (p.0, (h as f64 - 1.0) - p.1)
}

/// Classical-baseline conditioning: per frame, the driving skeleton's
/// keypoints uniformly rescaled about the drive pelvis by the ratio of total
/// bone lengths (reference over drive), rasterized as one Gaussian per joint
/// into the first `J_TOTAL` guidance channels at latent resolution.
/// Returns (T, C_g, L, L).
pub fn skeleton_align_conditioning(
    cfg: &Config,
    sample: &TrainingSample<Real>,
) -> Result<ArrayD<Real>> {
    let t_len = sample.clip_len();
    let l = cfg.latent_size();
    let cgs = cfg.guidance_channels;
    if cgs < J_TOTAL {
        return Err(Error::Config(format!(
            "skeleton-align conditioning needs guidance_channels >= {J_TOTAL}, got {cgs}"
        )));
    }
    if sample.canvas != cfg.image_size {
        return Err(Error::Data(format!(
            "sample canvas {} does not match config image size {}",
            sample.canvas, cfg.image_size
        )));
    }
    let ratio = bone_length_sum(&sample.char_ref) / bone_length_sum(&sample.char_drive);
    let to_latent = l as f64 / cfg.image_size as f64;
    let sig = cfg.heatmap_sigma * to_latent;
    let inv2s2 = 1.0 / (2.0 * sig * sig);
    let mut out = ArrayD::<Real>::zeros(IxDyn(&[t_len, cgs, l, l]));
    for t in 0..t_len {
        let pose = &sample.poses[t];
        let ch = &sample.char_drive;
        let (_, kps) = forward_kinematics(
            pose.root_position,
            pose.root_rotation,
            &pose.joint_angles,
            &ch.limb_lengths,
            &ch.limb_widths,
            ch.hand_scale,
            ch.head_radius_scale,
        );
        let pelvis = to_img(pose.root_position, sample.canvas);
        for (j, &kp) in kps.iter().enumerate() {
            let p = to_img(kp, sample.canvas);
            let cx = (pelvis.0 + ratio * (p.0 - pelvis.0)) * to_latent;
            let cy = (pelvis.1 + ratio * (p.1 - pelvis.1)) * to_latent;
            for ly in 0..l {
                for lx in 0..l {
                    let d2 = (lx as f64 - cx).powi(2) + (ly as f64 - cy).powi(2);
                    out[[t, j, ly, lx]] = Real::from_f((-d2 * inv2s2).exp());
                }
            }
        }
    }
    Ok(out)
}

/// Sliding-window generation from precomputed conditioning (the same chunk,
/// overlap, and prefix-clamping policy the latent-conditioned path uses).
pub fn sample_video_conditioned(
    store: &ParamStore<Real>,
    cfg: &Config,
    reference: &Frame<Real>,
    guidance: &Array4<Real>,
    zf: &Array2<Real>,
    steps: usize,
    cfg_scale: f64,
    rng: &mut RandomStream,
) -> Result<VideoClip<Real>> {
    let t_total = guidance.shape()[0];
    if t_total == 0 {
        return Err(Error::Data("empty conditioning sequence".into()));
    }
    if zf.shape()[0] != t_total {
        return Err(Error::shape("face-latent sequence", &[t_total, cfg.latent_dim], zf.shape()));
    }
    let (t_c, o) = (cfg.chunk, cfg.overlap);
    let mut out: Vec<Frame<Real>> = Vec::with_capacity(t_total);
    for (i, (start, len)) in chunk_schedule(t_total, t_c, o).into_iter().enumerate() {
        let g = guidance.slice(s![start..start + len, .., .., ..]).to_owned();
        let z = zf.slice(s![start..start + len, ..]).to_owned();
        let prefix: Option<Vec<Frame<Real>>> = (i > 0).then(|| out[start..start + o].to_vec());
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
    VideoClip::new(out, 8.0)
}

/// Drive a reference frame with a clip. Latent variants encode the driving
/// frames into motion latents and run the retarget-conditioned sampler; the
/// skeleton-align baseline rasterizes rescaled driving keypoints instead.
/// Output length always equals the driving clip length.
#[allow(clippy::too_many_arguments)]
pub fn reenact(
    store: &ParamStore<Real>,
    cfg: &Config,
    variant: Variant,
    reference: &Frame<Real>,
    drive: &TrainingSample<Real>,
    steps: usize,
    cfg_scale: f64,
    rng: &mut RandomStream,
) -> Result<VideoClip<Real>> {
    if variant == Variant::SkeletonAlign {
        let g = skeleton_align_conditioning(cfg, drive)?;
        let g4: Array4<Real> = g.into_dimensionality().expect("conditioning rank");
        let zf = Array2::<Real>::zeros((drive.clip_len(), cfg.latent_dim));
        return sample_video_conditioned(store, cfg, reference, &g4, &zf, steps, cfg_scale, rng);
    }
    let motion = encode_clip_latents(
        store,
        cfg,
        variant,
        &drive.drive_frames,
        &drive.face_boxes,
        &drive.lh_boxes,
        &drive.rh_boxes,
    )?;
    sample_video(store, cfg, reference, &motion, steps, cfg_scale, rng)
}

/// Mean-absolute frame-to-frame differences of a generated clip, split into
/// chunk-seam transitions and intra-chunk transitions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeamStats {
    pub seam_mae: f64,
    pub intra_mae: f64,
    pub seam_edges: usize,
    pub intra_edges: usize,
}

fn frame_mae(a: &Frame<Real>, b: &Frame<Real>) -> f64 {
    let n = a.pixels.len().max(1);
    a.pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(&x, &y)| (x.to_f() - y.to_f()).abs())
        .sum::<f64>()
        / n as f64
}

/// Classify each adjacent-frame transition of `clip` by whether it crosses a
/// sliding-window boundary under `cfg`'s chunk/overlap schedule.
pub fn seam_statistics(cfg: &Config, clip: &VideoClip<Real>) -> SeamStats {
    let t_total = clip.len();
    let mut is_seam = vec![false; t_total.saturating_sub(1)];
    if t_total > 1 {
        for (i, (start, _len)) in chunk_schedule(t_total, cfg.chunk, cfg.overlap).into_iter().enumerate()
        {
            if i > 0 {
                let edge = start + cfg.overlap - 1;
                if edge < is_seam.len() {
                    is_seam[edge] = true;
                }
            }
        }
    }
    let (mut seam_sum, mut seam_n, mut intra_sum, mut intra_n) = (0.0, 0usize, 0.0, 0usize);
    for (e, &seam) in is_seam.iter().enumerate() {
        let mae = frame_mae(&clip.frames[e], &clip.frames[e + 1]);
        if seam {
            seam_sum += mae;
            seam_n += 1;
        } else {
            intra_sum += mae;
            intra_n += 1;
        }
    }
    SeamStats {
        seam_mae: if seam_n > 0 { seam_sum / seam_n as f64 } else { 0.0 },
        intra_mae: if intra_n > 0 { intra_sum / intra_n as f64 } else { 0.0 },
        seam_edges: seam_n,
        intra_edges: intra_n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_mode_set;
    use crate::train::{init_all_params, Variant};
    use xum_core::rng_fork;
    use xum_syndata::SampleMode;

    fn tiny_cfg() -> Config {
        Config {
            image_size: 32,
            patch_size: 8,
            latent_dim: 8,
            clip_len: 4,
            chunk: 3,
            overlap: 1,
            dit_depth: 1,
            dit_width: 32,
            dit_heads: 2,
            encoder_depth: 1,
            encoder_width: 32,
            encoder_heads: 2,
            guidance_channels: 32,
            sample_steps: 2,
            ..Config::default()
        }
    }

    fn sample_for(cfg: &Config, seed: u64) -> TrainingSample<Real> {
        gen_mode_set(cfg, 1, seed, SampleMode::CrossIdentity)[0].materialize().unwrap()
    }

    #[test]
    fn latent_extraction_is_deterministic_and_shaped() {
        let cfg = tiny_cfg();
        let s = sample_for(&cfg, 3);
        let store = init_all_params(&cfg, Variant::Full, 0);
        let run = || {
            encode_clip_latents(
                &store,
                &cfg,
                Variant::Full,
                &s.drive_frames,
                &s.face_boxes,
                &s.lh_boxes,
                &s.rh_boxes,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), cfg.clip_len);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.z.mu, y.z.mu);
            assert_eq!(x.z_rh.mu, y.z_rh.mu);
            assert_eq!(x.dim(), cfg.latent_dim);
        }
    }

    #[test]
    fn no_local_variant_zeroes_local_latents() {
        let cfg = tiny_cfg();
        let s = sample_for(&cfg, 5);
        let store = init_all_params(&cfg, Variant::NoLocal, 0);
        let sets = encode_clip_latents(
            &store,
            &cfg,
            Variant::NoLocal,
            &s.drive_frames,
            &s.face_boxes,
            &s.lh_boxes,
            &s.rh_boxes,
        )
        .unwrap();
        for set in &sets {
            assert!(set.z_f.mu.iter().all(|&v| v == 0.0));
            assert!(set.z_lh.mu.iter().all(|&v| v == 0.0));
            assert!(set.z_rh.mu.iter().all(|&v| v == 0.0));
            assert!(set.z.mu.iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn align_conditioning_peaks_near_rescaled_joints() {
        let cfg = tiny_cfg();
        let s = sample_for(&cfg, 11);
        let g = skeleton_align_conditioning(&cfg, &s).unwrap();
        let l = cfg.latent_size();
        assert_eq!(g.shape(), &[cfg.clip_len, cfg.guidance_channels, l, l]);
        // Unused channels stay zero; joint channels carry mass.
        let used: f64 = (0..J_TOTAL)
            .map(|j| g.slice(s![0, j, .., ..]).iter().map(|v| v.to_f()).sum::<f64>())
            .sum();
        let unused: f64 = (J_TOTAL..cfg.guidance_channels)
            .map(|j| g.slice(s![0, j, .., ..]).iter().map(|v| v.to_f()).sum::<f64>())
            .sum();
        assert!(used > 0.0);
        assert_eq!(unused, 0.0);
        // Same-identity rescale ratio is exactly 1: pelvis channel peaks at
        // the pelvis cell itself.
        let mut same = s.clone();
        same.char_drive = same.char_ref.clone();
        let g1 = skeleton_align_conditioning(&cfg, &same).unwrap();
        let pose = &same.poses[0];
        let scale = l as f64 / cfg.image_size as f64;
        let px = pose.root_position.0 * scale;
        let py = ((cfg.image_size as f64 - 1.0) - pose.root_position.1) * scale;
        let ch = g1.slice(s![0, 0, .., ..]);
        let (mut best, mut arg) = (-1.0, (0usize, 0usize));
        for y in 0..l {
            for x in 0..l {
                if ch[[y, x]].to_f() > best {
                    best = ch[[y, x]].to_f();
                    arg = (y, x);
                }
            }
        }
        assert!((arg.0 as f64 - py).abs() <= 1.0 && (arg.1 as f64 - px).abs() <= 1.0);
    }

    #[test]
    fn reenact_output_length_matches_drive_for_all_variants() {
        let cfg = tiny_cfg();
        let s = sample_for(&cfg, 21);
        for variant in [Variant::Full, Variant::NoLocal, Variant::SkeletonAlign] {
            let store = init_all_params(&cfg, variant, 0);
            let mut rng = rng_fork(0, "reenact-len");
            let clip = reenact(
                &store,
                &cfg,
                variant,
                &s.ref_frame,
                &s,
                cfg.sample_steps,
                1.0,
                &mut rng,
            )
            .unwrap();
            assert_eq!(clip.len(), s.clip_len(), "variant {variant}");
        }
    }

    #[test]
    fn seam_statistics_classifies_schedule_edges() {
        let cfg = tiny_cfg(); // chunk 3, overlap 1
        // 4 frames -> chunks (0,3), (2,2): one seam edge at 2 (frames 2-3).
        let mut frames = Vec::new();
        for i in 0..4 {
            let mut f = Frame::<Real>::zeros(8, 8);
            f.pixels.fill(Real::from_f(i as f64 * 0.1));
            frames.push(f);
        }
        // Make the seam transition twice as large as intra transitions.
        frames[3].pixels.fill(Real::from_f(0.4));
        let clip = VideoClip::new(frames, 8.0).unwrap();
        let st = seam_statistics(&cfg, &clip);
        assert_eq!(st.seam_edges, 1);
        assert_eq!(st.intra_edges, 2);
        assert!((st.intra_mae - 0.1).abs() < 1e-6);
        assert!((st.seam_mae - 0.2).abs() < 1e-6);
    }
}
