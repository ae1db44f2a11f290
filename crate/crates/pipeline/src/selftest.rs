//! Named oracle suite: fast, deterministic checks of the numeric contracts
//! the rest of the system leans on. Each check is independent and reports a
//! pass/fail with a one-line detail, so the CLI can print a table and CI can
//! gate on the aggregate.

use std::time::Instant;

use ndarray::{arr1, Array1, Array2, Array4, ArrayD, IxDyn};
use xum_core::checkpoint::{load_checkpoint, save_checkpoint};
use xum_core::nn::ParamStore;
use xum_core::{rng_fork, Config, Error, Frame, GaussianLatent, Real, Result, Scalar};
use xum_model::{
    cfg_velocity, decode_frame, encode_frame, flow_interpolate, flow_target, init_dit, kl_loss,
    sample_chunk, sample_chunk_dual_branch,
};
use xum_syndata::skeleton::{
    forward_kinematics, BONES, B_NECK, B_TORSO, KP_CHEST, KP_NECK, N_ANGLES, N_BONES,
};
use xum_syndata::{apply_augment, map_point, sample_augment};

use crate::metrics::{psnr, ssim};

/// Outcome of one named check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    !results.is_empty() && results.iter().all(|r| r.passed)
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Data(msg.into()))
    }
}

fn random_frame(rng: &mut xum_core::RandomStream, side: usize) -> Frame<Real> {
    let mut f = Frame::<Real>::zeros(side, side);
    f.pixels.mapv_inplace(|_| Real::from_f(rng.uniform_f64()));
    f
}

fn check_checkpoint_roundtrip() -> Result<String> {
    let dir = std::env::temp_dir().join(format!("xum-selftest-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join("roundtrip.ckpt");
    let mut rng = rng_fork(41, "selftest/ckpt");
    let mut store = ParamStore::<Real>::new();
    store.insert("a.w", ArrayD::from_shape_vec(IxDyn(&[2, 3]), rng.normal_vec(6)).unwrap());
    store.insert("a.b", ArrayD::from_shape_vec(IxDyn(&[5]), rng.normal_vec(5)).unwrap());
    store.insert(
        "deep.block.0.qkv",
        ArrayD::from_shape_vec(IxDyn(&[4, 2, 2]), rng.normal_vec(16)).unwrap(),
    );
    let cfg = Config::default();
    save_checkpoint(&path, &store, &cfg)?;
    let (loaded, cfg2) = load_checkpoint::<Real>(&path)?;
    std::fs::remove_dir_all(&dir).ok();
    ensure(cfg2 == cfg, "config did not survive the roundtrip")?;
    ensure(loaded.len() == store.len(), "parameter count changed")?;
    for (name, arr) in store.iter() {
        let back = loaded
            .get(name)
            .ok_or_else(|| Error::Data(format!("{name} missing after load")))?;
        ensure(back == arr, format!("{name} changed bits in the roundtrip"))?;
    }
    Ok(format!("{} params bit-identical", store.len()))
}

fn check_vae_exactness() -> Result<String> {
    let mut rng = rng_fork(42, "selftest/vae");
    let frame = random_frame(&mut rng, 16);
    let latent = encode_frame(&frame, 4)?;
    ensure(
        latent.shape() == [4, 4, 48],
        format!("latent shape {:?}, expected [4, 4, 48]", latent.shape()),
    )?;
    let back = decode_frame(latent.view(), 4)?;
    ensure(back.pixels == frame.pixels, "space-to-depth roundtrip not lossless")?;
    Ok("16x16x3 -> 4x4x48 -> 16x16x3 bit-exact".into())
}

fn check_kl_closed_forms() -> Result<String> {
    let case = |mu: f64, logvar: f64| -> Result<f64> {
        Ok(kl_loss(&GaussianLatent::<Real>::new(
            arr1(&[Real::from_f(mu)]),
            arr1(&[Real::from_f(logvar)]),
        )?))
    };
    let zero = case(0.0, 0.0)?;
    ensure(zero.abs() < 1e-12, format!("standard normal KL = {zero}, expected 0"))?;
    let half = case(1.0, 0.0)?;
    ensure((half - 0.5).abs() < 1e-6, format!("unit-mean KL = {half}, expected 0.5"))?;
    let ln2 = case(0.0, std::f64::consts::LN_2)?;
    let expect = 0.5 * (1.0 - std::f64::consts::LN_2);
    ensure(
        (ln2 - expect).abs() < 1e-6 && (ln2 - 0.1534).abs() < 1e-4,
        format!("doubled-variance KL = {ln2}, expected {expect:.6}"),
    )?;
    Ok("0, 0.5, 0.1534 all match".into())
}

fn check_flow_endpoints() -> Result<String> {
    let mut rng = rng_fork(43, "selftest/flow");
    let x1 = ArrayD::<Real>::from_shape_vec(IxDyn(&[2, 3, 4]), rng.normal_vec(24)).unwrap();
    let eps = ArrayD::<Real>::from_shape_vec(IxDyn(&[2, 3, 4]), rng.normal_vec(24)).unwrap();
    ensure(flow_interpolate(&x1, &eps, 0.0) == eps, "x_0 must equal the noise exactly")?;
    ensure(flow_interpolate(&x1, &eps, 1.0) == x1, "x_1 must equal the data exactly")?;
    let mid = flow_interpolate(&x1, &eps, 0.5);
    for ((m, x), e) in mid.iter().zip(x1.iter()).zip(eps.iter()) {
        let want = 0.5 * x.to_f() + 0.5 * e.to_f();
        ensure((m.to_f() - want).abs() < 1e-6, "midpoint interpolant off")?;
    }
    let v = flow_target(&x1, &eps);
    for ((v, x), e) in v.iter().zip(x1.iter()).zip(eps.iter()) {
        ensure(v.to_f() == x.to_f() - e.to_f(), "velocity target is not x1 - eps")?;
    }
    Ok("endpoints exact, midpoint and velocity match".into())
}

fn check_cfg_unit_scale_identity() -> Result<String> {
    let cfg = Config {
        image_size: 16,
        patch_size: 8,
        latent_dim: 8,
        clip_len: 2,
        chunk: 2,
        overlap: 1,
        dit_depth: 1,
        dit_width: 32,
        dit_heads: 2,
        encoder_depth: 1,
        encoder_width: 32,
        encoder_heads: 2,
        guidance_channels: 8,
        ..Config::default()
    };
    let mut store = ParamStore::<Real>::new();
    init_dit(&mut store, 17, &cfg);
    // The output projection starts zero-initialized; nudge every parameter so
    // the velocity field (and hence the guidance branch) is non-trivial.
    let mut rng = rng_fork(44, "selftest/cfg-perturb");
    for (_, arr) in store.iter_mut() {
        for v in arr.iter_mut() {
            *v = *v + Real::from_f(0.02 * rng.normal_f64());
        }
    }
    let reference = random_frame(&mut rng, 16);
    let l = cfg.latent_size();
    let t = cfg.clip_len;
    let g_n = t * cfg.guidance_channels * l * l;
    let guidance =
        Array4::from_shape_vec((t, cfg.guidance_channels, l, l), rng.normal_vec(g_n)).unwrap();
    let zf = Array2::from_shape_vec((t, cfg.latent_dim), rng.normal_vec(t * cfg.latent_dim)).unwrap();
    let run = |scale: f64, dual: bool| -> Result<xum_core::VideoClip<Real>> {
        let mut r = rng_fork(45, "selftest/cfg-sample");
        if dual {
            sample_chunk_dual_branch(&store, &cfg, &reference, &guidance, &zf, 3, scale, &mut r, None)
        } else {
            sample_chunk(&store, &cfg, &reference, &guidance, &zf, 3, scale, &mut r, None)
        }
    };
    let single = run(1.0, false)?;
    let dual = run(1.0, true)?;
    for (a, b) in single.frames.iter().zip(dual.frames.iter()) {
        ensure(a.pixels == b.pixels, "scale-1 sampling differs from conditional-only")?;
    }
    let pushed = run(2.0, true)?;
    let moved = single
        .frames
        .iter()
        .zip(pushed.frames.iter())
        .any(|(a, b)| a.pixels != b.pixels);
    ensure(moved, "scale-2 guidance had no effect; oracle is vacuous")?;
    // The combination rule itself: s=1 returns the conditional branch as-is.
    let vu = ArrayD::<Real>::from_shape_vec(IxDyn(&[5]), rng.normal_vec(5)).unwrap();
    let vc = ArrayD::<Real>::from_shape_vec(IxDyn(&[5]), rng.normal_vec(5)).unwrap();
    ensure(cfg_velocity(&vu, &vc, 1.0) == vc, "cfg combination at s=1 is not exact")?;
    Ok("unit-scale sampling bit-matches the conditional branch".into())
}

fn check_forward_kinematics() -> Result<String> {
    let root = (31.0, 17.0);
    let rot = 0.3;
    let angles = [0.0f64; N_ANGLES];
    let ones = vec![1.0f64; N_BONES];
    let (bones, kps) = forward_kinematics(root, rot, &angles, &ones, &ones, 1.0, 1.0);
    // Hand-composed chain: with zero joint angles the torso direction is the
    // root rotation plus the torso rest angle, and the neck continues it.
    let torso = &BONES[B_TORSO];
    let cum_t = rot + torso.angle;
    let chest = (root.0 + torso.base_len * cum_t.cos(), root.1 + torso.base_len * cum_t.sin());
    ensure(
        (kps[KP_CHEST].0 - chest.0).abs() < 1e-9 && (kps[KP_CHEST].1 - chest.1).abs() < 1e-9,
        format!("chest at {:?}, expected {chest:?}", kps[KP_CHEST]),
    )?;
    let neck_b = &BONES[B_NECK];
    let cum_n = cum_t + neck_b.angle;
    let neck = (chest.0 + neck_b.base_len * cum_n.cos(), chest.1 + neck_b.base_len * cum_n.sin());
    ensure(
        (kps[KP_NECK].0 - neck.0).abs() < 1e-9 && (kps[KP_NECK].1 - neck.1).abs() < 1e-9,
        format!("neck at {:?}, expected {neck:?}", kps[KP_NECK]),
    )?;
    for (i, bw) in bones.iter().enumerate() {
        let len = ((bw.p1.0 - bw.p0.0).powi(2) + (bw.p1.1 - bw.p0.1).powi(2)).sqrt();
        ensure(
            (len - BONES[i].base_len).abs() < 1e-9,
            format!("bone {i} world length {len}, expected {}", BONES[i].base_len),
        )?;
    }
    Ok("chest/neck positions and all bone lengths match".into())
}

fn check_image_metrics() -> Result<String> {
    let mut a = Frame::<Real>::zeros(16, 16);
    a.pixels.fill(Real::from_f(0.25));
    ensure(psnr(&a, &a)?.is_infinite(), "identical frames must have infinite psnr")?;
    let mut b = Frame::<Real>::zeros(16, 16);
    b.pixels.fill(Real::from_f(0.75));
    let p = psnr(&a, &b)?;
    ensure(
        (p - 6.0206).abs() < 1e-3,
        format!("psnr of 0.5 offset = {p}, expected 6.0206"),
    )?;
    let mut rng = rng_fork(46, "selftest/metrics");
    let x = random_frame(&mut rng, 16);
    let s_self = ssim(&x, &x)?;
    ensure((s_self - 1.0).abs() < 1e-9, format!("self-ssim {s_self}, expected 1"))?;
    let mut board = Frame::<Real>::zeros(16, 16);
    let mut inv = Frame::<Real>::zeros(16, 16);
    for y in 0..16 {
        for x in 0..16 {
            let v = ((x + y) % 2) as f64;
            for c in 0..3 {
                board.pixels[[y, x, c]] = Real::from_f(v);
                inv.pixels[[y, x, c]] = Real::from_f(1.0 - v);
            }
        }
    }
    let s_inv = ssim(&board, &inv)?;
    ensure(s_inv < 0.0, format!("anti-correlated ssim {s_inv}, expected < 0"))?;
    Ok("psnr 6.0206 / inf and ssim 1 / negative all match".into())
}

fn check_augment_point_map() -> Result<String> {
    let size = 64usize;
    let mut rng = rng_fork(47, "selftest/augment");
    let params = sample_augment(&mut rng, size);
    let dot = (33.0, 30.0);
    let mut frame = Frame::<Real>::zeros(size, size);
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let (x, y) = ((dot.0 as i64 + dx) as usize, (dot.1 as i64 + dy) as usize);
            for c in 0..3 {
                frame.pixels[[y, x, c]] = Real::one();
            }
        }
    }
    let warped = apply_augment(&frame, &params);
    let mut best = (f64::MIN, (0usize, 0usize));
    for y in 0..size {
        for x in 0..size {
            let v = (0..3).map(|c| warped.pixels[[y, x, c]].to_f()).sum::<f64>();
            if v > best.0 {
                best = (v, (x, y));
            }
        }
    }
    let expect = map_point(&params, dot);
    let dist = ((best.1 .0 as f64 - expect.0).powi(2) + (best.1 .1 as f64 - expect.1).powi(2)).sqrt();
    ensure(
        dist <= 1.0,
        format!("warped dot at {:?}, point map says {expect:?} ({dist:.2}px apart)", best.1),
    )?;
    Ok(format!("marker and point map agree within {dist:.2}px"))
}

/// Run every oracle check, timing each one.
pub fn run_selftest() -> Vec<CheckResult> {
    let checks: Vec<(&'static str, fn() -> Result<String>)> = vec![
        ("checkpoint-roundtrip", check_checkpoint_roundtrip),
        ("pseudo-vae-exact", check_vae_exactness),
        ("kl-closed-form", check_kl_closed_forms),
        ("flow-endpoints", check_flow_endpoints),
        ("cfg-unit-scale-identity", check_cfg_unit_scale_identity),
        ("forward-kinematics", check_forward_kinematics),
        ("image-metrics", check_image_metrics),
        ("augment-keypoint-map", check_augment_point_map),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let outcome = f();
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok(detail) => CheckResult { name, passed: true, detail, seconds },
                Err(e) => CheckResult { name, passed: false, detail: e.to_string(), seconds },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_oracles_green_and_fast() {
        let start = Instant::now();
        let results = run_selftest();
        let elapsed = start.elapsed().as_secs_f64();
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 8);
        assert!(all_passed(&results));
        assert!(elapsed < 60.0, "selftest took {elapsed:.1}s");
    }

    #[test]
    fn empty_result_set_is_not_a_pass() {
        assert!(!all_passed(&[]));
    }
}
