//! Linear probes on the global motion latent: closed-form ridge regression
//! plus helpers that pair encoder features with pose-parameter and
//! body-proportion targets for the disentanglement check.

use ndarray::{s, Array2};
use xum_core::nn::ParamStore;
use xum_core::{Config, Error, Real, Result, Scalar};
use xum_model::encode_global;
use xum_syndata::skeleton::{forward_kinematics, recover_pose_params, N_BONES, N_RECOVERABLE};
use xum_syndata::TrainingSample;

fn with_bias(x: &Array2<f64>) -> Array2<f64> {
    let (n, p) = (x.shape()[0], x.shape()[1]);
    let mut a = Array2::<f64>::ones((n, p + 1));
    a.slice_mut(s![.., ..p]).assign(x);
    a
}

/// Gauss-Jordan with partial pivoting over an augmented multi-RHS system.
fn solve(mut a: Array2<f64>, mut b: Array2<f64>) -> Result<Array2<f64>> {
    let n = a.shape()[0];
    let q = b.shape()[1];
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[[r, col]].abs() > a[[piv, col]].abs() {
                piv = r;
            }
        }
        if a[[piv, col]].abs() < 1e-12 {
            return Err(Error::Data("singular ridge system".into()));
        }
        if piv != col {
            for c in 0..n {
                let t = a[[piv, c]];
                a[[piv, c]] = a[[col, c]];
                a[[col, c]] = t;
            }
            for c in 0..q {
                let t = b[[piv, c]];
                b[[piv, c]] = b[[col, c]];
                b[[col, c]] = t;
            }
        }
        let d = a[[col, col]];
        for c in 0..n {
            a[[col, c]] /= d;
        }
        for c in 0..q {
            b[[col, c]] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[[r, col]];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                a[[r, c]] -= f * a[[col, c]];
            }
            for c in 0..q {
                b[[r, c]] -= f * b[[col, c]];
            }
        }
    }
    Ok(b)
}

/// Closed-form ridge regression with an appended bias column. The bias is
/// left unregularized so constant targets are fit exactly. Returns weights
/// of shape (p + 1, q) with the bias row last.
pub fn ridge_fit(x: &Array2<f64>, y: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    let n = x.shape()[0];
    if n == 0 || y.shape()[0] != n {
        return Err(Error::shape("ridge targets", &[n, y.shape()[1]], y.shape()));
    }
    let a = with_bias(x);
    let p1 = a.shape()[1];
    let mut ata = a.t().dot(&a);
    for i in 0..p1 - 1 {
        ata[[i, i]] += alpha;
    }
    let atb = a.t().dot(y);
    solve(ata, atb)
}

pub fn ridge_predict(w: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    with_bias(x).dot(w)
}

/// Held-out coefficient-of-determination summary for one probe.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProbeOutcome {
    pub r2_mean: f64,
    pub r2_per_dim: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Fit ridge on the train split and score per-dimension R^2 on the test
/// split. Dimensions whose test targets are (numerically) constant score 1.0
/// when predicted exactly and 0.0 otherwise.
pub fn probe_r2(
    x_train: &Array2<f64>,
    y_train: &Array2<f64>,
    x_test: &Array2<f64>,
    y_test: &Array2<f64>,
    alpha: f64,
) -> Result<ProbeOutcome> {
    if x_test.shape()[1] != x_train.shape()[1] {
        return Err(Error::shape("probe features", x_train.shape(), x_test.shape()));
    }
    if y_test.shape()[0] != x_test.shape()[0] || y_test.shape()[1] != y_train.shape()[1] {
        return Err(Error::shape(
            "probe targets",
            &[x_test.shape()[0], y_train.shape()[1]],
            y_test.shape(),
        ));
    }
    let w = ridge_fit(x_train, y_train, alpha)?;
    let pred = ridge_predict(&w, x_test);
    let n = y_test.shape()[0];
    let q = y_test.shape()[1];
    let mut r2_per_dim = Vec::with_capacity(q);
    for d in 0..q {
        let mean = y_test.column(d).sum() / n as f64;
        let mut ss_tot = 0.0;
        let mut ss_res = 0.0;
        for r in 0..n {
            ss_tot += (y_test[[r, d]] - mean).powi(2);
            ss_res += (y_test[[r, d]] - pred[[r, d]]).powi(2);
        }
        let r2 = if ss_tot > 1e-12 {
            1.0 - ss_res / ss_tot
        } else if ss_res <= 1e-9 {
            1.0
        } else {
            0.0
        };
        r2_per_dim.push(r2);
    }
    let r2_mean = r2_per_dim.iter().sum::<f64>() / q.max(1) as f64;
    Ok(ProbeOutcome {
        r2_mean,
        r2_per_dim,
        n_train: x_train.shape()[0],
        n_test: n,
    })
}

/// Per-frame probe rows: global-latent means as features, keypoint-recoverable
/// joint angles as motion targets, and the driving character's limb-length
/// multipliers as identity targets.
#[derive(Debug, Clone)]
pub struct ProbeData {
    pub features: Array2<f64>,
    pub pose_targets: Array2<f64>,
    pub identity_targets: Array2<f64>,
}

pub fn collect_probe_data(
    store: &ParamStore<Real>,
    cfg: &Config,
    samples: &[TrainingSample<Real>],
) -> Result<ProbeData> {
    let rows: usize = samples.iter().map(|s| s.clip_len()).sum();
    let mut features = Array2::<f64>::zeros((rows, cfg.latent_dim));
    let mut pose_targets = Array2::<f64>::zeros((rows, N_RECOVERABLE));
    let mut identity_targets = Array2::<f64>::zeros((rows, N_BONES));
    let mut r = 0;
    for sample in samples {
        let ch = &sample.char_drive;
        for t in 0..sample.clip_len() {
            let g = encode_global(store, cfg, &sample.drive_frames[t])?;
            for (d, &v) in g.mu.iter().enumerate() {
                features[[r, d]] = v.to_f();
            }
            let pose = &sample.poses[t];
            let (_, kps) = forward_kinematics(
                pose.root_position,
                pose.root_rotation,
                &pose.joint_angles,
                &ch.limb_lengths,
                &ch.limb_widths,
                ch.hand_scale,
                ch.head_radius_scale,
            );
            for (d, &v) in recover_pose_params(&kps).iter().enumerate() {
                pose_targets[[r, d]] = v;
            }
            for (d, &v) in ch.limb_lengths.iter().enumerate() {
                identity_targets[[r, d]] = v;
            }
            r += 1;
        }
    }
    Ok(ProbeData {
        features,
        pose_targets,
        identity_targets,
    })
}

/// The two-sided disentanglement probe: returns (pose, identity) outcomes
/// from ridge probes fit on `train` and scored on `test`, with the ridge
/// strength scaled to the training row count.
pub fn disentanglement_probe(
    store: &ParamStore<Real>,
    cfg: &Config,
    train: &[TrainingSample<Real>],
    test: &[TrainingSample<Real>],
) -> Result<(ProbeOutcome, ProbeOutcome)> {
    let tr = collect_probe_data(store, cfg, train)?;
    let te = collect_probe_data(store, cfg, test)?;
    let alpha = 1e-3 * tr.features.shape()[0] as f64;
    let pose = probe_r2(
        &tr.features,
        &tr.pose_targets,
        &te.features,
        &te.pose_targets,
        alpha,
    )?;
    let identity = probe_r2(
        &tr.features,
        &tr.identity_targets,
        &te.features,
        &te.identity_targets,
        alpha,
    )?;
    Ok((pose, identity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_mode_set;
    use crate::train::{init_all_params, Variant};
    use std::f64::consts::PI;
    use xum_core::rng_fork;
    use xum_syndata::SampleMode;

    fn gaussian_matrix(rng: &mut xum_core::RandomStream, n: usize, p: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, p), |_| rng.normal_f64())
    }

    #[test]
    fn ridge_recovers_planted_linear_map() {
        let mut rng = rng_fork(0, "probe-linear");
        let (n, p, q) = (300, 6, 3);
        let x = gaussian_matrix(&mut rng, n, p);
        let w_true = gaussian_matrix(&mut rng, p, q);
        let b_true = gaussian_matrix(&mut rng, 1, q);
        let y = x.dot(&w_true) + &b_true;
        let w = ridge_fit(&x, &y, 1e-6).unwrap();
        let x2 = gaussian_matrix(&mut rng, 100, p);
        let y2 = x2.dot(&w_true) + &b_true;
        let pred = ridge_predict(&w, &x2);
        let max_err = (&pred - &y2).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(max_err < 1e-5, "max_err {max_err}");
    }

    #[test]
    fn r2_is_one_for_linear_targets_and_low_for_noise() {
        let mut rng = rng_fork(1, "probe-r2");
        let (n, p, q) = (400, 8, 4);
        let x_tr = gaussian_matrix(&mut rng, n, p);
        let x_te = gaussian_matrix(&mut rng, 150, p);
        let w_true = gaussian_matrix(&mut rng, p, q);
        let lin = probe_r2(&x_tr, &x_tr.dot(&w_true), &x_te, &x_te.dot(&w_true), 1e-3).unwrap();
        assert!(lin.r2_mean > 0.999, "linear r2 {}", lin.r2_mean);
        assert!(lin.r2_per_dim.iter().all(|&v| v > 0.999));

        let y_tr = gaussian_matrix(&mut rng, n, q);
        let y_te = gaussian_matrix(&mut rng, 150, q);
        let noise = probe_r2(&x_tr, &y_tr, &x_te, &y_te, 1e-3 * n as f64).unwrap();
        assert!(noise.r2_mean < 0.1, "noise r2 {}", noise.r2_mean);
    }

    #[test]
    fn constant_targets_score_one_because_bias_is_unregularized() {
        let mut rng = rng_fork(2, "probe-const");
        let x_tr = gaussian_matrix(&mut rng, 100, 5);
        let x_te = gaussian_matrix(&mut rng, 40, 5);
        let y_tr = Array2::from_elem((100, 2), 3.7);
        let y_te = Array2::from_elem((40, 2), 3.7);
        let out = probe_r2(&x_tr, &y_tr, &x_te, &y_te, 1e-3 * 100.0).unwrap();
        assert_eq!(out.r2_per_dim, vec![1.0, 1.0]);
    }

    #[test]
    fn duplicate_features_need_the_ridge_term() {
        let mut rng = rng_fork(3, "probe-dup");
        let base = gaussian_matrix(&mut rng, 50, 1);
        let mut x = Array2::<f64>::zeros((50, 2));
        x.column_mut(0).assign(&base.column(0));
        x.column_mut(1).assign(&base.column(0));
        let y = gaussian_matrix(&mut rng, 50, 1);
        assert!(ridge_fit(&x, &y, 0.0).is_err());
        assert!(ridge_fit(&x, &y, 1.0).is_ok());
    }

    #[test]
    fn probe_rows_align_with_samples_and_pose_params_are_size_invariant() {
        let cfg = Config {
            image_size: 32,
            patch_size: 8,
            latent_dim: 8,
            clip_len: 2,
            encoder_depth: 1,
            encoder_width: 32,
            encoder_heads: 2,
            ..Config::default()
        };
        let samples: Vec<_> = gen_mode_set(&cfg, 2, 9, SampleMode::CrossIdentity)
            .iter()
            .map(|c| c.materialize().unwrap())
            .collect();
        let store = init_all_params(&cfg, Variant::Full, 0);
        let data = collect_probe_data(&store, &cfg, &samples).unwrap();
        assert_eq!(data.features.shape(), &[4, cfg.latent_dim]);
        assert_eq!(data.pose_targets.shape(), &[4, N_RECOVERABLE]);
        assert_eq!(data.identity_targets.shape(), &[4, N_BONES]);
        for (d, &v) in samples[0].char_drive.limb_lengths.iter().enumerate() {
            assert_eq!(data.identity_targets[[0, d]], v);
        }
        assert!(data.pose_targets.iter().all(|v| v.is_finite() && v.abs() <= PI + 1e-9));
        assert!(data.features.iter().any(|&v| v != 0.0));

        // The recoverable pose parameters ignore body proportions: running the
        // kinematics of two different characters under one pose must agree.
        let s = &samples[0];
        let pose = &s.poses[0];
        let run = |ch: &xum_syndata::CharacterSpec| {
            let (_, kps) = forward_kinematics(
                pose.root_position,
                pose.root_rotation,
                &pose.joint_angles,
                &ch.limb_lengths,
                &ch.limb_widths,
                ch.hand_scale,
                ch.head_radius_scale,
            );
            recover_pose_params(&kps)
        };
        let a = run(&s.char_ref);
        let b = run(&s.char_drive);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
