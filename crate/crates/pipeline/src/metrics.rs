//! Frame and keypoint metric kernels. All three are validated against
//! hand-computable oracles in the tests below before any model evaluation
//! relies on them.

use ndarray::Array2;
use xum_core::{Error, Frame, Result, Scalar};

/// Peak signal-to-noise ratio in dB for frames with peak value 1.0:
/// 10·log10(1/MSE). Identical frames (MSE = 0) return `f64::INFINITY`.
pub fn psnr<S: Scalar>(a: &Frame<S>, b: &Frame<S>) -> Result<f64> {
    if a.pixels.shape() != b.pixels.shape() {
        return Err(Error::shape("psnr", a.pixels.shape(), b.pixels.shape()));
    }
    let n = a.pixels.len() as f64;
    let mse: f64 = a
        .pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(&x, &y)| {
            let d = x.to_f() - y.to_f();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// 11×11 Gaussian window, σ = 1.5, normalized to sum 1.
fn gaussian_window() -> [f64; 11] {
    let sigma = 1.5f64;
    let mut w = [0.0f64; 11];
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

fn to_gray<S: Scalar>(f: &Frame<S>) -> Array2<f64> {
    let (h, w, _) = f.pixels.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        (f.pixels[[y, x, 0]].to_f() + f.pixels[[y, x, 1]].to_f() + f.pixels[[y, x, 2]].to_f()) / 3.0
    })
}

/// Separable valid-region Gaussian filter: output is (h-10, w-10).
fn gauss_filter(img: &Array2<f64>, k: &[f64; 11]) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut rows = Array2::<f64>::zeros((h, w - 10));
    for y in 0..h {
        for x in 0..w - 10 {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * img[[y, x + i]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h - 10, w - 10));
    for y in 0..h - 10 {
        for x in 0..w - 10 {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * rows[[y + i, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Single-scale structural similarity on the channel-mean grayscale images:
/// 11×11 Gaussian window σ = 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0,
/// averaged over the positions where the window fits entirely.
pub fn ssim<S: Scalar>(a: &Frame<S>, b: &Frame<S>) -> Result<f64> {
    if a.pixels.shape() != b.pixels.shape() {
        return Err(Error::shape("ssim", a.pixels.shape(), b.pixels.shape()));
    }
    let (h, w) = (a.height(), a.width());
    if h < 11 || w < 11 {
        return Err(Error::Data(format!("ssim needs frames of at least 11x11, got {h}x{w}")));
    }
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let k = gaussian_window();
    let (ga, gb) = (to_gray(a), to_gray(b));
    let mu_a = gauss_filter(&ga, &k);
    let mu_b = gauss_filter(&gb, &k);
    let e_aa = gauss_filter(&(&ga * &ga), &k);
    let e_bb = gauss_filter(&(&gb * &gb), &k);
    let e_ab = gauss_filter(&(&ga * &gb), &k);
    let mut total = 0.0;
    let n = mu_a.len() as f64;
    for ((&ma, &mb), ((&aa, &bb), &ab)) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(e_aa.iter().zip(e_bb.iter()).zip(e_ab.iter()))
    {
        let (va, vb) = (aa - ma * ma, bb - mb * mb);
        let cov = ab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n)
}

/// Which keypoint rows a [`keypoint_l1`] call aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpSubset {
    /// Body skeleton joints (rows 0..J_BODY).
    Body,
    /// Hand joints (rows J_BODY..J_TOTAL).
    Hands,
}

impl KpSubset {
    fn range(&self, total: usize, body: usize) -> std::ops::Range<usize> {
        match self {
            KpSubset::Body => 0..body.min(total),
            KpSubset::Hands => body.min(total)..total,
        }
    }
}

/// Mean keypoint L1 in diagonal-normalized coordinates: per visible joint of
/// the subset, (|Δx| + |Δy|) / 2 with coordinates divided by the image
/// diagonal, averaged over joints. `visible` gates which ground-truth rows
/// count. Returns `None` when the subset has no visible joints.
pub fn keypoint_l1(
    pred: &Array2<f64>,
    gt: &Array2<f64>,
    visible: &[bool],
    subset: KpSubset,
    body_joints: usize,
    image_side: usize,
) -> Result<Option<f64>> {
    if pred.shape() != gt.shape() || pred.shape()[1] != 2 {
        return Err(Error::shape("keypoint_l1", gt.shape(), pred.shape()));
    }
    let j = pred.shape()[0];
    if visible.len() != j {
        return Err(Error::shape("keypoint_l1 visibility", &[j], &[visible.len()]));
    }
    let diag = ((image_side * image_side * 2) as f64).sqrt();
    let mut total = 0.0;
    let mut count = 0usize;
    for row in subset.range(j, body_joints) {
        if !visible[row] {
            continue;
        }
        let dx = (pred[[row, 0]] - gt[[row, 0]]).abs() / diag;
        let dy = (pred[[row, 1]] - gt[[row, 1]]).abs() / diag;
        total += (dx + dy) / 2.0;
        count += 1;
    }
    Ok((count > 0).then(|| total / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use xum_core::Real;

    fn constant_frame(side: usize, v: f64) -> Frame<Real> {
        Frame { pixels: Array3::from_elem((side, side, 3), v as Real) }
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = constant_frame(16, 0.37);
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn psnr_closed_forms() {
        // Uniform squared error of 0.01 -> 20 dB; of 1.0 -> 0 dB.
        let a = constant_frame(16, 0.0);
        let b = constant_frame(16, 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = constant_frame(16, 1.0);
        assert!(psnr(&a, &c).unwrap().abs() < 1e-9);
    }

    #[test]
    fn psnr_shape_mismatch_is_error() {
        let a = constant_frame(16, 0.0);
        let b = constant_frame(8, 0.0);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_self_is_one() {
        let mut a = constant_frame(32, 0.0);
        for y in 0..32 {
            for x in 0..32 {
                a.pixels[[y, x, 0]] = ((x * 7 + y * 13) % 29) as Real / 29.0;
                a.pixels[[y, x, 1]] = ((x * 3 + y * 5) % 17) as Real / 17.0;
            }
        }
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_equal_constants_is_one() {
        let a = constant_frame(24, 0.42);
        let b = constant_frame(24, 0.42);
        assert!((ssim(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_inverted_checkerboard_is_negative() {
        let mut a = constant_frame(32, 0.0);
        let mut b = constant_frame(32, 0.0);
        for y in 0..32 {
            for x in 0..32 {
                let v = ((x + y) % 2) as Real;
                for ch in 0..3 {
                    a.pixels[[y, x, ch]] = v;
                    b.pixels[[y, x, ch]] = 1.0 - v;
                }
            }
        }
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_small_frame_is_error() {
        let a = constant_frame(8, 0.5);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn keypoint_identical_is_zero() {
        let kp = Array2::from_shape_fn((28, 2), |(j, c)| (j * 2 + c) as f64);
        let vis = vec![true; 28];
        let v = keypoint_l1(&kp, &kp, &vis, KpSubset::Body, 14, 64).unwrap().unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn keypoint_single_joint_tenth_diag_offset_is_half_that() {
        let side = 64usize;
        let diag = ((2 * side * side) as f64).sqrt();
        let gt = Array2::zeros((28, 2));
        let mut pred = gt.clone();
        pred[[3, 0]] = 0.1 * diag;
        let mut vis = vec![false; 28];
        vis[3] = true;
        let v = keypoint_l1(&pred, &gt, &vis, KpSubset::Body, 14, side).unwrap().unwrap();
        assert!((v - 0.05).abs() < 1e-12);
    }

    #[test]
    fn keypoint_subsets_split_at_body_count() {
        let gt = Array2::zeros((28, 2));
        let mut pred = gt.clone();
        pred[[20, 1]] = 10.0; // hand row
        let vis = vec![true; 28];
        let body = keypoint_l1(&pred, &gt, &vis, KpSubset::Body, 14, 64).unwrap().unwrap();
        let hands = keypoint_l1(&pred, &gt, &vis, KpSubset::Hands, 14, 64).unwrap().unwrap();
        assert_eq!(body, 0.0);
        assert!(hands > 0.0);
    }

    #[test]
    fn keypoint_no_visible_is_none() {
        let kp = Array2::zeros((28, 2));
        let vis = vec![false; 28];
        assert!(keypoint_l1(&kp, &kp, &vis, KpSubset::Hands, 14, 64).unwrap().is_none());
    }

    #[test]
    fn keypoint_shape_mismatch_is_error() {
        let a = Array2::zeros((28, 2));
        let b = Array2::zeros((27, 2));
        assert!(keypoint_l1(&a, &b, &vec![true; 28], KpSubset::Body, 14, 64).is_err());
    }
}
