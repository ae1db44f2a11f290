//! Shared domain value types.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array1, Array3};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// One image: H x W x 3, values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<S: Scalar> {
    pub pixels: Array3<S>,
}

impl<S: Scalar> Frame<S> {
    pub fn new(pixels: Array3<S>) -> Result<Self> {
        if pixels.shape()[2] != 3 {
            return Err(Error::shape("Frame", &[0, 0, 3], pixels.shape()));
        }
        Ok(Frame { pixels })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Frame {
            pixels: Array3::zeros((h, w, 3)),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn is_square(&self, side: usize) -> bool {
        self.height() == side && self.width() == side
    }

    /// Quantize to the 8-bit grid (multiples of 1/255) so PNG roundtrips are lossless.
    pub fn quantize(&mut self) {
        let scale = S::from_f(255.0);
        self.pixels.mapv_inplace(|v| {
            let clamped = v.max(S::zero()).min(S::one());
            (clamped * scale).round() / scale
        });
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.to_f().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(h: usize, w: usize, data: &[u8]) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(Error::shape("Frame::from_u8", &[h * w * 3], &[data.len()]));
        }
        let vals: Vec<S> = data.iter().map(|&b| S::from_f(b as f64 / 255.0)).collect();
        Ok(Frame {
            pixels: Array3::from_shape_vec((h, w, 3), vals).expect("len checked"),
        })
    }

    /// Mirror left-right (flips the width axis).
    pub fn hflip(&self) -> Self {
        let (h, w, _) = self.pixels.dim();
        let mut out = Array3::zeros((h, w, 3));
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    out[[r, c, ch]] = self.pixels[[r, w - 1 - c, ch]];
                }
            }
        }
        Frame { pixels: out }
    }
}

/// Ordered frames plus fps metadata.
#[derive(Debug, Clone)]
pub struct VideoClip<S: Scalar> {
    pub frames: Vec<Frame<S>>,
    pub fps: f64,
}

impl<S: Scalar> VideoClip<S> {
    pub fn new(frames: Vec<Frame<S>>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Data("VideoClip needs at least one frame".into()));
        }
        let shape = frames[0].pixels.shape().to_vec();
        for (i, f) in frames.iter().enumerate() {
            if f.pixels.shape() != shape.as_slice() {
                return Err(Error::shape(format!("VideoClip frame {i}"), &shape, f.pixels.shape()));
            }
        }
        Ok(VideoClip { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Diagonal Gaussian over one motion latent; logvar clamped to [-10, 10].
#[derive(Debug, Clone)]
pub struct GaussianLatent<S: Scalar> {
    pub mu: Array1<S>,
    pub logvar: Array1<S>,
}

impl<S: Scalar> GaussianLatent<S> {
    pub fn new(mu: Array1<S>, logvar: Array1<S>) -> Result<Self> {
        if mu.len() != logvar.len() {
            return Err(Error::shape("GaussianLatent", &[mu.len()], &[logvar.len()]));
        }
        if mu.iter().chain(logvar.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GaussianLatent".into()));
        }
        let lo = S::from_f(LOGVAR_MIN);
        let hi = S::from_f(LOGVAR_MAX);
        let logvar = logvar.mapv(|v| v.max(lo).min(hi));
        Ok(GaussianLatent { mu, logvar })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// The four-token motion embedding: body, face, left hand, right hand.
#[derive(Debug, Clone)]
pub struct MotionLatentSet<S: Scalar> {
    pub z: GaussianLatent<S>,
    pub z_f: GaussianLatent<S>,
    pub z_lh: GaussianLatent<S>,
    pub z_rh: GaussianLatent<S>,
}

impl<S: Scalar> MotionLatentSet<S> {
    pub fn new(
        z: GaussianLatent<S>,
        z_f: GaussianLatent<S>,
        z_lh: GaussianLatent<S>,
        z_rh: GaussianLatent<S>,
    ) -> Result<Self> {
        let d = z.dim();
        for (name, g) in [("z_f", &z_f), ("z_lh", &z_lh), ("z_rh", &z_rh)] {
            if g.dim() != d {
                return Err(Error::shape(format!("MotionLatentSet.{name}"), &[d], &[g.dim()]));
            }
        }
        Ok(MotionLatentSet { z, z_f, z_lh, z_rh })
    }

    pub fn dim(&self) -> usize {
        self.z.dim()
    }

    /// Per-frame token [z || z_f || z_lh || z_rh] of eval-mode means, length 4d.
    pub fn concat_means(&self) -> Array1<S> {
        let d = self.dim();
        let mut out = Array1::zeros(4 * d);
        for (i, g) in [&self.z, &self.z_f, &self.z_lh, &self.z_rh].iter().enumerate() {
            out.slice_mut(ndarray::s![i * d..(i + 1) * d]).assign(&g.mu);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quantize_roundtrips_through_u8() {
        let mut f = Frame::<f32>::zeros(4, 4);
        f.pixels[[0, 0, 0]] = 0.123_456;
        f.pixels[[1, 2, 1]] = 0.987;
        f.pixels[[3, 3, 2]] = 1.7; // out of range, clamped
        f.quantize();
        let bytes = f.to_u8();
        let back = Frame::<f32>::from_u8(4, 4, &bytes).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn hflip_involution() {
        let mut f = Frame::<f32>::zeros(3, 5);
        f.pixels[[1, 0, 0]] = 0.5;
        f.pixels[[2, 4, 2]] = 0.25;
        assert_eq!(f.hflip().hflip(), f);
        assert_eq!(f.hflip().pixels[[1, 4, 0]], 0.5);
    }

    #[test]
    fn logvar_clamped_on_construction() {
        let g = GaussianLatent::<f64>::new(array![0.0, 0.0], array![-50.0, 50.0]).unwrap();
        assert_eq!(g.logvar[0], LOGVAR_MIN);
        assert_eq!(g.logvar[1], LOGVAR_MAX);
    }

    #[test]
    fn non_finite_latent_rejected() {
        assert!(GaussianLatent::<f64>::new(array![f64::NAN], array![0.0]).is_err());
    }

    #[test]
    fn latent_set_requires_shared_dim() {
        let a = GaussianLatent::<f32>::new(array![0.0, 0.0], array![0.0, 0.0]).unwrap();
        let b = GaussianLatent::<f32>::new(array![0.0], array![0.0]).unwrap();
        assert!(MotionLatentSet::new(a.clone(), a.clone(), a.clone(), b).is_err());
    }

    #[test]
    fn concat_means_layout() {
        let g = |x: f32| GaussianLatent::<f32>::new(array![x, x + 0.5], array![0.0, 0.0]).unwrap();
        let set = MotionLatentSet::new(g(1.0), g(2.0), g(3.0), g(4.0)).unwrap();
        let m = set.concat_means();
        assert_eq!(m.to_vec(), vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5]);
    }

    #[test]
    fn clip_rejects_mixed_shapes() {
        let a = Frame::<f32>::zeros(4, 4);
        let b = Frame::<f32>::zeros(4, 5);
        assert!(VideoClip::new(vec![a, b], 12.0).is_err());
    }
}
