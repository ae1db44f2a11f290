//! Lossless pseudo-VAE: a fixed space-to-depth rearrangement standing in for
//! a learned video autoencoder. Every ×`factor` spatial block of a frame
//! becomes one latent cell with `3·factor²` channels, so encode/decode is an
//! exact bijection and reconstruction error is attributable to the generator
//! alone. Channel layout within a cell: `(dy·factor + dx)·3 + rgb`.

use ndarray::{Array3, Array4, ArrayView3};
use xum_core::{Error, Frame, Result, Scalar, VideoClip};

/// Latent video tensor, (T, L, L, C_v) with C_v = 3·factor².
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLatent<S: Scalar> {
    pub data: Array4<S>,
}

impl<S: Scalar> VideoLatent<S> {
    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn side(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[3]
    }
}

/// Channel count of the latent space for a given spatial factor.
pub fn latent_channels(factor: usize) -> usize {
    3 * factor * factor
}

/// Space-to-depth a single frame into (L, L, C_v).
pub fn encode_frame<S: Scalar>(frame: &Frame<S>, factor: usize) -> Result<Array3<S>> {
    let (h, w) = (frame.height(), frame.width());
    if h != w || h % factor != 0 || factor == 0 {
        return Err(Error::shape(
            "pseudo-VAE encode (square side divisible by factor)",
            &[h, h, 3],
            frame.pixels.shape(),
        ));
    }
    let l = h / factor;
    let mut out = Array3::<S>::zeros((l, l, latent_channels(factor)));
    for ly in 0..l {
        for lx in 0..l {
            for dy in 0..factor {
                for dx in 0..factor {
                    for ch in 0..3 {
                        out[[ly, lx, (dy * factor + dx) * 3 + ch]] =
                            frame.pixels[[ly * factor + dy, lx * factor + dx, ch]];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Invert [`encode_frame`]; bit-exact.
pub fn decode_frame<S: Scalar>(latent: ArrayView3<S>, factor: usize) -> Result<Frame<S>> {
    let sh = latent.shape();
    let (l, cv) = (sh[0], sh[2]);
    if sh[1] != l || cv != latent_channels(factor) {
        return Err(Error::shape(
            "pseudo-VAE decode",
            &[l, l, latent_channels(factor)],
            sh,
        ));
    }
    let side = l * factor;
    let mut px = Array3::<S>::zeros((side, side, 3));
    for ly in 0..l {
        for lx in 0..l {
            for dy in 0..factor {
                for dx in 0..factor {
                    for ch in 0..3 {
                        px[[ly * factor + dy, lx * factor + dx, ch]] =
                            latent[[ly, lx, (dy * factor + dx) * 3 + ch]];
                    }
                }
            }
        }
    }
    Frame::new(px)
}

/// Encode a clip into its latent tensor.
pub fn vae_encode<S: Scalar>(clip: &VideoClip<S>, factor: usize) -> Result<VideoLatent<S>> {
    if clip.is_empty() {
        return Err(Error::Data("pseudo-VAE encode: empty clip".into()));
    }
    let first = encode_frame(&clip.frames[0], factor)?;
    let l = first.shape()[0];
    let mut data = Array4::<S>::zeros((clip.len(), l, l, latent_channels(factor)));
    data.index_axis_mut(ndarray::Axis(0), 0).assign(&first);
    for (t, frame) in clip.frames.iter().enumerate().skip(1) {
        let enc = encode_frame(frame, factor)?;
        if enc.shape() != first.shape() {
            return Err(Error::shape("pseudo-VAE encode (ragged clip)", first.shape(), enc.shape()));
        }
        data.index_axis_mut(ndarray::Axis(0), t).assign(&enc);
    }
    Ok(VideoLatent { data })
}

/// Decode a latent tensor back to frames; exact inverse of [`vae_encode`].
pub fn vae_decode<S: Scalar>(latent: &VideoLatent<S>, factor: usize) -> Result<VideoClip<S>> {
    let mut frames = Vec::with_capacity(latent.frames());
    for t in 0..latent.frames() {
        frames.push(decode_frame(latent.data.index_axis(ndarray::Axis(0), t), factor)?);
    }
    VideoClip::new(frames, 8.0)
}
