//! Run configuration. Every scaled-down hyperparameter lives here so the
//! paper-scale values (d=512, 75-frame chunks, 81/9 outpainting, ...) stay
//! reachable by editing a JSON file instead of code.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Frame side in pixels (square frames).
    pub image_size: usize,
    /// ViT patch side for the motion encoders and retarget decoder.
    pub patch_size: usize,
    /// Dimension d of each of the four motion latents.
    pub latent_dim: usize,
    /// Training clip length T in frames.
    pub clip_len: usize,
    /// Space-to-depth factor of the lossless pseudo-VAE.
    pub vae_factor: usize,
    pub dit_depth: usize,
    pub dit_width: usize,
    pub dit_heads: usize,
    pub encoder_depth: usize,
    pub encoder_width: usize,
    pub encoder_heads: usize,
    /// Total keypoints: 14 body + 2x7 hand.
    pub joints: usize,
    /// Gaussian sigma (pixels) of supervision heatmaps.
    pub heatmap_sigma: f64,
    /// Sliding-window overlap o (frames).
    pub overlap: usize,
    /// Sliding-window chunk length T_c (frames).
    pub chunk: usize,
    /// Classifier-free guidance scale at sampling time.
    pub cfg_scale: f64,
    /// Probability of jointly nulling all conditions during training.
    pub cond_drop_prob: f64,
    pub lambda_kl: f64,
    pub lambda_hm: f64,
    pub lambda_n: f64,
    pub lambda_f: f64,
    /// Learning rate for the DiT parameter group (`gen.*`).
    pub lr_generator: f64,
    /// Learning rate for encoder/retarget/head parameter groups.
    pub lr_motion: f64,
    pub seed: u64,
    /// Guidance channels C_g produced by the retarget decoder.
    pub guidance_channels: usize,
    /// Motion-prior future horizon (paper value 81 reachable here).
    pub prior_horizon: usize,
    /// Motion-prior clean prefix length (paper value 9 reachable here).
    pub prior_prefix: usize,
    pub prior_depth: usize,
    pub prior_width: usize,
    pub prior_heads: usize,
    /// Probability that a batch slot is a cross-identity synthetic pair.
    pub mix_ratio: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    /// Euler steps for flow sampling.
    pub sample_steps: usize,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Decoupled weight decay (skipped for 1-d params: biases, norm gains).
    pub weight_decay: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            image_size: 64,
            patch_size: 8,
            latent_dim: 32,
            clip_len: 8,
            vae_factor: 4,
            dit_depth: 6,
            dit_width: 192,
            dit_heads: 6,
            encoder_depth: 4,
            encoder_width: 128,
            encoder_heads: 4,
            joints: 28,
            heatmap_sigma: 2.0,
            overlap: 2,
            chunk: 8,
            cfg_scale: 2.0,
            cond_drop_prob: 0.1,
            lambda_kl: 1e-4,
            lambda_hm: 1.0,
            lambda_n: 1.0,
            lambda_f: 1.0,
            lr_generator: 1e-4,
            lr_motion: 1e-4,
            seed: 0,
            guidance_channels: 64,
            prior_horizon: 16,
            prior_prefix: 4,
            prior_depth: 4,
            prior_width: 128,
            prior_heads: 4,
            mix_ratio: 0.3,
            batch_size: 4,
            train_steps: 2000,
            sample_steps: 16,
            grad_clip: 1.0,
            weight_decay: 0.01,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.patch_size == 0 || self.vae_factor == 0 {
            return bad("image_size, patch_size, vae_factor must be positive".into());
        }
        if self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.image_size % self.vae_factor != 0 {
            return bad(format!(
                "image_size {} not divisible by vae_factor {}",
                self.image_size, self.vae_factor
            ));
        }
        if (self.image_size / self.vae_factor) % 2 != 0 {
            return bad(format!(
                "latent grid {} not divisible by DiT patch size 2",
                self.image_size / self.vae_factor
            ));
        }
        if self.chunk <= self.overlap {
            return bad(format!(
                "chunk {} must exceed overlap {}",
                self.chunk, self.overlap
            ));
        }
        for (name, v) in [
            ("lambda_kl", self.lambda_kl),
            ("lambda_hm", self.lambda_hm),
            ("lambda_n", self.lambda_n),
            ("lambda_f", self.lambda_f),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.cfg_scale >= 1.0) {
            return bad(format!("cfg_scale must be >= 1, got {}", self.cfg_scale));
        }
        if !(0.0..=1.0).contains(&self.cond_drop_prob) {
            return bad(format!("cond_drop_prob must be in [0,1], got {}", self.cond_drop_prob));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad(format!("mix_ratio must be in [0,1], got {}", self.mix_ratio));
        }
        if self.latent_dim == 0 || self.clip_len == 0 || self.joints == 0 {
            return bad("latent_dim, clip_len, joints must be positive".into());
        }
        if self.dit_width % self.dit_heads != 0
            || self.encoder_width % self.encoder_heads != 0
            || self.prior_width % self.prior_heads != 0
        {
            return bad("attention width must be divisible by head count".into());
        }
        if !(self.heatmap_sigma > 0.0) {
            return bad(format!("heatmap_sigma must be > 0, got {}", self.heatmap_sigma));
        }
        if self.sample_steps == 0 || self.batch_size == 0 {
            return bad("sample_steps and batch_size must be positive".into());
        }
        if self.prior_prefix == 0 || self.prior_horizon == 0 {
            return bad("prior_prefix and prior_horizon must be positive".into());
        }
        for (name, v) in [
            ("lr_generator", self.lr_generator),
            ("lr_motion", self.lr_motion),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        Ok(())
    }

    /// Encoder token grid side G = image_size / patch_size.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Video-latent spatial side L = image_size / vae_factor.
    pub fn latent_size(&self) -> usize {
        self.image_size / self.vae_factor
    }

    /// Video-latent channels C_v = 3 * vae_factor^2.
    pub fn latent_channels(&self) -> usize {
        3 * self.vae_factor * self.vae_factor
    }

    /// DiT tokens per frame slot = (L/2)^2.
    pub fn dit_tokens_per_frame(&self) -> usize {
        let half = self.latent_size() / 2;
        half * half
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn default_shape_arithmetic() {
        let c = Config::default();
        assert_eq!(c.grid(), 8);
        assert_eq!(c.latent_size(), 16);
        assert_eq!(c.latent_channels(), 48);
        assert_eq!(c.dit_tokens_per_frame(), 64);
    }

    #[test]
    fn json_roundtrip() {
        let c = Config::default();
        let text = c.to_json();
        let back = Config::from_json(&text).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = Config::from_json(r#"{"latent_dim": 16, "seed": 9}"#).unwrap();
        assert_eq!(c.latent_dim, 16);
        assert_eq!(c.seed, 9);
        assert_eq!(c.image_size, 64);
    }

    #[test]
    fn rejects_indivisible_patch() {
        let mut c = Config::default();
        c.patch_size = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_chunk_not_exceeding_overlap() {
        let mut c = Config::default();
        c.overlap = 8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_cfg_scale_below_one() {
        let mut c = Config::default();
        c.cfg_scale = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_unknown_field() {
        assert!(Config::from_json(r#"{"no_such_knob": 1}"#).is_err());
    }
}
