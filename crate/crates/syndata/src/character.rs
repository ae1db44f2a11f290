//! Character identity: per-bone scale multipliers, head/hand sizes, and a
//! per-part color palette sampled with a minimum pairwise separation so parts
//! remain distinguishable by color.

use serde::{Deserialize, Serialize};
use xum_core::{Error, RandomStream, Result};

use crate::skeleton::{N_BONES, N_PARTS};

pub const LEN_RANGE: (f64, f64) = (0.7, 1.4);
pub const WIDTH_RANGE: (f64, f64) = (0.75, 1.3);
pub const HEAD_RANGE: (f64, f64) = (0.6, 2.0);
pub const HAND_RANGE: (f64, f64) = (0.6, 2.0);

/// Colors are kept at least this far apart (euclidean RGB) from each other,
/// the background (black) and the glyph ink, so color-based part segmentation
/// stays unambiguous under the +-0.15 brightness jitter of augmentation.
pub const COLOR_MIN_DIST: f64 = 0.22;
pub const GLYPH_COLOR: [f64; 3] = [0.055, 0.055, 0.055];

fn default_finger_count() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CharacterSpec {
    /// Per-bone length multipliers, indexed like `skeleton::BONES`.
    pub limb_lengths: Vec<f64>,
    /// Per-bone width multipliers.
    pub limb_widths: Vec<f64>,
    pub head_radius_scale: f64,
    pub hand_scale: f64,
    /// Per-part RGB in [0,1], indexed by part id.
    pub colors: Vec<[f64; 3]>,
    #[serde(default = "default_finger_count")]
    pub finger_count: usize,
}

impl CharacterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.limb_lengths.len() != N_BONES || self.limb_widths.len() != N_BONES {
            return Err(Error::Data(format!(
                "character expects {N_BONES} limb scales, got {}/{}",
                self.limb_lengths.len(),
                self.limb_widths.len()
            )));
        }
        if self.colors.len() != N_PARTS {
            return Err(Error::Data(format!(
                "character expects {N_PARTS} part colors, got {}",
                self.colors.len()
            )));
        }
        if self.finger_count != 3 {
            return Err(Error::Data("finger_count is fixed at 3".into()));
        }
        let positive = self.limb_lengths.iter().chain(self.limb_widths.iter()).all(|&x| x > 0.0)
            && self.head_radius_scale > 0.0
            && self.hand_scale > 0.0;
        if !positive {
            return Err(Error::Data("character scales must be positive".into()));
        }
        if !self.colors.iter().flatten().all(|&c| (0.0..=1.0).contains(&c)) {
            return Err(Error::Data("part colors must lie in [0,1]".into()));
        }
        Ok(())
    }

    /// Neutral mid-range character with the default palette (useful as the
    /// canonical identity in tests).
    pub fn neutral() -> Self {
        let colors = (0..N_PARTS)
            .map(|i| {
                // 3x3x3 grid over {0.2, 0.55, 0.9}, skipping the darkest corner
                let j = i + 1;
                let level = |k: usize| 0.2 + 0.35 * ((j / k) % 3) as f64;
                [level(1), level(3), level(9)]
            })
            .collect();
        CharacterSpec {
            limb_lengths: vec![1.0; N_BONES],
            limb_widths: vec![1.0; N_BONES],
            head_radius_scale: 1.0,
            hand_scale: 1.0,
            colors,
            finger_count: 3,
        }
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Uniformly sampled identity. Colors are rejection-sampled in [0.18, 1]^3 to
/// keep every pair of parts (and the glyph/background inks) separated.
pub fn sample_character(rng: &mut RandomStream) -> CharacterSpec {
    let limb_lengths = (0..N_BONES).map(|_| rng.uniform_in(LEN_RANGE.0, LEN_RANGE.1)).collect();
    let limb_widths = (0..N_BONES).map(|_| rng.uniform_in(WIDTH_RANGE.0, WIDTH_RANGE.1)).collect();
    let head_radius_scale = rng.uniform_in(HEAD_RANGE.0, HEAD_RANGE.1);
    let hand_scale = rng.uniform_in(HAND_RANGE.0, HAND_RANGE.1);
    let black = [0.0, 0.0, 0.0];
    let mut colors: Vec<[f64; 3]> = Vec::with_capacity(N_PARTS);
    while colors.len() < N_PARTS {
        let c = [
            rng.uniform_in(0.18, 1.0),
            rng.uniform_in(0.18, 1.0),
            rng.uniform_in(0.18, 1.0),
        ];
        let ok = dist(&c, &black) >= 2.0 * COLOR_MIN_DIST
            && dist(&c, &GLYPH_COLOR) >= 2.0 * COLOR_MIN_DIST
            && colors.iter().all(|p| dist(&c, p) >= COLOR_MIN_DIST);
        if ok {
            colors.push(c);
        }
    }
    CharacterSpec {
        limb_lengths,
        limb_widths,
        head_radius_scale,
        hand_scale,
        colors,
        finger_count: 3,
    }
}
