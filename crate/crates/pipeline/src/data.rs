//! Dataset assembly on top of the synthetic renderer: seeded generation of
//! mixed same/cross-identity clips, forced-mode eval sets, and the
//! hands-crossed split used by the depth-ordering check.

use xum_core::{rng_fork, Config, RandomStream, Real, Result};
use xum_syndata::pose::Gesture;
use xum_syndata::{
    assemble_sample, make_training_sample, poses_have_hand_overlap, sample_augment,
    sample_character, sample_expression_sequence, sample_pose_sequence,
    sample_pose_sequence_gestured, CompactSample, SampleMode, TrainingSample,
};

/// Train/holdout views over one generated pool.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: Vec<CompactSample>,
    pub holdout: Vec<CompactSample>,
}

impl DataSplit {
    /// Deterministic split: every `k`-th sample goes to the holdout.
    pub fn every_kth(samples: Vec<CompactSample>, k: usize) -> Self {
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for (i, s) in samples.into_iter().enumerate() {
            if k > 0 && i % k == k - 1 {
                holdout.push(s);
            } else {
                train.push(s);
            }
        }
        DataSplit { train, holdout }
    }
}

fn one_sample(rng: &mut RandomStream, cfg: &Config, mode: SampleMode) -> CompactSample {
    let s: TrainingSample<Real> =
        make_training_sample(rng, mode, cfg.clip_len, cfg.image_size, cfg.heatmap_sigma);
    CompactSample::from_sample(&s)
}

/// Seeded training pool: each clip's mode is an independent
/// Bernoulli(mix_ratio) draw of cross-identity, mirroring the batch mix.
pub fn gen_dataset(cfg: &Config, n: usize, seed: u64) -> Vec<CompactSample> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_fork(seed, &format!("data/{i}"));
        let mode = if rng.bernoulli(cfg.mix_ratio) {
            SampleMode::CrossIdentity
        } else {
            SampleMode::SameIdentity
        };
        out.push(one_sample(&mut rng, cfg, mode));
    }
    out
}

/// Seeded eval pool with every clip forced to one mode.
pub fn gen_mode_set(cfg: &Config, n: usize, seed: u64, mode: SampleMode) -> Vec<CompactSample> {
    (0..n)
        .map(|i| {
            let mut rng = rng_fork(seed, &format!("evalset/{i}"));
            one_sample(&mut rng, cfg, mode)
        })
        .collect()
}

/// Cross-identity clips whose pose stream makes the reference character's
/// hands overlap in at least one frame (the depth-ordering test split).
/// Rejection-samples the crossed-hands gesture until overlap is confirmed.
pub fn gen_crossed_hands_set(cfg: &Config, n: usize, seed: u64) -> Vec<CompactSample> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_fork(seed, &format!("crossed/{i}"));
        for attempt in 0..64 {
            let char_ref = sample_character(&mut rng);
            let char_drive = sample_character(&mut rng);
            let poses = sample_pose_sequence_gestured(
                &mut rng,
                cfg.clip_len,
                cfg.image_size as f64,
                Gesture::CrossedHands,
            );
            if !poses_have_hand_overlap(&char_ref, &poses, cfg.image_size) {
                assert!(attempt < 63, "crossed-hands sampling failed to converge");
                continue;
            }
            let expressions = sample_expression_sequence(&mut rng, cfg.clip_len);
            let ref_pose = sample_pose_sequence(&mut rng, 1, cfg.image_size as f64).remove(0);
            let ref_expression = sample_expression_sequence(&mut rng, 1).remove(0);
            let s: TrainingSample<Real> = assemble_sample(
                SampleMode::CrossIdentity,
                char_ref,
                char_drive,
                ref_pose,
                ref_expression,
                poses,
                expressions,
                None,
                cfg.image_size,
                cfg.heatmap_sigma,
            );
            out.push(CompactSample::from_sample(&s));
            break;
        }
    }
    out
}

/// Augmented same-identity clips for self-reenactment eval (held-out seed).
pub fn gen_self_reenact_set(cfg: &Config, n: usize, seed: u64) -> Vec<CompactSample> {
    (0..n)
        .map(|i| {
            let mut rng = rng_fork(seed, &format!("selfset/{i}"));
            let char_ref = sample_character(&mut rng);
            let poses = sample_pose_sequence(&mut rng, cfg.clip_len, cfg.image_size as f64);
            let expressions = sample_expression_sequence(&mut rng, cfg.clip_len);
            let ref_pose = sample_pose_sequence(&mut rng, 1, cfg.image_size as f64).remove(0);
            let ref_expression = sample_expression_sequence(&mut rng, 1).remove(0);
            let augment = sample_augment(&mut rng, cfg.image_size);
            let s: TrainingSample<Real> = assemble_sample(
                SampleMode::SameIdentity,
                char_ref.clone(),
                char_ref,
                ref_pose,
                ref_expression,
                poses,
                expressions,
                Some(augment),
                cfg.image_size,
                cfg.heatmap_sigma,
            );
            CompactSample::from_sample(&s)
        })
        .collect()
}

/// Materialize a compact pool into full training samples.
pub fn materialize_all(samples: &[CompactSample]) -> Result<Vec<TrainingSample<Real>>> {
    samples.iter().map(|s| s.materialize()).collect()
}
