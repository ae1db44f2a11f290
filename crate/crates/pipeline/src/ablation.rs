//! Five-way training-recipe comparison: every variant trains on the same
//! dataset with the same seed and step budget, is scored on one fixed
//! cross-identity evaluation set, and the headline keypoint orderings are
//! gated on a relative margin.

use serde::{Deserialize, Serialize};
use xum_core::{Config, Result};
use xum_syndata::SampleMode;

use crate::data::{gen_crossed_hands_set, gen_dataset, gen_mode_set, materialize_all};
use crate::report::{crossed_hands_agreement, evaluate, EvalReport};
use crate::train::{RunConfig, Trainer, Variant};

/// Shared resource counts for one ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationBudget {
    pub train_clips: usize,
    pub train_steps: usize,
    pub eval_clips: usize,
    pub crossed_clips: usize,
    pub sample_steps: usize,
    pub cfg_scale: f64,
}

/// One ordering gate: the full model must beat `other` (lower is better)
/// with relative margin (other - full) / other of at least 10%.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCheck {
    pub name: String,
    pub full: Option<f64>,
    pub other: Option<f64>,
    pub rel_margin: Option<f64>,
    pub pass: bool,
}

pub(crate) fn margin_check(name: &str, full: Option<f64>, other: Option<f64>) -> AblationCheck {
    let rel_margin = match (full, other) {
        (Some(f), Some(o)) if o > 0.0 => Some((o - f) / o),
        _ => None,
    };
    AblationCheck {
        name: name.to_string(),
        full,
        other,
        rel_margin,
        pass: rel_margin.is_some_and(|r| r >= 0.10),
    }
}

/// Reports for every variant (in [`Variant::ALL`] order) plus the gated
/// ordering checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub reports: Vec<EvalReport>,
    pub checks: Vec<AblationCheck>,
}

impl AblationOutcome {
    pub fn report(&self, v: Variant) -> &EvalReport {
        &self.reports[v.index()]
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Train and evaluate all five variants under one budget. Dataset,
/// evaluation set, crossed-hands set, parameter init, and evaluation
/// randomness all derive from `seed`, so variants differ only in their
/// training recipe.
pub fn run_ablation(base: &Config, budget: &AblationBudget, seed: u64) -> Result<AblationOutcome> {
    let mut cfg = base.clone();
    cfg.train_steps = budget.train_steps;
    cfg.seed = seed;
    cfg.validate()?;
    let dataset = gen_dataset(&cfg, budget.train_clips, seed);
    let eval_set =
        materialize_all(&gen_mode_set(&cfg, budget.eval_clips, seed, SampleMode::CrossIdentity))?;
    let crossed = materialize_all(&gen_crossed_hands_set(&cfg, budget.crossed_clips, seed))?;

    let mut reports = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let run = RunConfig::new(cfg.clone(), variant);
        let mut trainer = Trainer::new(&run)?;
        for _ in 0..budget.train_steps {
            let batch = trainer.next_batch(&dataset)?;
            trainer.train_step(&batch)?;
        }
        let mut report = evaluate(
            &trainer.store,
            &run,
            &eval_set,
            budget.sample_steps,
            budget.cfg_scale,
            seed,
        )?;
        if variant != Variant::SkeletonAlign {
            report.zsign_agreement =
                crossed_hands_agreement(&trainer.store, &trainer.cfg, variant, &crossed)?;
        }
        reports.push(report);
    }

    let kp = |v: Variant| reports[v.index()].mean_kp_all;
    let kp_hands = |v: Variant| reports[v.index()].mean_kp_hands;
    let checks = vec![
        margin_check("kp_full_vs_no_dual", kp(Variant::Full), kp(Variant::NoDual)),
        margin_check(
            "kp_hands_full_vs_no_local",
            kp_hands(Variant::Full),
            kp_hands(Variant::NoLocal),
        ),
        margin_check(
            "kp_full_vs_skeleton_align",
            kp(Variant::Full),
            kp(Variant::SkeletonAlign),
        ),
    ];
    Ok(AblationOutcome { reports, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_check_requires_ten_percent_improvement() {
        let pass = margin_check("x", Some(0.089), Some(0.10));
        assert!(pass.pass);
        assert!((pass.rel_margin.unwrap() - 0.11).abs() < 1e-12);
        assert!(!margin_check("x", Some(0.095), Some(0.10)).pass);
        assert!(!margin_check("x", Some(0.10), Some(0.089)).pass);
        assert!(!margin_check("x", None, Some(0.10)).pass);
        assert!(!margin_check("x", Some(0.05), None).pass);
    }

    #[test]
    fn five_way_sweep_produces_ordered_reports() {
        let cfg = Config {
            image_size: 32,
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
            guidance_channels: 32,
            batch_size: 2,
            ..Config::default()
        };
        let budget = AblationBudget {
            train_clips: 6,
            train_steps: 1,
            eval_clips: 1,
            crossed_clips: 1,
            sample_steps: 1,
            cfg_scale: 1.0,
        };
        let out = run_ablation(&cfg, &budget, 0).unwrap();
        assert_eq!(out.reports.len(), Variant::ALL.len());
        for (rep, v) in out.reports.iter().zip(Variant::ALL) {
            assert_eq!(rep.variant, v.as_str());
            assert_eq!(rep.count, 1);
            if v == Variant::SkeletonAlign {
                assert_eq!(rep.zsign_agreement, None);
            } else {
                assert!(rep.zsign_agreement.is_some());
            }
        }
        assert_eq!(out.checks.len(), 3);
        assert_eq!(out.report(Variant::NoLocal).variant, "no_local");
        let json = serde_json::to_string(&out).unwrap();
        let back: AblationOutcome = serde_json::from_str(&json).unwrap();
        assert_eq!(back, out);
    }
}
