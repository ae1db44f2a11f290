//! End-to-end pipeline: dataset generation, joint training with ablation
//! variants, synthetic-frame keypoint detection, disentanglement probes,
//! metric kernels, evaluation reports, and the `xum` CLI glue.

pub mod ablation;
pub mod data;
pub mod detect;
pub mod infer;
pub mod metrics;
pub mod probes;
pub mod report;
pub mod selftest;
pub mod train;

pub use ablation::{run_ablation, AblationBudget, AblationCheck, AblationOutcome};
pub use data::{
    gen_crossed_hands_set, gen_dataset, gen_mode_set, gen_self_reenact_set, materialize_all,
    DataSplit,
};
pub use detect::{detect_keypoints_synthetic, Detection};
pub use infer::{
    encode_clip_latents, reenact, sample_video_conditioned, seam_statistics,
    skeleton_align_conditioning, SeamStats,
};
pub use metrics::{keypoint_l1, psnr, ssim, KpSubset};
pub use probes::{
    collect_probe_data, disentanglement_probe, probe_r2, ridge_fit, ridge_predict, ProbeData,
    ProbeOutcome,
};
pub use report::{
    clip_metrics, config_hash, crossed_hands_agreement, evaluate, evaluate_sample, EvalReport,
    SampleMetrics,
};
pub use selftest::{all_passed, run_selftest, CheckResult};
pub use train::{
    build_batch, condition_dropout, init_all_params, train_loop, train_step, variant_from_store,
    LossBreakdown, RunConfig, TrainLogRecord, Trainer, Variant,
};
