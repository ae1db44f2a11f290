//! `xum`: dataset generation, training, reenactment, evaluation, the
//! five-way ablation sweep, motion outpainting, and the oracle selftest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use xum_core::checkpoint::load_checkpoint;
use xum_core::nn::{AdamW, ParamStore};
use xum_core::{rng_fork, Config, Frame, GaussianLatent, MotionLatentSet, Real};
use xum_model::{prior_sample, prior_seq_len, prior_train_step, sample_video, split_motion_row, MotionSequence};
use xum_syndata::{read_dataset, write_dataset, CompactSample, SampleMode};

use xum_pipeline::ablation::{run_ablation, AblationBudget};
use xum_pipeline::data::{
    gen_crossed_hands_set, gen_dataset, gen_mode_set, gen_self_reenact_set, materialize_all,
};
use xum_pipeline::infer::{encode_clip_latents, reenact, seam_statistics};
use xum_pipeline::report::{crossed_hands_agreement, evaluate};
use xum_pipeline::selftest::{all_passed, run_selftest};
use xum_pipeline::train::{train_loop, variant_from_store, RunConfig, Variant};

#[derive(Parser)]
#[command(name = "xum", version, about = "Latent-motion video reenactment on synthetic capsule characters")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset of reenactment clips.
    GenData(GenDataArgs),
    /// Train a model (all modules jointly) on a generated dataset.
    Train(TrainArgs),
    /// Train the motion prior inside an existing checkpoint.
    TrainPrior(TrainPriorArgs),
    /// Drive a reference character with a clip and write the frames.
    Infer(InferArgs),
    /// Score a checkpoint on a dataset and write a JSON report.
    Eval(EvalArgs),
    /// Train and compare all five recipe variants under one budget.
    Ablation(AblationArgs),
    /// Outpaint motion from a clip prefix and render it.
    Outpaint(OutpaintArgs),
    /// Run the oracle suite and print one line per check.
    Selftest,
}

/// Configuration source plus the most commonly swept overrides. Everything
/// else is reachable through `--config` (a JSON file with any subset of
/// fields).
#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file; defaults apply to any omitted field.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    clip_len: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_steps: Option<usize>,
    #[arg(long)]
    sample_steps: Option<usize>,
    #[arg(long)]
    mix_ratio: Option<f64>,
    #[arg(long)]
    lr_motion: Option<f64>,
    #[arg(long)]
    lr_generator: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Config::from_json(&text)?
            }
            None => Config::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(image_size, clip_len, latent_dim, batch_size, train_steps, sample_steps, mix_ratio, lr_motion, lr_generator, seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataMode {
    /// Cross- and same-identity pairs mixed per the config's mix ratio.
    Mixed,
    /// Cross-identity pairs only.
    Cross,
    /// Same-identity pairs only.
    Same,
    /// Cross-identity pairs whose drive clips contain hand-over-hand overlap.
    CrossedHands,
    /// Same-identity self-reenactment clips (augmented reference).
    SelfReenact,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of clips to generate.
    #[arg(long)]
    clips: usize,
    #[arg(long, value_enum, default_value_t = DataMode::Mixed)]
    mode: DataMode,
    /// Also store full heatmap/normal stacks (bigger, not required).
    #[arg(long)]
    full_maps: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory from `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    ckpt: PathBuf,
    /// NDJSON loss log (one record per step).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    variant: Variant,
}

#[derive(Args)]
struct TrainPriorArgs {
    /// Checkpoint to read and update in place.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset whose clips are encoded into motion sequences. Clips must be
    /// at least prior_prefix + prior_horizon frames long.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory holding the driving clip.
    #[arg(long)]
    drive: PathBuf,
    /// Driving sample index within the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Take the reference frame from this sample instead (cross-reenactment).
    #[arg(long)]
    ref_index: Option<usize>,
    /// Directory for the generated PNG frames.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long, default_value_t = 2.0)]
    cfg_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Evaluation dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Crossed-hands dataset for the depth-order agreement score.
    #[arg(long)]
    crossed: Option<PathBuf>,
    /// JSON report output path (stdout if omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long, default_value_t = 2.0)]
    cfg_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// JSON outcome output path (stdout if omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    train_clips: usize,
    #[arg(long, default_value_t = 300)]
    ablation_steps: usize,
    #[arg(long, default_value_t = 16)]
    eval_clips: usize,
    #[arg(long, default_value_t = 8)]
    crossed_clips: usize,
    #[arg(long, default_value_t = 8)]
    sample_steps: usize,
    #[arg(long, default_value_t = 2.0)]
    cfg_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OutpaintArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory holding the prefix clip.
    #[arg(long)]
    drive: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Directory for the rendered PNG frames and motion.json.
    #[arg(long)]
    out: PathBuf,
    /// Euler steps for both the prior and the video sampler.
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long, default_value_t = 2.0)]
    cfg_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write_frames(dir: &Path, frames: &[Frame<Real>]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (t, f) in frames.iter().enumerate() {
        let side = f.height();
        let img = image::RgbImage::from_raw(side as u32, side as u32, f.to_u8())
            .context("frame buffer size")?;
        let path = dir.join(format!("frame_{t:03}.png"));
        img.save_with_format(&path, image::ImageFormat::Png)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
                }
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            println!("wrote {}", p.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<(ParamStore<Real>, Config, Variant)> {
    let (store, cfg) = load_checkpoint::<Real>(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    let variant = variant_from_store(&store);
    Ok((store, cfg, variant))
}

fn load_samples(dir: &Path) -> Result<Vec<CompactSample>> {
    let samples = read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    if samples.is_empty() {
        bail!("dataset {} holds no samples", dir.display());
    }
    Ok(samples)
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = a.config.build()?;
    let seed = cfg.seed;
    let samples = match a.mode {
        DataMode::Mixed => gen_dataset(&cfg, a.clips, seed),
        DataMode::Cross => gen_mode_set(&cfg, a.clips, seed, SampleMode::CrossIdentity),
        DataMode::Same => gen_mode_set(&cfg, a.clips, seed, SampleMode::SameIdentity),
        DataMode::CrossedHands => gen_crossed_hands_set(&cfg, a.clips, seed),
        DataMode::SelfReenact => gen_self_reenact_set(&cfg, a.clips, seed),
    };
    write_dataset(&samples, &a.out, a.full_maps)?;
    println!(
        "wrote {} clips ({} frames each, {}x{}) to {}",
        samples.len(),
        cfg.clip_len,
        cfg.image_size,
        cfg.image_size,
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.build()?;
    let dataset = load_samples(&a.data)?;
    let run = RunConfig::new(cfg, a.variant);
    let (trainer, log) = train_loop(&run, &dataset, &a.ckpt, a.log.as_deref())?;
    if let Some(last) = log.last() {
        println!(
            "step {}: flow {:.4} kl {:.4} hm {:.4} nrm {:.4} expr {:.4} total {:.4}",
            last.step, last.l_flow, last.l_kl, last.l_hm, last.l_nrm, last.l_expr, last.total
        );
    }
    println!(
        "trained {} variant for {} steps; checkpoint at {}",
        run.variant,
        trainer.step,
        a.ckpt.display()
    );
    Ok(())
}

fn cmd_train_prior(a: TrainPriorArgs) -> Result<()> {
    let (mut store, cfg, variant) = load_model(&a.ckpt)?;
    if variant == Variant::SkeletonAlign {
        bail!("the skeleton-align baseline has no motion latents to outpaint");
    }
    let need = prior_seq_len(&cfg);
    let dataset = load_samples(&a.data)?;
    let mut seqs = Vec::new();
    for compact in &dataset {
        let s = compact.materialize::<Real>()?;
        if s.clip_len() < need {
            bail!(
                "clip length {} < prior_prefix + prior_horizon = {need}; regenerate data with --clip-len {need}",
                s.clip_len()
            );
        }
        let latents = encode_clip_latents(
            &store,
            &cfg,
            variant,
            &s.drive_frames[..need],
            &s.face_boxes[..need],
            &s.lh_boxes[..need],
            &s.rh_boxes[..need],
        )?;
        seqs.push(MotionSequence::from_latents(&latents)?);
    }
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut rng = rng_fork(a.seed, "prior-train");
    let mut last = f64::NAN;
    for step in 0..a.steps {
        let mut batch = Vec::with_capacity(a.batch_size);
        for _ in 0..a.batch_size.max(1) {
            batch.push(seqs[rng.index(seqs.len())].clone());
        }
        last = prior_train_step(&mut store, &mut opt, &cfg, &batch, &mut rng)?;
        if (step + 1) % 100 == 0 {
            println!("prior step {}: loss {last:.5}", step + 1);
        }
    }
    xum_core::checkpoint::save_checkpoint(&a.ckpt, &store, &cfg)?;
    println!("prior trained for {} steps (final loss {last:.5}); updated {}", a.steps, a.ckpt.display());
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let (store, cfg, variant) = load_model(&a.ckpt)?;
    let dataset = load_samples(&a.drive)?;
    if a.index >= dataset.len() {
        bail!("--index {} out of range ({} samples)", a.index, dataset.len());
    }
    let drive = dataset[a.index].materialize::<Real>()?;
    let reference = match a.ref_index {
        Some(j) => {
            if j >= dataset.len() {
                bail!("--ref-index {j} out of range ({} samples)", dataset.len());
            }
            dataset[j].materialize::<Real>()?.ref_frame
        }
        None => drive.ref_frame.clone(),
    };
    let mut rng = rng_fork(a.seed, "infer");
    let clip = reenact(&store, &cfg, variant, &reference, &drive, a.steps, a.cfg_scale, &mut rng)?;
    write_frames(&a.out, &clip.frames)?;
    let seams = seam_statistics(&cfg, &clip);
    println!(
        "wrote {} frames to {} (seam mae {:.4} over {} seams, intra mae {:.4})",
        clip.len(),
        a.out.display(),
        seams.seam_mae,
        seams.seam_edges,
        seams.intra_mae
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (store, cfg, variant) = load_model(&a.ckpt)?;
    let samples = materialize_all(&load_samples(&a.data)?)?;
    let run = RunConfig::new(cfg.clone(), variant);
    let mut report = evaluate(&store, &run, &samples, a.steps, a.cfg_scale, a.seed)?;
    if let Some(crossed_dir) = &a.crossed {
        let crossed = materialize_all(&load_samples(crossed_dir)?)?;
        report.zsign_agreement = crossed_hands_agreement(&store, &cfg, variant, &crossed)?;
    }
    println!(
        "{} on {} clips: psnr {} ssim {:.4} kp {} kp-hands {} zsign {}",
        report.variant,
        report.count,
        report.mean_psnr.map_or("inf".into(), |v| format!("{v:.2}")),
        report.mean_ssim,
        report.mean_kp_all.map_or("n/a".into(), |v| format!("{v:.4}")),
        report.mean_kp_hands.map_or("n/a".into(), |v| format!("{v:.4}")),
        report.zsign_agreement.map_or("n/a".into(), |v| format!("{v:.3}")),
    );
    write_json(a.report.as_deref(), &report)
}

fn cmd_ablation(a: AblationArgs) -> Result<()> {
    let cfg = a.config.build()?;
    let budget = AblationBudget {
        train_clips: a.train_clips,
        train_steps: a.ablation_steps,
        eval_clips: a.eval_clips,
        crossed_clips: a.crossed_clips,
        sample_steps: a.sample_steps,
        cfg_scale: a.cfg_scale,
    };
    let outcome = run_ablation(&cfg, &budget, a.seed)?;
    for rep in &outcome.reports {
        println!(
            "{:<16} kp {} kp-hands {} ssim {:.4} zsign {}",
            rep.variant,
            rep.mean_kp_all.map_or("n/a".into(), |v| format!("{v:.4}")),
            rep.mean_kp_hands.map_or("n/a".into(), |v| format!("{v:.4}")),
            rep.mean_ssim,
            rep.zsign_agreement.map_or("n/a".into(), |v| format!("{v:.3}")),
        );
    }
    for c in &outcome.checks {
        println!(
            "[{}] {} (full {} vs {} margin {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.full.map_or("n/a".into(), |v| format!("{v:.4}")),
            c.other.map_or("n/a".into(), |v| format!("{v:.4}")),
            c.rel_margin.map_or("n/a".into(), |v| format!("{:.1}%", v * 100.0)),
        );
    }
    write_json(a.report.as_deref(), &outcome)
}

fn cmd_outpaint(a: OutpaintArgs) -> Result<()> {
    let (store, cfg, variant) = load_model(&a.ckpt)?;
    if variant == Variant::SkeletonAlign {
        bail!("the skeleton-align baseline has no motion latents to outpaint");
    }
    let dataset = load_samples(&a.drive)?;
    if a.index >= dataset.len() {
        bail!("--index {} out of range ({} samples)", a.index, dataset.len());
    }
    let s = dataset[a.index].materialize::<Real>()?;
    let p = cfg.prior_prefix;
    if s.clip_len() < p {
        bail!("clip length {} < prior_prefix {p}", s.clip_len());
    }
    let latents = encode_clip_latents(
        &store,
        &cfg,
        variant,
        &s.drive_frames[..p],
        &s.face_boxes[..p],
        &s.lh_boxes[..p],
        &s.rh_boxes[..p],
    )?;
    let prefix = MotionSequence::from_latents(&latents)?;
    let mut rng = rng_fork(a.seed, "outpaint");
    let tokens = prior_sample(&store, &cfg, &prefix.tokens, a.steps, &mut rng)?;
    let zeros = || Array1::<Real>::zeros(cfg.latent_dim);
    let mut sets = Vec::with_capacity(tokens.shape()[0]);
    for row in tokens.rows() {
        let [z, zf, zlh, zrh] = split_motion_row(&cfg, row)?;
        sets.push(MotionLatentSet::new(
            GaussianLatent::new(z, zeros())?,
            GaussianLatent::new(zf, zeros())?,
            GaussianLatent::new(zlh, zeros())?,
            GaussianLatent::new(zrh, zeros())?,
        )?);
    }
    let clip = sample_video(&store, &cfg, &s.ref_frame, &sets, a.steps, a.cfg_scale, &mut rng)?;
    write_frames(&a.out, &clip.frames)?;
    let rows: Vec<Vec<f64>> = tokens.rows().into_iter().map(|r| r.iter().map(|v| *v as f64).collect()).collect();
    write_json(Some(&a.out.join("motion.json")), &rows)?;
    println!(
        "outpainted {} frames ({} prefix + {} horizon) to {}",
        clip.len(),
        p,
        clip.len() - p,
        a.out.display()
    );
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let results = run_selftest();
    for r in &results {
        println!(
            "[{}] {:<24} {:>6.2}s  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
    }
    if !all_passed(&results) {
        bail!("{} of {} checks failed", results.iter().filter(|r| !r.passed).count(), results.len());
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::TrainPrior(a) => cmd_train_prior(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Ablation(a) => cmd_ablation(a),
        Cmd::Outpaint(a) => cmd_outpaint(a),
        Cmd::Selftest => cmd_selftest(),
    }
}
