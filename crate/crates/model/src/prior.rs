//! Autoregressive motion prior: a small transformer that flow-matches future
//! motion tokens given a clean prefix, enabling motion outpainting beyond a
//! driving clip.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, IxDyn};
use xum_core::nn::{
    attention, init_attention, init_linear, init_mlp, linear, masked_mse, mlp, Ctx, Init,
    ParamStore,
};
use xum_core::optim::{AdamW, GradMap};
use xum_core::{
    Config, Error, MotionLatentSet, RandomStream, Result, Scalar, Tape, Var,
};

use crate::dit::timestep_features;

pub const PRIOR: &str = "prior";

const LN_EPS: f64 = 1e-5;

/// shift/scale/gate for attention, shift/scale/gate for the MLP.
const MOD_CHUNKS: usize = 6;

/// Rows modeled per sequence: clean prefix plus predicted horizon.
pub fn prior_seq_len(cfg: &Config) -> usize {
    cfg.prior_prefix + cfg.prior_horizon
}

/// Per-row token dimension: the four motion latents concatenated.
pub fn prior_token_dim(cfg: &Config) -> usize {
    4 * cfg.latent_dim
}

/// A sequence of per-frame motion tokens, one row per frame, each row the
/// concatenated means of the four motion latents.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence<S: Scalar> {
    pub tokens: Array2<S>,
}

impl<S: Scalar> MotionSequence<S> {
    pub fn new(tokens: Array2<S>) -> Self {
        Self { tokens }
    }

    /// Rows from per-frame latent sets, in frame order.
    pub fn from_latents(sets: &[MotionLatentSet<S>]) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Data("empty motion-latent sequence".into()));
        }
        let d4 = 4 * sets[0].dim();
        let mut tokens = Array2::zeros((sets.len(), d4));
        for (i, set) in sets.iter().enumerate() {
            let row = set.concat_means();
            if row.len() != d4 {
                return Err(Error::shape("motion sequence row", &[d4], &[row.len()]));
            }
            tokens.row_mut(i).assign(&row);
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

pub fn init_prior<S: Scalar>(store: &mut ParamStore<S>, seed: u64, cfg: &Config) {
    let w = cfg.prior_width;
    let d4 = prior_token_dim(cfg);
    let t_m = prior_seq_len(cfg);
    init_linear(store, seed, &format!("{PRIOR}.in"), d4, w, Init::Normal(0.02));
    xum_core::nn::add_param(store, seed, &format!("{PRIOR}.pos"), &[t_m, w], Init::Normal(0.02));
    init_linear(store, seed, &format!("{PRIOR}.tmlp.fc1"), w, w, Init::Normal(0.02));
    init_linear(store, seed, &format!("{PRIOR}.tmlp.fc2"), w, w, Init::Normal(0.02));
    for i in 0..cfg.prior_depth {
        let p = format!("{PRIOR}.blk{i}");
        init_attention(store, seed, &format!("{p}.attn"), w, w, false);
        init_mlp(store, seed, &format!("{p}.mlp"), w, 4 * w);
        init_linear(store, seed, &format!("{p}.mod"), w, MOD_CHUNKS * w, Init::Zeros);
    }
    init_linear(store, seed, &format!("{PRIOR}.modf"), w, 2 * w, Init::Zeros);
    init_linear(store, seed, &format!("{PRIOR}.out"), w, d4, Init::Zeros);
}

pub fn prior_specs(cfg: &Config) -> Vec<(String, Vec<usize>)> {
    let w = cfg.prior_width;
    let d4 = prior_token_dim(cfg);
    let mut specs = xum_core::nn::linear_specs(&format!("{PRIOR}.in"), d4, w);
    specs.push((format!("{PRIOR}.pos"), vec![prior_seq_len(cfg), w]));
    specs.extend(xum_core::nn::linear_specs(&format!("{PRIOR}.tmlp.fc1"), w, w));
    specs.extend(xum_core::nn::linear_specs(&format!("{PRIOR}.tmlp.fc2"), w, w));
    for i in 0..cfg.prior_depth {
        let p = format!("{PRIOR}.blk{i}");
        specs.extend(xum_core::nn::attention_specs(&format!("{p}.attn"), w, w));
        specs.extend(xum_core::nn::mlp_specs(&format!("{p}.mlp"), w, 4 * w));
        specs.extend(xum_core::nn::linear_specs(&format!("{p}.mod"), w, MOD_CHUNKS * w));
    }
    specs.extend(xum_core::nn::linear_specs(&format!("{PRIOR}.modf"), w, 2 * w));
    specs.extend(xum_core::nn::linear_specs(&format!("{PRIOR}.out"), w, d4));
    specs
}

/// Velocity prediction for every row of `x_t` (B, T_m, 4d) at per-sample
/// times `t`.
pub fn prior_forward_var<S: Scalar>(
    ctx: &Ctx<S>,
    cfg: &Config,
    x_t: Var,
    t: &[f64],
) -> Result<Var> {
    let tp = ctx.tape;
    let sh = tp.shape(x_t);
    let t_m = prior_seq_len(cfg);
    let d4 = prior_token_dim(cfg);
    if sh.len() != 3 || sh[1] != t_m || sh[2] != d4 {
        return Err(Error::shape("prior input", &[t.len(), t_m, d4], &sh));
    }
    if sh[0] != t.len() {
        return Err(Error::Data(format!(
            "prior batch {} does not match {} timesteps",
            sh[0],
            t.len()
        )));
    }
    let b = sh[0];
    let w = cfg.prior_width;

    let mut x = linear(ctx, &format!("{PRIOR}.in"), x_t);
    x = tp.add(x, ctx.p(&format!("{PRIOR}.pos")));

    let tfeat = tp.constant(timestep_features::<S>(t, w).into_dyn());
    let temb = linear(ctx, &format!("{PRIOR}.tmlp.fc1"), tfeat);
    let temb = tp.gelu(temb);
    let temb = linear(ctx, &format!("{PRIOR}.tmlp.fc2"), temb); // (B, W)

    for i in 0..cfg.prior_depth {
        x = prior_block(ctx, cfg, &format!("{PRIOR}.blk{i}"), x, temb, b);
    }

    let m = linear(ctx, &format!("{PRIOR}.modf"), temb);
    let m = tp.reshape(m, &[b, 2, w]);
    let shift = tp.slice(m, 1, 0, 1);
    let scale = tp.slice(m, 1, 1, 1);
    let h = tp.layer_norm_plain(x, S::from_f(LN_EPS));
    let h = tp.add(tp.mul(h, tp.add_scalar(scale, S::one())), shift);
    Ok(linear(ctx, &format!("{PRIOR}.out"), h))
}

fn prior_block<S: Scalar>(ctx: &Ctx<S>, cfg: &Config, prefix: &str, x: Var, temb: Var, b: usize) -> Var {
    let tp = ctx.tape;
    let w = cfg.prior_width;
    let m = linear(ctx, &format!("{prefix}.mod"), temb);
    let m = tp.reshape(m, &[b, MOD_CHUNKS, w]);
    let chunk = |i: usize| tp.slice(m, 1, i, 1); // (B, 1, W)
    let (shift1, scale1, gate1) = (chunk(0), chunk(1), chunk(2));
    let (shift2, scale2, gate2) = (chunk(3), chunk(4), chunk(5));

    let h = tp.layer_norm_plain(x, S::from_f(LN_EPS));
    let h = tp.add(tp.mul(h, tp.add_scalar(scale1, S::one())), shift1);
    let a = attention(ctx, &format!("{prefix}.attn"), h, h, cfg.prior_heads);
    let x = tp.add(x, tp.mul(gate1, a));

    let h = tp.layer_norm_plain(x, S::from_f(LN_EPS));
    let h = tp.add(tp.mul(h, tp.add_scalar(scale2, S::one())), shift2);
    let mm = mlp(ctx, &format!("{prefix}.mlp"), h);
    tp.add(x, tp.mul(gate2, mm))
}

/// Flow-matching loss over the horizon rows. The prefix rows of the network
/// input stay clean (never interpolated with noise) at every t, and their
/// velocity targets are masked out of the loss.
pub fn prior_flow_loss_var<S: Scalar>(
    ctx: &Ctx<S>,
    cfg: &Config,
    seqs: &ArrayD<S>,
    t: &[f64],
    eps: &ArrayD<S>,
) -> Result<Var> {
    let tp = ctx.tape;
    let t_m = prior_seq_len(cfg);
    let d4 = prior_token_dim(cfg);
    let b = t.len();
    if seqs.shape() != [b, t_m, d4] {
        return Err(Error::shape("prior sequences", &[b, t_m, d4], seqs.shape()));
    }
    if eps.shape() != seqs.shape() {
        return Err(Error::shape("prior noise", seqs.shape(), eps.shape()));
    }
    let p = cfg.prior_prefix;

    let mut x_t = seqs.clone();
    for (bi, &tb) in t.iter().enumerate() {
        let (a, c) = (S::from_f(1.0 - tb), S::from_f(tb));
        for row in p..t_m {
            for j in 0..d4 {
                let clean = seqs[[bi, row, j]];
                x_t[[bi, row, j]] = a * eps[[bi, row, j]] + c * clean;
            }
        }
    }
    let target = seqs - eps;

    let v = prior_forward_var(ctx, cfg, tp.constant(x_t), t)?;
    let mut mask = Array3::<S>::zeros((1, t_m, 1));
    mask.slice_mut(ndarray::s![.., p.., ..]).fill(S::one());
    let denom = (b * (t_m - p) * d4) as f64;
    Ok(masked_mse(
        tp,
        v,
        tp.constant(target),
        tp.constant(mask.into_dyn()),
        denom,
    ))
}

/// One optimizer step on a batch of motion sequences. Returns the loss.
pub fn prior_train_step<S: Scalar>(
    store: &mut ParamStore<S>,
    opt: &mut AdamW<S>,
    cfg: &Config,
    batch: &[MotionSequence<S>],
    rng: &mut RandomStream,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("empty prior batch".into()));
    }
    let t_m = prior_seq_len(cfg);
    let d4 = prior_token_dim(cfg);
    let b = batch.len();
    let mut seqs = ArrayD::<S>::zeros(IxDyn(&[b, t_m, d4]));
    for (bi, seq) in batch.iter().enumerate() {
        if seq.tokens.shape() != [t_m, d4] {
            return Err(Error::shape("prior batch entry", &[t_m, d4], seq.tokens.shape()));
        }
        seqs.index_axis_mut(Axis(0), bi).assign(&seq.tokens.clone().into_dyn());
    }
    // Keep t off the exact endpoints so both terms of the interpolation are live.
    let t: Vec<f64> = (0..b).map(|_| rng.uniform_f64() * 0.998 + 0.001).collect();
    let eps = ArrayD::from_shape_vec(IxDyn(&[b, t_m, d4]), rng.normal_vec(b * t_m * d4))
        .expect("noise shape");

    let tape: Tape<S> = Tape::new();
    let ctx = Ctx::new(&tape, store, true);
    let loss = prior_flow_loss_var(&ctx, cfg, &seqs, &t, &eps)?;
    let loss_val = tape.scalar(loss).to_f();
    if !loss_val.is_finite() {
        return Err(Error::NonFinite("prior flow loss".into()));
    }
    let grads = tape.backward(loss);
    let mut gm: GradMap<S> = GradMap::new();
    for (name, var) in ctx.bound_params() {
        if let Some(g) = grads.of(var) {
            gm.insert(name, g.clone());
        }
    }
    AdamW::clip_global_norm(&mut gm, cfg.grad_clip);
    let lr = cfg.lr_generator;
    opt.step(store, &gm, &|_| lr);
    Ok(loss_val)
}

/// Outpaint a horizon from a clean prefix by Euler flow integration. The
/// prefix rows are pinned to their clean values after every step, matching
/// how the model was trained; the returned sequence is prefix followed by
/// the generated horizon.
pub fn prior_sample<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &Config,
    prefix: &Array2<S>,
    steps: usize,
    rng: &mut RandomStream,
) -> Result<Array2<S>> {
    if steps == 0 {
        return Err(Error::Data("prior_sample needs steps >= 1".into()));
    }
    let t_m = prior_seq_len(cfg);
    let d4 = prior_token_dim(cfg);
    let p = cfg.prior_prefix;
    if prefix.shape() != [p, d4] {
        return Err(Error::shape("prior prefix", &[p, d4], prefix.shape()));
    }
    let mut x = Array2::<S>::from_shape_vec((t_m, d4), rng.normal_vec(t_m * d4)).expect("noise");
    x.slice_mut(ndarray::s![..p, ..]).assign(prefix);
    let dt = S::from_f(1.0 / steps as f64);
    for k in 0..steps {
        let t_k = k as f64 / steps as f64;
        let tape: Tape<S> = Tape::new();
        let ctx = Ctx::new(&tape, store, false);
        let xin = tape.constant(
            x.clone()
                .into_dyn()
                .into_shape_with_order(IxDyn(&[1, t_m, d4]))
                .expect("batch axis"),
        );
        let v = prior_forward_var(&ctx, cfg, xin, &[t_k])?;
        let v: Array2<S> = tape
            .val(v)
            .to_owned()
            .into_shape_with_order((t_m, d4))
            .expect("velocity shape");
        x.zip_mut_with(&v, |xv, &vv| *xv = *xv + dt * vv);
        x.slice_mut(ndarray::s![..p, ..]).assign(prefix);
    }
    Ok(x)
}

/// Mean absolute error over the horizon rows of two full-length sequences.
pub fn horizon_mae<S: Scalar>(cfg: &Config, a: &Array2<S>, b: &Array2<S>) -> f64 {
    let p = cfg.prior_prefix;
    let ah = a.slice(ndarray::s![p.., ..]);
    let bh = b.slice(ndarray::s![p.., ..]);
    let n = ah.len() as f64;
    ah.iter()
        .zip(bh.iter())
        .map(|(&x, &y)| (x.to_f() - y.to_f()).abs())
        .sum::<f64>()
        / n
}

/// Concatenated-mean rows split back into per-frame latent quarters
/// (z, z_f, z_lh, z_rh per row).
pub fn split_motion_row<S: Scalar>(cfg: &Config, row: ndarray::ArrayView1<S>) -> Result<[Array1<S>; 4]> {
    let d = cfg.latent_dim;
    if row.len() != 4 * d {
        return Err(Error::shape("motion row", &[4 * d], &[row.len()]));
    }
    Ok([
        row.slice(ndarray::s![0..d]).to_owned(),
        row.slice(ndarray::s![d..2 * d]).to_owned(),
        row.slice(ndarray::s![2 * d..3 * d]).to_owned(),
        row.slice(ndarray::s![3 * d..4 * d]).to_owned(),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use xum_core::rng_fork;

    fn tiny_cfg() -> Config {
        Config {
            latent_dim: 2,
            prior_prefix: 2,
            prior_horizon: 3,
            prior_depth: 1,
            prior_width: 8,
            prior_heads: 2,
            ..Config::default()
        }
    }

    fn random_store(cfg: &Config, seed: u64) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        init_prior(&mut s, seed, cfg);
        // Zero-init gates/output block the signal path at init; randomize them
        // so tests exercise a generic network, as after a training step.
        for name in s.names() {
            if name.ends_with(".mod.w") || name.starts_with("prior.out.") || name.starts_with("prior.modf.") {
                let shape = s.get(&name).unwrap().shape().to_vec();
                let mut rng = rng_fork(seed ^ 0x5A5A, &name);
                *s.get_mut(&name).unwrap() =
                    ArrayD::from_shape_vec(IxDyn(&shape), rng.normal_vec(shape.iter().product()))
                        .unwrap()
                        .mapv(|v: f32| v * 0.05);
            }
        }
        s
    }

    fn rnd2(shape: (usize, usize), seed: u64) -> Array2<f32> {
        let mut rng = rng_fork(seed, "p2");
        Array2::from_shape_vec(shape, rng.normal_vec(shape.0 * shape.1)).unwrap()
    }

    #[test]
    fn specs_match_init() {
        let cfg = tiny_cfg();
        let mut s: ParamStore<f32> = ParamStore::new();
        init_prior(&mut s, 0, &cfg);
        s.verify_expected(&prior_specs(&cfg)).unwrap();
    }

    #[test]
    fn sample_keeps_prefix_and_length() {
        let cfg = tiny_cfg();
        let store = random_store(&cfg, 1);
        let prefix = rnd2((cfg.prior_prefix, prior_token_dim(&cfg)), 2);
        let out = prior_sample(&store, &cfg, &prefix, 4, &mut rng_fork(3, "s")).unwrap();
        assert_eq!(out.shape(), [prior_seq_len(&cfg), prior_token_dim(&cfg)]);
        assert_eq!(out.slice(ndarray::s![..cfg.prior_prefix, ..]), prefix);
        // The horizon must actually move away from the raw noise draw.
        let mut rng = rng_fork(3, "s");
        let raw = Array2::<f32>::from_shape_vec(
            (prior_seq_len(&cfg), prior_token_dim(&cfg)),
            rng.normal_vec(prior_seq_len(&cfg) * prior_token_dim(&cfg)),
        )
        .unwrap();
        assert_ne!(out.slice(ndarray::s![cfg.prior_prefix.., ..]), raw.slice(ndarray::s![cfg.prior_prefix.., ..]));
    }

    #[test]
    fn wrong_prefix_length_is_error() {
        let cfg = tiny_cfg();
        let store = random_store(&cfg, 4);
        let bad = rnd2((cfg.prior_prefix + 1, prior_token_dim(&cfg)), 5);
        let err = prior_sample(&store, &cfg, &bad, 2, &mut rng_fork(6, "e")).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn prefix_noise_rows_never_touch_the_loss() {
        let cfg = tiny_cfg();
        let store = random_store(&cfg, 7);
        let (t_m, d4) = (prior_seq_len(&cfg), prior_token_dim(&cfg));
        let seqs = rnd2((2 * t_m, d4), 8)
            .into_shape_with_order(IxDyn(&[2, t_m, d4]))
            .unwrap();
        let eps = rnd2((2 * t_m, d4), 9)
            .into_shape_with_order(IxDyn(&[2, t_m, d4]))
            .unwrap();
        let t = [0.3, 0.7];
        let loss_of = |eps: &ArrayD<f32>| -> f64 {
            let tape: Tape<f32> = Tape::new();
            let ctx = Ctx::new(&tape, &store, false);
            let l = prior_flow_loss_var(&ctx, &cfg, &seqs, &t, eps).unwrap();
            tape.scalar(l).to_f()
        };
        let base = loss_of(&eps);
        // Rewriting the prefix rows of eps changes masked-out targets only:
        // the network input keeps those rows clean, so the loss is untouched.
        let mut perturbed = eps.clone();
        for bi in 0..2 {
            for row in 0..cfg.prior_prefix {
                for j in 0..d4 {
                    perturbed[[bi, row, j]] += 17.0;
                }
            }
        }
        assert_eq!(base, loss_of(&perturbed));
        // Horizon noise, by contrast, must matter.
        let mut horizon = eps.clone();
        horizon[[0, cfg.prior_prefix, 0]] += 1.0;
        assert_ne!(base, loss_of(&horizon));
    }

    #[test]
    fn bias_only_model_has_closed_form_optimum() {
        // With all weights zero the prediction is the output bias broadcast
        // everywhere; the masked flow loss is then minimized by the mean
        // velocity target over horizon positions, where its gradient is zero.
        let cfg = tiny_cfg();
        let mut store: ParamStore<f64> = ParamStore::new();
        init_prior(&mut store, 0, &cfg);
        let (t_m, d4) = (prior_seq_len(&cfg), prior_token_dim(&cfg));
        let b = 3;
        let mut rng = rng_fork(11, "cf");
        let seqs = ArrayD::from_shape_vec(IxDyn(&[b, t_m, d4]), rng.normal_vec(b * t_m * d4)).unwrap();
        let eps = ArrayD::from_shape_vec(IxDyn(&[b, t_m, d4]), rng.normal_vec(b * t_m * d4)).unwrap();
        let t = [0.25, 0.5, 0.75];

        let target = &seqs - &eps;
        let p = cfg.prior_prefix;
        let mut opt = Array1::<f64>::zeros(d4);
        for j in 0..d4 {
            let mut acc = 0.0;
            for bi in 0..b {
                for row in p..t_m {
                    acc += target[[bi, row, j]];
                }
            }
            opt[j] = acc / (b * (t_m - p)) as f64;
        }
        {
            let bias = store.get_mut("prior.out.b").unwrap();
            for (dst, &v) in bias.iter_mut().zip(opt.iter()) {
                *dst = v;
            }
        }

        let tape: Tape<f64> = Tape::new();
        let ctx = Ctx::new(&tape, &store, true);
        let loss = prior_flow_loss_var(&ctx, &cfg, &seqs, &t, &eps).unwrap();
        let expected: f64 = {
            let mut acc = 0.0;
            for bi in 0..b {
                for row in p..t_m {
                    for j in 0..d4 {
                        let d = opt[j] - target[[bi, row, j]];
                        acc += d * d;
                    }
                }
            }
            acc / (b * (t_m - p) * d4) as f64
        };
        let got = tape.scalar(loss).to_f();
        assert!((got - expected).abs() < 1e-12, "loss {got} vs closed form {expected}");
        let grads = tape.backward(loss);
        let bound = ctx.bound_params();
        let (_, bias_var) = bound.iter().find(|(n, _)| n == "prior.out.b").unwrap();
        let g = grads.of(*bias_var).unwrap();
        let gmax = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(gmax < 1e-12, "bias gradient at optimum should vanish, max {gmax}");
    }

    #[test]
    fn three_training_steps_are_deterministic() {
        let cfg = tiny_cfg();
        let run = || -> (Vec<f64>, ParamStore<f32>) {
            let mut store = random_store(&cfg, 20);
            let mut opt = AdamW::new(cfg.weight_decay);
            let mut rng = rng_fork(21, "train");
            let batch: Vec<MotionSequence<f32>> = (0..3)
                .map(|i| MotionSequence::new(rnd2((prior_seq_len(&cfg), prior_token_dim(&cfg)), 30 + i)))
                .collect();
            let mut losses = Vec::new();
            for _ in 0..3 {
                losses.push(prior_train_step(&mut store, &mut opt, &cfg, &batch, &mut rng).unwrap());
            }
            (losses, store)
        };
        let (la, sa) = run();
        let (lb, sb) = run();
        assert_eq!(la, lb);
        for (name, value) in sa.iter() {
            assert_eq!(value, sb.get(name).unwrap(), "param {name}");
        }
    }

    #[test]
    fn overfits_one_sequence_to_low_horizon_error() {
        let cfg = Config {
            latent_dim: 2,
            prior_prefix: 2,
            prior_horizon: 4,
            prior_depth: 2,
            prior_width: 32,
            prior_heads: 4,
            lr_generator: 3e-3,
            ..Config::default()
        };
        let mut store: ParamStore<f32> = ParamStore::new();
        init_prior(&mut store, 0, &cfg);
        let mut opt = AdamW::new(cfg.weight_decay);
        let (t_m, d4) = (prior_seq_len(&cfg), prior_token_dim(&cfg));
        let target = rnd2((t_m, d4), 40).mapv(|v| v * 0.5);
        let batch: Vec<MotionSequence<f32>> = vec![MotionSequence::new(target.clone()); 4];
        let mut rng = rng_fork(41, "overfit");
        let mut last = f64::INFINITY;
        for _ in 0..800 {
            last = prior_train_step(&mut store, &mut opt, &cfg, &batch, &mut rng).unwrap();
        }
        assert!(last < 0.5, "training loss stuck at {last}");
        let prefix = target.slice(ndarray::s![..cfg.prior_prefix, ..]).to_owned();
        let out = prior_sample(&store, &cfg, &prefix, 16, &mut rng_fork(42, "sample")).unwrap();
        let mae = horizon_mae(&cfg, &out, &target);
        assert!(mae <= 0.1, "horizon MAE {mae}");
    }

    #[test]
    fn gradcheck_flow_loss() {
        let cfg = tiny_cfg();
        let mut store: ParamStore<f64> = ParamStore::new();
        init_prior(&mut store, 0, &cfg);
        for name in store.names() {
            if name.ends_with(".mod.w") || name.starts_with("prior.out.") || name.starts_with("prior.modf.") {
                let shape = store.get(&name).unwrap().shape().to_vec();
                let mut rng = rng_fork(0x77, &name);
                *store.get_mut(&name).unwrap() =
                    ArrayD::from_shape_vec(IxDyn(&shape), rng.normal_vec(shape.iter().product()))
                        .unwrap()
                        .mapv(|v: f64| v * 0.05);
            }
        }
        let (t_m, d4) = (prior_seq_len(&cfg), prior_token_dim(&cfg));
        let mut rng = rng_fork(50, "gc");
        let seqs = ArrayD::from_shape_vec(IxDyn(&[2, t_m, d4]), rng.normal_vec(2 * t_m * d4)).unwrap();
        let eps = ArrayD::from_shape_vec(IxDyn(&[2, t_m, d4]), rng.normal_vec(2 * t_m * d4)).unwrap();
        let worst = xum_core::nn::gradcheck_module(
            &store,
            &|ctx| prior_flow_loss_var(ctx, &cfg, &seqs, &[0.3, 0.6], &eps).unwrap(),
            1e-4,
            4,
        );
        assert!(worst <= 1e-5, "max rel grad err {worst}");
    }

    #[test]
    fn motion_sequence_from_latents_concatenates_means() {
        use xum_core::GaussianLatent;
        let d = 2;
        let mk = |base: f32| {
            let g = |o: f32| {
                GaussianLatent::new(
                    Array1::from_vec(vec![base + o, base + o + 0.5]),
                    Array1::zeros(d),
                )
                .unwrap()
            };
            MotionLatentSet::new(g(0.0), g(10.0), g(20.0), g(30.0)).unwrap()
        };
        let seq = MotionSequence::from_latents(&[mk(1.0), mk(2.0)]).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.token_dim(), 8);
        assert_eq!(seq.tokens[[0, 0]], 1.0);
        assert_eq!(seq.tokens[[0, 2]], 11.0); // z_f starts at latent_dim
        assert_eq!(seq.tokens[[1, 7]], 32.5); // z_rh tail
        let cfg = Config { latent_dim: 2, ..Config::default() };
        let parts = split_motion_row(&cfg, seq.tokens.row(0)).unwrap();
        assert_eq!(parts[3].to_vec(), vec![31.0, 31.5]);
    }
}
