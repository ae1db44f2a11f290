//! Parameter store, tape-binding context, and the layer vocabulary shared by
//! every model: linear, multi-head attention, transformer blocks, conv2d.
//! Parameters are addressed by dotted names; initialization draws from
//! `rng_fork(seed, "init/<name>")` so adding a parameter never shifts others.

use crate::error::{Error, Result};
use crate::rng::rng_fork;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;
use std::collections::BTreeMap;

/// Named parameter arrays; BTreeMap for deterministic iteration order.
#[derive(Debug, Clone)]
pub struct ParamStore<S: Scalar> {
    map: BTreeMap<String, ArrayD<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<S>) {
        let prev = self.map.insert(name.to_string(), value);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<S>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<S>> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<S>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// Check that every (name, shape) pair exists; typed error otherwise.
    pub fn verify_expected(&self, expected: &[(String, Vec<usize>)]) -> Result<()> {
        for (name, shape) in expected {
            match self.map.get(name) {
                None => {
                    return Err(Error::MissingParam {
                        name: name.clone(),
                        shape: shape.clone(),
                    })
                }
                Some(a) if a.shape() != shape.as_slice() => {
                    return Err(Error::ParamShape {
                        name: name.clone(),
                        stored: a.shape().to_vec(),
                        expected: shape.clone(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Convert scalar type (used to run f64 gradient checks on f32-trained nets).
    pub fn convert<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (k, v) in &self.map {
            out.insert(k, v.mapv(|x| T::from_f(x.to_f())));
        }
        out
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Zero-mean Gaussian with the given std.
    Normal(f64),
    Zeros,
    Ones,
}

/// Create and insert a parameter, deterministically initialized from (seed, name).
pub fn add_param<S: Scalar>(
    store: &mut ParamStore<S>,
    seed: u64,
    name: &str,
    shape: &[usize],
    init: Init,
) {
    let n: usize = shape.iter().product();
    let value = match init {
        Init::Zeros => ArrayD::zeros(IxDyn(shape)),
        Init::Ones => ArrayD::from_elem(IxDyn(shape), S::one()),
        Init::Normal(std) => {
            let mut rng = rng_fork(seed, &format!("init/{name}"));
            let vals: Vec<S> = (0..n)
                .map(|_| S::from_f(rng.normal_f64() * std))
                .collect();
            ArrayD::from_shape_vec(IxDyn(shape), vals).expect("shape/len agree")
        }
    };
    store.insert(name, value);
}

/// Binds store parameters onto a tape, memoized by name so shared weights
/// (e.g. the hand encoder used for both hands) bind once and accumulate
/// gradients across uses. `trainable=false` binds constants: identical
/// forward values, no backward bookkeeping.
pub struct Ctx<'a, S: Scalar> {
    pub tape: &'a Tape<S>,
    store: &'a ParamStore<S>,
    bound: RefCell<BTreeMap<String, Var>>,
    trainable: bool,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    pub fn new(tape: &'a Tape<S>, store: &'a ParamStore<S>, trainable: bool) -> Self {
        Ctx {
            tape,
            store,
            bound: RefCell::new(BTreeMap::new()),
            trainable,
        }
    }

    pub fn p(&self, name: &str) -> Var {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let arr = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not in store"))
            .clone();
        let var = if self.trainable {
            self.tape.leaf(arr)
        } else {
            self.tape.constant(arr)
        };
        self.bound.borrow_mut().insert(name.to_string(), var);
        var
    }

    /// All parameters touched by forward passes so far.
    pub fn bound_params(&self) -> Vec<(String, Var)> {
        self.bound
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }
}

// ---- layers ----

pub fn init_linear<S: Scalar>(
    store: &mut ParamStore<S>,
    seed: u64,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    w_init: Init,
) {
    add_param(store, seed, &format!("{prefix}.w"), &[in_dim, out_dim], w_init);
    add_param(store, seed, &format!("{prefix}.b"), &[out_dim], Init::Zeros);
}

pub fn linear_specs(prefix: &str, in_dim: usize, out_dim: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.w"), vec![in_dim, out_dim]),
        (format!("{prefix}.b"), vec![out_dim]),
    ]
}

/// y = x @ w + b over the last axis; x may have any leading shape.
pub fn linear<S: Scalar>(ctx: &Ctx<S>, prefix: &str, x: Var) -> Var {
    let w = ctx.p(&format!("{prefix}.w"));
    let b = ctx.p(&format!("{prefix}.b"));
    let t = ctx.tape;
    let sh = t.shape(x);
    let in_dim = *sh.last().expect("linear input needs an axis");
    let rows: usize = sh[..sh.len() - 1].iter().product();
    let x2 = t.reshape(x, &[rows, in_dim]);
    let y = t.matmul(x2, w);
    let y = t.add(y, b);
    let out_dim = t.shape(y)[1];
    let mut out_shape = sh[..sh.len() - 1].to_vec();
    out_shape.push(out_dim);
    t.reshape(y, &out_shape)
}

pub fn init_layer_norm<S: Scalar>(store: &mut ParamStore<S>, seed: u64, prefix: &str, dim: usize) {
    add_param(store, seed, &format!("{prefix}.g"), &[dim], Init::Ones);
    add_param(store, seed, &format!("{prefix}.b"), &[dim], Init::Zeros);
}

pub fn layer_norm_specs(prefix: &str, dim: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.g"), vec![dim]),
        (format!("{prefix}.b"), vec![dim]),
    ]
}

pub fn layer_norm<S: Scalar>(ctx: &Ctx<S>, prefix: &str, x: Var) -> Var {
    let g = ctx.p(&format!("{prefix}.g"));
    let b = ctx.p(&format!("{prefix}.b"));
    ctx.tape.layer_norm(x, g, b, S::from_f(1e-5))
}

pub fn init_attention<S: Scalar>(
    store: &mut ParamStore<S>,
    seed: u64,
    prefix: &str,
    width: usize,
    kv_dim: usize,
    zero_out: bool,
) {
    init_linear(store, seed, &format!("{prefix}.q"), width, width, Init::Normal(0.02));
    init_linear(store, seed, &format!("{prefix}.k"), kv_dim, width, Init::Normal(0.02));
    init_linear(store, seed, &format!("{prefix}.v"), kv_dim, width, Init::Normal(0.02));
    let out_init = if zero_out { Init::Zeros } else { Init::Normal(0.02) };
    init_linear(store, seed, &format!("{prefix}.o"), width, width, out_init);
}

pub fn attention_specs(prefix: &str, width: usize, kv_dim: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = vec![];
    v.extend(linear_specs(&format!("{prefix}.q"), width, width));
    v.extend(linear_specs(&format!("{prefix}.k"), kv_dim, width));
    v.extend(linear_specs(&format!("{prefix}.v"), kv_dim, width));
    v.extend(linear_specs(&format!("{prefix}.o"), width, width));
    v
}

/// Multi-head attention. q_in: (B, Tq, W); kv_in: (B, Tk, Dkv). Full attention, no mask.
pub fn attention<S: Scalar>(ctx: &Ctx<S>, prefix: &str, q_in: Var, kv_in: Var, heads: usize) -> Var {
    let t = ctx.tape;
    let qs = t.shape(q_in);
    let (b, tq, w) = (qs[0], qs[1], qs[2]);
    let tk = t.shape(kv_in)[1];
    let dh = w / heads;
    assert_eq!(dh * heads, w, "width divisible by heads");

    let split = |x: Var, tn: usize| -> Var {
        // (B, Tn, W) -> (B*heads, Tn, dh)
        let x = t.reshape(x, &[b, tn, heads, dh]);
        let x = t.permute(x, &[0, 2, 1, 3]);
        t.reshape(x, &[b * heads, tn, dh])
    };

    let q = split(linear(ctx, &format!("{prefix}.q"), q_in), tq);
    let k = split(linear(ctx, &format!("{prefix}.k"), kv_in), tk);
    let v = split(linear(ctx, &format!("{prefix}.v"), kv_in), tk);

    // Scaling q instead of the (Tq, Tk) logits keeps the tape's largest
    // tensor out of the scale op's saved buffers.
    let q = t.scale(q, S::from_f(1.0 / (dh as f64).sqrt()));
    let kt = t.permute(k, &[0, 2, 1]);
    let logits = t.bmm(q, kt);
    let att = t.softmax_last(logits);
    let mixed = t.bmm(att, v);

    let mixed = t.reshape(mixed, &[b, heads, tq, dh]);
    let mixed = t.permute(mixed, &[0, 2, 1, 3]);
    let mixed = t.reshape(mixed, &[b, tq, w]);
    linear(ctx, &format!("{prefix}.o"), mixed)
}

pub fn init_mlp<S: Scalar>(
    store: &mut ParamStore<S>,
    seed: u64,
    prefix: &str,
    width: usize,
    hidden: usize,
) {
    init_linear(store, seed, &format!("{prefix}.fc1"), width, hidden, Init::Normal(0.02));
    init_linear(store, seed, &format!("{prefix}.fc2"), hidden, width, Init::Normal(0.02));
}

pub fn mlp_specs(prefix: &str, width: usize, hidden: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = linear_specs(&format!("{prefix}.fc1"), width, hidden);
    v.extend(linear_specs(&format!("{prefix}.fc2"), hidden, width));
    v
}

pub fn mlp<S: Scalar>(ctx: &Ctx<S>, prefix: &str, x: Var) -> Var {
    let h = linear(ctx, &format!("{prefix}.fc1"), x);
    let h = ctx.tape.gelu(h);
    linear(ctx, &format!("{prefix}.fc2"), h)
}

/// Pre-norm transformer encoder block: x + attn(LN(x)), then x + mlp(LN(x)).
pub fn init_encoder_block<S: Scalar>(
    store: &mut ParamStore<S>,
    seed: u64,
    prefix: &str,
    width: usize,
) {
    init_layer_norm(store, seed, &format!("{prefix}.ln1"), width);
    init_attention(store, seed, &format!("{prefix}.attn"), width, width, false);
    init_layer_norm(store, seed, &format!("{prefix}.ln2"), width);
    init_mlp(store, seed, &format!("{prefix}.mlp"), width, 4 * width);
}

pub fn encoder_block_specs(prefix: &str, width: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = layer_norm_specs(&format!("{prefix}.ln1"), width);
    v.extend(attention_specs(&format!("{prefix}.attn"), width, width));
    v.extend(layer_norm_specs(&format!("{prefix}.ln2"), width));
    v.extend(mlp_specs(&format!("{prefix}.mlp"), width, 4 * width));
    v
}

pub fn encoder_block<S: Scalar>(ctx: &Ctx<S>, prefix: &str, x: Var, heads: usize) -> Var {
    let t = ctx.tape;
    let h = layer_norm(ctx, &format!("{prefix}.ln1"), x);
    let a = attention(ctx, &format!("{prefix}.attn"), h, h, heads);
    let x = t.add(x, a);
    let h = layer_norm(ctx, &format!("{prefix}.ln2"), x);
    let m = mlp(ctx, &format!("{prefix}.mlp"), h);
    t.add(x, m)
}

/// Conv2d, stride 1. Weight stored pre-flattened as (Cin*k*k, Cout) so the
/// im2col product needs no transpose.
pub fn init_conv2d<S: Scalar>(
    store: &mut ParamStore<S>,
    seed: u64,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    w_init: Init,
) {
    add_param(store, seed, &format!("{prefix}.w"), &[cin * k * k, cout], w_init);
    add_param(store, seed, &format!("{prefix}.b"), &[cout], Init::Zeros);
}

pub fn conv2d_specs(prefix: &str, cin: usize, cout: usize, k: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.w"), vec![cin * k * k, cout]),
        (format!("{prefix}.b"), vec![cout]),
    ]
}

pub fn conv2d<S: Scalar>(ctx: &Ctx<S>, prefix: &str, x: Var, k: usize, pad: usize) -> Var {
    let t = ctx.tape;
    let sh = t.shape(x);
    let (b, h, w) = (sh[0], sh[2], sh[3]);
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let cols = t.im2col(x, k, pad);
    let y = t.matmul(cols, ctx.p(&format!("{prefix}.w")));
    let y = t.add(y, ctx.p(&format!("{prefix}.b")));
    let cout = t.shape(y)[1];
    let y = t.reshape(y, &[b, oh, ow, cout]);
    t.permute(y, &[0, 3, 1, 2])
}

// ---- loss helpers ----

/// Mean squared error over all elements.
pub fn mse<S: Scalar>(tape: &Tape<S>, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    tape.mean_all(tape.mul(d, d))
}

/// Sum of mask-weighted squared error divided by `denom`.
pub fn masked_mse<S: Scalar>(tape: &Tape<S>, a: Var, b: Var, mask: Var, denom: f64) -> Var {
    let d = tape.sub(a, b);
    let sq = tape.mul(d, d);
    let m = tape.mul(sq, mask);
    tape.scale(tape.sum_all(m), S::from_f(1.0 / denom.max(1.0)))
}

/// KL(q || N(0,I)) for diagonal Gaussians, mean over batch rows of
/// 0.5 * sum_d (mu^2 + exp(logvar) - 1 - logvar). mu, logvar: (B, d).
pub fn kl_normal<S: Scalar>(tape: &Tape<S>, mu: Var, logvar: Var) -> Var {
    let b = tape.shape(mu)[0];
    let musq = tape.mul(mu, mu);
    let ev = tape.exp(logvar);
    let s = tape.add(musq, ev);
    let s = tape.add_scalar(s, S::from_f(-1.0));
    let s = tape.sub(s, logvar);
    let total = tape.sum_all(s);
    tape.scale(total, S::from_f(0.5 / b as f64))
}

/// Max relative gradient error of an analytic backward pass against central
/// finite differences, over every coordinate of every input.
pub fn gradcheck_max_rel_err<S: Scalar>(
    build: &dyn Fn(&Tape<S>, &[Var]) -> Var,
    inputs: &[ArrayD<S>],
    h: f64,
) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let root = build(&tape, &vars);
    let grads = tape.backward(root);
    let mut worst = 0.0f64;
    for (pi, x) in inputs.iter().enumerate() {
        let g = grads.of(vars[pi]).expect("leaf gradient");
        for idx in 0..x.len() {
            let eval = |delta: f64| -> f64 {
                let mut xs = inputs.to_vec();
                xs[pi].as_slice_mut().unwrap()[idx] += S::from_f(delta);
                let t2 = Tape::new();
                let vs: Vec<Var> = xs.iter().map(|x| t2.leaf(x.clone())).collect();
                t2.scalar(build(&t2, &vs)).to_f()
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let ana = g.as_slice().unwrap()[idx].to_f();
            let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Gradient-check a parameterized module through its real forward code:
/// analytic grads from one trainable pass vs central differences obtained by
/// perturbing store entries. Checks up to `coords_per_param` coordinates per
/// parameter (deterministically subsampled). Returns the max relative error.
pub fn gradcheck_module<S: Scalar>(
    store: &ParamStore<S>,
    build: &dyn Fn(&Ctx<S>) -> Var,
    h: f64,
    coords_per_param: usize,
) -> f64 {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, true);
    let root = build(&ctx);
    let grads = tape.backward(root);
    let bound = ctx.bound_params();
    let mut worst = 0.0f64;
    for (name, var) in &bound {
        let g = match grads.of(*var) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(store.get(name).unwrap().shape())),
        };
        let n = g.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > coords_per_param {
            let mut rng = rng_fork(0xC0DE, &format!("gradcheck/{name}"));
            rng.shuffle(&mut coords);
            coords.truncate(coords_per_param);
        }
        for idx in coords {
            let eval = |delta: f64| -> f64 {
                let mut s2 = store.clone();
                s2.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] += S::from_f(delta);
                let t2 = Tape::new();
                let c2 = Ctx::new(&t2, &s2, false);
                t2.scalar(build(&c2)).to_f()
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let ana = g.as_slice().unwrap()[idx].to_f();
            let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use ndarray::IxDyn;

    fn store_with<S: Scalar>(seed: u64, f: impl Fn(&mut ParamStore<S>, u64)) -> ParamStore<S> {
        let mut s = ParamStore::new();
        f(&mut s, seed);
        s
    }

    #[test]
    fn linear_shapes_and_broadcast_bias() {
        let store = store_with::<f64>(1, |s, seed| {
            init_linear(s, seed, "l", 4, 3, Init::Normal(0.5));
        });
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, false);
        let x = tape.constant(ArrayD::from_elem(IxDyn(&[2, 5, 4]), 1.0));
        let y = linear(&ctx, "l", x);
        assert_eq!(tape.shape(y), vec![2, 5, 3]);
    }

    #[test]
    fn kl_closed_form_oracles() {
        let tape = Tape::<f64>::new();
        // mu=0, logvar=0 -> KL = 0
        let mu = tape.constant(ArrayD::zeros(IxDyn(&[2, 3])));
        let lv = tape.constant(ArrayD::zeros(IxDyn(&[2, 3])));
        assert!(tape.scalar(kl_normal(&tape, mu, lv)).abs() < 1e-12);
        // mu=1, logvar=0 -> 0.5 per dim
        let mu = tape.constant(ArrayD::from_elem(IxDyn(&[1, 4]), 1.0));
        let lv = tape.constant(ArrayD::zeros(IxDyn(&[1, 4])));
        assert!((tape.scalar(kl_normal(&tape, mu, lv)) - 2.0).abs() < 1e-12);
        // mu=0, var=0.5 -> 0.5*(0.5 - 1 - ln 0.5) = 0.096573590...
        let mu = tape.constant(ArrayD::zeros(IxDyn(&[1, 1])));
        let lv = tape.constant(ArrayD::from_elem(IxDyn(&[1, 1]), 0.5f64.ln()));
        let got = tape.scalar(kl_normal(&tape, mu, lv));
        assert!((got - 0.096_573_590_279_972_65).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn kl_gradcheck() {
        let err = gradcheck_max_rel_err::<f64>(
            &|t, v| kl_normal(t, v[0], v[1]),
            &[
                ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0.3, -0.8, 1.2, 0.0, 0.5, -1.5]).unwrap(),
                ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0.1, -0.4, 0.9, -2.0, 0.0, 1.1]).unwrap(),
            ],
            1e-5,
        );
        assert!(err < 1e-7, "err {err}");
    }

    #[test]
    fn encoder_block_param_gradcheck() {
        let mut store = ParamStore::<f64>::new();
        init_encoder_block(&mut store, 7, "blk", 8);
        let x0 = {
            let mut rng = crate::rng::rng_fork(3, "attn-gc-x");
            ArrayD::from_shape_vec(IxDyn(&[2, 3, 8]), rng.normal_vec(48)).unwrap()
        };
        let err = gradcheck_module::<f64>(
            &store,
            &move |ctx| {
                let x = ctx.tape.constant(x0.clone());
                let y = encoder_block(ctx, "blk", x, 2);
                ctx.tape.mean_all(ctx.tape.mul(y, y))
            },
            1e-5,
            6,
        );
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn ctx_memoizes_shared_params() {
        let store = store_with::<f64>(2, |s, seed| {
            init_linear(s, seed, "sh", 3, 3, Init::Normal(0.1));
        });
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, true);
        let a = ctx.p("sh.w");
        let b = ctx.p("sh.w");
        assert_eq!(a, b);
        assert_eq!(ctx.bound_params().len(), 1);
    }

    #[test]
    fn verify_expected_reports_missing_and_shape() {
        let store = store_with::<f32>(3, |s, seed| {
            init_linear(s, seed, "m", 2, 2, Init::Zeros);
        });
        let ok = store.verify_expected(&linear_specs("m", 2, 2));
        assert!(ok.is_ok());
        let missing = store.verify_expected(&[("ghost.w".into(), vec![2, 2])]);
        assert!(matches!(missing, Err(Error::MissingParam { .. })));
        let bad_shape = store.verify_expected(&[("m.w".into(), vec![3, 2])]);
        assert!(matches!(bad_shape, Err(Error::ParamShape { .. })));
    }

    #[test]
    fn init_independent_of_insertion_order() {
        let mut a = ParamStore::<f32>::new();
        add_param(&mut a, 9, "x", &[4], Init::Normal(1.0));
        add_param(&mut a, 9, "y", &[4], Init::Normal(1.0));
        let mut b = ParamStore::<f32>::new();
        add_param(&mut b, 9, "y", &[4], Init::Normal(1.0));
        add_param(&mut b, 9, "x", &[4], Init::Normal(1.0));
        assert_eq!(a.get("x").unwrap(), b.get("x").unwrap());
        assert_eq!(a.get("y").unwrap(), b.get("y").unwrap());
    }

    #[test]
    fn conv2d_matches_direct_stencil() {
        // 1x1 input channel, 3x3 kernel, known values: compare against a
        // hand-computed convolution at one interior and one corner pixel.
        let mut store = ParamStore::<f64>::new();
        add_param(&mut store, 0, "c.w", &[9, 1], Init::Zeros);
        add_param(&mut store, 0, "c.b", &[1], Init::Zeros);
        {
            let w = store.get_mut("c.w").unwrap();
            for i in 0..9 {
                w[[i, 0]] = (i + 1) as f64; // kernel 1..9 row-major
            }
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, false);
        let mut x = ndarray::Array4::<f64>::zeros((1, 1, 3, 3));
        for y in 0..3 {
            for c in 0..3 {
                x[[0, 0, y, c]] = (y * 3 + c) as f64;
            }
        }
        let xv = tape.constant(x.into_dyn());
        let y = conv2d(&ctx, "c", xv, 3, 1);
        let v = tape.val(y);
        // center: full overlap sum_{i} k_i * x_i with x = 0..8
        let center: f64 = (0..9).map(|i| ((i + 1) * i) as f64).sum();
        assert_eq!(v[[0, 0, 1, 1]], center);
        // top-left corner: kernel rows/cols 1.. overlap x rows/cols 0..1
        let corner = 5.0 * 0.0 + 6.0 * 1.0 + 8.0 * 3.0 + 9.0 * 4.0;
        assert_eq!(v[[0, 0, 0, 0]], corner);
        assert_eq!(tape.shape(y), vec![1, 1, 3, 3]);
    }
}
