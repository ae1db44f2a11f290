//! Reverse-mode autodiff over `ndarray`, generic in the scalar type.
//!
//! A [`Tape`] records a DAG of array ops; [`Tape::backward`] walks it once in
//! reverse, accumulating gradients into leaf nodes. Values are immutable
//! `ArcArray`s in standard (C) layout — every op allocates a fresh output, so
//! closures can capture cheap handles to whatever the backward pass needs.
//! Single-threaded by design; determinism follows from evaluation order.

use crate::scalar::Scalar;
use ndarray::{concatenate, ArcArray, Array2, ArrayD, ArrayViewD, Axis, Ix2, Ix3, IxDyn, Slice};

pub type Value<S> = ArcArray<S, IxDyn>;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

type GradFn<S> = Box<dyn Fn(&ArrayD<S>) -> Vec<Option<ArrayD<S>>>>;

struct Node<S: Scalar> {
    value: Value<S>,
    parents: Vec<Var>,
    grad_fn: Option<GradFn<S>>,
    requires_grad: bool,
}

pub struct Tape<S: Scalar> {
    nodes: std::cell::RefCell<Vec<Node<S>>>,
}

/// Gradients keyed by tape node; interior-node grads are freed as the
/// backward sweep passes them.
pub struct Grads<S: Scalar> {
    by_node: Vec<Option<ArrayD<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn of(&self, v: Var) -> Option<&ArrayD<S>> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Numpy-style two-sided broadcast of shapes; panics on incompatibility
/// (shape bugs are programmer errors inside a hand-assembled graph).
fn broadcast_shapes(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("incompatible broadcast: {a:?} vs {b:?}"),
        };
    }
    out
}

/// Sum a broadcast gradient back down to `target` shape.
fn reduce_to_shape<S: Scalar>(g: &ArrayD<S>, target: &[usize]) -> ArrayD<S> {
    let mut out = g.to_owned();
    while out.ndim() > target.len() {
        out = out.sum_axis(Axis(0));
    }
    for (i, &t) in target.iter().enumerate() {
        if t == 1 && out.shape()[i] != 1 {
            out = out.sum_axis(Axis(i)).insert_axis(Axis(i));
        }
    }
    out
}

fn bcast<'a, S: Scalar>(v: &'a Value<S>, shape: &[usize]) -> ArrayViewD<'a, S> {
    v.broadcast(IxDyn(shape)).expect("checked by broadcast_shapes")
}

/// Rewrite an array into standard (row-major contiguous) layout if it is not
/// already; flattening views over stored values depend on it.
fn standardize<S: Scalar>(a: ArrayD<S>) -> ArrayD<S> {
    if a.is_standard_layout() {
        a
    } else {
        let shape = a.shape().to_vec();
        let flat: Vec<S> = a.iter().copied().collect();
        ArrayD::from_shape_vec(IxDyn(&shape), flat).expect("standardize preserves shape")
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: std::cell::RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: ArrayD<S>, parents: Vec<Var>, grad_fn: Option<GradFn<S>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = grad_fn.is_some();
        nodes.push(Node {
            value: value.into_shared(),
            parents,
            grad_fn,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Leaf with gradient tracking (model parameter).
    pub fn leaf(&self, value: ArrayD<S>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: value.into_shared(),
            parents: vec![],
            grad_fn: None,
            requires_grad: true,
        });
        Var(nodes.len() - 1)
    }

    /// Leaf without gradient tracking (data, noise, masks).
    pub fn constant(&self, value: ArrayD<S>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: value.into_shared(),
            parents: vec![],
            grad_fn: None,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    pub fn val(&self, v: Var) -> Value<S> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Record an op. `grads` receives the upstream gradient and must return
    /// one Option per parent, aligned; None for parents that don't need it.
    fn op(&self, value: ArrayD<S>, parents: Vec<Var>, grads: GradFn<S>) -> Var {
        let any = parents.iter().any(|p| self.requires(*p));
        self.push(value, parents, if any { Some(grads) } else { None })
    }

    // ---- elementwise / binary ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        let sh = broadcast_shapes(va.shape(), vb.shape());
        let value = (&bcast(&va, &sh) + &bcast(&vb, &sh)).to_owned();
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let (na, nb) = (self.requires(a), self.requires(b));
        self.op(
            value,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    na.then(|| reduce_to_shape(g, &sa)),
                    nb.then(|| reduce_to_shape(g, &sb)),
                ]
            }),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        let sh = broadcast_shapes(va.shape(), vb.shape());
        let value = (&bcast(&va, &sh) - &bcast(&vb, &sh)).to_owned();
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let (na, nb) = (self.requires(a), self.requires(b));
        self.op(
            value,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    na.then(|| reduce_to_shape(g, &sa)),
                    nb.then(|| reduce_to_shape(&(-g.to_owned()), &sb)),
                ]
            }),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        let sh = broadcast_shapes(va.shape(), vb.shape());
        let value = (&bcast(&va, &sh) * &bcast(&vb, &sh)).to_owned();
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let (na, nb) = (self.requires(a), self.requires(b));
        let (ca, cb) = (va.clone(), vb.clone());
        let shc = sh.clone();
        self.op(
            value,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    na.then(|| reduce_to_shape(&(g * &bcast(&cb, &shc)), &sa)),
                    nb.then(|| reduce_to_shape(&(g * &bcast(&ca, &shc)), &sb)),
                ]
            }),
        )
    }

    pub fn neg(&self, a: Var) -> Var {
        let value = -self.val(a).to_owned();
        self.op(value, vec![a], Box::new(move |g| vec![Some(-g.to_owned())]))
    }

    pub fn scale(&self, a: Var, c: S) -> Var {
        let value = self.val(a).mapv(|x| x * c);
        self.op(value, vec![a], Box::new(move |g| vec![Some(g.mapv(|x| x * c))]))
    }

    pub fn add_scalar(&self, a: Var, c: S) -> Var {
        let value = self.val(a).mapv(|x| x + c);
        self.op(value, vec![a], Box::new(move |g| vec![Some(g.to_owned())]))
    }

    pub fn exp(&self, a: Var) -> Var {
        let value = self.val(a).mapv(|x| x.exp());
        let out = value.clone().into_shared();
        self.op(value, vec![a], Box::new(move |g| vec![Some(g * &out.view())]))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let one = S::one();
        let value = self.val(a).mapv(|x| one / (one + (-x).exp()));
        let out = value.clone().into_shared();
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                let d = out.mapv(|y| y * (S::one() - y));
                vec![Some(g * &d)]
            }),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let value = self.val(a).mapv(|x| x.tanh());
        let out = value.clone().into_shared();
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                let d = out.mapv(|y| S::one() - y * y);
                vec![Some(g * &d)]
            }),
        )
    }

    /// Gaussian error linear unit, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        let va = self.val(a);
        let k = S::from_f(0.797_884_560_802_865_4); // sqrt(2/pi)
        let c3 = S::from_f(0.044715);
        let half = S::from_f(0.5);
        let value = va.mapv(|x| {
            let u = k * (x + c3 * x * x * x);
            half * x * (S::one() + u.tanh())
        });
        let xin = va.clone();
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                let d = xin.mapv(|x| {
                    let u = k * (x + c3 * x * x * x);
                    let t = u.tanh();
                    let du = k * (S::one() + S::from_f(3.0) * c3 * x * x);
                    half * (S::one() + t) + half * x * (S::one() - t * t) * du
                });
                vec![Some(g * &d)]
            }),
        )
    }

    pub fn clamp(&self, a: Var, lo: S, hi: S) -> Var {
        let va = self.val(a);
        let value = va.mapv(|x| x.max(lo).min(hi));
        let xin = va.clone();
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                let mask = xin.mapv(|x| if x >= lo && x <= hi { S::one() } else { S::zero() });
                vec![Some(g * &mask)]
            }),
        )
    }

    // ---- shape ----

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let va = self.val(a);
        let old = va.shape().to_vec();
        let value = standardize(va.to_owned())
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape must preserve element count");
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                vec![Some(
                    g.to_owned()
                        .into_shape_with_order(IxDyn(&old))
                        .expect("grad reshape"),
                )]
            }),
        )
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Var {
        let va = self.val(a);
        let value = va
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let mut inv = vec![0usize; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inv[ax] = i;
        }
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                vec![Some(
                    g.view()
                        .permuted_axes(IxDyn(&inv))
                        .as_standard_layout()
                        .to_owned(),
                )]
            }),
        )
    }

    /// Broadcast to a larger shape (owned copy).
    pub fn expand(&self, a: Var, shape: &[usize]) -> Var {
        let va = self.val(a);
        let old = va.shape().to_vec();
        let value = bcast(&va, shape).to_owned();
        self.op(
            value,
            vec![a],
            Box::new(move |g| vec![Some(reduce_to_shape(g, &old))]),
        )
    }

    pub fn concat(&self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let vals: Vec<Value<S>> = parts.iter().map(|p| self.val(*p)).collect();
        let views: Vec<ArrayViewD<S>> = vals.iter().map(|v| v.view()).collect();
        // concatenate() grows along `axis`, which leaves the result in a
        // non-standard layout for axis > 0; every stored value must be
        // standard so shape-changing views over it stay valid.
        let value = standardize(concatenate(Axis(axis), &views).expect("concat shapes"));
        let lens: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
        let needs: Vec<bool> = parts.iter().map(|p| self.requires(*p)).collect();
        self.op(
            value,
            parts.to_vec(),
            Box::new(move |g| {
                let mut out = Vec::with_capacity(lens.len());
                let mut off = 0;
                for (i, &l) in lens.iter().enumerate() {
                    out.push(needs[i].then(|| {
                        g.slice_axis(Axis(axis), Slice::from(off..off + l)).to_owned()
                    }));
                    off += l;
                }
                out
            }),
        )
    }

    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let va = self.val(a);
        let full = va.shape().to_vec();
        let value = va
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                let mut out = ArrayD::zeros(IxDyn(&full));
                out.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                    .assign(g);
                vec![Some(out)]
            }),
        )
    }

    // ---- linear algebra ----

    /// 2-D matrix product: (m,k) x (k,n) -> (m,n).
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        let a2 = va.view().into_dimensionality::<Ix2>().expect("matmul lhs 2-D");
        let b2 = vb.view().into_dimensionality::<Ix2>().expect("matmul rhs 2-D");
        let value = a2.dot(&b2).into_dyn();
        let (na, nb) = (self.requires(a), self.requires(b));
        let (ca, cb) = (va.clone(), vb.clone());
        self.op(
            value,
            vec![a, b],
            Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a2 = ca.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = cb.view().into_dimensionality::<Ix2>().unwrap();
                vec![
                    na.then(|| g2.dot(&b2.t()).into_dyn()),
                    nb.then(|| a2.t().dot(&g2).into_dyn()),
                ]
            }),
        )
    }

    /// Batched matrix product: (B,m,k) x (B,k,n) -> (B,m,n).
    pub fn bmm(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        let a3 = va.view().into_dimensionality::<Ix3>().expect("bmm lhs 3-D");
        let b3 = vb.view().into_dimensionality::<Ix3>().expect("bmm rhs 3-D");
        let (bs, m, k) = a3.dim();
        let (bs2, k2, n) = b3.dim();
        assert_eq!(bs, bs2, "bmm batch mismatch");
        assert_eq!(k, k2, "bmm inner-dim mismatch");
        let mut value = ndarray::Array3::<S>::zeros((bs, m, n));
        for i in 0..bs {
            ndarray::linalg::general_mat_mul(
                S::one(),
                &a3.index_axis(Axis(0), i),
                &b3.index_axis(Axis(0), i),
                S::zero(),
                &mut value.index_axis_mut(Axis(0), i),
            );
        }
        let (na, nb) = (self.requires(a), self.requires(b));
        let (ca, cb) = (va.clone(), vb.clone());
        self.op(
            value.into_dyn(),
            vec![a, b],
            Box::new(move |g| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let a3 = ca.view().into_dimensionality::<Ix3>().unwrap();
                let b3 = cb.view().into_dimensionality::<Ix3>().unwrap();
                let da = na.then(|| {
                    let mut da = ndarray::Array3::<S>::zeros(a3.dim());
                    for i in 0..bs {
                        ndarray::linalg::general_mat_mul(
                            S::one(),
                            &g3.index_axis(Axis(0), i),
                            &b3.index_axis(Axis(0), i).t(),
                            S::zero(),
                            &mut da.index_axis_mut(Axis(0), i),
                        );
                    }
                    da.into_dyn()
                });
                let db = nb.then(|| {
                    let mut db = ndarray::Array3::<S>::zeros(b3.dim());
                    for i in 0..bs {
                        ndarray::linalg::general_mat_mul(
                            S::one(),
                            &a3.index_axis(Axis(0), i).t(),
                            &g3.index_axis(Axis(0), i),
                            S::zero(),
                            &mut db.index_axis_mut(Axis(0), i),
                        );
                    }
                    db.into_dyn()
                });
                vec![da, db]
            }),
        )
    }

    // ---- reductions ----

    /// Sum of all elements; output shape [1].
    pub fn sum_all(&self, a: Var) -> Var {
        let va = self.val(a);
        let s: S = va.iter().copied().sum();
        let shape = va.shape().to_vec();
        let value = ArrayD::from_elem(IxDyn(&[1]), s);
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                let gv = g[[0]];
                vec![Some(ArrayD::from_elem(IxDyn(&shape), gv))]
            }),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.val(a).len();
        let s = self.sum_all(a);
        self.scale(s, S::one() / S::from_f(n as f64))
    }

    pub fn sum_axis(&self, a: Var, axis: usize) -> Var {
        let va = self.val(a);
        let value = va.sum_axis(Axis(axis));
        let full = va.shape().to_vec();
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                let expanded = g.view().insert_axis(Axis(axis));
                let out = expanded
                    .broadcast(IxDyn(&full))
                    .expect("sum_axis grad broadcast")
                    .to_owned();
                vec![Some(out)]
            }),
        )
    }

    /// Softmax over the last axis, numerically stabilized.
    pub fn softmax_last(&self, a: Var) -> Var {
        let va = self.val(a);
        let shape = va.shape().to_vec();
        let cols = *shape.last().expect("softmax needs >=1 axis");
        let rows = va.len() / cols;
        let flat = va
            .view()
            .into_shape_with_order((rows, cols))
            .expect("standard layout");
        let mut out = Array2::<S>::zeros((rows, cols));
        for r in 0..rows {
            let row = flat.row(r);
            let mx = row.iter().copied().fold(S::neg_infinity(), |a, b| a.max(b));
            let mut denom = S::zero();
            for c in 0..cols {
                let e = (row[c] - mx).exp();
                out[[r, c]] = e;
                denom += e;
            }
            let inv = S::one() / denom;
            for c in 0..cols {
                out[[r, c]] *= inv;
            }
        }
        let value = out.into_shape_with_order(IxDyn(&shape)).unwrap();
        let cached = value.clone().into_shared();
        self.op(
            value,
            vec![a],
            Box::new(move |g| {
                let y = cached
                    .view()
                    .into_shape_with_order((rows, cols))
                    .unwrap();
                let gf = g.view().into_shape_with_order((rows, cols)).unwrap();
                let mut dx = Array2::<S>::zeros((rows, cols));
                for r in 0..rows {
                    let mut dot = S::zero();
                    for c in 0..cols {
                        dot += gf[[r, c]] * y[[r, c]];
                    }
                    for c in 0..cols {
                        dx[[r, c]] = y[[r, c]] * (gf[[r, c]] - dot);
                    }
                }
                vec![Some(dx.into_shape_with_order(IxDyn(&cached.shape().to_vec())).unwrap())]
            }),
        )
    }

    /// Layer norm over the last axis with affine params gamma, beta (1-D).
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: S) -> Var {
        self.layer_norm_impl(x, Some((gamma, beta)), eps)
    }

    /// Layer norm over the last axis without affine params.
    pub fn layer_norm_plain(&self, x: Var, eps: S) -> Var {
        self.layer_norm_impl(x, None, eps)
    }

    fn layer_norm_impl(&self, x: Var, affine: Option<(Var, Var)>, eps: S) -> Var {
        let vx = self.val(x);
        let shape = vx.shape().to_vec();
        let cols = *shape.last().expect("layer_norm needs >=1 axis");
        let rows = vx.len() / cols;
        let flat = vx.view().into_shape_with_order((rows, cols)).unwrap();
        let mut xhat = Array2::<S>::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        let ncols = S::from_f(cols as f64);
        for r in 0..rows {
            let row = flat.row(r);
            let mean = row.iter().copied().sum::<S>() / ncols;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / ncols;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                xhat[[r, c]] = (row[c] - mean) * is;
            }
        }
        let gamma_val = affine.map(|(g, _)| self.val(g));
        let value2 = match (&gamma_val, affine.map(|(_, b)| self.val(b))) {
            (Some(gv), Some(bv)) => {
                let g1 = gv.view().into_shape_with_order(cols).unwrap();
                let b1 = bv.view().into_shape_with_order(cols).unwrap();
                let mut out = xhat.clone();
                for r in 0..rows {
                    for c in 0..cols {
                        out[[r, c]] = out[[r, c]] * g1[c] + b1[c];
                    }
                }
                out
            }
            _ => xhat.clone(),
        };
        let value = value2.into_shape_with_order(IxDyn(&shape)).unwrap();
        let xhat_s = xhat.into_shared();
        let needs_x = self.requires(x);
        let (parents, needs_g, needs_b) = match affine {
            Some((g, b)) => {
                let (ng, nb) = (self.requires(g), self.requires(b));
                (vec![x, g, b], ng, nb)
            }
            None => (vec![x], false, false),
        };
        let gamma_c = gamma_val.clone();
        self.op(
            value,
            parents,
            Box::new(move |g| {
                let gf = g.view().into_shape_with_order((rows, cols)).unwrap();
                let xh = xhat_s.view();
                let ncols = S::from_f(cols as f64);
                let dx = needs_x.then(|| {
                    let mut dx = Array2::<S>::zeros((rows, cols));
                    for r in 0..rows {
                        // dxhat = g * gamma (or g when plain)
                        let mut m1 = S::zero();
                        let mut m2 = S::zero();
                        let mut dxh = vec![S::zero(); cols];
                        for c in 0..cols {
                            let d = match &gamma_c {
                                Some(gv) => gf[[r, c]] * gv[[c]],
                                None => gf[[r, c]],
                            };
                            dxh[c] = d;
                            m1 += d;
                            m2 += d * xh[[r, c]];
                        }
                        m1 /= ncols;
                        m2 /= ncols;
                        for c in 0..cols {
                            dx[[r, c]] = inv_std[r] * (dxh[c] - m1 - xh[[r, c]] * m2);
                        }
                    }
                    dx.into_shape_with_order(IxDyn(&shape)).unwrap()
                });
                let mut out = vec![dx];
                if gamma_c.is_some() {
                    let dg = needs_g.then(|| {
                        let mut dg = vec![S::zero(); cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                dg[c] += gf[[r, c]] * xh[[r, c]];
                            }
                        }
                        ArrayD::from_shape_vec(IxDyn(&[cols]), dg).unwrap()
                    });
                    let db = needs_b.then(|| {
                        let mut db = vec![S::zero(); cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                db[c] += gf[[r, c]];
                            }
                        }
                        ArrayD::from_shape_vec(IxDyn(&[cols]), db).unwrap()
                    });
                    out.push(dg);
                    out.push(db);
                }
                out
            }),
        )
    }

    // ---- convolution support ----

    /// Unfold (B,C,H,W) into rows of k x k patches: (B*OH*OW, C*k*k), zero padding `pad`, stride 1.
    pub fn im2col(&self, x: Var, k: usize, pad: usize) -> Var {
        let vx = self.val(x);
        let x4 = vx.view().into_dimensionality::<ndarray::Ix4>().expect("im2col input 4-D");
        let (b, c, h, w) = x4.dim();
        let oh = h + 2 * pad + 1 - k;
        let ow = w + 2 * pad + 1 - k;
        let mut cols = Array2::<S>::zeros((b * oh * ow, c * k * k));
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (bi * oh + oy) * ow + ox;
                    for ci in 0..c {
                        for ky in 0..k {
                            let iy = (oy + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                cols[[row, (ci * k + ky) * k + kx]] =
                                    x4[[bi, ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        self.op(
            cols.into_dyn(),
            vec![x],
            Box::new(move |g| {
                let g2 = g.view().into_shape_with_order((b * oh * ow, c * k * k)).unwrap();
                let mut dx = ndarray::Array4::<S>::zeros((b, c, h, w));
                for bi in 0..b {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let row = (bi * oh + oy) * ow + ox;
                            for ci in 0..c {
                                for ky in 0..k {
                                    let iy = (oy + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        dx[[bi, ci, iy as usize, ix as usize]] +=
                                            g2[[row, (ci * k + ky) * k + kx]];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(dx.into_dyn())]
            }),
        )
    }

    /// Nearest-neighbor 2x upsample of (B,C,H,W).
    pub fn upsample_nearest2(&self, x: Var) -> Var {
        let vx = self.val(x);
        let x4 = vx.view().into_dimensionality::<ndarray::Ix4>().expect("upsample input 4-D");
        let (b, c, h, w) = x4.dim();
        let mut out = ndarray::Array4::<S>::zeros((b, c, 2 * h, 2 * w));
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    for x_ in 0..w {
                        let v = x4[[bi, ci, y, x_]];
                        out[[bi, ci, 2 * y, 2 * x_]] = v;
                        out[[bi, ci, 2 * y + 1, 2 * x_]] = v;
                        out[[bi, ci, 2 * y, 2 * x_ + 1]] = v;
                        out[[bi, ci, 2 * y + 1, 2 * x_ + 1]] = v;
                    }
                }
            }
        }
        self.op(
            out.into_dyn(),
            vec![x],
            Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                let mut dx = ndarray::Array4::<S>::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        for y in 0..h {
                            for x_ in 0..w {
                                dx[[bi, ci, y, x_]] = g4[[bi, ci, 2 * y, 2 * x_]]
                                    + g4[[bi, ci, 2 * y + 1, 2 * x_]]
                                    + g4[[bi, ci, 2 * y, 2 * x_ + 1]]
                                    + g4[[bi, ci, 2 * y + 1, 2 * x_ + 1]];
                            }
                        }
                    }
                }
                vec![Some(dx.into_dyn())]
            }),
        )
    }

    /// Bilinear resize of (B,C,Hin,Win) to (B,C,out,out), align_corners=true.
    /// Separable: out = R x C^T per channel, so backward is two small matmuls.
    pub fn resize_bilinear(&self, x: Var, out_side: usize) -> Var {
        let vx = self.val(x);
        let x4 = vx.view().into_dimensionality::<ndarray::Ix4>().expect("resize input 4-D");
        let (b, c, h, w) = x4.dim();
        let rmat = interp_matrix::<S>(out_side, h);
        let cmat = interp_matrix::<S>(out_side, w);
        let mut out = ndarray::Array4::<S>::zeros((b, c, out_side, out_side));
        for bi in 0..b {
            for ci in 0..c {
                let plane = x4.slice(ndarray::s![bi, ci, .., ..]);
                let tmp = rmat.dot(&plane); // (out, w)
                out.slice_mut(ndarray::s![bi, ci, .., ..])
                    .assign(&tmp.dot(&cmat.t()));
            }
        }
        let (rm, cm) = (rmat.clone(), cmat.clone());
        self.op(
            out.into_dyn(),
            vec![x],
            Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                let mut dx = ndarray::Array4::<S>::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        let plane = g4.slice(ndarray::s![bi, ci, .., ..]);
                        let tmp = rm.t().dot(&plane); // (h, out)
                        dx.slice_mut(ndarray::s![bi, ci, .., ..])
                            .assign(&tmp.dot(&cm));
                    }
                }
                vec![Some(dx.into_dyn())]
            }),
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root (shape [1] or single element).
    pub fn backward(&self, root: Var) -> Grads<S> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut by_node: Vec<Option<ArrayD<S>>> = vec![None; nodes.len()];
        by_node[root.0] = Some(ArrayD::from_elem(
            IxDyn(nodes[root.0].value.shape()),
            S::one(),
        ));
        for i in (0..=root.0).rev() {
            if by_node[i].is_none() {
                continue;
            }
            let node = &nodes[i];
            let Some(f) = &node.grad_fn else { continue };
            let g = by_node[i].take().expect("checked above");
            let parent_grads = f(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p.0].requires_grad {
                    continue;
                }
                match &mut by_node[p.0] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Grads { by_node }
    }

    /// Scalar readout of a single-element node.
    pub fn scalar(&self, v: Var) -> S {
        let val = self.val(v);
        assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        *val.iter().next().unwrap()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Row-interpolation matrix for align_corners=true bilinear resize.
fn interp_matrix<S: Scalar>(out: usize, inp: usize) -> Array2<S> {
    let mut m = Array2::<S>::zeros((out, inp));
    for o in 0..out {
        if inp == 1 {
            m[[o, 0]] = S::one();
            continue;
        }
        let src = if out == 1 {
            0.0
        } else {
            o as f64 * (inp as f64 - 1.0) / (out as f64 - 1.0)
        };
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        let frac = src - i0 as f64;
        m[[o, i0]] = m[[o, i0]] + S::from_f(1.0 - frac);
        m[[o, i1]] = m[[o, i1]] + S::from_f(frac);
    }
    m
}
