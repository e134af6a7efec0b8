//! Define-by-run reverse-mode autodiff.
//!
//! Every op records its output value and a closure mapping the output
//! gradient to parent gradients. Values are reference counted so closures can
//! hold on to the inputs they need without copying.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::params::ParamStore;
use super::tensor::{batch_to_channel_major, channel_to_batch_major, col2im, im2col, matmul, ConvGeom, Real, Tensor};

type BackFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackFn<T>>,
    requires_grad: bool,
    param: Option<(u64, usize)>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    param_cache: RefCell<HashMap<(u64, usize), Var>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, (u64, usize))>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for every parameter of `store`, indexed by parameter id.
    /// Parameters that did not take part in the loss get `None`.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = vec![None; store.len()];
        for &(node, (uid, pid)) in &self.params {
            if uid != store.uid() {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                match &mut out[pid] {
                    Some(acc) => acc.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), param_cache: RefCell::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape.clone()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "item() on a tensor with {} elements", val.len());
        val.data[0]
    }

    fn leaf(&self, value: Arc<Tensor<T>>, requires_grad: bool, param: Option<(u64, usize)>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents: vec![], backward: None, requires_grad, param });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.leaf(Arc::new(t), false, None)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&self, t: Tensor<T>) -> Var {
        self.leaf(Arc::new(t), true, None)
    }

    /// Binds parameter `id` of `store`. Frozen stores yield constants.
    pub fn param(&self, store: &ParamStore<T>, id: usize) -> Var {
        let key = (store.uid(), id);
        if let Some(&v) = self.param_cache.borrow().get(&key) {
            return v;
        }
        let v = self.leaf(store.value_arc(id), !store.is_frozen(), Some(key));
        self.param_cache.borrow_mut().insert(key, v);
        v
    }

    /// Same value, cut from the gradient tape.
    pub fn detach(&self, v: Var) -> Var {
        let val = self.value(v);
        self.leaf(val, false, None)
    }

    fn push(&self, value: Tensor<T>, parents: &[Var], backward: BackFn<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            value: Arc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        let out = &nodes[loss.0].value;
        assert_eq!(out.len(), 1, "backward expects a scalar loss");
        grads[loss.0] = Some(Tensor::full(&out.shape, T::one()));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            let Some(back) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let pg = back(&g);
            debug_assert_eq!(pg.len(), node.parents.len());
            for (&p, pgrad) in node.parents.iter().zip(pg) {
                let Some(pgrad) = pgrad else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pgrad.len(), nodes[p].value.len());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pgrad),
                    slot => *slot = Some(pgrad.reshape(&nodes[p].value.shape)),
                }
            }
        }
        let params = nodes.iter().enumerate().filter_map(|(i, nd)| nd.param.map(|k| (i, k))).collect();
        Gradients { grads, params }
    }

    // ---------------------------------------------------------------- shape ops

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let xv = self.value(x);
        let in_shape = xv.shape.clone();
        let out = Tensor::new(shape, xv.data.clone());
        self.push(out, &[x], Box::new(move |g| vec![Some(Tensor::new(&in_shape, g.data.clone()))]))
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Var {
        let vals: Vec<Arc<Tensor<T>>> = xs.iter().map(|&x| self.value(x)).collect();
        let base = &vals[0].shape;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let sizes: Vec<usize> = vals.iter().map(|v| v.shape[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &s) in vals.iter().zip(&sizes) {
                data.extend_from_slice(&v.data[o * s * inner..(o + 1) * s * inner]);
            }
        }
        let out = Tensor::new(&shape, data);
        let shapes: Vec<Vec<usize>> = vals.iter().map(|v| v.shape.clone()).collect();
        self.push(
            out,
            xs,
            Box::new(move |g| {
                let mut parts: Vec<Vec<T>> = sizes.iter().map(|&s| Vec::with_capacity(outer * s * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (p, &s) in parts.iter_mut().zip(&sizes) {
                        p.extend_from_slice(&g.data[off..off + s * inner]);
                        off += s * inner;
                    }
                }
                parts.into_iter().zip(&shapes).map(|(p, sh)| Some(Tensor::new(sh, p))).collect()
            }),
        )
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let shape = xv.shape.clone();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        assert!(start + len <= dim, "narrow out of range");
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&xv.data[(o * dim + start) * inner..(o * dim + start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.push(
            Tensor::new(&out_shape, data),
            &[x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&shape);
                for o in 0..outer {
                    gx.data[(o * dim + start) * inner..(o * dim + start + len) * inner]
                        .copy_from_slice(&g.data[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Picks rows of a 2D tensor: `out[i] = x[idx[i]]`.
    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape.len(), 2);
        let (rows, cols) = (xv.shape[0], xv.shape[1]);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            assert!(i < rows);
            data.extend_from_slice(&xv.data[i * cols..(i + 1) * cols]);
        }
        let idx = idx.to_vec();
        self.push(
            Tensor::new(&[idx.len(), cols], data),
            &[x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&[rows, cols]);
                for (k, &i) in idx.iter().enumerate() {
                    for c in 0..cols {
                        gx.data[i * cols + c] = gx.data[i * cols + c] + g.data[k * cols + c];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// `out[b] = x[b, idx[b]]` for a `[B, K]` tensor.
    pub fn pick(&self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape.len(), 2);
        let (b, k) = (xv.shape[0], xv.shape[1]);
        assert_eq!(idx.len(), b);
        let data = idx.iter().enumerate().map(|(r, &c)| xv.data[r * k + c]).collect();
        let idx = idx.to_vec();
        self.push(
            Tensor::new(&[b], data),
            &[x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&[b, k]);
                for (r, &c) in idx.iter().enumerate() {
                    gx.data[r * k + c] = g.data[r];
                }
                vec![Some(gx)]
            }),
        )
    }

    // ----------------------------------------------------------- elementwise ops

    fn binary(&self, a: Var, b: Var, f: fn(T, T) -> T, da: fn(T, T, T) -> T, db: fn(T, T, T) -> T) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "elementwise shape mismatch");
        let out = av.zip(&bv, f);
        self.push(
            out,
            &[a, b],
            Box::new(move |g| {
                let ga = Tensor::new(
                    &av.shape,
                    g.data.iter().zip(av.data.iter().zip(&bv.data)).map(|(&g, (&x, &y))| da(g, x, y)).collect(),
                );
                let gb = Tensor::new(
                    &bv.shape,
                    g.data.iter().zip(av.data.iter().zip(&bv.data)).map(|(&g, (&x, &y))| db(g, x, y)).collect(),
                );
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x)
    }

    fn unary(&self, x: Var, f: impl Fn(T) -> T, df: fn(T, T, T) -> T) -> Var {
        let xv = self.value(x);
        let out = xv.map(f);
        let yv = Arc::new(out.clone());
        self.push(
            out,
            &[x],
            Box::new(move |g| {
                vec![Some(Tensor::new(
                    &xv.shape,
                    g.data
                        .iter()
                        .zip(xv.data.iter().zip(&yv.data))
                        .map(|(&g, (&x, &y))| df(g, x, y))
                        .collect(),
                ))]
            }),
        )
    }

    pub fn neg(&self, x: Var) -> Var {
        self.unary(x, |v| -v, |g, _, _| -g)
    }

    pub fn scale(&self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        let xv = self.value(x);
        let out = xv.map(|v| v * s);
        self.push(out, &[x], Box::new(move |g| vec![Some(g.map(|v| v * s))]))
    }

    pub fn add_scalar(&self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        let xv = self.value(x);
        self.push(xv.map(|v| v + s), &[x], Box::new(|g| vec![Some(g.clone())]))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, |g, x, _| if x > T::zero() { g } else { T::zero() })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, |g, _, y| g * y * (T::one() - y))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |g, _, y| g * (T::one() - y * y))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |g, _, y| g * y)
    }

    pub fn abs(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.abs(),
            |g, x, _| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, |v| v * v, |g, x, _| g * (x + x))
    }

    // ------------------------------------------------------------- reductions

    pub fn sum(&self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape.clone();
        self.push(Tensor::scalar(xv.sum()), &[x], Box::new(move |g| vec![Some(Tensor::full(&shape, g.data[0]))]))
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over the last axis: `[.., k] -> [..]`.
    pub fn mean_last(&self, x: Var) -> Var {
        let xv = self.value(x);
        let k = *xv.shape.last().expect("mean_last on scalar");
        let rows = xv.len() / k.max(1);
        let inv = T::of(1.0 / k as f64);
        let data = (0..rows).map(|r| xv.data[r * k..(r + 1) * k].iter().copied().sum::<T>() * inv).collect();
        let out_shape = xv.shape[..xv.shape.len() - 1].to_vec();
        let in_shape = xv.shape.clone();
        self.push(
            Tensor::new(&out_shape, data),
            &[x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&in_shape);
                for r in 0..rows {
                    for c in 0..k {
                        gx.data[r * k + c] = g.data[r] * inv;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Minimum over the last axis with the winning index (lowest index on ties).
    /// The gradient flows through the winning entry only.
    pub fn min_last(&self, x: Var) -> (Var, Vec<usize>) {
        let xv = self.value(x);
        let k = *xv.shape.last().expect("min_last on scalar");
        let rows = xv.len() / k;
        let mut arg = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv.data[r * k..(r + 1) * k];
            let mut best = 0;
            for c in 1..k {
                if row[c] < row[best] {
                    best = c;
                }
            }
            arg.push(best);
            data.push(row[best]);
        }
        let out_shape = xv.shape[..xv.shape.len() - 1].to_vec();
        let in_shape = xv.shape.clone();
        let arg2 = arg.clone();
        let v = self.push(
            Tensor::new(&out_shape, data),
            &[x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&in_shape);
                for (r, &c) in arg2.iter().enumerate() {
                    gx.data[r * k + c] = g.data[r];
                }
                vec![Some(gx)]
            }),
        );
        (v, arg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self, x: Var) -> Var {
        let xv = self.value(x);
        let k = *xv.shape.last().expect("log_softmax on scalar");
        let rows = xv.len() / k;
        let mut out = Tensor::zeros(&xv.shape);
        for r in 0..rows {
            let row = &xv.data[r * k..(r + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for c in 0..k {
                out.data[r * k + c] = row[c] - lse;
            }
        }
        let yv = Arc::new(out.clone());
        self.push(
            out,
            &[x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&yv.shape);
                for r in 0..rows {
                    let gs: T = g.data[r * k..(r + 1) * k].iter().copied().sum();
                    for c in 0..k {
                        gx.data[r * k + c] = g.data[r * k + c] - yv.data[r * k + c].exp() * gs;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn softmax(&self, x: Var) -> Var {
        let ls = self.log_softmax(x);
        self.exp(ls)
    }

    // ------------------------------------------------------------ linear algebra

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let out = matmul(&av, false, &bv, false);
        self.push(
            out,
            &[a, b],
            Box::new(move |g| vec![Some(matmul(g, false, &bv, true)), Some(matmul(&av, true, g, false))]),
        )
    }

    /// `x [B, in] * w[out, in]^T + b[out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.shape.len(), 2, "linear expects [B, in]");
        let mut out = matmul(&xv, false, &wv, true);
        let n_out = wv.shape[0];
        let rows = xv.shape[0];
        if let Some(b) = b {
            let bv = self.value(b);
            for r in 0..rows {
                for c in 0..n_out {
                    out.data[r * n_out + c] = out.data[r * n_out + c] + bv.data[c];
                }
            }
        }
        let parents: Vec<Var> = match b {
            Some(b) => vec![x, w, b],
            None => vec![x, w],
        };
        let has_b = b.is_some();
        self.push(
            out,
            &parents,
            Box::new(move |g| {
                let gx = matmul(g, false, &wv, false);
                let gw = matmul(g, true, &xv, false);
                let mut res = vec![Some(gx), Some(gw)];
                if has_b {
                    let mut gb = Tensor::zeros(&[n_out]);
                    for r in 0..rows {
                        for c in 0..n_out {
                            gb.data[c] = gb.data[c] + g.data[r * n_out + c];
                        }
                    }
                    res.push(Some(gb));
                }
                res
            }),
        )
    }

    /// Adds a per-channel bias to `[N, C, H, W]`.
    pub fn add_channel_bias(&self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let (n, c) = (xv.shape[0], xv.shape[1]);
        let p: usize = xv.shape[2..].iter().product();
        let mut out = (*xv).clone();
        for bi in 0..n {
            for ci in 0..c {
                for v in &mut out.data[(bi * c + ci) * p..(bi * c + ci + 1) * p] {
                    *v = *v + bv.data[ci];
                }
            }
        }
        self.push(
            out,
            &[x, b],
            Box::new(move |g| {
                let mut gb = Tensor::zeros(&[c]);
                for bi in 0..n {
                    for ci in 0..c {
                        gb.data[ci] = gb.data[ci] + g.data[(bi * c + ci) * p..(bi * c + ci + 1) * p].iter().copied().sum();
                    }
                }
                vec![Some(g.clone()), Some(gb)]
            }),
        )
    }

    /// 2D convolution on `[N, C, H, W]` with weights `[O, C, k, k]`, square stride and padding.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.shape.len(), 4, "conv2d expects NCHW");
        let (n, c, h, wd) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        let (o, k) = (wv.shape[0], wv.shape[2]);
        assert_eq!(wv.shape[1], c, "conv2d channel mismatch");
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: k, stride, pad };
        let (ho, wo) = geom.out_hw();
        let p = ho * wo;
        let cols = im2col(&xv.data, n, geom);
        let ckk = geom.col_rows();
        let mut y = vec![T::zero(); o * n * p];
        T::gemm(o, ckk, n * p, T::one(), &wv.data, ckk as isize, 1, &cols, (n * p) as isize, 1, T::zero(), &mut y, (n * p) as isize, 1);
        let out = Tensor::new(&[n, o, ho, wo], channel_to_batch_major(&y, o, n, p));
        let cols = Arc::new(cols);
        let conv = self.push(
            out,
            &[x, w],
            Box::new(move |g| {
                let gy = batch_to_channel_major(&g.data, o, n, p);
                let mut gw = vec![T::zero(); o * ckk];
                T::gemm(o, n * p, ckk, T::one(), &gy, (n * p) as isize, 1, &cols, 1, (n * p) as isize, T::zero(), &mut gw, ckk as isize, 1);
                let mut gcols = vec![T::zero(); ckk * n * p];
                T::gemm(ckk, o, n * p, T::one(), &wv.data, 1, ckk as isize, &gy, (n * p) as isize, 1, T::zero(), &mut gcols, (n * p) as isize, 1);
                let gx = col2im(&gcols, n, geom);
                vec![Some(Tensor::new(&[n, c, h, wd], gx)), Some(Tensor::new(&wv.shape, gw))]
            }),
        );
        match b {
            Some(b) => self.add_channel_bias(conv, b),
            None => conv,
        }
    }

    /// Transposed convolution with weights `[C_in, C_out, k, k]`; output size
    /// `(H-1)*stride - 2*pad + k + output_pad`.
    pub fn conv_transpose2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, output_pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, cin, h, wd) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        let (cout, k) = (wv.shape[1], wv.shape[2]);
        assert_eq!(wv.shape[0], cin, "conv_transpose2d channel mismatch");
        let ho = (h - 1) * stride + k + output_pad - 2 * pad;
        let wo = (wd - 1) * stride + k + output_pad - 2 * pad;
        // The transposed conv is the adjoint of a forward conv on the output grid.
        let geom = ConvGeom { channels: cout, height: ho, width: wo, kernel: k, stride, pad };
        assert_eq!(geom.out_hw(), (h, wd), "transposed conv geometry mismatch");
        let p = h * wd;
        let ckk = geom.col_rows();
        let xcm = batch_to_channel_major(&xv.data, cin, n, p);
        let mut cols = vec![T::zero(); ckk * n * p];
        T::gemm(ckk, cin, n * p, T::one(), &wv.data, 1, ckk as isize, &xcm, (n * p) as isize, 1, T::zero(), &mut cols, (n * p) as isize, 1);
        let out = Tensor::new(&[n, cout, ho, wo], col2im(&cols, n, geom));
        let xcm = Arc::new(xcm);
        let conv = self.push(
            out,
            &[x, w],
            Box::new(move |g| {
                let gcols = im2col(&g.data, n, geom);
                let mut gx = vec![T::zero(); cin * n * p];
                T::gemm(cin, ckk, n * p, T::one(), &wv.data, ckk as isize, 1, &gcols, (n * p) as isize, 1, T::zero(), &mut gx, (n * p) as isize, 1);
                let mut gw = vec![T::zero(); cin * ckk];
                T::gemm(cin, n * p, ckk, T::one(), &xcm, (n * p) as isize, 1, &gcols, 1, (n * p) as isize, T::zero(), &mut gw, ckk as isize, 1);
                vec![Some(Tensor::new(&[n, cin, h, wd], channel_to_batch_major(&gx, cin, n, p))), Some(Tensor::new(&wv.shape, gw))]
            }),
        );
        match b {
            Some(b) => self.add_channel_bias(conv, b),
            None => conv,
        }
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c) = (xv.shape[0], xv.shape[1]);
        let p: usize = xv.shape[2..].iter().product();
        let inv = T::of(1.0 / p as f64);
        let data = (0..n * c).map(|i| xv.data[i * p..(i + 1) * p].iter().copied().sum::<T>() * inv).collect();
        let shape = xv.shape.clone();
        self.push(
            Tensor::new(&[n, c], data),
            &[x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&shape);
                for i in 0..n * c {
                    for v in &mut gx.data[i * p..(i + 1) * p] {
                        *v = g.data[i] * inv;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    // --------------------------------------------------------- sparse / spatial

    /// Max over groups of rows: `x [P, F]`, `segment[i]` is the output row of input row `i`.
    /// Empty segments produce zeros.
    pub fn segment_max(&self, x: Var, segment: &[usize], n_segments: usize) -> Var {
        let xv = self.value(x);
        let f = xv.shape[1];
        assert_eq!(segment.len(), xv.shape[0]);
        let mut out = vec![T::neg_infinity(); n_segments * f];
        let mut arg = vec![usize::MAX; n_segments * f];
        for (i, &s) in segment.iter().enumerate() {
            for j in 0..f {
                let v = xv.data[i * f + j];
                if v > out[s * f + j] {
                    out[s * f + j] = v;
                    arg[s * f + j] = i;
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&arg) {
            if *a == usize::MAX {
                *o = T::zero();
            }
        }
        let rows = xv.shape[0];
        self.push(
            Tensor::new(&[n_segments, f], out),
            &[x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&[rows, f]);
                for (k, &a) in arg.iter().enumerate() {
                    if a != usize::MAX {
                        let j = k % f;
                        gx.data[a * f + j] = gx.data[a * f + j] + g.data[k];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Scatters `x [P, F]` into a dense `[1, F, H, W]` grid at `cells[i] = row * W + col`.
    pub fn scatter_grid(&self, x: Var, cells: &[usize], height: usize, width: usize) -> Var {
        let xv = self.value(x);
        let f = xv.shape[1];
        let hw = height * width;
        let mut out = Tensor::zeros(&[1, f, height, width]);
        for (i, &cell) in cells.iter().enumerate() {
            for j in 0..f {
                out.data[j * hw + cell] = out.data[j * hw + cell] + xv.data[i * f + j];
            }
        }
        let cells = cells.to_vec();
        let rows = xv.shape[0];
        self.push(
            out,
            &[x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&[rows, f]);
                for (i, &cell) in cells.iter().enumerate() {
                    for j in 0..f {
                        gx.data[i * f + j] = g.data[j * hw + cell];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Bilinear sampling of `f [1, C, H, W]` (or `[C, H, W]`) at fractional pixel
    /// coordinates `(col, row)`, where integer coordinates address cell centers.
    /// Samples outside the grid read zeros. Output `[B, C, h, w]` with
    /// `coords.len() == B * h * w`.
    pub fn bilinear_sample(&self, f: Var, coords: &[(f64, f64)], batch: usize, h: usize, w: usize) -> Var {
        let fv = self.value(f);
        let nd = fv.shape.len();
        let (c, hh, ww) = (fv.shape[nd - 3], fv.shape[nd - 2], fv.shape[nd - 1]);
        assert_eq!(coords.len(), batch * h * w);
        let hw = hh * ww;
        let taps: Vec<[(usize, T); 4]> = coords.iter().map(|&(x, y)| bilinear_taps::<T>(x, y, hh, ww)).collect();
        let p = h * w;
        let mut out = Tensor::zeros(&[batch, c, h, w]);
        for (s, tap) in taps.iter().enumerate() {
            let (b, q) = (s / p, s % p);
            for ch in 0..c {
                let mut acc = T::zero();
                for &(idx, wt) in tap {
                    if wt != T::zero() {
                        acc = acc + wt * fv.data[ch * hw + idx];
                    }
                }
                out.data[(b * c + ch) * p + q] = acc;
            }
        }
        let fshape = fv.shape.clone();
        self.push(
            out,
            &[f],
            Box::new(move |g| {
                let mut gf = Tensor::zeros(&fshape);
                for (s, tap) in taps.iter().enumerate() {
                    let (b, q) = (s / p, s % p);
                    for ch in 0..c {
                        let gv = g.data[(b * c + ch) * p + q];
                        for &(idx, wt) in tap {
                            if wt != T::zero() {
                                gf.data[ch * hw + idx] = gf.data[ch * hw + idx] + wt * gv;
                            }
                        }
                    }
                }
                vec![Some(gf)]
            }),
        )
    }

    // ------------------------------------------------------------ fused losses

    /// Sum of weighted binary cross-entropy on logits. `weights` may be empty (all ones).
    pub fn bce_with_logits_sum(&self, logits: Var, targets: &Tensor<T>, weights: &[T]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len());
        let w = |i: usize| if weights.is_empty() { T::one() } else { weights[i] };
        let mut total = T::zero();
        for i in 0..lv.len() {
            let (x, t) = (lv.data[i], targets.data[i]);
            // max(x,0) - x t + log(1 + exp(-|x|))
            let l = x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p();
            total = total + w(i) * l;
        }
        let targets = targets.clone();
        let weights = weights.to_vec();
        self.push(
            Tensor::scalar(total),
            &[logits],
            Box::new(move |g| {
                let gx = Tensor::new(
                    &lv.shape,
                    (0..lv.len())
                        .map(|i| {
                            let wi = if weights.is_empty() { T::one() } else { weights[i] };
                            g.data[0] * wi * (sigmoid(lv.data[i]) - targets.data[i])
                        })
                        .collect(),
                );
                vec![Some(gx)]
            }),
        )
    }

    /// Penalty-reduced focal loss on heatmap logits, summed (not normalized).
    /// Cells with target exactly 1 are positives.
    pub fn focal_loss_sum(&self, logits: Var, targets: &Tensor<T>, alpha: i32, beta: i32) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len());
        let one = T::one();
        let a = T::of(alpha as f64);
        let mut total = T::zero();
        for i in 0..lv.len() {
            let x = lv.data[i];
            let p = sigmoid(x);
            let t = targets.data[i];
            // log p = -softplus(-x), log(1-p) = -softplus(x)
            if t >= one {
                total = total - (one - p).powi(alpha) * -softplus(-x);
            } else {
                total = total - (one - t).powi(beta) * p.powi(alpha) * -softplus(x);
            }
        }
        let targets = targets.clone();
        self.push(
            Tensor::scalar(total),
            &[logits],
            Box::new(move |g| {
                let gx = Tensor::new(
                    &lv.shape,
                    (0..lv.len())
                        .map(|i| {
                            let x = lv.data[i];
                            let p = sigmoid(x);
                            let t = targets.data[i];
                            let d = if t >= one {
                                // d/dx[-(1-p)^a log p]
                                a * (one - p).powi(alpha) * p * -softplus(-x) - (one - p).powi(alpha) * (one - p)
                            } else {
                                // d/dx[-(1-t)^b p^a log(1-p)]
                                let wgt = (one - t).powi(beta);
                                -wgt * (a * p.powi(alpha) * (one - p) * -softplus(x) - p.powi(alpha) * p)
                            };
                            g.data[0] * d
                        })
                        .collect(),
                );
                vec![Some(gx)]
            }),
        )
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))`, stable for large |x|.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Four (flat index, weight) taps; out-of-range taps get weight 0 and index 0.
pub fn bilinear_taps<T: Real>(x: f64, y: f64, h: usize, w: usize) -> [(usize, T); 4] {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut taps = [(0usize, T::zero()); 4];
    let corners = [(x0, y0, (1.0 - fx) * (1.0 - fy)), (x0 + 1.0, y0, fx * (1.0 - fy)), (x0, y0 + 1.0, (1.0 - fx) * fy), (x0 + 1.0, y0 + 1.0, fx * fy)];
    for (k, &(cx, cy, wt)) in corners.iter().enumerate() {
        if cx >= 0.0 && cy >= 0.0 && (cx as usize) < w && (cy as usize) < h {
            taps[k] = (cy as usize * w + cx as usize, T::of(wt));
        }
    }
    taps
}
