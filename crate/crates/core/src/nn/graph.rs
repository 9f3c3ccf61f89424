//! Define-by-run reverse-mode autodiff over NCHW tensors.
//!
//! A [`Graph`] lives for one forward/backward pass. Parameters enter as
//! leaves tagged with their store uid; stores listed with [`Graph::freeze`]
//! enter as constants and receive no gradient.

use std::collections::{HashMap, HashSet};

use super::params::{BufferUpdate, Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Real, Strides, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param {
        store: u64,
        id: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Upsample2x {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        per_sample: bool,
        batch_stats: bool,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    MseConst {
        x: Var,
        target: T,
    },
    L1 {
        a: Var,
        b: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Output geometry of a convolution.
pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    frozen: HashSet<u64>,
    param_vars: HashMap<(u64, usize), Var>,
    updates: Vec<BufferUpdate<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), frozen: HashSet::new(), param_vars: HashMap::new(), updates: Vec::new() }
    }

    /// Parameters of `store` enter this graph as constants.
    pub fn freeze(&mut self, store: &ParamStore<T>) {
        self.frozen.insert(store.uid());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item().as_f64()
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Same value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.uid(), id.0);
        if let Some(&v) = self.param_vars.get(&key) {
            return v;
        }
        let frozen = self.frozen.contains(&store.uid());
        let op = if frozen { Op::Input } else { Op::Param { store: key.0, id: key.1 } };
        let v = self.push(store.get(id).clone(), op, !frozen);
        self.param_vars.insert(key, v);
        v
    }

    pub(crate) fn record_update(&mut self, update: BufferUpdate<T>) {
        self.updates.push(update);
    }

    pub fn take_updates(&mut self) -> Vec<BufferUpdate<T>> {
        std::mem::take(&mut self.updates)
    }

    // ----------------------------------------------------------------- ops

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = self.value(x).dims4();
        let (o, ci, kh, kw) = self.value(w).dims4();
        assert_eq!(c, ci, "conv2d: input has {c} channels, kernel expects {ci}");
        let ho = conv_out(h, kh, stride, pad);
        let wo = conv_out(wd, kw, stride, pad);
        let ckk = c * kh * kw;
        let hw = ho * wo;
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        let direct = kh == 1 && kw == 1 && stride == 1 && pad == 0;
        let mut cols = if direct { Vec::new() } else { vec![T::zero(); ckk * hw] };
        {
            let xd = self.value(x).data();
            let wdat = self.value(w).data();
            let od = out.data_mut();
            for s in 0..n {
                let xs = &xd[s * c * h * wd..(s + 1) * c * h * wd];
                let src: &[T] = if direct {
                    xs
                } else {
                    im2col(xs, c, h, wd, kh, kw, stride, pad, ho, wo, &mut cols);
                    &cols
                };
                gemm(
                    o,
                    ckk,
                    hw,
                    T::one(),
                    wdat,
                    Strides(ckk, 1),
                    src,
                    Strides(hw, 1),
                    T::zero(),
                    &mut od[s * o * hw..(s + 1) * o * hw],
                    Strides(hw, 1),
                );
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data().to_vec();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += bd[(i / hw) % o];
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv2d { x, w, b, stride, pad }, rg)
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for p in 0..n * c {
                for i in 0..2 * h {
                    for j in 0..2 * w {
                        od[(p * 2 * h + i) * 2 * w + j] = xd[(p * h + i / 2) * w + j / 2];
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Upsample2x { x }, rg)
    }

    /// `k × k` max pooling; padded cells never win.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let ho = conv_out(h, k, stride, pad);
        let wo = conv_out(w, k, stride, pad);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for p in 0..n * c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = (T::neg_infinity(), usize::MAX);
                    for di in 0..k {
                        for dj in 0..k {
                            let (r, q) = ((i * stride + di) as isize - pad as isize, (j * stride + dj) as isize - pad as isize);
                            if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                continue;
                            }
                            let idx = (p * h + r as usize) * w + q as usize;
                            if best.1 == usize::MAX || xd[idx] > best.0 {
                                best = (xd[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::from_vec(&[n, c, ho, wo], out), Op::MaxPool { x, argmax }, rg)
    }

    /// Normalization with per-channel affine. `per_sample` selects instance
    /// statistics (per sample and channel) instead of batch statistics (per
    /// channel). `fixed` supplies precomputed per-channel `(mean, var)` and
    /// disables batch statistics entirely.
    pub fn norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        per_sample: bool,
        eps: f64,
        fixed: Option<(&[T], &[T])>,
    ) -> (Var, Vec<T>, Vec<T>) {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let groups = if per_sample { n * c } else { c };
        let eps = T::lit(eps);
        let xd = self.value(x).data();
        let (mean, var): (Vec<T>, Vec<T>) = match fixed {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                let mut mean = vec![T::zero(); groups];
                let mut var = vec![T::zero(); groups];
                let count = T::lit(if per_sample { hw } else { n * hw } as f64);
                for s in 0..n {
                    for ch in 0..c {
                        let g = if per_sample { s * c + ch } else { ch };
                        let sl = &xd[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                        mean[g] += sl.iter().copied().sum::<T>();
                    }
                }
                for m in &mut mean {
                    *m /= count;
                }
                for s in 0..n {
                    for ch in 0..c {
                        let g = if per_sample { s * c + ch } else { ch };
                        let sl = &xd[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                        let mu = mean[g];
                        var[g] += sl.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                    }
                }
                for v in &mut var {
                    *v /= count;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let g = if per_sample && fixed.is_none() { s * c + ch } else { ch };
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (xd[i] - mean[g]) * inv_std[g];
                    xhat[i] = xh;
                    out[i] = xh * gd[ch] + bd[ch];
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, h, w], out);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            out,
            Op::Norm { x, gamma, beta, per_sample: per_sample && fixed.is_none(), batch_stats: fixed.is_none(), xhat, inv_std },
            rg,
        );
        (v, mean, var)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::from_vec(t.shape(), t.data().iter().map(|&v| v.max(T::zero())).collect());
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::lit(slope);
        let t = self.value(x);
        let out = Tensor::from_vec(
            t.shape(),
            t.data().iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect(),
        );
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::from_vec(t.shape(), t.data().iter().map(|v| v.tanh()).collect());
        let rg = self.rg(x);
        self.push(out, Op::Tanh { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add: shape mismatch");
        let out = Tensor::from_vec(ta.shape(), ta.data().iter().zip(tb.data()).map(|(&p, &q)| p + q).collect());
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add { a, b }, rg)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, o) = (T::lit(scale), T::lit(shift));
        let t = self.value(x);
        let out = Tensor::from_vec(t.shape(), t.data().iter().map(|&v| v * s + o).collect());
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, scale: s }, rg)
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let inv = T::lit(1.0 / hw as f64);
        let xd = self.value(x).data();
        let out: Vec<T> = (0..n * c).map(|p| xd[p * hw..(p + 1) * hw].iter().copied().sum::<T>() * inv).collect();
        let rg = self.rg(x);
        self.push(Tensor::from_vec(&[n, c], out), Op::GlobalAvgPool { x }, rg)
    }

    /// `x [N, I] · wᵀ [I, O] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, i) = self.value(x).dims2();
        let (o, wi) = self.value(w).dims2();
        assert_eq!(i, wi, "linear: input width {i} vs weight {wi}");
        let mut out = Tensor::zeros(&[n, o]);
        gemm(
            n,
            i,
            o,
            T::one(),
            self.value(x).data(),
            Strides(i, 1),
            self.value(w).data(),
            Strides(1, i),
            T::zero(),
            out.data_mut(),
            Strides(o, 1),
        );
        let bd = self.value(b).data();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v += bd[k % o];
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(out, Op::Linear { x, w, b }, rg)
    }

    /// Mean cross-entropy of `logits [N, K]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (n, k) = self.value(logits).dims2();
        assert_eq!(n, labels.len(), "cross_entropy: {n} rows vs {} labels", labels.len());
        let probs = softmax_rows(self.value(logits).data(), k);
        let mut loss = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            assert!(l < k, "label {l} out of range for {k} classes");
            let row = &self.value(logits).data()[r * k..(r + 1) * k];
            loss -= log_softmax_at(row, l);
        }
        loss /= T::lit(n.max(1) as f64);
        let rg = self.rg(logits);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg)
    }

    /// `mean((x - target)²)` for a constant target.
    pub fn mse_const(&mut self, x: Var, target: f64) -> Var {
        let t = T::lit(target);
        let xd = self.value(x).data();
        let n = T::lit(xd.len().max(1) as f64);
        let loss = xd.iter().map(|&v| (v - t) * (v - t)).sum::<T>() / n;
        let rg = self.rg(x);
        self.push(Tensor::scalar(loss), Op::MseConst { x, target: t }, rg)
    }

    /// `mean(|a - b|)`.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "l1: shape mismatch");
        let n = T::lit(ta.len().max(1) as f64);
        let loss = ta.data().iter().zip(tb.data()).map(|(&p, &q)| (p - q).abs()).sum::<T>() / n;
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(loss), Op::L1 { a, b }, rg)
    }

    /// `Σ wᵢ·sᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let terms: Vec<(Var, T)> = terms.iter().map(|&(v, w)| (v, T::lit(w))).collect();
        let mut s = T::zero();
        for &(v, w) in &terms {
            s += self.value(v).item() * w;
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Tensor::scalar(s), Op::WeightedSum { terms }, rg)
    }

    // ------------------------------------------------------------ backward

    /// Reverse pass from a scalar node; returns gradients of trainable
    /// parameters only.
    pub fn backward(&mut self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar node");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param { store, id } => {
                    out.map.insert((*store, *id), gy);
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                    let (n, c, h, wd) = self.value(x).dims4();
                    let (o, _, kh, kw) = self.value(w).dims4();
                    let (_, _, ho, wo) = gy.dims4();
                    let hw = ho * wo;
                    let ckk = c * kh * kw;
                    let direct = kh == 1 && kw == 1 && stride == 1 && pad == 0;
                    let xd = self.value(x).data();
                    let wdat = self.value(w).data();
                    let gd = gy.data();
                    let need_x = self.rg(x);
                    let need_w = self.rg(w);
                    let mut gw = if need_w { Some(Tensor::zeros(self.value(w).shape())) } else { None };
                    let mut gx = if need_x { Some(Tensor::zeros(&[n, c, h, wd])) } else { None };
                    let mut cols = if direct { Vec::new() } else { vec![T::zero(); ckk * hw] };
                    let mut dcols = if direct || !need_x { Vec::new() } else { vec![T::zero(); ckk * hw] };
                    for s in 0..n {
                        let gs = &gd[s * o * hw..(s + 1) * o * hw];
                        if let Some(gw) = gw.as_mut() {
                            let xs = &xd[s * c * h * wd..(s + 1) * c * h * wd];
                            let src: &[T] = if direct {
                                xs
                            } else {
                                im2col(xs, c, h, wd, kh, kw, stride, pad, ho, wo, &mut cols);
                                &cols
                            };
                            gemm(
                                o,
                                hw,
                                ckk,
                                T::one(),
                                gs,
                                Strides(hw, 1),
                                src,
                                Strides(1, hw),
                                T::one(),
                                gw.data_mut(),
                                Strides(ckk, 1),
                            );
                        }
                        if let Some(gx) = gx.as_mut() {
                            let gxs = &mut gx.data_mut()[s * c * h * wd..(s + 1) * c * h * wd];
                            if direct {
                                gemm(c, o, hw, T::one(), wdat, Strides(1, ckk), gs, Strides(hw, 1), T::zero(), gxs, Strides(hw, 1));
                            } else {
                                gemm(
                                    ckk,
                                    o,
                                    hw,
                                    T::one(),
                                    wdat,
                                    Strides(1, ckk),
                                    gs,
                                    Strides(hw, 1),
                                    T::zero(),
                                    &mut dcols,
                                    Strides(hw, 1),
                                );
                                col2im(&dcols, c, h, wd, kh, kw, stride, pad, ho, wo, gxs);
                            }
                        }
                    }
                    let gb = b.filter(|&b| self.rg(b)).map(|_| {
                        let mut gb = vec![T::zero(); o];
                        for (i, &v) in gd.iter().enumerate() {
                            gb[(i / hw) % o] += v;
                        }
                        Tensor::from_vec(&[o], gb)
                    });
                    if let Some(gx) = gx {
                        accumulate(&mut grads, x, gx);
                    }
                    if let Some(gw) = gw {
                        accumulate(&mut grads, w, gw);
                    }
                    if let (Some(b), Some(gb)) = (b, gb) {
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Upsample2x { x } => {
                    let x = *x;
                    let (n, c, h, w) = self.value(x).dims4();
                    let mut gx = Tensor::zeros(&[n, c, h, w]);
                    let gd = gy.data();
                    let gxd = gx.data_mut();
                    for p in 0..n * c {
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                gxd[(p * h + i / 2) * w + j / 2] += gd[(p * 2 * h + i) * 2 * w + j];
                            }
                        }
                    }
                    accumulate(&mut grads, x, gx);
                }
                Op::MaxPool { x, argmax } => {
                    let x = *x;
                    let mut gx = Tensor::zeros(self.value(x).shape());
                    let gxd = gx.data_mut();
                    for (&i, &g) in argmax.iter().zip(gy.data()) {
                        gxd[i] += g;
                    }
                    accumulate(&mut grads, x, gx);
                }
                Op::Norm { x, gamma, beta, per_sample, batch_stats, xhat, inv_std } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let (n, c, h, w) = self.value(x).dims4();
                    let hw = h * w;
                    let gd = gy.data();
                    let gam = self.value(gamma).data();
                    let mut ggamma = vec![T::zero(); c];
                    let mut gbeta = vec![T::zero(); c];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            for i in base..base + hw {
                                ggamma[ch] += gd[i] * xhat[i];
                                gbeta[ch] += gd[i];
                            }
                        }
                    }
                    if self.rg(x) {
                        let mut gx = vec![T::zero(); gd.len()];
                        if *batch_stats {
                            let groups = if *per_sample { n * c } else { c };
                            let mut sum_d = vec![T::zero(); groups];
                            let mut sum_dx = vec![T::zero(); groups];
                            for s in 0..n {
                                for ch in 0..c {
                                    let g = if *per_sample { s * c + ch } else { ch };
                                    let base = (s * c + ch) * hw;
                                    for i in base..base + hw {
                                        let d = gd[i] * gam[ch];
                                        sum_d[g] += d;
                                        sum_dx[g] += d * xhat[i];
                                    }
                                }
                            }
                            let m = T::lit(if *per_sample { hw } else { n * hw } as f64);
                            for s in 0..n {
                                for ch in 0..c {
                                    let g = if *per_sample { s * c + ch } else { ch };
                                    let base = (s * c + ch) * hw;
                                    for i in base..base + hw {
                                        let d = gd[i] * gam[ch];
                                        gx[i] = inv_std[g] * (d - sum_d[g] / m - xhat[i] * sum_dx[g] / m);
                                    }
                                }
                            }
                        } else {
                            for s in 0..n {
                                for ch in 0..c {
                                    let base = (s * c + ch) * hw;
                                    for i in base..base + hw {
                                        gx[i] = gd[i] * gam[ch] * inv_std[ch];
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads, x, Tensor::from_vec(&[n, c, h, w], gx));
                    }
                    if self.rg(gamma) {
                        accumulate(&mut grads, gamma, Tensor::from_vec(&[c], ggamma));
                    }
                    if self.rg(beta) {
                        accumulate(&mut grads, beta, Tensor::from_vec(&[c], gbeta));
                    }
                }
                Op::Relu { x } => {
                    let x = *x;
                    let yd = node.value.data();
                    let gx: Vec<T> =
                        gy.data().iter().zip(yd).map(|(&g, &y)| if y > T::zero() { g } else { T::zero() }).collect();
                    accumulate(&mut grads, x, Tensor::from_vec(gy.shape(), gx));
                }
                Op::LeakyRelu { x, slope } => {
                    let (x, slope) = (*x, *slope);
                    let xd = self.value(x).data();
                    let gx: Vec<T> =
                        gy.data().iter().zip(xd).map(|(&g, &v)| if v > T::zero() { g } else { g * slope }).collect();
                    accumulate(&mut grads, x, Tensor::from_vec(gy.shape(), gx));
                }
                Op::Tanh { x } => {
                    let x = *x;
                    let yd = node.value.data();
                    let gx: Vec<T> = gy.data().iter().zip(yd).map(|(&g, &y)| g * (T::one() - y * y)).collect();
                    accumulate(&mut grads, x, Tensor::from_vec(gy.shape(), gx));
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        accumulate(&mut grads, a, gy.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, gy);
                    }
                }
                Op::Affine { x, scale } => {
                    let (x, scale) = (*x, *scale);
                    let gx: Vec<T> = gy.data().iter().map(|&g| g * scale).collect();
                    accumulate(&mut grads, x, Tensor::from_vec(gy.shape(), gx));
                }
                Op::GlobalAvgPool { x } => {
                    let x = *x;
                    let (n, c, h, w) = self.value(x).dims4();
                    let hw = h * w;
                    let inv = T::lit(1.0 / hw as f64);
                    let mut gx = vec![T::zero(); n * c * hw];
                    for (p, &g) in gy.data().iter().enumerate() {
                        for v in &mut gx[p * hw..(p + 1) * hw] {
                            *v = g * inv;
                        }
                    }
                    accumulate(&mut grads, x, Tensor::from_vec(&[n, c, h, w], gx));
                }
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (n, i) = self.value(x).dims2();
                    let (o, _) = self.value(w).dims2();
                    if self.rg(x) {
                        let mut gx = Tensor::zeros(&[n, i]);
                        gemm(
                            n,
                            o,
                            i,
                            T::one(),
                            gy.data(),
                            Strides(o, 1),
                            self.value(w).data(),
                            Strides(i, 1),
                            T::zero(),
                            gx.data_mut(),
                            Strides(i, 1),
                        );
                        accumulate(&mut grads, x, gx);
                    }
                    if self.rg(w) {
                        let mut gw = Tensor::zeros(&[o, i]);
                        gemm(
                            o,
                            n,
                            i,
                            T::one(),
                            gy.data(),
                            Strides(1, o),
                            self.value(x).data(),
                            Strides(i, 1),
                            T::zero(),
                            gw.data_mut(),
                            Strides(i, 1),
                        );
                        accumulate(&mut grads, w, gw);
                    }
                    if self.rg(b) {
                        let mut gb = vec![T::zero(); o];
                        for (k, &g) in gy.data().iter().enumerate() {
                            gb[k % o] += g;
                        }
                        accumulate(&mut grads, b, Tensor::from_vec(&[o], gb));
                    }
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let logits = *logits;
                    let (n, k) = self.value(logits).dims2();
                    let scale = gy.item() / T::lit(n.max(1) as f64);
                    let mut gx = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        gx[r * k + l] -= T::one();
                    }
                    for v in &mut gx {
                        *v *= scale;
                    }
                    accumulate(&mut grads, logits, Tensor::from_vec(&[n, k], gx));
                }
                Op::MseConst { x, target } => {
                    let (x, target) = (*x, *target);
                    let xd = self.value(x).data();
                    let scale = gy.item() * T::lit(2.0 / xd.len().max(1) as f64);
                    let gx: Vec<T> = xd.iter().map(|&v| (v - target) * scale).collect();
                    accumulate(&mut grads, x, Tensor::from_vec(self.value(x).shape(), gx));
                }
                Op::L1 { a, b } => {
                    let (a, b) = (*a, *b);
                    let (ad, bd) = (self.value(a).data(), self.value(b).data());
                    let scale = gy.item() / T::lit(ad.len().max(1) as f64);
                    let ga: Vec<T> = ad
                        .iter()
                        .zip(bd)
                        .map(|(&p, &q)| {
                            if p > q {
                                scale
                            } else if p < q {
                                -scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    let shape = self.value(a).shape().to_vec();
                    if self.rg(b) {
                        let gb: Vec<T> = ga.iter().map(|&v| -v).collect();
                        accumulate(&mut grads, b, Tensor::from_vec(&shape, gb));
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, Tensor::from_vec(&shape, ga));
                    }
                }
                Op::WeightedSum { terms } => {
                    let g = gy.item();
                    let terms: Vec<(Var, T)> = terms.clone();
                    for (v, w) in terms {
                        if self.rg(v) {
                            let shape = self.value(v).shape().to_vec();
                            accumulate(&mut grads, v, Tensor::full(&shape, g * w));
                        }
                    }
                }
            }
        }
        out
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_rows<T: Real>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (row, o) in logits.chunks(k).zip(out.chunks_mut(k)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (dst, &v) in o.iter_mut().zip(row) {
            *dst = (v - m).exp();
            s += *dst;
        }
        for dst in o.iter_mut() {
            *dst /= s;
        }
    }
    out
}

fn log_softmax_at<T: Real>(row: &[T], idx: usize) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
    row[idx] - lse
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let hw = ho * wo;
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    let line = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ch * h + ih as usize) * w..(ch * h + ih as usize + 1) * w];
                    for (ow, d) in line.iter_mut().enumerate() {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        *d = if iw < 0 || iw >= w as isize { T::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let hw = ho * wo;
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(ch * h + ih as usize) * w..(ch * h + ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}
