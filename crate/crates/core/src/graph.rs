//! Reverse-mode tape over [`Tensor`] values.
//!
//! A [`Graph`] is a Wengert list: every operation appends a node holding the
//! forward value and enough information to push adjoints back to its inputs.
//! The op set is exactly what the blocks in this crate need — this is not a
//! general autodiff framework.
//!
//! Usage pattern: create a `Graph`, add leaves with [`Graph::input`] (marking
//! trainable ones), build the computation through the op methods, call
//! [`Graph::backward`] on a scalar node, then read adjoints back with
//! [`Graph::adjoint`].

use crate::error::{Error, Result};
use crate::ssm;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Neg(VarId),
    Scale(VarId, f64),
    Matmul(VarId, VarId),
    Silu(VarId),
    Sigmoid(VarId),
    Softplus(VarId),
    SumAll(VarId),
    MeanAll(VarId),
    SoftmaxRows(VarId),
    /// out[i] = src[idx[i]]; duplicates allowed, backward scatter-adds.
    Gather {
        src: VarId,
        idx: Vec<usize>,
    },
    ConcatRows(VarId, VarId),
    /// [m x n] + [n], broadcast over rows.
    AddRowBias(VarId, VarId),
    /// rank-4 [t,c,h,w] + [c], broadcast over t,h,w.
    AddChannelBias(VarId, VarId),
    /// a * s with s a scalar node.
    ScaleByVar(VarId, VarId),
    /// Frame border padding: interior from `video`, 1-pixel ring from
    /// `theta` (one value per channel).
    PadFrames {
        video: VarId,
        theta: VarId,
    },
    /// 3x3 same-padding convolution applied independently per frame.
    Conv2dPerFrame {
        x: VarId,
        w: VarId,
        b: VarId,
    },
    /// Depthwise causal conv along the token axis; x [m x d], w [d x k], b [d].
    CausalConv1d {
        x: VarId,
        w: VarId,
        b: VarId,
    },
    /// Input-dependent SSM scan; see [`crate::ssm`] for the recurrence.
    SelectiveScan {
        x: VarId,
        delta: VarId,
        b: VarId,
        c: VarId,
        a: VarId,
        cache: ssm::ScanCache,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn req(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> VarId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that never receives gradient (embeddings, data, constants).
    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Adjoint of a node after [`Graph::backward`].
    pub fn adjoint(&self, id: VarId) -> Option<&[f64]> {
        self.nodes[id.0].value.adjoint()
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b), self.req(a) || self.req(b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b), self.req(a) || self.req(b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), self.req(a) || self.req(b))
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        let v = self.value(a).scale(-1.0);
        self.push(v, Op::Neg(a), self.req(a))
    }

    pub fn scale(&mut self, a: VarId, s: f64) -> VarId {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s), self.req(a))
    }

    pub fn silu(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a), self.req(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), self.req(a))
    }

    pub fn softplus(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a), self.req(a))
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), self.req(a))
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s / n), Op::MeanAll(a), self.req(a))
    }

    /// Mean squared error between two same-shape nodes.
    pub fn mse(&mut self, a: VarId, b: VarId) -> VarId {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    // ---- linear ----

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self
            .value(a)
            .matmul(self.value(b))
            .expect("graph matmul shape mismatch");
        self.push(v, Op::Matmul(a, b), self.req(a) || self.req(b))
    }

    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        assert_eq!(x.rank(), 2, "softmax_rows needs a matrix");
        let (m, n) = (x.shape()[0], x.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let row = x.row(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out.data_mut()[i * n + j] = e;
                z += e;
            }
            for j in 0..n {
                out.data_mut()[i * n + j] /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(a), self.req(a))
    }

    // ---- data movement ----

    /// out[i] = src[idx[i]] with the given output shape.
    pub fn gather(&mut self, src: VarId, idx: Vec<usize>, out_shape: &[usize]) -> VarId {
        let s = self.value(src);
        let n: usize = out_shape.iter().product();
        assert_eq!(n, idx.len(), "gather index length mismatch");
        let mut data = Vec::with_capacity(n);
        for &i in &idx {
            data.push(s.data()[i]);
        }
        let v = Tensor::new(out_shape.to_vec(), data).unwrap();
        self.push(v, Op::Gather { src, idx }, self.req(src))
    }

    pub fn concat_rows(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rank(), 2);
        assert_eq!(tb.rank(), 2);
        assert_eq!(ta.shape()[1], tb.shape()[1], "concat_rows width mismatch");
        let n = ta.shape()[1];
        let m = ta.shape()[0] + tb.shape()[0];
        let mut data = Vec::with_capacity(m * n);
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let v = Tensor::new(vec![m, n], data).unwrap();
        self.push(v, Op::ConcatRows(a, b), self.req(a) || self.req(b))
    }

    pub fn add_row_bias(&mut self, a: VarId, bias: VarId) -> VarId {
        let (ta, tb) = (self.value(a), self.value(bias));
        assert_eq!(ta.rank(), 2);
        assert_eq!(tb.shape(), &[ta.shape()[1]], "row bias width mismatch");
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut v = ta.clone();
        for i in 0..m {
            for j in 0..n {
                v.data_mut()[i * n + j] += tb.data()[j];
            }
        }
        v.set_adjoint(None);
        self.push(v, Op::AddRowBias(a, bias), self.req(a) || self.req(bias))
    }

    pub fn add_channel_bias(&mut self, video: VarId, bias: VarId) -> VarId {
        let (tv, tb) = (self.value(video), self.value(bias));
        assert_eq!(tv.rank(), 4);
        let (t, c, h, w) = dims4(tv.shape());
        assert_eq!(tb.shape(), &[c], "channel bias width mismatch");
        let mut v = tv.clone();
        for ti in 0..t {
            for ci in 0..c {
                let base = (ti * c + ci) * h * w;
                let bval = tb.data()[ci];
                for p in 0..h * w {
                    v.data_mut()[base + p] += bval;
                }
            }
        }
        v.set_adjoint(None);
        self.push(
            v,
            Op::AddChannelBias(video, bias),
            self.req(video) || self.req(bias),
        )
    }

    pub fn scale_by_var(&mut self, a: VarId, s: VarId) -> VarId {
        assert_eq!(self.value(s).numel(), 1, "scale_by_var needs scalar");
        let sv = self.value(s).data()[0];
        let v = self.value(a).scale(sv);
        self.push(v, Op::ScaleByVar(a, s), self.req(a) || self.req(s))
    }

    /// Pad every frame of a [t,c,h,w] video with a one-pixel ring holding
    /// theta[c]; output is [t,c,h+2,w+2].
    pub fn pad_frames(&mut self, video: VarId, theta: VarId) -> VarId {
        let tv = self.value(video);
        let tt = self.value(theta);
        assert_eq!(tv.rank(), 4);
        let (t, c, h, w) = dims4(tv.shape());
        assert_eq!(tt.shape(), &[c], "theta must hold one value per channel");
        let (hp, wp) = (h + 2, w + 2);
        let mut out = Tensor::zeros(&[t, c, hp, wp]);
        for ti in 0..t {
            for ci in 0..c {
                let th = tt.data()[ci];
                let ob = (ti * c + ci) * hp * wp;
                let ib = (ti * c + ci) * h * w;
                for i in 0..hp {
                    for j in 0..wp {
                        out.data_mut()[ob + i * wp + j] =
                            if i == 0 || j == 0 || i == hp - 1 || j == wp - 1 {
                                th
                            } else {
                                tv.data()[ib + (i - 1) * w + (j - 1)]
                            };
                    }
                }
            }
        }
        self.push(
            out,
            Op::PadFrames { video, theta },
            self.req(video) || self.req(theta),
        )
    }

    /// 3x3 zero-padded convolution per frame: x [t,cin,h,w], w [cout,cin,3,3],
    /// b [cout] -> [t,cout,h,w]. The kernel has no temporal extent.
    pub fn conv2d_per_frame(&mut self, x: VarId, w: VarId, b: VarId) -> VarId {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (t, cin, h, wd) = dims4(tx.shape());
        assert_eq!(tw.rank(), 4);
        let cout = tw.shape()[0];
        assert_eq!(tw.shape()[1], cin);
        assert_eq!(tw.shape()[2], 3);
        assert_eq!(tw.shape()[3], 3);
        assert_eq!(tb.shape(), &[cout]);
        let mut out = Tensor::zeros(&[t, cout, h, wd]);
        for ti in 0..t {
            for co in 0..cout {
                let ob = (ti * cout + co) * h * wd;
                for i in 0..h {
                    for j in 0..wd {
                        let mut acc = tb.data()[co];
                        for ci in 0..cin {
                            let ib = (ti * cin + ci) * h * wd;
                            let wb = (co * cin + ci) * 9;
                            for di in 0..3 {
                                let si = i as isize + di as isize - 1;
                                if si < 0 || si >= h as isize {
                                    continue;
                                }
                                for dj in 0..3 {
                                    let sj = j as isize + dj as isize - 1;
                                    if sj < 0 || sj >= wd as isize {
                                        continue;
                                    }
                                    acc += tw.data()[wb + di * 3 + dj]
                                        * tx.data()[ib + si as usize * wd + sj as usize];
                                }
                            }
                        }
                        out.data_mut()[ob + i * wd + j] = acc;
                    }
                }
            }
        }
        let rg = self.req(x) || self.req(w) || self.req(b);
        self.push(out, Op::Conv2dPerFrame { x, w, b }, rg)
    }

    /// Depthwise causal convolution along rows: x [m x d], w [d x k], b [d];
    /// out[t,i] = b[i] + sum_j w[i,j] * x[t-j,i] (terms with t-j < 0 dropped).
    pub fn causal_conv1d(&mut self, x: VarId, w: VarId, b: VarId) -> VarId {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (m, d) = (tx.shape()[0], tx.shape()[1]);
        assert_eq!(tw.shape()[0], d);
        let k = tw.shape()[1];
        assert_eq!(tb.shape(), &[d]);
        let mut out = Tensor::zeros(&[m, d]);
        for t in 0..m {
            for i in 0..d {
                let mut acc = tb.data()[i];
                for j in 0..k.min(t + 1) {
                    acc += tw.data()[i * k + j] * tx.data()[(t - j) * d + i];
                }
                out.data_mut()[t * d + i] = acc;
            }
        }
        let rg = self.req(x) || self.req(w) || self.req(b);
        self.push(out, Op::CausalConv1d { x, w, b }, rg)
    }

    /// Input-dependent selective scan (see [`crate::ssm::selective_scan_raw`]).
    /// Inputs: x [m x d], delta [m x d] (positive), b,c [m x n], a [d x n].
    pub fn selective_scan(
        &mut self,
        x: VarId,
        delta: VarId,
        b: VarId,
        c: VarId,
        a: VarId,
    ) -> VarId {
        let (y, cache) = ssm::selective_scan_raw(
            self.value(x),
            self.value(delta),
            self.value(b),
            self.value(c),
            self.value(a),
        );
        let rg = self.req(x) || self.req(delta) || self.req(b) || self.req(c) || self.req(a);
        self.push(
            y,
            Op::SelectiveScan {
                x,
                delta,
                b,
                c,
                a,
                cache,
            },
            rg,
        )
    }

    // ---- reverse pass ----

    /// Run the reverse pass from a scalar node, writing an adjoint buffer
    /// into every node's tensor.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::arg("backward", "loss must be scalar"));
        }
        if !self.value(loss).data()[0].is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|nd| vec![0.0; nd.value.numel()])
            .collect();
        grads[loss.0][0] = 1.0;

        for id in (0..n_nodes).rev() {
            // Nothing upstream of a non-requiring node can require gradient.
            if !self.nodes[id].requires_grad {
                continue;
            }
            // Inputs always precede outputs on the tape, so taking this
            // node's gradient out while writing into earlier slots is safe.
            let g = std::mem::take(&mut grads[id]);
            if g.iter().all(|&x| x == 0.0) {
                grads[id] = g;
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g, 1.0);
                    accumulate(&mut grads[b.0], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], &g, 1.0);
                    accumulate(&mut grads[b.0], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av: Vec<f64> = self.nodes[a.0].value.data().to_vec();
                    let bv = self.nodes[b.0].value.data();
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * bv[i];
                    }
                    for (i, &gi) in g.iter().enumerate() {
                        grads[b.0][i] += gi * av[i];
                    }
                }
                Op::Neg(a) => accumulate(&mut grads[a.0], &g, -1.0),
                Op::Scale(a, s) => accumulate(&mut grads[a.0], &g, *s),
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ta = &self.nodes[a.0].value;
                    let tb = &self.nodes[b.0].value;
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let p = tb.shape()[1];
                    // dA += G B^T ; dB += A^T G
                    for i in 0..m {
                        for kk in 0..k {
                            let mut s = 0.0;
                            for j in 0..p {
                                s += g[i * p + j] * tb.data()[kk * p + j];
                            }
                            grads[a.0][i * k + kk] += s;
                        }
                    }
                    for kk in 0..k {
                        for j in 0..p {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += ta.data()[i * k + kk] * g[i * p + j];
                            }
                            grads[b.0][kk * p + j] += s;
                        }
                    }
                }
                Op::Silu(a) => {
                    let a = *a;
                    let av = self.nodes[a.0].value.data();
                    for (i, &gi) in g.iter().enumerate() {
                        let s = sigmoid(av[i]);
                        grads[a.0][i] += gi * s * (1.0 + av[i] * (1.0 - s));
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let yv = self.nodes[id].value.data();
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * yv[i] * (1.0 - yv[i]);
                    }
                }
                Op::Softplus(a) => {
                    let a = *a;
                    let av = self.nodes[a.0].value.data();
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * sigmoid(av[i]);
                    }
                }
                Op::SumAll(a) => {
                    let gi = g[0];
                    for x in grads[a.0].iter_mut() {
                        *x += gi;
                    }
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    let gi = g[0] / self.nodes[a.0].value.numel() as f64;
                    for x in grads[a.0].iter_mut() {
                        *x += gi;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let a = *a;
                    let y = &self.nodes[id].value;
                    let (m, n) = (y.shape()[0], y.shape()[1]);
                    for i in 0..m {
                        let mut dot = 0.0;
                        for j in 0..n {
                            dot += g[i * n + j] * y.data()[i * n + j];
                        }
                        for j in 0..n {
                            grads[a.0][i * n + j] +=
                                y.data()[i * n + j] * (g[i * n + j] - dot);
                        }
                    }
                }
                Op::Gather { src, idx } => {
                    let src = *src;
                    for (out_i, &in_i) in idx.iter().enumerate() {
                        grads[src.0][in_i] += g[out_i];
                    }
                }
                Op::ConcatRows(a, b) => {
                    let (a, b) = (*a, *b);
                    let na = self.nodes[a.0].value.numel();
                    for i in 0..na {
                        grads[a.0][i] += g[i];
                    }
                    for i in 0..self.nodes[b.0].value.numel() {
                        grads[b.0][i] += g[na + i];
                    }
                }
                Op::AddRowBias(a, bias) => {
                    let (a, bias) = (*a, *bias);
                    let n = self.nodes[bias.0].value.numel();
                    accumulate(&mut grads[a.0], &g, 1.0);
                    for (i, &gi) in g.iter().enumerate() {
                        grads[bias.0][i % n] += gi;
                    }
                }
                Op::AddChannelBias(video, bias) => {
                    let (video, bias) = (*video, *bias);
                    let shape = self.nodes[video.0].value.shape().to_vec();
                    let (t, c, h, w) = dims4(&shape);
                    accumulate(&mut grads[video.0], &g, 1.0);
                    for ti in 0..t {
                        for ci in 0..c {
                            let base = (ti * c + ci) * h * w;
                            let mut s = 0.0;
                            for p in 0..h * w {
                                s += g[base + p];
                            }
                            grads[bias.0][ci] += s;
                        }
                    }
                }
                Op::ScaleByVar(a, s) => {
                    let (a, s) = (*a, *s);
                    let sv = self.nodes[s.0].value.data()[0];
                    let av = self.nodes[a.0].value.data();
                    let mut ds = 0.0;
                    for (i, &gi) in g.iter().enumerate() {
                        ds += gi * av[i];
                    }
                    grads[s.0][0] += ds;
                    accumulate(&mut grads[a.0], &g, sv);
                }
                Op::PadFrames { video, theta } => {
                    let (video, theta) = (*video, *theta);
                    let shape = self.nodes[video.0].value.shape().to_vec();
                    let (t, c, h, w) = dims4(&shape);
                    let (hp, wp) = (h + 2, w + 2);
                    for ti in 0..t {
                        for ci in 0..c {
                            let ob = (ti * c + ci) * hp * wp;
                            let ib = (ti * c + ci) * h * w;
                            let mut ring = 0.0;
                            for i in 0..hp {
                                for j in 0..wp {
                                    let gv = g[ob + i * wp + j];
                                    if i == 0 || j == 0 || i == hp - 1 || j == wp - 1 {
                                        ring += gv;
                                    } else {
                                        grads[video.0][ib + (i - 1) * w + (j - 1)] += gv;
                                    }
                                }
                            }
                            grads[theta.0][ci] += ring;
                        }
                    }
                }
                Op::Conv2dPerFrame { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let xshape = self.nodes[x.0].value.shape().to_vec();
                    let (t, cin, h, wd) = dims4(&xshape);
                    let cout = self.nodes[w.0].value.shape()[0];
                    let xv: Vec<f64> = self.nodes[x.0].value.data().to_vec();
                    let wv: Vec<f64> = self.nodes[w.0].value.data().to_vec();
                    for ti in 0..t {
                        for co in 0..cout {
                            let ob = (ti * cout + co) * h * wd;
                            for i in 0..h {
                                for j in 0..wd {
                                    let gv = g[ob + i * wd + j];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    grads[b.0][co] += gv;
                                    for ci in 0..cin {
                                        let ib = (ti * cin + ci) * h * wd;
                                        let wb = (co * cin + ci) * 9;
                                        for di in 0..3 {
                                            let si = i as isize + di as isize - 1;
                                            if si < 0 || si >= h as isize {
                                                continue;
                                            }
                                            for dj in 0..3 {
                                                let sj = j as isize + dj as isize - 1;
                                                if sj < 0 || sj >= wd as isize {
                                                    continue;
                                                }
                                                let xi = ib + si as usize * wd + sj as usize;
                                                grads[w.0][wb + di * 3 + dj] += gv * xv[xi];
                                                grads[x.0][xi] += gv * wv[wb + di * 3 + dj];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::CausalConv1d { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (m, d) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1])
                    };
                    let k = self.nodes[w.0].value.shape()[1];
                    let xv: Vec<f64> = self.nodes[x.0].value.data().to_vec();
                    let wv: Vec<f64> = self.nodes[w.0].value.data().to_vec();
                    for t in 0..m {
                        for i in 0..d {
                            let gv = g[t * d + i];
                            if gv == 0.0 {
                                continue;
                            }
                            grads[b.0][i] += gv;
                            for j in 0..k.min(t + 1) {
                                grads[w.0][i * k + j] += gv * xv[(t - j) * d + i];
                                grads[x.0][(t - j) * d + i] += gv * wv[i * k + j];
                            }
                        }
                    }
                }
                Op::SelectiveScan {
                    x,
                    delta,
                    b,
                    c,
                    a,
                    cache,
                } => {
                    let (x, delta, b, c, a) = (*x, *delta, *b, *c, *a);
                    let out = ssm::selective_scan_backward(
                        self.nodes[x.0].value.data(),
                        self.nodes[delta.0].value.data(),
                        self.nodes[b.0].value.data(),
                        self.nodes[c.0].value.data(),
                        self.nodes[a.0].value.data(),
                        cache,
                        &g,
                        self.nodes[x.0].value.shape()[0],
                        self.nodes[x.0].value.shape()[1],
                        self.nodes[a.0].value.shape()[1],
                    );
                    accumulate(&mut grads[x.0], &out.dx, 1.0);
                    accumulate(&mut grads[delta.0], &out.ddelta, 1.0);
                    accumulate(&mut grads[b.0], &out.db, 1.0);
                    accumulate(&mut grads[c.0], &out.dc, 1.0);
                    accumulate(&mut grads[a.0], &out.da, 1.0);
                }
            }
            grads[id] = g;
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.set_adjoint(Some(g));
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected rank-4 tensor");
    (shape[0], shape[1], shape[2], shape[3])
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]; softplus(inv_softplus(y)) == y for y > 0.
pub(crate) fn inv_softplus(y: f64) -> f64 {
    assert!(y > 0.0);
    y.exp_m1().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::Rng;

    #[test]
    fn sum_of_squares_gradient() {
        let mut rng = Rng::new(3);
        let x = Tensor::randn(&[4, 3], &mut rng, 1.0);
        let mut g = Graph::new();
        let xv = g.input(x.clone(), true);
        let sq = g.mul(xv, xv);
        let loss = g.sum_all(sq);
        g.backward(loss).unwrap();
        let adj = g.adjoint(xv).unwrap();
        for (a, &xi) in adj.iter().zip(x.data()) {
            assert!((a - 2.0 * xi).abs() < 1e-12);
        }
    }

    #[test]
    fn every_op_passes_grad_check_over_seeds() {
        // One scalar loss routed through each op; 20 seeds apiece.
        for seed in 0..20u64 {
            let mut rng = Rng::new(seed);
            let x = Tensor::randn(&[3, 4], &mut rng, 1.0);
            let w = Tensor::randn(&[4, 2], &mut rng, 1.0);
            let err = grad_check(
                |g, xv| {
                    let wv = g.constant(w.clone());
                    let y = g.matmul(xv, wv);
                    let s = g.silu(y);
                    let p = g.softmax_rows(s);
                    let sp = g.softplus(p);
                    let sg = g.sigmoid(sp);
                    let m = g.mul(sg, sg);
                    g.mean_all(m)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: max rel err {err}");
        }
    }

    #[test]
    fn movement_ops_grad_check() {
        let mut rng = Rng::new(17);
        let x = Tensor::randn(&[2, 2, 2, 3], &mut rng, 1.0);
        let theta = Tensor::randn(&[2], &mut rng, 1.0);
        let err = grad_check(
            |g, xv| {
                let th = g.constant(theta.clone());
                let padded = g.pad_frames(xv, th);
                let n = g.value(padded).numel();
                let idx: Vec<usize> = (0..n).rev().collect();
                let shape = g.value(padded).shape().to_vec();
                let rev = g.gather(padded, idx, &shape);
                let s = g.silu(rev);
                g.mean_all(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");

        // theta path
        let err = grad_check(
            |g, th| {
                let xv = g.constant(x.clone());
                let padded = g.pad_frames(xv, th);
                g.sum_all(padded)
            },
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "theta max rel err {err}");
    }

    #[test]
    fn conv_ops_grad_check() {
        let mut rng = Rng::new(23);
        let x = Tensor::randn(&[2, 2, 4, 4], &mut rng, 1.0);
        let w = Tensor::randn(&[3, 2, 3, 3], &mut rng, 0.5);
        let b = Tensor::randn(&[3], &mut rng, 0.5);
        let err = grad_check(
            |g, wv| {
                let xv = g.constant(x.clone());
                let bv = g.constant(b.clone());
                let y = g.conv2d_per_frame(xv, wv, bv);
                let s = g.silu(y);
                g.mean_all(s)
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "conv2d w err {err}");

        let xt = Tensor::randn(&[6, 3], &mut rng, 1.0);
        let wt = Tensor::randn(&[3, 4], &mut rng, 0.5);
        let bt = Tensor::randn(&[3], &mut rng, 0.5);
        let err = grad_check(
            |g, xv| {
                let wv = g.constant(wt.clone());
                let bv = g.constant(bt.clone());
                let y = g.causal_conv1d(xv, wv, bv);
                let s = g.silu(y);
                g.mean_all(s)
            },
            &xt,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "causal conv x err {err}");
    }

    #[test]
    fn broadcast_and_scalar_ops_grad_check() {
        let mut rng = Rng::new(31);
        let x = Tensor::randn(&[3, 4], &mut rng, 1.0);
        let bias = Tensor::randn(&[4], &mut rng, 1.0);
        let err = grad_check(
            |g, bv| {
                let xv = g.constant(x.clone());
                let y = g.add_row_bias(xv, bv);
                let z = g.mul(y, y);
                g.mean_all(z)
            },
            &bias,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4);

        let s = Tensor::scalar(0.7);
        let err = grad_check(
            |g, sv| {
                let xv = g.constant(x.clone());
                let y = g.scale_by_var(xv, sv);
                let z = g.mul(y, y);
                g.mean_all(z)
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4);

        let v = Tensor::randn(&[2, 2, 3, 3], &mut rng, 1.0);
        let cb = Tensor::randn(&[2], &mut rng, 1.0);
        let err = grad_check(
            |g, cbv| {
                let xv = g.constant(v.clone());
                let y = g.add_channel_bias(xv, cbv);
                let z = g.mul(y, y);
                g.mean_all(z)
            },
            &cb,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn backward_rejects_nonscalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 2]), true);
        assert!(g.backward(x).is_err());
    }
}
