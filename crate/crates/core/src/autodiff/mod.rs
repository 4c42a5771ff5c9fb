//! Minimal reverse-mode autodiff over rank-1..4 tensors.
//!
//! Exactly the operation set the detector needs, nothing more. Values are
//! computed eagerly as nodes are pushed; `backward` walks the tape in
//! reverse. Generic over f32 (training) and f64 (gradient checks).

pub mod check;
pub mod kernels;
pub mod loss;

use crate::tensor::{Real, Tensor};
use loss::{LossComponents, LossCtx};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        x: NodeId,
        k: NodeId,
        stride: usize,
        pad: usize,
    },
    /// Per-channel standardization over H*W with learned scale/shift.
    NormChannels {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Silu(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    /// (C,H,W) * (C) -> (C,H,W)
    MulChannel { x: NodeId, v: NodeId },
    /// (C,H,W) * (1,H,W) -> (C,H,W)
    MulSpatial { x: NodeId, m: NodeId },
    /// (C,H,W) -> (C)
    GlobalAvgPool(NodeId),
    GlobalMaxPool { x: NodeId, argmax: Vec<usize> },
    /// (C,H,W) -> (1,H,W)
    ChannelMean(NodeId),
    ChannelMax { x: NodeId, argmax: Vec<usize> },
    /// (m,n) x (n) -> (m)
    MatVec { w: NodeId, x: NodeId },
    /// x + scalar bias (broadcast)
    AddBias { x: NodeId, b: NodeId },
    Upsample2(NodeId),
    ConcatChannels(NodeId, NodeId),
    /// 0.5 * sum(x^2) -> scalar
    HalfSumSquares(NodeId),
    DetectionLoss {
        heads: Vec<NodeId>,
        ctx: Box<LossCtx>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, stride: usize, pad: usize) -> NodeId {
        let value = kernels::conv2d(self.value(x), self.value(k), stride, pad);
        self.push(value, Op::Conv2d { x, k, stride, pad })
    }

    pub fn norm_channels(&mut self, x: NodeId, scale: NodeId, shift: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let (c, h, w) = xv.dims3();
        let n = h * w;
        let nt = T::from_f64(n as f64);
        let epst = T::from_f64(eps);
        let gamma = self.value(scale).data().to_vec();
        let beta = self.value(shift).data().to_vec();
        assert_eq!(gamma.len(), c, "norm scale length mismatch");
        assert_eq!(beta.len(), c, "norm shift length mismatch");

        let mut out = Tensor::zeros(&[c, h, w]);
        let mut means = Vec::with_capacity(c);
        let mut inv_stds = Vec::with_capacity(c);
        for ch in 0..c {
            let plane = xv.plane(ch);
            let mut sum = T::zero();
            for &v in plane {
                sum = sum + v;
            }
            let mean = sum / nt;
            let mut var = T::zero();
            for &v in plane {
                let d = v - mean;
                var = var + d * d;
            }
            let inv_std = T::one() / (var / nt + epst).sqrt();
            let out_plane = out.plane_mut(ch);
            for (o, &v) in out_plane.iter_mut().zip(plane) {
                *o = gamma[ch] * ((v - mean) * inv_std) + beta[ch];
            }
            means.push(mean);
            inv_stds.push(inv_std);
        }
        self.push(
            out,
            Op::NormChannels {
                x,
                scale,
                shift,
                mean: means,
                inv_std: inv_stds,
            },
        )
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v * loss::sigmoid(v));
        self.push(value, Op::Silu(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(loss::sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(av.shape(), data);
        self.push(value, Op::Add(a, b))
    }

    pub fn mul_channel(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let xv = self.value(x);
        let vv = self.value(v);
        let (c, h, w) = xv.dims3();
        assert_eq!(vv.len(), c, "channel vector length mismatch");
        let mut out = Tensor::zeros(&[c, h, w]);
        for ch in 0..c {
            let s = vv.data()[ch];
            for (o, &i) in out.plane_mut(ch).iter_mut().zip(xv.plane(ch)) {
                *o = i * s;
            }
        }
        self.push(out, Op::MulChannel { x, v })
    }

    pub fn mul_spatial(&mut self, x: NodeId, m: NodeId) -> NodeId {
        let xv = self.value(x);
        let mv = self.value(m);
        let (c, h, w) = xv.dims3();
        let (mc, mh, mw) = mv.dims3();
        assert_eq!((mc, mh, mw), (1, h, w), "spatial map shape mismatch");
        let mut out = Tensor::zeros(&[c, h, w]);
        let map = mv.plane(0);
        for ch in 0..c {
            for ((o, &i), &s) in out
                .plane_mut(ch)
                .iter_mut()
                .zip(xv.plane(ch))
                .zip(map.iter())
            {
                *o = i * s;
            }
        }
        self.push(out, Op::MulSpatial { x, m })
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (c, h, w) = xv.dims3();
        let nt = T::from_f64((h * w) as f64);
        let data = (0..c)
            .map(|ch| {
                let mut sum = T::zero();
                for &v in xv.plane(ch) {
                    sum = sum + v;
                }
                sum / nt
            })
            .collect();
        let value = Tensor::from_vec(&[c], data);
        self.push(value, Op::GlobalAvgPool(x))
    }

    pub fn global_max_pool(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (c, _, _) = xv.dims3();
        let mut data = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for ch in 0..c {
            let plane = xv.plane(ch);
            let mut best = plane[0];
            let mut best_i = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            data.push(best);
            argmax.push(best_i);
        }
        let value = Tensor::from_vec(&[c], data);
        self.push(value, Op::GlobalMaxPool { x, argmax })
    }

    pub fn channel_mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (c, h, w) = xv.dims3();
        let ct = T::from_f64(c as f64);
        let mut out = Tensor::zeros(&[1, h, w]);
        for ch in 0..c {
            for (o, &v) in out.plane_mut(0).iter_mut().zip(xv.plane(ch)) {
                *o = *o + v;
            }
        }
        for o in out.data_mut() {
            *o = *o / ct;
        }
        self.push(out, Op::ChannelMean(x))
    }

    pub fn channel_max(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (c, h, w) = xv.dims3();
        let mut out = Tensor::zeros(&[1, h, w]);
        let mut argmax = vec![0usize; h * w];
        {
            let out_plane = out.plane_mut(0);
            out_plane.copy_from_slice(xv.plane(0));
            for ch in 1..c {
                for (i, &v) in xv.plane(ch).iter().enumerate() {
                    if v > out_plane[i] {
                        out_plane[i] = v;
                        argmax[i] = ch;
                    }
                }
            }
        }
        self.push(out, Op::ChannelMax { x, argmax })
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let wv = self.value(w);
        let xv = self.value(x);
        let (m, n) = wv.dims2();
        assert_eq!(xv.len(), n, "matvec dimension mismatch");
        let data = (0..m)
            .map(|i| {
                let row = &wv.data()[i * n..(i + 1) * n];
                let mut acc = T::zero();
                for (&a, &b) in row.iter().zip(xv.data()) {
                    acc = acc + a * b;
                }
                acc
            })
            .collect();
        let value = Tensor::from_vec(&[m], data);
        self.push(value, Op::MatVec { w, x })
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let bv = self.value(b);
        assert_eq!(bv.len(), 1, "bias must be scalar");
        let bias = bv.data()[0];
        let value = self.value(x).map(|v| v + bias);
        self.push(value, Op::AddBias { x, b })
    }

    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let value = kernels::upsample2(self.value(x));
        self.push(value, Op::Upsample2(x))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        let (ca, ha, wa) = av.dims3();
        let (cb, hb, wb) = bv.dims3();
        assert_eq!((ha, wa), (hb, wb), "concat spatial mismatch");
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let value = Tensor::from_vec(&[ca + cb, ha, wa], data);
        self.push(value, Op::ConcatChannels(a, b))
    }

    pub fn half_sum_squares(&mut self, x: NodeId) -> NodeId {
        let mut acc = T::zero();
        for &v in self.value(x).data() {
            acc = acc + v * v;
        }
        let half = T::from_f64(0.5);
        self.push(Tensor::scalar(acc * half), Op::HalfSumSquares(x))
    }

    pub fn detection_loss(&mut self, heads: Vec<NodeId>, ctx: LossCtx) -> (NodeId, LossComponents) {
        let head_vals: Vec<&Tensor<T>> = heads.iter().map(|&h| self.value(h)).collect();
        let (total, comps) = loss::loss_forward(&head_vals, &ctx);
        let id = self.push(
            Tensor::scalar(total),
            Op::DetectionLoss {
                heads,
                ctx: Box::new(ctx),
            },
        );
        (id, comps)
    }

    /// Reverse sweep from a scalar root; returns one gradient slot per node.
    pub fn backward(&self, root: NodeId) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(T::one()));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { slots: grads }
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], target: NodeId, delta: Tensor<T>) {
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d { x, k, stride, pad } => {
                let xv = self.value(*x);
                let kv = self.value(*k);
                let dx = kernels::conv2d_grad_input(g, kv, xv.dims3(), *stride, *pad);
                let dk = kernels::conv2d_grad_kernel(g, xv, kv.dims4(), *stride, *pad);
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *k, dk);
            }
            Op::NormChannels {
                x,
                scale,
                shift,
                mean,
                inv_std,
            } => {
                let xv = self.value(*x);
                let gamma = self.value(*scale);
                let (c, h, w) = xv.dims3();
                let n = h * w;
                let nt = T::from_f64(n as f64);
                let mut dx = Tensor::zeros(&[c, h, w]);
                let mut dgamma = Tensor::zeros(&[c]);
                let mut dbeta = Tensor::zeros(&[c]);
                for ch in 0..c {
                    let xp = xv.plane(ch);
                    let gp = g.plane(ch);
                    let mu = mean[ch];
                    let istd = inv_std[ch];
                    let gam = gamma.data()[ch];
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for (&gv, &xval) in gp.iter().zip(xp) {
                        let xhat = (xval - mu) * istd;
                        sum_g = sum_g + gv;
                        sum_gx = sum_gx + gv * xhat;
                    }
                    dgamma.data_mut()[ch] = sum_gx;
                    dbeta.data_mut()[ch] = sum_g;
                    let mean_g = sum_g / nt;
                    let mean_gx = sum_gx / nt;
                    for ((d, &gv), &xval) in
                        dx.plane_mut(ch).iter_mut().zip(gp.iter()).zip(xp.iter())
                    {
                        let xhat = (xval - mu) * istd;
                        *d = gam * istd * (gv - mean_g - xhat * mean_gx);
                    }
                }
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *scale, dgamma);
                Self::accumulate(grads, *shift, dbeta);
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| {
                        let s = loss::sigmoid(v);
                        gv * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                Self::accumulate(grads, *x, Tensor::from_vec(xv.shape(), data));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                Self::accumulate(grads, *x, Tensor::from_vec(xv.shape(), data));
            }
            Op::Sigmoid(x) => {
                let yv = &self.nodes[id].value;
                let data = yv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                Self::accumulate(grads, *x, Tensor::from_vec(yv.shape(), data));
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::MulChannel { x, v } => {
                let xv = self.value(*x);
                let vv = self.value(*v);
                let (c, h, w) = xv.dims3();
                let mut dx = Tensor::zeros(&[c, h, w]);
                let mut dv = Tensor::zeros(&[c]);
                for ch in 0..c {
                    let s = vv.data()[ch];
                    let mut acc = T::zero();
                    for ((d, &gv), &xval) in dx
                        .plane_mut(ch)
                        .iter_mut()
                        .zip(g.plane(ch))
                        .zip(xv.plane(ch))
                    {
                        *d = gv * s;
                        acc = acc + gv * xval;
                    }
                    dv.data_mut()[ch] = acc;
                }
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *v, dv);
            }
            Op::MulSpatial { x, m } => {
                let xv = self.value(*x);
                let mv = self.value(*m);
                let (c, h, w) = xv.dims3();
                let mut dx = Tensor::zeros(&[c, h, w]);
                let mut dm = Tensor::zeros(&[1, h, w]);
                let map = mv.plane(0);
                for ch in 0..c {
                    let gp = g.plane(ch);
                    let xp = xv.plane(ch);
                    let dmp = dm.plane_mut(0);
                    for i in 0..h * w {
                        dmp[i] = dmp[i] + gp[i] * xp[i];
                    }
                    for ((d, &gv), &s) in
                        dx.plane_mut(ch).iter_mut().zip(gp.iter()).zip(map.iter())
                    {
                        *d = gv * s;
                    }
                }
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *m, dm);
            }
            Op::GlobalAvgPool(x) => {
                let xv = self.value(*x);
                let (c, h, w) = xv.dims3();
                let nt = T::from_f64((h * w) as f64);
                let mut dx = Tensor::zeros(&[c, h, w]);
                for ch in 0..c {
                    let gv = g.data()[ch] / nt;
                    for d in dx.plane_mut(ch) {
                        *d = gv;
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::GlobalMaxPool { x, argmax } => {
                let xv = self.value(*x);
                let (c, h, w) = xv.dims3();
                let mut dx = Tensor::zeros(&[c, h, w]);
                for ch in 0..c {
                    dx.plane_mut(ch)[argmax[ch]] = g.data()[ch];
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::ChannelMean(x) => {
                let xv = self.value(*x);
                let (c, h, w) = xv.dims3();
                let ct = T::from_f64(c as f64);
                let mut dx = Tensor::zeros(&[c, h, w]);
                let gp = g.plane(0);
                for ch in 0..c {
                    for (d, &gv) in dx.plane_mut(ch).iter_mut().zip(gp.iter()) {
                        *d = gv / ct;
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::ChannelMax { x, argmax } => {
                let xv = self.value(*x);
                let (c, h, w) = xv.dims3();
                let mut dx = Tensor::zeros(&[c, h, w]);
                let gp = g.plane(0);
                for i in 0..h * w {
                    let ch = argmax[i];
                    dx.plane_mut(ch)[i] = gp[i];
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::MatVec { w, x } => {
                let wv = self.value(*w);
                let xv = self.value(*x);
                let (m, n) = wv.dims2();
                let mut dw = Tensor::zeros(&[m, n]);
                let mut dx = Tensor::zeros(&[n]);
                for i in 0..m {
                    let gi = g.data()[i];
                    let row = &wv.data()[i * n..(i + 1) * n];
                    let drow = &mut dw.data_mut()[i * n..(i + 1) * n];
                    for j in 0..n {
                        drow[j] = gi * xv.data()[j];
                        dx.data_mut()[j] = dx.data()[j] + row[j] * gi;
                    }
                }
                Self::accumulate(grads, *w, dw);
                Self::accumulate(grads, *x, dx);
            }
            Op::AddBias { x, b } => {
                let mut acc = T::zero();
                for &gv in g.data() {
                    acc = acc + gv;
                }
                Self::accumulate(grads, *x, g.clone());
                Self::accumulate(grads, *b, Tensor::scalar(acc));
            }
            Op::Upsample2(x) => {
                let xv = self.value(*x);
                let dx = kernels::upsample2_grad(g, xv.dims3());
                Self::accumulate(grads, *x, dx);
            }
            Op::ConcatChannels(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (ca, h, w) = av.dims3();
                let (cb, _, _) = bv.dims3();
                let da = Tensor::from_vec(&[ca, h, w], g.data()[..ca * h * w].to_vec());
                let db = Tensor::from_vec(&[cb, h, w], g.data()[ca * h * w..].to_vec());
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::HalfSumSquares(x) => {
                let xv = self.value(*x);
                let gv = g.data()[0];
                Self::accumulate(grads, *x, xv.map(|v| v * gv));
            }
            Op::DetectionLoss { heads, ctx } => {
                let head_vals: Vec<&Tensor<T>> = heads.iter().map(|&h| self.value(h)).collect();
                let dheads = loss::loss_backward(&head_vals, ctx, g.data()[0]);
                for (&h, dh) in heads.iter().zip(dheads) {
                    Self::accumulate(grads, h, dh);
                }
            }
        }
    }
}

pub struct Gradients<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.slots[id.0].as_ref()
    }

    /// Gradient of a leaf, zero-filled if the leaf never influenced the root.
    pub fn of(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        match &self.slots[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}
