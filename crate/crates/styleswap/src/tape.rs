//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records a forward computation as an append-only list of
//! nodes; `backward` walks the list in reverse and accumulates gradients.
//! Nodes are visited in a fixed order, so gradient accumulation is
//! bit-reproducible run to run. The op set is exactly what the style
//! generator, the discriminator and the inversion objectives need —
//! nothing speculative.
//!
//! Spatial tensors use layout `[C, H, W]`, one sample at a time. Batch
//! handling lives with the callers, which keeps per-sample work
//! independent and trivially parallelizable.

use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `y = W·x (+ b)`, `W: [out, in]`, `x: [in]`.
    Linear {
        w: Var,
        b: Option<Var>,
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    /// `x: [C, H, W]` plus per-channel bias `[C]`.
    AddBiasChannel {
        x: Var,
        b: Var,
    },
    /// Scale conv weight `[O, I, kh, kw]` by per-input-channel style `[I]`.
    ModulateIn {
        w: Var,
        s: Var,
    },
    /// Scale conv weight `[O, I, kh, kw]` by per-output-channel factor `[O]`.
    ModulateOut {
        w: Var,
        d: Var,
    },
    /// Sum of squares over all but the first axis of `[O, I, kh, kw]` -> `[O]`.
    SqSumPerOut {
        w: Var,
    },
    RsqrtEps {
        x: Var,
    },
    /// Stride-1 same-padding convolution, odd kernels only.
    Conv2d {
        x: Var,
        w: Var,
    },
    Upsample2x {
        x: Var,
    },
    AvgPool2x {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh {
        x: Var,
    },
    Softplus {
        x: Var,
    },
    Abs {
        x: Var,
    },
    Square {
        x: Var,
    },
    /// Unit-normalize the channel vector at every spatial position.
    NormalizeChannels {
        x: Var,
        eps: f64,
    },
    /// `y = x + scale * noise`, `noise: [H, W]` broadcast over channels.
    AddNoise {
        x: Var,
        scale: Var,
        noise: Tensor,
    },
    Mean {
        x: Var,
    },
    Sum {
        x: Var,
    },
    /// Mean of scalar nodes.
    MeanMany {
        xs: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Tensor>,
}

/// Append-only computation record.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Register an input. `needs_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn linear(&mut self, w: Var, b: Option<Var>, x: Var) -> Var {
        let (wt, xt) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        let [out, inp] = *wt.shape() else {
            panic!("linear weight must be 2-d")
        };
        assert_eq!(xt.shape(), &[inp], "linear input dim");
        let mut y = vec![0.0; out];
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = wt.data()[o * inp..(o + 1) * inp]
                .iter()
                .zip(xt.data())
                .map(|(wv, xv)| wv * xv)
                .sum();
        }
        if let Some(b) = b {
            let bt = &self.nodes[b.0].value;
            assert_eq!(bt.shape(), &[out], "linear bias dim");
            for (yo, bv) in y.iter_mut().zip(bt.data()) {
                *yo += bv;
            }
        }
        let needs = self.needs(w) || self.needs(x) || b.is_some_and(|b| self.needs(b));
        self.push(
            Tensor::new(vec![out], y).unwrap(),
            Op::Linear { w, b, x },
            needs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(at.shape(), bt.shape(), "add shapes");
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = at.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Add { a, b }, needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(at.shape(), bt.shape(), "sub shapes");
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| x - y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = at.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Sub { a, b }, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(at.shape(), bt.shape(), "mul shapes");
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = at.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Mul { a, b }, needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v * c).collect();
        let shape = xt.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Scale { x, c }, needs)
    }

    pub fn add_bias_channel(&mut self, x: Var, b: Var) -> Var {
        let (xt, bt) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        let [c, h, w] = *xt.shape() else {
            panic!("add_bias_channel wants [C,H,W]")
        };
        assert_eq!(bt.shape(), &[c], "bias channels");
        let hw = h * w;
        let mut data = xt.data().to_vec();
        for ch in 0..c {
            let bv = bt.data()[ch];
            for v in &mut data[ch * hw..(ch + 1) * hw] {
                *v += bv;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        self.push(
            Tensor::new(vec![c, h, w], data).unwrap(),
            Op::AddBiasChannel { x, b },
            needs,
        )
    }

    pub fn modulate_in(&mut self, w: Var, s: Var) -> Var {
        let (wt, st) = (&self.nodes[w.0].value, &self.nodes[s.0].value);
        let [o, i, kh, kw] = *wt.shape() else {
            panic!("modulate_in wants [O,I,kh,kw]")
        };
        assert_eq!(st.shape(), &[i], "style dim");
        let k = kh * kw;
        let mut data = wt.data().to_vec();
        for oc in 0..o {
            for ic in 0..i {
                let sv = st.data()[ic];
                let base = (oc * i + ic) * k;
                for v in &mut data[base..base + k] {
                    *v *= sv;
                }
            }
        }
        let needs = self.needs(w) || self.needs(s);
        self.push(
            Tensor::new(vec![o, i, kh, kw], data).unwrap(),
            Op::ModulateIn { w, s },
            needs,
        )
    }

    pub fn modulate_out(&mut self, w: Var, d: Var) -> Var {
        let (wt, dt) = (&self.nodes[w.0].value, &self.nodes[d.0].value);
        let [o, i, kh, kw] = *wt.shape() else {
            panic!("modulate_out wants [O,I,kh,kw]")
        };
        assert_eq!(dt.shape(), &[o], "demod dim");
        let plane = i * kh * kw;
        let mut data = wt.data().to_vec();
        for oc in 0..o {
            let dv = dt.data()[oc];
            for v in &mut data[oc * plane..(oc + 1) * plane] {
                *v *= dv;
            }
        }
        let needs = self.needs(w) || self.needs(d);
        self.push(
            Tensor::new(vec![o, i, kh, kw], data).unwrap(),
            Op::ModulateOut { w, d },
            needs,
        )
    }

    pub fn sq_sum_per_out(&mut self, w: Var) -> Var {
        let wt = &self.nodes[w.0].value;
        let [o, i, kh, kw] = *wt.shape() else {
            panic!("sq_sum_per_out wants [O,I,kh,kw]")
        };
        let plane = i * kh * kw;
        let data: Vec<f64> = (0..o)
            .map(|oc| {
                wt.data()[oc * plane..(oc + 1) * plane]
                    .iter()
                    .map(|v| v * v)
                    .sum()
            })
            .collect();
        let needs = self.needs(w);
        self.push(
            Tensor::new(vec![o], data).unwrap(),
            Op::SqSumPerOut { w },
            needs,
        )
    }

    pub fn rsqrt_eps(&mut self, x: Var, eps: f64) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let shape = xt.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::RsqrtEps { x }, needs)
    }

    pub fn conv2d(&mut self, x: Var, w: Var) -> Var {
        let (xt, wt) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let [ci, h, wid] = *xt.shape() else {
            panic!("conv2d input wants [C,H,W]")
        };
        let [co, ciw, kh, kw] = *wt.shape() else {
            panic!("conv2d weight wants [O,I,kh,kw]")
        };
        assert_eq!(ci, ciw, "conv2d channel mismatch");
        assert!(kh % 2 == 1 && kw % 2 == 1, "odd kernels only");
        let out = conv2d_forward(xt.data(), wt.data(), ci, h, wid, co, kh, kw);
        let needs = self.needs(x) || self.needs(w);
        self.push(
            Tensor::new(vec![co, h, wid], out).unwrap(),
            Op::Conv2d { x, w },
            needs,
        )
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let [c, h, w] = *xt.shape() else {
            panic!("upsample2x wants [C,H,W]")
        };
        let (h2, w2) = (h * 2, w * 2);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for r in 0..h {
                let src = &xt.data()[ch * h * w + r * w..ch * h * w + (r + 1) * w];
                for rr in 0..2 {
                    let dst_base = ch * h2 * w2 + (2 * r + rr) * w2;
                    for (cidx, v) in src.iter().enumerate() {
                        out[dst_base + 2 * cidx] = *v;
                        out[dst_base + 2 * cidx + 1] = *v;
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![c, h2, w2], out).unwrap(),
            Op::Upsample2x { x },
            needs,
        )
    }

    pub fn avgpool2x(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let [c, h, w] = *xt.shape() else {
            panic!("avgpool2x wants [C,H,W]")
        };
        assert!(h % 2 == 0 && w % 2 == 0, "avgpool2x needs even dims");
        let (h2, w2) = (h / 2, w / 2);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for r in 0..h2 {
                for cc in 0..w2 {
                    let base = ch * h * w + 2 * r * w + 2 * cc;
                    out[ch * h2 * w2 + r * w2 + cc] = 0.25
                        * (xt.data()[base]
                            + xt.data()[base + 1]
                            + xt.data()[base + w]
                            + xt.data()[base + w + 1]);
                }
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![c, h2, w2], out).unwrap(),
            Op::AvgPool2x { x },
            needs,
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let shape = xt.shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(shape, data).unwrap(),
            Op::LeakyRelu { x, slope },
            needs,
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v.tanh()).collect();
        let shape = xt.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Tanh { x }, needs)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|&v| stable_softplus(v)).collect();
        let shape = xt.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Softplus { x }, needs)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v.abs()).collect();
        let shape = xt.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Abs { x }, needs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v * v).collect();
        let shape = xt.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Square { x }, needs)
    }

    pub fn normalize_channels(&mut self, x: Var, eps: f64) -> Var {
        let xt = &self.nodes[x.0].value;
        let [c, h, w] = *xt.shape() else {
            panic!("normalize_channels wants [C,H,W]")
        };
        let hw = h * w;
        let mut data = vec![0.0; c * hw];
        for p in 0..hw {
            let mut sq = 0.0;
            for ch in 0..c {
                let v = xt.data()[ch * hw + p];
                sq += v * v;
            }
            let inv = 1.0 / (sq + eps).sqrt();
            for ch in 0..c {
                data[ch * hw + p] = xt.data()[ch * hw + p] * inv;
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![c, h, w], data).unwrap(),
            Op::NormalizeChannels { x, eps },
            needs,
        )
    }

    pub fn add_noise(&mut self, x: Var, scale: Var, noise: Tensor) -> Var {
        let (xt, st) = (&self.nodes[x.0].value, &self.nodes[scale.0].value);
        let [c, h, w] = *xt.shape() else {
            panic!("add_noise wants [C,H,W]")
        };
        assert_eq!(st.numel(), 1, "noise scale is scalar");
        assert_eq!(noise.shape(), &[h, w], "noise field shape");
        let sv = st.item();
        let hw = h * w;
        let mut data = xt.data().to_vec();
        for ch in 0..c {
            for (v, nv) in data[ch * hw..(ch + 1) * hw].iter_mut().zip(noise.data()) {
                *v += sv * nv;
            }
        }
        let needs = self.needs(x) || self.needs(scale);
        self.push(
            Tensor::new(vec![c, h, w], data).unwrap(),
            Op::AddNoise { x, scale, noise },
            needs,
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let m = xt.data().iter().sum::<f64>() / xt.numel() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(m), Op::Mean { x }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let s = xt.data().iter().sum::<f64>();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, needs)
    }

    pub fn mean_many(&mut self, xs: Vec<Var>) -> Var {
        assert!(!xs.is_empty(), "mean_many of nothing");
        let mut acc = 0.0;
        for &v in &xs {
            let t = &self.nodes[v.0].value;
            assert_eq!(t.numel(), 1, "mean_many wants scalars");
            acc += t.item();
        }
        let m = acc / xs.len() as f64;
        let needs = xs.iter().any(|&v| self.needs(v));
        self.push(Tensor::scalar(m), Op::MeanMany { xs }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let xt = &self.nodes[x.0].value;
        let t = xt.reshaped(shape).expect("reshape numel");
        let needs = self.needs(x);
        self.push(t, Op::Reshape { x }, needs)
    }

    /// Convenience: mean |a - b|.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean(ad)
    }

    /// Convenience: mean (a - b)^2.
    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Run reverse accumulation from a scalar node.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "backward from scalar");
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let grad = self.nodes[idx].grad.take().unwrap();
            self.propagate(idx, &grad);
            self.nodes[idx].grad = Some(grad);
        }
    }

    fn accumulate(&mut self, target: Var, contribution: Tensor) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut self.nodes[target.0].grad {
            Some(existing) => {
                assert_eq!(existing.shape(), contribution.shape());
                for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *e += c;
                }
            }
            slot => *slot = Some(contribution),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&mut self, idx: usize, g: &Tensor) {
        // Ops are matched by value copied out of the node to appease the
        // borrow checker; tensors are cloned only where backward needs them.
        enum Planned {
            None,
            One(Var, Tensor),
            Two(Var, Tensor, Var, Tensor),
            Many(Vec<(Var, Tensor)>),
        }
        let planned = {
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => Planned::None,
                Op::Linear { w, b, x } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let [out, inp] = *wt.shape() else {
                        unreachable!()
                    };
                    let mut outs = Vec::new();
                    if self.needs(*x) {
                        let mut gx = vec![0.0; inp];
                        for o in 0..out {
                            let go = g.data()[o];
                            if go == 0.0 {
                                continue;
                            }
                            for (gxv, wv) in gx.iter_mut().zip(&wt.data()[o * inp..(o + 1) * inp]) {
                                *gxv += go * wv;
                            }
                        }
                        outs.push((*x, Tensor::new(vec![inp], gx).unwrap()));
                    }
                    if self.needs(*w) {
                        let mut gw = vec![0.0; out * inp];
                        for o in 0..out {
                            let go = g.data()[o];
                            if go == 0.0 {
                                continue;
                            }
                            for (gwv, xv) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xt.data()) {
                                *gwv += go * xv;
                            }
                        }
                        outs.push((*w, Tensor::new(vec![out, inp], gw).unwrap()));
                    }
                    if let Some(b) = b {
                        if self.needs(*b) {
                            outs.push((*b, g.clone()));
                        }
                    }
                    Planned::Many(outs)
                }
                Op::Add { a, b } => Planned::Two(*a, g.clone(), *b, g.clone()),
                Op::Sub { a, b } => {
                    let neg =
                        Tensor::new(g.shape().to_vec(), g.data().iter().map(|v| -v).collect())
                            .unwrap();
                    Planned::Two(*a, g.clone(), *b, neg)
                }
                Op::Mul { a, b } => {
                    let at = &self.nodes[a.0].value;
                    let bt = &self.nodes[b.0].value;
                    let ga = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(bt.data())
                            .map(|(gv, bv)| gv * bv)
                            .collect(),
                    )
                    .unwrap();
                    let gb = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(at.data())
                            .map(|(gv, av)| gv * av)
                            .collect(),
                    )
                    .unwrap();
                    Planned::Two(*a, ga, *b, gb)
                }
                Op::Scale { x, c } => {
                    let gx =
                        Tensor::new(g.shape().to_vec(), g.data().iter().map(|v| v * c).collect())
                            .unwrap();
                    Planned::One(*x, gx)
                }
                Op::AddBiasChannel { x, b } => {
                    let [c, h, w] = *self.nodes[x.0].value.shape() else {
                        unreachable!()
                    };
                    let hw = h * w;
                    let gb: Vec<f64> = (0..c)
                        .map(|ch| g.data()[ch * hw..(ch + 1) * hw].iter().sum())
                        .collect();
                    Planned::Two(*x, g.clone(), *b, Tensor::new(vec![c], gb).unwrap())
                }
                Op::ModulateIn { w, s } => {
                    let wt = &self.nodes[w.0].value;
                    let st = &self.nodes[s.0].value;
                    let [o, i, kh, kw] = *wt.shape() else {
                        unreachable!()
                    };
                    let k = kh * kw;
                    let mut outs = Vec::new();
                    if self.needs(*w) {
                        let mut gw = vec![0.0; o * i * k];
                        for oc in 0..o {
                            for ic in 0..i {
                                let sv = st.data()[ic];
                                let base = (oc * i + ic) * k;
                                for q in 0..k {
                                    gw[base + q] = g.data()[base + q] * sv;
                                }
                            }
                        }
                        outs.push((*w, Tensor::new(vec![o, i, kh, kw], gw).unwrap()));
                    }
                    if self.needs(*s) {
                        let mut gs = vec![0.0; i];
                        for oc in 0..o {
                            for (ic, gsv) in gs.iter_mut().enumerate() {
                                let base = (oc * i + ic) * k;
                                for q in 0..k {
                                    *gsv += g.data()[base + q] * wt.data()[base + q];
                                }
                            }
                        }
                        outs.push((*s, Tensor::new(vec![i], gs).unwrap()));
                    }
                    Planned::Many(outs)
                }
                Op::ModulateOut { w, d } => {
                    let wt = &self.nodes[w.0].value;
                    let dt = &self.nodes[d.0].value;
                    let [o, i, kh, kw] = *wt.shape() else {
                        unreachable!()
                    };
                    let plane = i * kh * kw;
                    let mut outs = Vec::new();
                    if self.needs(*w) {
                        let mut gw = vec![0.0; o * plane];
                        for oc in 0..o {
                            let dv = dt.data()[oc];
                            for q in 0..plane {
                                gw[oc * plane + q] = g.data()[oc * plane + q] * dv;
                            }
                        }
                        outs.push((*w, Tensor::new(vec![o, i, kh, kw], gw).unwrap()));
                    }
                    if self.needs(*d) {
                        let gd: Vec<f64> = (0..o)
                            .map(|oc| {
                                g.data()[oc * plane..(oc + 1) * plane]
                                    .iter()
                                    .zip(&wt.data()[oc * plane..(oc + 1) * plane])
                                    .map(|(gv, wv)| gv * wv)
                                    .sum()
                            })
                            .collect();
                        outs.push((*d, Tensor::new(vec![o], gd).unwrap()));
                    }
                    Planned::Many(outs)
                }
                Op::SqSumPerOut { w } => {
                    let wt = &self.nodes[w.0].value;
                    let [o, i, kh, kw] = *wt.shape() else {
                        unreachable!()
                    };
                    let plane = i * kh * kw;
                    let mut gw = vec![0.0; o * plane];
                    for oc in 0..o {
                        let go = g.data()[oc];
                        for q in 0..plane {
                            gw[oc * plane + q] = 2.0 * wt.data()[oc * plane + q] * go;
                        }
                    }
                    Planned::One(*w, Tensor::new(vec![o, i, kh, kw], gw).unwrap())
                }
                Op::RsqrtEps { x } => {
                    let yt = &node.value;
                    let gx = Tensor::new(
                        yt.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(yt.data())
                            .map(|(gv, yv)| -0.5 * yv * yv * yv * gv)
                            .collect(),
                    )
                    .unwrap();
                    Planned::One(*x, gx)
                }
                Op::Conv2d { x, w } => {
                    let xt = &self.nodes[x.0].value;
                    let wt = &self.nodes[w.0].value;
                    let [ci, h, wid] = *xt.shape() else {
                        unreachable!()
                    };
                    let [co, _, kh, kw] = *wt.shape() else {
                        unreachable!()
                    };
                    let mut outs = Vec::new();
                    if self.needs(*x) {
                        let gx = conv2d_backward_input(g.data(), wt.data(), ci, h, wid, co, kh, kw);
                        outs.push((*x, Tensor::new(vec![ci, h, wid], gx).unwrap()));
                    }
                    if self.needs(*w) {
                        let gw =
                            conv2d_backward_weight(g.data(), xt.data(), ci, h, wid, co, kh, kw);
                        outs.push((*w, Tensor::new(vec![co, ci, kh, kw], gw).unwrap()));
                    }
                    Planned::Many(outs)
                }
                Op::Upsample2x { x } => {
                    let [c, h, w] = *self.nodes[x.0].value.shape() else {
                        unreachable!()
                    };
                    let (h2, w2) = (h * 2, w * 2);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for r in 0..h {
                            for cc in 0..w {
                                let mut acc = 0.0;
                                for rr in 0..2 {
                                    for ccc in 0..2 {
                                        acc += g.data()
                                            [ch * h2 * w2 + (2 * r + rr) * w2 + 2 * cc + ccc];
                                    }
                                }
                                gx[ch * h * w + r * w + cc] = acc;
                            }
                        }
                    }
                    Planned::One(*x, Tensor::new(vec![c, h, w], gx).unwrap())
                }
                Op::AvgPool2x { x } => {
                    let [c, h, w] = *self.nodes[x.0].value.shape() else {
                        unreachable!()
                    };
                    let (h2, w2) = (h / 2, w / 2);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for r in 0..h2 {
                            for cc in 0..w2 {
                                let gv = 0.25 * g.data()[ch * h2 * w2 + r * w2 + cc];
                                let base = ch * h * w + 2 * r * w + 2 * cc;
                                gx[base] = gv;
                                gx[base + 1] = gv;
                                gx[base + w] = gv;
                                gx[base + w + 1] = gv;
                            }
                        }
                    }
                    Planned::One(*x, Tensor::new(vec![c, h, w], gx).unwrap())
                }
                Op::LeakyRelu { x, slope } => {
                    let xt = &self.nodes[x.0].value;
                    let gx = Tensor::new(
                        xt.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(xt.data())
                            .map(|(gv, &xv)| if xv >= 0.0 { *gv } else { slope * gv })
                            .collect(),
                    )
                    .unwrap();
                    Planned::One(*x, gx)
                }
                Op::Tanh { x } => {
                    let yt = &node.value;
                    let gx = Tensor::new(
                        yt.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(yt.data())
                            .map(|(gv, yv)| gv * (1.0 - yv * yv))
                            .collect(),
                    )
                    .unwrap();
                    Planned::One(*x, gx)
                }
                Op::Softplus { x } => {
                    let xt = &self.nodes[x.0].value;
                    let gx = Tensor::new(
                        xt.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(xt.data())
                            .map(|(gv, &xv)| gv * sigmoid(xv))
                            .collect(),
                    )
                    .unwrap();
                    Planned::One(*x, gx)
                }
                Op::Abs { x } => {
                    let xt = &self.nodes[x.0].value;
                    let gx = Tensor::new(
                        xt.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(xt.data())
                            .map(|(gv, &xv)| {
                                if xv > 0.0 {
                                    *gv
                                } else if xv < 0.0 {
                                    -gv
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    )
                    .unwrap();
                    Planned::One(*x, gx)
                }
                Op::Square { x } => {
                    let xt = &self.nodes[x.0].value;
                    let gx = Tensor::new(
                        xt.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(xt.data())
                            .map(|(gv, xv)| 2.0 * xv * gv)
                            .collect(),
                    )
                    .unwrap();
                    Planned::One(*x, gx)
                }
                Op::NormalizeChannels { x, eps } => {
                    let xt = &self.nodes[x.0].value;
                    let [c, h, w] = *xt.shape() else {
                        unreachable!()
                    };
                    let hw = h * w;
                    let mut gx = vec![0.0; c * hw];
                    for p in 0..hw {
                        let mut sq = 0.0;
                        let mut gdotx = 0.0;
                        for ch in 0..c {
                            let xv = xt.data()[ch * hw + p];
                            sq += xv * xv;
                            gdotx += g.data()[ch * hw + p] * xv;
                        }
                        let n2 = sq + eps;
                        let inv = 1.0 / n2.sqrt();
                        let inv3 = inv / n2;
                        for ch in 0..c {
                            let xv = xt.data()[ch * hw + p];
                            gx[ch * hw + p] = g.data()[ch * hw + p] * inv - xv * gdotx * inv3;
                        }
                    }
                    Planned::One(*x, Tensor::new(vec![c, h, w], gx).unwrap())
                }
                Op::AddNoise { x, scale, noise } => {
                    let [c, h, w] = *self.nodes[x.0].value.shape() else {
                        unreachable!()
                    };
                    let hw = h * w;
                    let mut gs = 0.0;
                    for ch in 0..c {
                        for (gv, nv) in g.data()[ch * hw..(ch + 1) * hw].iter().zip(noise.data()) {
                            gs += gv * nv;
                        }
                    }
                    let _ = (h, w);
                    Planned::Two(*x, g.clone(), *scale, Tensor::scalar(gs))
                }
                Op::Mean { x } => {
                    let xt = &self.nodes[x.0].value;
                    let gv = g.item() / xt.numel() as f64;
                    Planned::One(*x, Tensor::full(xt.shape(), gv))
                }
                Op::Sum { x } => {
                    let xt = &self.nodes[x.0].value;
                    Planned::One(*x, Tensor::full(xt.shape(), g.item()))
                }
                Op::MeanMany { xs } => {
                    let gv = g.item() / xs.len() as f64;
                    Planned::Many(xs.iter().map(|&v| (v, Tensor::scalar(gv))).collect())
                }
                Op::Reshape { x } => {
                    let xshape = self.nodes[x.0].value.shape().to_vec();
                    Planned::One(*x, g.reshaped(&xshape).unwrap())
                }
            }
        };
        match planned {
            Planned::None => {}
            Planned::One(v, t) => self.accumulate(v, t),
            Planned::Two(a, ta, b, tb) => {
                self.accumulate(a, ta);
                self.accumulate(b, tb);
            }
            Planned::Many(items) => {
                for (v, t) in items {
                    self.accumulate(v, t);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

// The three conv kernels below share one loop shape: for every (output
// channel, input channel, kernel tap) they stream over the valid rows and
// add a scaled, shifted input row into an output row. The row segments are
// sliced up front so the innermost loops are bounds-check-free zips that
// the compiler vectorizes.

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Valid output-row/column ranges for a tap offset of `off = dk - pad`.
#[inline]
fn tap_range(extent: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = ((extent as isize - off).min(extent as isize)).max(0) as usize;
    (lo, hi)
}

// Work threshold above which a conv spreads output planes across
// threads. Each plane is written by exactly one thread, so results are
// identical at any worker count.
const PAR_MACS: usize = 250_000;

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    ci: usize,
    h: usize,
    wid: usize,
    co: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; co * h * wid];
    let plane_work = ci * h * wid * kh * kw;
    let one_plane = |oc: usize, oplane: &mut [f64]| {
        for ic in 0..ci {
            let xplane = &x[ic * h * wid..(ic + 1) * h * wid];
            let wbase = ((oc * ci) + ic) * kh * kw;
            for dkh in 0..kh {
                let roff = dkh as isize - ph as isize;
                let (r0, r1) = tap_range(h, roff);
                for dkw in 0..kw {
                    let wv = w[wbase + dkh * kw + dkw];
                    if wv == 0.0 {
                        continue;
                    }
                    let coff = dkw as isize - pw as isize;
                    let (c0, c1) = tap_range(wid, coff);
                    if c0 >= c1 {
                        continue;
                    }
                    for r in r0..r1 {
                        let srow = ((r as isize + roff) as usize) * wid;
                        let src =
                            &xplane[(srow as isize + c0 as isize + coff) as usize..][..c1 - c0];
                        let dst = &mut oplane[r * wid + c0..r * wid + c1];
                        axpy(dst, src, wv);
                    }
                }
            }
        }
    };
    if co * plane_work >= PAR_MACS && co > 1 {
        use rayon::prelude::*;
        out.par_chunks_mut(h * wid)
            .enumerate()
            .for_each(|(oc, oplane)| one_plane(oc, oplane));
    } else {
        for (oc, oplane) in out.chunks_mut(h * wid).enumerate() {
            one_plane(oc, oplane);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input(
    g: &[f64],
    w: &[f64],
    ci: usize,
    h: usize,
    wid: usize,
    co: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (ph, pw) = (kh / 2, kw / 2);
    let mut gx = vec![0.0; ci * h * wid];
    let one_plane = |ic: usize, gxplane: &mut [f64]| {
        for oc in 0..co {
            let gplane = &g[oc * h * wid..(oc + 1) * h * wid];
            let wbase = ((oc * ci) + ic) * kh * kw;
            for dkh in 0..kh {
                // input row s receives from output row s + (ph - dkh)
                let roff = ph as isize - dkh as isize;
                let (r0, r1) = tap_range(h, roff);
                for dkw in 0..kw {
                    let wv = w[wbase + dkh * kw + dkw];
                    if wv == 0.0 {
                        continue;
                    }
                    let coff = pw as isize - dkw as isize;
                    let (c0, c1) = tap_range(wid, coff);
                    if c0 >= c1 {
                        continue;
                    }
                    for r in r0..r1 {
                        let grow = ((r as isize + roff) as usize) * wid;
                        let src =
                            &gplane[(grow as isize + c0 as isize + coff) as usize..][..c1 - c0];
                        let dst = &mut gxplane[r * wid + c0..r * wid + c1];
                        axpy(dst, src, wv);
                    }
                }
            }
        }
    };
    if ci * co * h * wid * kh * kw >= PAR_MACS && ci > 1 {
        use rayon::prelude::*;
        gx.par_chunks_mut(h * wid)
            .enumerate()
            .for_each(|(ic, gxplane)| one_plane(ic, gxplane));
    } else {
        for (ic, gxplane) in gx.chunks_mut(h * wid).enumerate() {
            one_plane(ic, gxplane);
        }
    }
    gx
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_weight(
    g: &[f64],
    x: &[f64],
    ci: usize,
    h: usize,
    wid: usize,
    co: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (ph, pw) = (kh / 2, kw / 2);
    let mut gw = vec![0.0; co * ci * kh * kw];
    let one_out = |oc: usize, gwslice: &mut [f64]| {
        let gplane = &g[oc * h * wid..(oc + 1) * h * wid];
        for ic in 0..ci {
            let xplane = &x[ic * h * wid..(ic + 1) * h * wid];
            let wbase = ic * kh * kw;
            for dkh in 0..kh {
                let roff = dkh as isize - ph as isize;
                let (r0, r1) = tap_range(h, roff);
                for dkw in 0..kw {
                    let coff = dkw as isize - pw as isize;
                    let (c0, c1) = tap_range(wid, coff);
                    if c0 >= c1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let xrow = ((r as isize + roff) as usize) * wid;
                        let xs =
                            &xplane[(xrow as isize + c0 as isize + coff) as usize..][..c1 - c0];
                        let gs = &gplane[r * wid + c0..r * wid + c1];
                        acc += dot(gs, xs);
                    }
                    gwslice[wbase + dkh * kw + dkw] = acc;
                }
            }
        }
    };
    if co * ci * h * wid * kh * kw >= PAR_MACS && co > 1 {
        use rayon::prelude::*;
        gw.par_chunks_mut(ci * kh * kw)
            .enumerate()
            .for_each(|(oc, gwslice)| one_out(oc, gwslice));
    } else {
        for (oc, gwslice) in gw.chunks_mut(ci * kh * kw).enumerate() {
            one_out(oc, gwslice);
        }
    }
    gw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Central finite difference over a scalar-valued function of flattened
    /// inputs.
    fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, at: &[f64], eps: f64) -> Vec<f64> {
        let mut grad = vec![0.0; at.len()];
        let mut pt = at.to_vec();
        for i in 0..at.len() {
            pt[i] = at[i] + eps;
            let fp = f(&pt);
            pt[i] = at[i] - eps;
            let fm = f(&pt);
            pt[i] = at[i];
            grad[i] = (fp - fm) / (2.0 * eps);
        }
        grad
    }

    fn assert_grad_close(analytic: &[f64], numeric: &[f64], tol: f64) {
        let dot: f64 = analytic
            .iter()
            .zip(numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        assert!(dot / scale < tol, "rel grad err {} > {tol}", dot / scale);
    }

    #[test]
    fn grad_linear() {
        let wv = rng::normal_vec(1, 12);
        let xv = rng::normal_vec(2, 4);
        let bv = rng::normal_vec(3, 3);

        let run = |wd: &[f64], xd: &[f64], bd: &[f64]| -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let w = t.leaf(Tensor::new(vec![3, 4], wd.to_vec()).unwrap(), true);
            let x = t.leaf(Tensor::new(vec![4], xd.to_vec()).unwrap(), true);
            let b = t.leaf(Tensor::new(vec![3], bd.to_vec()).unwrap(), true);
            let y = t.linear(w, Some(b), x);
            let sq = t.square(y);
            let loss = t.sum(sq);
            t.backward(loss);
            (
                t.value(loss).item(),
                t.grad(w).unwrap().data().to_vec(),
                t.grad(x).unwrap().data().to_vec(),
                t.grad(b).unwrap().data().to_vec(),
            )
        };
        let (_, gw, gx, gb) = run(&wv, &xv, &bv);

        let nw = numeric_grad(&mut |p| run(p, &xv, &bv).0, &wv, 1e-5);
        let nx = numeric_grad(&mut |p| run(&wv, p, &bv).0, &xv, 1e-5);
        let nb = numeric_grad(&mut |p| run(&wv, &xv, p).0, &bv, 1e-5);
        assert_grad_close(&gw, &nw, 1e-7);
        assert_grad_close(&gx, &nx, 1e-7);
        assert_grad_close(&gb, &nb, 1e-7);
    }

    #[test]
    fn grad_conv2d() {
        let xv = rng::normal_vec(4, 2 * 5 * 5);
        let wv = rng::normal_vec(5, 3 * 2 * 3 * 3);

        let run = |xd: &[f64], wd: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::new(vec![2, 5, 5], xd.to_vec()).unwrap(), true);
            let w = t.leaf(Tensor::new(vec![3, 2, 3, 3], wd.to_vec()).unwrap(), true);
            let y = t.conv2d(x, w);
            let a = t.tanh(y);
            let loss = t.mean(a);
            t.backward(loss);
            (
                t.value(loss).item(),
                t.grad(x).unwrap().data().to_vec(),
                t.grad(w).unwrap().data().to_vec(),
            )
        };
        let (_, gx, gw) = run(&xv, &wv);
        let nx = numeric_grad(&mut |p| run(p, &wv).0, &xv, 1e-5);
        let nw = numeric_grad(&mut |p| run(&xv, p).0, &wv, 1e-5);
        assert_grad_close(&gx, &nx, 1e-7);
        assert_grad_close(&gw, &nw, 1e-7);
    }

    #[test]
    fn conv2d_matches_hand_example() {
        // 1x3x3 input, identity-ish 1x1x3x3 kernel picking the center.
        let mut t = Tape::new();
        let x = t.leaf(
            Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap(),
            false,
        );
        let mut k = vec![0.0; 9];
        k[4] = 1.0; // center tap
        let w = t.leaf(Tensor::new(vec![1, 1, 3, 3], k).unwrap(), false);
        let y = t.conv2d(x, w);
        assert_eq!(t.value(y).data(), t.value(x).data());

        // all-ones kernel: top-left output = sum of 2x2 corner block.
        let w1 = t.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap(), false);
        let y1 = t.conv2d(x, w1);
        assert_eq!(t.value(y1).data()[0], 1.0 + 2.0 + 4.0 + 5.0);
        assert_eq!(t.value(y1).data()[4], 45.0); // center sees everything
    }

    #[test]
    fn grad_modulated_conv_pipeline() {
        // The full modulate -> demodulate -> conv composite, the riskiest
        // backward path in the crate.
        let xv = rng::normal_vec(6, 2 * 4 * 4);
        let wv = rng::normal_vec(7, 3 * 2 * 3 * 3);
        let sv = rng::normal_vec(8, 2)
            .iter()
            .map(|v| v + 1.5)
            .collect::<Vec<_>>();

        let run = |xd: &[f64], wd: &[f64], sd: &[f64]| -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::new(vec![2, 4, 4], xd.to_vec()).unwrap(), true);
            let w = t.leaf(Tensor::new(vec![3, 2, 3, 3], wd.to_vec()).unwrap(), true);
            let s = t.leaf(Tensor::new(vec![2], sd.to_vec()).unwrap(), true);
            let wmod = t.modulate_in(w, s);
            let ssq = t.sq_sum_per_out(wmod);
            let d = t.rsqrt_eps(ssq, 1e-8);
            let wdem = t.modulate_out(wmod, d);
            let y = t.conv2d(x, wdem);
            let sq = t.square(y);
            let loss = t.mean(sq);
            t.backward(loss);
            (
                t.value(loss).item(),
                t.grad(x).unwrap().data().to_vec(),
                t.grad(w).unwrap().data().to_vec(),
                t.grad(s).unwrap().data().to_vec(),
            )
        };
        let (_, gx, gw, gs) = run(&xv, &wv, &sv);
        let nx = numeric_grad(&mut |p| run(p, &wv, &sv).0, &xv, 1e-5);
        let nw = numeric_grad(&mut |p| run(&xv, p, &sv).0, &wv, 1e-5);
        let ns = numeric_grad(&mut |p| run(&xv, &wv, p).0, &sv, 1e-5);
        assert_grad_close(&gx, &nx, 1e-6);
        assert_grad_close(&gw, &nw, 1e-6);
        assert_grad_close(&gs, &ns, 1e-6);
    }

    #[test]
    fn grad_spatial_and_pointwise_ops() {
        // The projection constant keeps the loss sensitive to the
        // normalized direction; mean(|y|^2) of unit vectors is constant
        // and would only measure finite-difference noise.
        let xv = rng::normal_vec(9, 2 * 4 * 4);
        let pv = rng::normal_vec(21, 2 * 2 * 2);
        let run = |xd: &[f64]| -> (f64, Vec<f64>) {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::new(vec![2, 4, 4], xd.to_vec()).unwrap(), true);
            let proj = t.constant(Tensor::new(vec![2, 2, 2], pv.clone()).unwrap());
            let up = t.upsample2x(x);
            let lr = t.leaky_relu(up, 0.2);
            let dn = t.avgpool2x(lr);
            let dn = t.avgpool2x(dn);
            let sp = t.softplus(dn);
            let nc = t.normalize_channels(sp, 1e-10);
            let m = t.mul(nc, proj);
            let loss = t.mean(m);
            t.backward(loss);
            (t.value(loss).item(), t.grad(x).unwrap().data().to_vec())
        };
        let (_, gx) = run(&xv);
        let nx = numeric_grad(&mut |p| run(p).0, &xv, 1e-6);
        assert_grad_close(&gx, &nx, 1e-5);
    }

    #[test]
    fn grad_abs_away_from_zero() {
        // |x| has a kink at 0; probe it where finite differences are valid.
        let xv: Vec<f64> = rng::normal_vec(13, 8)
            .iter()
            .map(|v| v + 2.0 * v.signum())
            .collect();
        let run = |xd: &[f64]| -> (f64, Vec<f64>) {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::from_vec(xd.to_vec()), true);
            let a = t.abs(x);
            let loss = t.mean(a);
            t.backward(loss);
            (t.value(loss).item(), t.grad(x).unwrap().data().to_vec())
        };
        let (_, gx) = run(&xv);
        let nx = numeric_grad(&mut |p| run(p).0, &xv, 1e-6);
        assert_grad_close(&gx, &nx, 1e-8);
    }

    #[test]
    fn grad_noise_bias_and_reductions() {
        let xv = rng::normal_vec(10, 2 * 2 * 2);
        let bv = rng::normal_vec(11, 2);
        let sv = vec![0.7];
        let noise = Tensor::new(vec![2, 2], rng::normal_vec(12, 4)).unwrap();

        let run = |xd: &[f64], bd: &[f64], sd: &[f64]| -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::new(vec![2, 2, 2], xd.to_vec()).unwrap(), true);
            let b = t.leaf(Tensor::new(vec![2], bd.to_vec()).unwrap(), true);
            let s = t.leaf(Tensor::new(vec![1], sd.to_vec()).unwrap(), true);
            let noisy = t.add_noise(x, s, noise.clone());
            let biased = t.add_bias_channel(noisy, b);
            let th = t.tanh(biased);
            let m1 = t.mean(th);
            let sq = t.square(th);
            let m2 = t.mean(sq);
            let loss = t.mean_many(vec![m1, m2]);
            t.backward(loss);
            (
                t.value(loss).item(),
                t.grad(x).unwrap().data().to_vec(),
                t.grad(b).unwrap().data().to_vec(),
                t.grad(s).unwrap().data().to_vec(),
            )
        };
        let (_, gx, gb, gs) = run(&xv, &bv, &sv);
        let nx = numeric_grad(&mut |p| run(p, &bv, &sv).0, &xv, 1e-6);
        let nb = numeric_grad(&mut |p| run(&xv, p, &sv).0, &bv, 1e-6);
        let ns = numeric_grad(&mut |p| run(&xv, &bv, p).0, &sv, 1e-6);
        assert_grad_close(&gx, &nx, 1e-7);
        assert_grad_close(&gb, &nb, 1e-7);
        assert_grad_close(&gs, &ns, 1e-7);
    }

    #[test]
    fn no_grad_paths_are_skipped() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), false);
        let y = t.square(x);
        let loss = t.sum(y);
        t.backward(loss);
        assert!(t.grad(x).is_none());
    }
}
