//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value. [`Tape::backward`] walks
//! the tape in reverse, accumulating vector-Jacobian products into the inputs
//! that need them. Parameters enter the tape through [`Tape::param`] and their
//! gradients are collected by parameter index.

use super::kernels::{self, ConvGeom};
use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param { index: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Silu(Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Upsample2x(Var),
    Concat(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    AddChannel(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param { .. } => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Silu(_) => "silu",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x(_) => "upsample2x",
            Op::Concat(..) => "concat",
            Op::Linear { .. } => "linear",
            Op::AddChannel(..) => "add_channel",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    label: Option<String>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of parameter `index`, if it reached the loss.
    pub fn param(&self, index: usize) -> Option<&Tensor> {
        self.params.get(index).and_then(|g| g.as_ref())
    }

    pub fn into_params(self) -> Vec<Option<Tensor>> {
        self.params
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A constant input whose gradient is still recorded (for gradient tests).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, index: usize, name: &str, t: Tensor) -> Var {
        let v = self.push(t, Op::Param { index }, true);
        self.nodes[v.0].label = Some(name.to_string());
        v
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, NnError> {
        self.same_shape(a, b, op.name())?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip(a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip(a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip(a, b, Op::Mul(a, b), |p, q| p * q)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect())
            .expect("same shape");
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.numel() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| v * sigmoid(v)).collect(),
        )
        .expect("same shape");
        let ng = self.ng(a);
        self.push(t, Op::Silu(a), ng)
    }

    /// 2-D convolution with `k/2` zero padding. `w: [C_out, C_in, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(NnError::Shape(format!("conv2d: input {xs:?}, weight {ws:?}")));
        }
        if self.shape(b) != [ws[0]] {
            return Err(NnError::Shape(format!("conv2d: bias {:?}", self.shape(b))));
        }
        let geom = ConvGeom {
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            k: ws[2],
            stride,
            pad: ws[2] / 2,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            xs[0],
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let t = Tensor::new(vec![xs[0], geom.c_out, geom.h_out(), geom.w_out()], out)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// Nearest-neighbour 2× upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(NnError::Shape(format!("upsample2x: {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len() * 4];
        for (plane, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(4 * h * w)) {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        let t = Tensor::new(vec![s[0], s[1], 2 * h, 2 * w], out)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Upsample2x(a), ng))
    }

    /// Concatenates `[B, C1, H, W]` and `[B, C2, H, W]` along channels.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(NnError::Shape(format!("concat: {sa:?} vs {sb:?}")));
        }
        let (pa, pb) = (sa[1..].iter().product::<usize>(), sb[1..].iter().product::<usize>());
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xa.len() + xb.len());
        for i in 0..sa[0] {
            out.extend_from_slice(&xa[i * pa..(i + 1) * pa]);
            out.extend_from_slice(&xb[i * pb..(i + 1) * pb]);
        }
        let t = Tensor::new(vec![sa[0], sa[1] + sb[1], sa[2], sa[3]], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Concat(a, b), ng))
    }

    /// `x: [B, in]`, `w: [out, in]`, `b: [out]` → `[B, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(NnError::Shape(format!("linear: x {xs:?}, w {ws:?}")));
        }
        let (bn, inp, outp) = (xs[0], xs[1], ws[0]);
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; bn * outp];
        for i in 0..bn {
            let row = &xv[i * inp..(i + 1) * inp];
            for o in 0..outp {
                let wr = &wv[o * inp..(o + 1) * inp];
                out[i * outp + o] = bv[o] + row.iter().zip(wr).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        let t = Tensor::new(vec![bn, outp], out)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(t, Op::Linear { x, w, b }, ng))
    }

    /// Adds a per-sample, per-channel offset `e: [B, C]` to `x: [B, C, H, W]`.
    pub fn add_channel(&mut self, x: Var, e: Var) -> Result<Var, NnError> {
        let (xs, es) = (self.shape(x).to_vec(), self.shape(e).to_vec());
        if xs.len() != 4 || es != [xs[0], xs[1]] {
            return Err(NnError::Shape(format!("add_channel: x {xs:?}, e {es:?}")));
        }
        let hw = xs[2] * xs[3];
        let ev = self.value(e).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for (plane, off) in out.chunks_exact_mut(hw).zip(ev) {
            plane.iter_mut().for_each(|v| *v += off);
        }
        let t = Tensor::new(xs, out)?;
        let ng = self.ng(x) || self.ng(e);
        Ok(self.push(t, Op::AddChannel(x, e), ng))
    }

    /// First node whose value contains NaN or ±Inf.
    pub fn check_finite(&self) -> Result<(), NnError> {
        for n in &self.nodes {
            if !n.value.is_finite() {
                return Err(NnError::NonFinite {
                    pass: "forward",
                    at: n.label.clone().unwrap_or_else(|| n.op.name().to_string()),
                });
            }
        }
        Ok(())
    }

    /// Backpropagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut params: Vec<Option<Tensor>> = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Param { index } => {
                    if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                        return Err(NnError::NonFinite {
                            pass: "backward",
                            at: format!(
                                "{} (element {j})",
                                node.label.as_deref().unwrap_or("param")
                            ),
                        });
                    }
                    if params.len() <= *index {
                        params.resize(index + 1, None);
                    }
                    match &mut params[*index] {
                        Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(Tensor::new(node.value.shape().to_vec(), g.clone())?),
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.iter().map(|v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    self.acc(&mut grads, *a, || g.iter().zip(vb).map(|(p, q)| p * q).collect());
                    self.acc(&mut grads, *b, || g.iter().zip(va).map(|(p, q)| p * q).collect());
                }
                Op::Scale(a, s) => self.acc(&mut grads, *a, || g.iter().map(|v| v * s).collect()),
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    self.acc(&mut grads, *a, || vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    self.acc(&mut grads, *a, || vec![g[0] / n as f64; n]);
                }
                Op::Silu(a) => {
                    let x = self.value(*a).data();
                    self.acc(&mut grads, *a, || {
                        g.iter()
                            .zip(x)
                            .map(|(gv, &xv)| {
                                let s = sigmoid(xv);
                                gv * s * (1.0 + xv * (1.0 - s))
                            })
                            .collect()
                    });
                }
                Op::Conv2d { x, w, b, geom } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let mut dw = vec![0.0; wv.numel()];
                    let mut db = vec![0.0; geom.c_out];
                    let mut dx = self.ng(*x).then(|| vec![0.0; xv.numel()]);
                    kernels::conv2d_backward(
                        xv.data(),
                        xv.shape()[0],
                        wv.data(),
                        geom,
                        &g,
                        &mut dw,
                        &mut db,
                        dx.as_deref_mut(),
                    );
                    if let Some(dx) = dx {
                        self.acc(&mut grads, *x, || dx);
                    }
                    self.acc(&mut grads, *w, || dw);
                    self.acc(&mut grads, *b, || db);
                }
                Op::Upsample2x(a) => {
                    let s = self.shape(*a);
                    let (h, w) = (s[2], s[3]);
                    let mut d = vec![0.0; self.value(*a).numel()];
                    for (src, dst) in g.chunks_exact(4 * h * w).zip(d.chunks_exact_mut(h * w)) {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                            }
                        }
                    }
                    self.acc(&mut grads, *a, || d);
                }
                Op::Concat(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let pa: usize = sa[1..].iter().product();
                    let pb: usize = sb[1..].iter().product();
                    let bn = sa[0];
                    self.acc(&mut grads, *a, || {
                        (0..bn).flat_map(|i| g[i * (pa + pb)..i * (pa + pb) + pa].to_vec()).collect()
                    });
                    self.acc(&mut grads, *b, || {
                        (0..bn)
                            .flat_map(|i| g[i * (pa + pb) + pa..(i + 1) * (pa + pb)].to_vec())
                            .collect()
                    });
                }
                Op::Linear { x, w, b } => {
                    let (xs, ws) = (self.shape(*x), self.shape(*w));
                    let (bn, inp, outp) = (xs[0], xs[1], ws[0]);
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    self.acc(&mut grads, *x, || {
                        let mut dx = vec![0.0; bn * inp];
                        for i in 0..bn {
                            for o in 0..outp {
                                let go = g[i * outp + o];
                                for j in 0..inp {
                                    dx[i * inp + j] += go * wv[o * inp + j];
                                }
                            }
                        }
                        dx
                    });
                    self.acc(&mut grads, *w, || {
                        let mut dw = vec![0.0; outp * inp];
                        for i in 0..bn {
                            for o in 0..outp {
                                let go = g[i * outp + o];
                                for j in 0..inp {
                                    dw[o * inp + j] += go * xv[i * inp + j];
                                }
                            }
                        }
                        dw
                    });
                    self.acc(&mut grads, *b, || {
                        let mut db = vec![0.0; outp];
                        for i in 0..bn {
                            for o in 0..outp {
                                db[o] += g[i * outp + o];
                            }
                        }
                        db
                    });
                }
                Op::AddChannel(x, e) => {
                    let hw = self.shape(*x)[2] * self.shape(*x)[3];
                    self.acc(&mut grads, *x, || g.clone());
                    self.acc(&mut grads, *e, || g.chunks_exact(hw).map(|p| p.iter().sum()).collect());
                }
            }
            // leaves that asked for a gradient keep it for inspection
            if matches!(node.op, Op::Leaf | Op::Param { .. }) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, make: impl FnOnce() -> Vec<f64>) {
        if !self.ng(v) {
            return;
        }
        let d = make();
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
            slot => *slot = Some(d),
        }
    }
}
