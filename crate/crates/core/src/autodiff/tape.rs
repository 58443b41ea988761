use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm behaviour for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a> {
    /// Normalize with the batch statistics.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [f32], var: &'a [f32] },
}

/// Per-channel statistics of a training-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Biased (population) variance.
    pub var: Vec<f32>,
    /// Number of values per channel.
    pub count: usize,
}

pub const BN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f64>,
        train: bool,
    },
    /// Any element-wise map; the local derivative is saved at forward time.
    Elementwise {
        x: Var,
        deriv: Vec<f32>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    LogSoftmax(Var),
    Select {
        x: Var,
        idx: Vec<usize>,
    },
    ScaleConst {
        x: Var,
        c: Vec<f32>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records primitive applications in topological order for one
/// reverse-mode sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn accumulate(slot: &mut Option<Vec<f32>>, len: usize, f: impl FnOnce(&mut [f32])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0f32; m * n];
        let mut acc = vec![0f64; n];
        for i in 0..m {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for p in 0..k {
                let av = ad[i * k + p] as f64;
                for (a, bv) in acc.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *a += av * *bv as f64;
                }
            }
            for (o, a) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x [n, in]`, `w [out, in]`, optional `b [out]` -> `[n, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(shape_err("linear", sx, sw));
        }
        let (n, d_in, d_out) = (sx[0], sx[1], sw[0]);
        let bias = match b {
            Some(bv) => {
                let tb = self.value(bv);
                if tb.shape() != [d_out] {
                    return Err(shape_err("linear bias", tb.shape(), &[d_out]));
                }
                Some(tb.data())
            }
            None => None,
        };
        let (xd, wd) = (tx.data(), tw.data());
        let mut out = vec![0f32; n * d_out];
        for i in 0..n {
            let xr = &xd[i * d_in..(i + 1) * d_in];
            for o in 0..d_out {
                let wr = &wd[o * d_in..(o + 1) * d_in];
                let mut acc: f64 = xr.iter().zip(wr).map(|(a, b)| *a as f64 * *b as f64).sum();
                if let Some(bd) = bias {
                    acc += bd[o] as f64;
                }
                out[i * d_out + o] = acc as f32;
            }
        }
        let out = Tensor::new(&[n, d_out], out)?;
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Linear { x, w, b }, &parents))
    }

    /// `x [n, c, h, w]`, `w [o, c, kh, kw]`, no bias.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(shape_err("conv2d", sx, sw));
        }
        let (oh, ow) = match (
            kernels::out_dim(sx[2], sw[2], stride, pad),
            kernels::out_dim(sx[3], sw[3], stride, pad),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(shape_err("conv2d", sx, sw)),
        };
        let geom = ConvGeom {
            n: sx[0],
            c_in: sx[1],
            h: sx[2],
            w: sx[3],
            c_out: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            oh,
            ow,
        };
        let mut out = vec![0f32; geom.n * geom.c_out * oh * ow];
        kernels::conv2d_forward(&geom, tx.data(), tw.data(), &mut out);
        let out = Tensor::new(&[geom.n, geom.c_out, oh, ow], out)?;
        Ok(self.push(out, Op::Conv2d { x, w, geom }, &[x, w]))
    }

    /// Per-channel batch normalization of `[n, c, h, w]` with affine
    /// parameters `gamma`, `beta` of shape `[c]`.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let tx = self.value(x);
        let s = tx.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("batchnorm2d: expected [n, c, h, w], got {s:?}")));
        }
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(shape_err("batchnorm2d affine", self.value(p).shape(), &[c]));
            }
        }
        let count = n * plane;
        let xd = tx.data();
        let (mean, var, train): (Vec<f64>, Vec<f64>, bool) = match mode {
            BnMode::Train => {
                let mut mean = vec![0f64; c];
                let mut var = vec![0f64; c];
                for ch in 0..c {
                    let mut sum = 0f64;
                    for b in 0..n {
                        sum += xd[(b * c + ch) * plane..][..plane].iter().map(|v| *v as f64).sum::<f64>();
                    }
                    let m = sum / count as f64;
                    let mut sq = 0f64;
                    for b in 0..n {
                        sq += xd[(b * c + ch) * plane..][..plane]
                            .iter()
                            .map(|v| (*v as f64 - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = sq / count as f64;
                }
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err("batchnorm2d running stats", &[mean.len()], &[c]));
                }
                (
                    mean.iter().map(|v| *v as f64).collect(),
                    var.iter().map(|v| *v as f64).collect(),
                    false,
                )
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0f32; xd.len()];
        let mut out = vec![0f32; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let h = (xd[i] as f64 - mean[ch]) * inv_std[ch];
                    xhat[i] = h as f32;
                    out[i] = (gd[ch] as f64 * h + bd[ch] as f64) as f32;
                }
            }
        }
        let stats = train.then(|| BatchStats {
            mean: mean.iter().map(|v| *v as f32).collect(),
            var: var.iter().map(|v| *v as f32).collect(),
            count,
        });
        let out = Tensor::new(&s, out)?;
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        );
        Ok((v, stats))
    }

    /// Apply `f` element-wise; `f` returns `(value, derivative)`.
    pub fn map(&mut self, x: Var, f: impl Fn(f64) -> (f64, f64)) -> Var {
        let tx = self.value(x);
        let mut vals = Vec::with_capacity(tx.len());
        let mut deriv = Vec::with_capacity(tx.len());
        for &v in tx.data() {
            let (y, d) = f(v as f64);
            vals.push(y as f32);
            deriv.push(d as f32);
        }
        let out = Tensor::new(tx.shape(), vals).expect("same shape");
        self.push(out, Op::Elementwise { x, deriv }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > 0.0 { (v, 1.0) } else { (0.0, 0.0) })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, |v| {
            let e = v.exp();
            (e, e)
        })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.map(x, |v| (-v, -1.0))
    }

    /// Max pooling of `[n, c, h, w]` with square window `k`.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape().to_vec();
        if s.len() != 4 || pad >= k.max(1) {
            return Err(Error::shape(format!("maxpool2d: input {s:?}, kernel {k}, pad {pad}")));
        }
        let (oh, ow) = match (kernels::out_dim(s[2], k, stride, pad), kernels::out_dim(s[3], k, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::shape(format!("maxpool2d: input {s:?} smaller than kernel {k}"))),
        };
        let planes = s[0] * s[1];
        let mut out = vec![0f32; planes * oh * ow];
        let argmax = kernels::maxpool_forward(planes, s[2], s[3], k, stride, pad, oh, ow, tx.data(), &mut out);
        let out = Tensor::new(&[s[0], s[1], oh, ow], out)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, &[x]))
    }

    /// `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 4 {
            return Err(Error::shape(format!("global_avg_pool: expected [n, c, h, w], got {s:?}")));
        }
        let plane = s[2] * s[3];
        let data = tx
            .data()
            .chunks_exact(plane)
            .map(|p| (p.iter().map(|v| *v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        let out = Tensor::new(&[s[0], s[1]], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(x), &[x]))
    }

    /// Row-wise log-softmax of `[n, c]`.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 2 || s[1] == 0 {
            return Err(Error::shape(format!("log_softmax: expected [n, c], got {s:?}")));
        }
        let c = s[1];
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks_exact(c) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v as f64));
            let lse = m + row.iter().map(|v| (*v as f64 - m).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| (*v as f64 - lse) as f32));
        }
        let out = Tensor::new(s, out)?;
        Ok(self.push(out, Op::LogSoftmax(x), &[x]))
    }

    /// Pick one column per row: `[n, c] -> [n]`.
    pub fn select(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 2 || s[0] != idx.len() || idx.iter().any(|&i| i >= s[1]) {
            return Err(Error::shape(format!(
                "select: {} indices into {s:?}",
                idx.len()
            )));
        }
        let c = s[1];
        let data = idx.iter().enumerate().map(|(r, &i)| tx.data()[r * c + i]).collect();
        let out = Tensor::new(&[idx.len()], data)?;
        Ok(self.push(out, Op::Select { x, idx: idx.to_vec() }, &[x]))
    }

    /// Element-wise product with a constant buffer of the same length.
    pub fn scale_const(&mut self, x: Var, c: &[f32]) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != c.len() {
            return Err(shape_err("scale_const", tx.shape(), &[c.len()]));
        }
        let data = tx.data().iter().zip(c).map(|(a, b)| a * b).collect();
        let out = Tensor::new(tx.shape(), data)?;
        Ok(self.push(out, Op::ScaleConst { x, c: c.to_vec() }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| *v as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().map(|v| *v as f64).sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s as f32), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, gy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(&mut grads[v.0], gy.len(), |g| {
                            g.iter_mut().zip(gy).for_each(|(g, d)| *g += d)
                        });
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], gy.len(), |g| {
                        for ((g, d), o) in g.iter_mut().zip(gy).zip(bd) {
                            *g += d * o;
                        }
                    });
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], gy.len(), |g| {
                        for ((g, d), o) in g.iter_mut().zip(gy).zip(ad) {
                            *g += d * o;
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (ad, bd) = (ta.data(), tb.data());
                if self.needs(*a) {
                    // dA = dY B^T
                    accumulate(&mut grads[a.0], m * k, |g| {
                        for i in 0..m {
                            for p in 0..k {
                                let s: f64 = (0..n).map(|j| gy[i * n + j] as f64 * bd[p * n + j] as f64).sum();
                                g[i * k + p] += s as f32;
                            }
                        }
                    });
                }
                if self.needs(*b) {
                    // dB = A^T dY
                    accumulate(&mut grads[b.0], k * n, |g| {
                        for p in 0..k {
                            for j in 0..n {
                                let s: f64 = (0..m).map(|i| ad[i * k + p] as f64 * gy[i * n + j] as f64).sum();
                                g[p * n + j] += s as f32;
                            }
                        }
                    });
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, d_in, d_out) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
                let (xd, wd) = (tx.data(), tw.data());
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], n * d_in, |g| {
                        for r in 0..n {
                            for i in 0..d_in {
                                let s: f64 = (0..d_out).map(|o| gy[r * d_out + o] as f64 * wd[o * d_in + i] as f64).sum();
                                g[r * d_in + i] += s as f32;
                            }
                        }
                    });
                }
                if self.needs(*w) {
                    accumulate(&mut grads[w.0], d_out * d_in, |g| {
                        for o in 0..d_out {
                            for i in 0..d_in {
                                let s: f64 = (0..n).map(|r| gy[r * d_out + o] as f64 * xd[r * d_in + i] as f64).sum();
                                g[o * d_in + i] += s as f32;
                            }
                        }
                    });
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], d_out, |g| {
                            for (o, gv) in g.iter_mut().enumerate() {
                                *gv += (0..n).map(|r| gy[r * d_out + o] as f64).sum::<f64>() as f32;
                            }
                        });
                    }
                }
            }
            Op::Conv2d { x, w, geom } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let mut gx_buf = self.needs(*x).then(|| grads[x.0].take().unwrap_or_else(|| vec![0.0; tx.len()]));
                let mut gw_buf = self.needs(*w).then(|| grads[w.0].take().unwrap_or_else(|| vec![0.0; tw.len()]));
                kernels::conv2d_backward(
                    geom,
                    tx.data(),
                    tw.data(),
                    gy,
                    gx_buf.as_deref_mut(),
                    gw_buf.as_deref_mut(),
                );
                if let Some(g) = gx_buf {
                    grads[x.0] = Some(g);
                }
                if let Some(g) = gw_buf {
                    grads[w.0] = Some(g);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = node.value.shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let count = (n * plane) as f64;
                let gd = self.value(*gamma).data();
                let mut sum_dy = vec![0f64; c];
                let mut sum_dy_xhat = vec![0f64; c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            sum_dy[ch] += gy[i] as f64;
                            sum_dy_xhat[ch] += gy[i] as f64 * xhat[i] as f64;
                        }
                    }
                }
                if self.needs(*gamma) {
                    accumulate(&mut grads[gamma.0], c, |g| {
                        g.iter_mut().zip(&sum_dy_xhat).for_each(|(g, s)| *g += *s as f32)
                    });
                }
                if self.needs(*beta) {
                    accumulate(&mut grads[beta.0], c, |g| {
                        g.iter_mut().zip(&sum_dy).for_each(|(g, s)| *g += *s as f32)
                    });
                }
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], gy.len(), |g| {
                        for b in 0..n {
                            for ch in 0..c {
                                let off = (b * c + ch) * plane;
                                let scale = gd[ch] as f64 * inv_std[ch];
                                for i in off..off + plane {
                                    let d = if *train {
                                        scale
                                            * (gy[i] as f64
                                                - sum_dy[ch] / count
                                                - xhat[i] as f64 * sum_dy_xhat[ch] / count)
                                    } else {
                                        scale * gy[i] as f64
                                    };
                                    g[i] += d as f32;
                                }
                            }
                        }
                    });
                }
            }
            Op::Elementwise { x, deriv } => {
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], gy.len(), |g| {
                        for ((g, d), k) in g.iter_mut().zip(gy).zip(deriv) {
                            *g += d * k;
                        }
                    });
                }
            }
            Op::MaxPool { x, argmax } => {
                if self.needs(*x) {
                    let len = self.value(*x).len();
                    accumulate(&mut grads[x.0], len, |g| {
                        for (d, &i) in gy.iter().zip(argmax) {
                            g[i] += d;
                        }
                    });
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.needs(*x) {
                    let s = self.value(*x).shape();
                    let plane = s[2] * s[3];
                    let len = self.value(*x).len();
                    accumulate(&mut grads[x.0], len, |g| {
                        for (pi, p) in g.chunks_exact_mut(plane).enumerate() {
                            let d = gy[pi] / plane as f32;
                            p.iter_mut().for_each(|v| *v += d);
                        }
                    });
                }
            }
            Op::LogSoftmax(x) => {
                if self.needs(*x) {
                    let c = node.value.shape()[1];
                    let yd = node.value.data();
                    accumulate(&mut grads[x.0], gy.len(), |g| {
                        for ((gr, dr), yr) in g.chunks_exact_mut(c).zip(gy.chunks_exact(c)).zip(yd.chunks_exact(c)) {
                            let s: f64 = dr.iter().map(|v| *v as f64).sum();
                            for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                                *g += (*d as f64 - (*y as f64).exp() * s) as f32;
                            }
                        }
                    });
                }
            }
            Op::Select { x, idx } => {
                if self.needs(*x) {
                    let tx = self.value(*x);
                    let c = tx.shape()[1];
                    accumulate(&mut grads[x.0], tx.len(), |g| {
                        for (r, &i) in idx.iter().enumerate() {
                            g[r * c + i] += gy[r];
                        }
                    });
                }
            }
            Op::ScaleConst { x, c } => {
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], gy.len(), |g| {
                        for ((g, d), k) in g.iter_mut().zip(gy).zip(c) {
                            *g += d * k;
                        }
                    });
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                if self.needs(*x) {
                    let len = self.value(*x).len();
                    let d = match node.op {
                        Op::Mean(_) => gy[0] / len as f32,
                        _ => gy[0],
                    };
                    accumulate(&mut grads[x.0], len, |g| g.iter_mut().for_each(|v| *v += d));
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], gy.len(), |g| {
                        g.iter_mut().zip(gy).for_each(|(g, d)| *g += d)
                    });
                }
            }
        }
    }
}

/// Gradient of a selected scalar with respect to `input`.
///
/// `select` builds the computation on a fresh tape from the input variable
/// and returns the scalar to differentiate. The saliency map is the
/// element-wise absolute value of the result.
pub fn input_gradient(
    input: &Tensor,
    select: impl FnOnce(&mut Tape, Var) -> Result<Var>,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), true);
    let out = select(&mut tape, x)?;
    let grads = tape.backward(out)?;
    Ok(grads.wrt(x))
}

/// `|input_gradient|`.
pub fn saliency(
    input: &Tensor,
    select: impl FnOnce(&mut Tape, Var) -> Result<Var>,
) -> Result<Tensor> {
    let mut g = input_gradient(input, select)?;
    g.data_mut().iter_mut().for_each(|v| *v = v.abs());
    Ok(g)
}
