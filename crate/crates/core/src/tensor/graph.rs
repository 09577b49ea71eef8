//! The recording tape. Every primitive appends one node; `backward` walks the
//! nodes in exact reverse recording order.

use super::conv::{bilinear_table, gemm, ConvGeom, MatRef, Padding};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Option<Vec<f64>>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    NormalizeChannels {
        x: Var,
        eps: f64,
    },
    GlobalAvgPool(Var),
    AffineNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// A single-use computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a leaf, or `None` if no path reached it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `t.grad`; unreached leaves contribute zeros.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        t.touch_grad();
        match self.get(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

/// `(outer, channels, inner)` for a channel-axis operation on `[N, C, ...]`.
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::usage(format!(
            "channel operation needs at least [N, C], got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], numel(&shape[2..])))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_vec(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        needs_grad: bool,
    ) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len());
        if let Some(pos) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                op_name(&op),
                format!("non-finite output {} at element {pos}", value[pos]),
            ));
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, t: &Tensor, needs_grad: bool) -> Result<Var> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, needs_grad)
    }

    /// Records a leaf whose gradient is tracked.
    pub fn param(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    /// Records `t` as a leaf, tracked according to `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t, t.requires_grad())
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::usage("constant data does not match its shape"));
        }
        self.push(shape, data, Op::Leaf, false)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let n = &self.nodes[x.0];
        let value = n.value.iter().map(|&v| f(v)).collect();
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        self.push(shape, value, op, ng)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::usage(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op_name(&op))?;
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let value = na
            .value
            .iter()
            .zip(&nb.value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = na.shape.clone();
        let ng = na.needs_grad || nb.needs_grad;
        self.push(shape, value, op, ng)
    }

    /// 2-D convolution, NCHW input and OIKK weights.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::new(
            &self.nodes[x.0].shape,
            &self.nodes[w.0].shape,
            stride,
            padding,
        )?;
        if let Some(b) = b {
            if self.nodes[b.0].shape != [geom.o] {
                return Err(Error::config(format!(
                    "conv bias must have shape [{}], got {:?}",
                    geom.o, self.nodes[b.0].shape
                )));
            }
        }
        let (pl, p) = (geom.patch_len(), geom.out_pixels());
        let keep_cols = self.nodes[w.0].needs_grad;
        let mut cols = vec![0.0; if keep_cols { geom.n * pl * p } else { pl * p }];
        let mut out = vec![0.0; geom.n * geom.o * p];
        let in_len = geom.c * geom.h * geom.w;
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            for s in 0..geom.n {
                let cs = if keep_cols {
                    &mut cols[s * pl * p..(s + 1) * pl * p]
                } else {
                    &mut cols[..]
                };
                geom.im2col(&xv[s * in_len..(s + 1) * in_len], cs);
                let os = &mut out[s * geom.o * p..(s + 1) * geom.o * p];
                gemm(MatRef::new(wv, geom.o, pl), MatRef::new(cs, pl, p), 0.0, os);
                if let Some(b) = b {
                    let bv = &self.nodes[b.0].value;
                    for (o, row) in os.chunks_mut(p).enumerate() {
                        row.iter_mut().for_each(|v| *v += bv[o]);
                    }
                }
            }
        }
        let ng = self.nodes[x.0].needs_grad
            || self.nodes[w.0].needs_grad
            || b.is_some_and(|b| self.nodes[b.0].needs_grad);
        let op = Op::Conv2d {
            x,
            w,
            b,
            geom,
            cols: keep_cols.then_some(cols),
        };
        self.push(vec![geom.n, geom.o, geom.ho, geom.wo], out, op, ng)
    }

    /// Bilinear upsampling by an integer factor with half-pixel centers.
    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 2 {
            return Err(Error::config(format!(
                "upsample factor must be at least 2, got {factor}"
            )));
        }
        let (n, c, h, w) = super::dims4(&self.nodes[x.0].shape)?;
        let (ty, tx) = (bilinear_table(h, factor), bilinear_table(w, factor));
        let (ho, wo) = (h * factor, w * factor);
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; n * c * ho * wo];
        for (plane, dst) in xv.chunks(h * w).zip(out.chunks_mut(ho * wo)) {
            for (j, &(y0, y1, fy)) in ty.iter().enumerate() {
                let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
                for (i, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                    let bot = (1.0 - fx) * r1[x0] + fx * r1[x1];
                    dst[j * wo + i] = (1.0 - fy) * top + fy * bot;
                }
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(vec![n, c, ho, wo], out, Op::Upsample { x, factor }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Sum of all elements, as a shape-`[]` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.iter().sum();
        let ng = self.nodes[x.0].needs_grad;
        self.push(Vec::new(), vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = &self.nodes[x.0];
        if n.value.is_empty() {
            return Err(Error::usage("mean of an empty tensor"));
        }
        let m = n.value.iter().sum::<f64>() / n.value.len() as f64;
        let ng = n.needs_grad;
        self.push(Vec::new(), vec![m], Op::Mean(x), ng)
    }

    /// Softmax along axis 1.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (out, shape, ng) = self.channel_softmax(x, false)?;
        self.push(shape, out, Op::Softmax(x), ng)
    }

    /// Log-softmax along axis 1.
    pub fn log_softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (out, shape, ng) = self.channel_softmax(x, true)?;
        self.push(shape, out, Op::LogSoftmax(x), ng)
    }

    fn channel_softmax(&self, x: Var, log: bool) -> Result<(Vec<f64>, Vec<usize>, bool)> {
        let node = &self.nodes[x.0];
        let (n, c, s) = channel_layout(&node.shape)?;
        let xv = &node.value;
        let mut out = vec![0.0; xv.len()];
        for b in 0..n {
            let base = b * c * s;
            for p in 0..s {
                let at = |k: usize| base + k * s + p;
                let mx = (0..c).map(|k| xv[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..c).map(|k| (xv[at(k)] - mx).exp()).sum();
                let lz = z.ln();
                for k in 0..c {
                    out[at(k)] = if log {
                        xv[at(k)] - mx - lz
                    } else {
                        (xv[at(k)] - mx).exp() / z
                    };
                }
            }
        }
        Ok((out, node.shape.clone(), node.needs_grad))
    }

    /// Concatenates along axis 1, preserving operand order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::config("concat of zero tensors"))?;
        let ref_shape = self.nodes[first.0].shape.clone();
        let (n, _, s) = channel_layout(&ref_shape)?;
        let mut c_total = 0;
        for &v in xs {
            let sh = &self.nodes[v.0].shape;
            if sh.len() != ref_shape.len() || sh[0] != n || sh[2..] != ref_shape[2..] {
                return Err(Error::config(format!(
                    "concat operands {ref_shape:?} and {sh:?} differ outside the channel axis"
                )));
            }
            c_total += sh[1];
        }
        let mut out = Vec::with_capacity(n * c_total * s);
        for b in 0..n {
            for &v in xs {
                let node = &self.nodes[v.0];
                let c = node.shape[1];
                out.extend_from_slice(&node.value[b * c * s..(b + 1) * c * s]);
            }
        }
        let mut shape = ref_shape;
        shape[1] = c_total;
        let ng = xs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(shape, out, Op::Concat(xs.to_vec()), ng)
    }

    /// Scales every channel vector to unit length, with the norm floored at `eps`.
    pub fn normalize_channels(&mut self, x: Var, eps: f64) -> Result<Var> {
        let node = &self.nodes[x.0];
        let (n, c, s) = channel_layout(&node.shape)?;
        let mut out = node.value.clone();
        for b in 0..n {
            for p in 0..s {
                let idx = |k: usize| b * c * s + k * s + p;
                let norm = (0..c)
                    .map(|k| node.value[idx(k)].powi(2))
                    .sum::<f64>()
                    .sqrt();
                let d = norm.max(eps);
                (0..c).for_each(|k| out[idx(k)] /= d);
            }
        }
        let (shape, ng) = (node.shape.clone(), node.needs_grad);
        self.push(shape, out, Op::NormalizeChannels { x, eps }, ng)
    }

    /// Mean over all spatial positions: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let node = &self.nodes[x.0];
        let (n, c, h, w) = super::dims4(&node.shape)?;
        let out = node
            .value
            .chunks(h * w)
            .map(|pl| pl.iter().sum::<f64>() / (h * w) as f64)
            .collect();
        let ng = node.needs_grad;
        self.push(vec![n, c], out, Op::GlobalAvgPool(x), ng)
    }

    /// Per-sample, per-channel normalization over space followed by a per-channel affine map.
    pub fn affine_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (n, c, h, w) = super::dims4(&self.nodes[x.0].shape)?;
        if self.nodes[gamma.0].shape != [c] || self.nodes[beta.0].shape != [c] {
            return Err(Error::config(format!(
                "affine norm parameters must have shape [{c}]"
            )));
        }
        let m = h * w;
        let xv = &self.nodes[x.0].value;
        let (gv, bv) = (&self.nodes[gamma.0].value, &self.nodes[beta.0].value);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; n * c];
        let mut out = vec![0.0; xv.len()];
        for (pi, plane) in xv.chunks(m).enumerate() {
            let mean = plane.iter().sum::<f64>() / m as f64;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[pi] = is;
            let ch = pi % c;
            for (i, &v) in plane.iter().enumerate() {
                let xh = (v - mean) * is;
                xhat[pi * m + i] = xh;
                out[pi * m + i] = gv[ch] * xh + bv[ch];
            }
        }
        let ng = [x, gamma, beta].iter().any(|v| self.nodes[v.0].needs_grad);
        let shape = self.nodes[x.0].shape.clone();
        self.push(
            shape,
            out,
            Op::AffineNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Reverse-mode sweep from a one-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &dy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Adds into the gradient slot of `v` if it is tracked.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (pl, p) = (geom.patch_len(), geom.out_pixels());
                let in_len = geom.c * geom.h * geom.w;
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        for s in 0..geom.n {
                            for o in 0..geom.o {
                                let off = (s * geom.o + o) * p;
                                g[o] += dy[off..off + p].iter().sum::<f64>();
                            }
                        }
                    });
                }
                if let Some(cols) = cols {
                    acc(*w, &mut |g| {
                        for s in 0..geom.n {
                            let dys = &dy[s * geom.o * p..(s + 1) * geom.o * p];
                            let cs = &cols[s * pl * p..(s + 1) * pl * p];
                            gemm(
                                MatRef::new(dys, geom.o, p),
                                MatRef::new(cs, pl, p).t(),
                                1.0,
                                g,
                            );
                        }
                    });
                }
                let wv = &nodes[w.0].value;
                acc(*x, &mut |g| {
                    let mut dcols = vec![0.0; pl * p];
                    for s in 0..geom.n {
                        let dys = &dy[s * geom.o * p..(s + 1) * geom.o * p];
                        gemm(
                            MatRef::new(wv, geom.o, pl).t(),
                            MatRef::new(dys, geom.o, p),
                            0.0,
                            &mut dcols,
                        );
                        geom.col2im(&dcols, &mut g[s * in_len..(s + 1) * in_len]);
                    }
                });
            }
            Op::Upsample { x, factor } => {
                let (_, _, h, w) = super::dims4(&nodes[x.0].shape).expect("checked at record");
                let (ty, tx) = (bilinear_table(h, *factor), bilinear_table(w, *factor));
                let wo = w * factor;
                let ho = h * factor;
                acc(*x, &mut |g| {
                    for (plane, src) in g.chunks_mut(h * w).zip(dy.chunks(ho * wo)) {
                        for (j, &(y0, y1, fy)) in ty.iter().enumerate() {
                            for (i, &(x0, x1, fx)) in tx.iter().enumerate() {
                                let d = src[j * wo + i];
                                plane[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * d;
                                plane[y0 * w + x1] += (1.0 - fy) * fx * d;
                                plane[y1 * w + x0] += fy * (1.0 - fx) * d;
                                plane[y1 * w + x1] += fy * fx * d;
                            }
                        }
                    }
                });
            }
            Op::Relu(x) => acc(*x, &mut |g| {
                for ((g, &d), &o) in g.iter_mut().zip(dy).zip(y) {
                    if o > 0.0 {
                        *g += d;
                    }
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |g| {
                for ((g, &d), &o) in g.iter_mut().zip(dy).zip(y) {
                    *g += d * o * (1.0 - o);
                }
            }),
            Op::Softplus(x) => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *g += d * sigmoid(v);
                    }
                })
            }
            Op::Log(x) => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *g += d / v;
                    }
                })
            }
            Op::Softmax(x) | Op::LogSoftmax(x) => {
                let log = matches!(node.op, Op::LogSoftmax(_));
                let (n, c, s) = channel_layout(&node.shape).expect("checked at record");
                acc(*x, &mut |g| {
                    for b in 0..n {
                        for p in 0..s {
                            let at = |k: usize| b * c * s + k * s + p;
                            if log {
                                let total: f64 = (0..c).map(|k| dy[at(k)]).sum();
                                for k in 0..c {
                                    g[at(k)] += dy[at(k)] - y[at(k)].exp() * total;
                                }
                            } else {
                                let dot: f64 = (0..c).map(|k| dy[at(k)] * y[at(k)]).sum();
                                for k in 0..c {
                                    g[at(k)] += y[at(k)] * (dy[at(k)] - dot);
                                }
                            }
                        }
                    }
                });
            }
            Op::Concat(xs) => {
                let (n, _, s) = channel_layout(&node.shape).expect("checked at record");
                let c_total = node.shape[1];
                let mut offset = 0;
                for &v in xs {
                    let c = nodes[v.0].shape[1];
                    acc(v, &mut |g| {
                        for b in 0..n {
                            let src =
                                &dy[(b * c_total + offset) * s..(b * c_total + offset + c) * s];
                            g[b * c * s..(b + 1) * c * s]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(g, d)| *g += d);
                        }
                    });
                    offset += c;
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                acc(*b, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                acc(*b, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * o;
                    }
                });
                acc(*b, &mut |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * o;
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |g| {
                g.iter_mut().zip(dy).for_each(|(g, d)| *g += s * d)
            }),
            Op::Square(x) => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *g += 2.0 * v * d;
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|g| *g += dy[0])),
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                acc(*x, &mut |g| g.iter_mut().for_each(|g| *g += dy[0] / n))
            }
            Op::NormalizeChannels { x, eps } => {
                let xv = &nodes[x.0].value;
                let (n, c, s) = channel_layout(&node.shape).expect("checked at record");
                acc(*x, &mut |g| {
                    for b in 0..n {
                        for p in 0..s {
                            let at = |k: usize| b * c * s + k * s + p;
                            let norm = (0..c).map(|k| xv[at(k)].powi(2)).sum::<f64>().sqrt();
                            if norm > *eps {
                                let dot: f64 = (0..c).map(|k| y[at(k)] * dy[at(k)]).sum();
                                for k in 0..c {
                                    g[at(k)] += (dy[at(k)] - y[at(k)] * dot) / norm;
                                }
                            } else {
                                for k in 0..c {
                                    g[at(k)] += dy[at(k)] / eps;
                                }
                            }
                        }
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = super::dims4(&nodes[x.0].shape).expect("checked at record");
                let m = (h * w) as f64;
                acc(*x, &mut |g| {
                    for (plane, &d) in g.chunks_mut(h * w).zip(dy) {
                        plane.iter_mut().for_each(|g| *g += d / m);
                    }
                });
            }
            Op::AffineNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (_, c, h, w) = super::dims4(&node.shape).expect("checked at record");
                let m = h * w;
                let gv = &nodes[gamma.0].value;
                acc(*gamma, &mut |g| {
                    for (pi, (d, xh)) in dy.chunks(m).zip(xhat.chunks(m)).enumerate() {
                        g[pi % c] += d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                acc(*beta, &mut |g| {
                    for (pi, d) in dy.chunks(m).enumerate() {
                        g[pi % c] += d.iter().sum::<f64>();
                    }
                });
                acc(*x, &mut |g| {
                    for (pi, (d, xh)) in dy.chunks(m).zip(xhat.chunks(m)).enumerate() {
                        let gm = gv[pi % c];
                        let sum_d: f64 = d.iter().sum::<f64>() * gm;
                        let sum_dx: f64 = d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() * gm;
                        let k = inv_std[pi] / m as f64;
                        for i in 0..m {
                            g[pi * m + i] += k * (m as f64 * gm * d[i] - sum_d - xh[i] * sum_dx);
                        }
                    }
                });
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::Upsample { .. } => "bilinear_upsample",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Softplus(_) => "softplus",
        Op::Log(_) => "log",
        Op::Softmax(_) => "softmax",
        Op::LogSoftmax(_) => "log_softmax",
        Op::Concat(_) => "concat",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Square(_) => "square",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::NormalizeChannels { .. } => "normalize_channels",
        Op::GlobalAvgPool(_) => "global_avg_pool",
        Op::AffineNorm { .. } => "affine_norm",
    }
}
