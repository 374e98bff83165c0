//! Eager Wengert-list autodiff.
//!
//! Every operation computes its value immediately and records how to push a
//! gradient back to its inputs. `backward` walks the list in reverse, so the
//! accumulation order is fixed by recording order.

use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Reshape(Var),
    Conv1d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    AddConst(Var),
    SumAll(Var),
    MeanAll(Var),
    SliceCh { x: Var, start: usize, len: usize },
    ConcatCh(Vec<Var>),
    SumCh(Var),
    Upsample { x: Var, factor: usize },
    Interp { x: Var, taps: Vec<Vec<(usize, f64)>> },
    Bce { pred: Var, target: Vec<f64>, eps: f64 },
    StopGrad,
    StraightThrough { z: Var },
    GatherRows { table: Var, idx: Vec<usize> },
    ToRows(Var),
    FromRows { x: Var, batch: usize },
    NegSqDist { z: Var, c: Var },
    SoftmaxRows(Var),
    MeanRows(Var),
    Permute { x: Var, perm: Vec<usize> },
    Js { p: Var, q: Var, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if `v` requires grad and is
    /// reachable from the root.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of `v`, or zeros if none reached it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

/// Input position of output step `i` under half-sample alignment.
fn source_position(i: usize, factor: usize) -> f64 {
    (i as f64 + 0.5) / factor as f64 - 0.5
}

fn linear_taps(t: usize, factor: usize) -> Vec<Vec<(usize, f64)>> {
    (0..t * factor)
        .map(|i| {
            let u = source_position(i, factor).clamp(0.0, (t - 1) as f64);
            let j0 = u.floor() as usize;
            let w = u - j0 as f64;
            vec![(j0, 1.0 - w), ((j0 + 1).min(t - 1), w)]
        })
        .collect()
}

fn cubic_taps(t: usize, factor: usize) -> Vec<Vec<(usize, f64)>> {
    let last = t as i64 - 1;
    (0..t * factor)
        .map(|i| {
            let u = source_position(i, factor);
            let j = u.floor();
            let f = u - j;
            let w = [
                (1.0 - f).powi(3) / 6.0,
                (3.0 * f * f * f - 6.0 * f * f + 4.0) / 6.0,
                (-3.0 * f * f * f + 3.0 * f * f + 3.0 * f + 1.0) / 6.0,
                f * f * f / 6.0,
            ];
            (0..4).map(|k| ((j as i64 - 1 + k as i64).clamp(0, last) as usize, w[k])).collect()
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    /// 1D cross-correlation of `x: [B, Cin, T]` with `w: [Cout, Cin, K]` plus
    /// bias `b: [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (batch, cin, time) = self.value(x).dims3()?;
        let (cout, wcin, kernel) = self.value(w).dims3()?;
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {wcin} input channels, got {cin}"
            )));
        }
        if self.shape(b) != [cout] {
            return Err(Error::ShapeMismatch(format!("bias shape {:?}", self.shape(b))));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        let geom = ConvGeometry {
            batch,
            in_channels: cin,
            out_channels: cout,
            time,
            kernel,
            stride,
            padding,
        };
        if time + 2 * padding < kernel {
            return Err(Error::ShapeMismatch(format!(
                "time {time} with padding {padding} shorter than kernel {kernel}"
            )));
        }
        let out = kernels::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::new(vec![batch, cout, geom.out_time()], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Conv1d { x, w, b, geom }, rg))
    }

    /// Per-timestep affine map of `x: [B, Cin, T]` by `w: [Cout, Cin]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (cout, cin) = self.value(w).dims2()?;
        // a linear map over channels is a kernel-1 convolution; view the weight as such
        let w3 = self.reshape(w, vec![cout, cin, 1])?;
        self.conv1d(x, w3, b, 1, 0)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu { x, slope }, |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
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

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape(x), c.shape())));
        }
        let t = self.value(x);
        let data = t.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::AddConst(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Channels `start..start+len` of `x: [B, C, T]`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (b, c, t) = self.value(x).dims3()?;
        if start + len > c {
            return Err(Error::ShapeMismatch(format!("channel slice {start}+{len} of {c}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * len * t);
        for bi in 0..b {
            data.extend_from_slice(&src[(bi * c + start) * t..][..len * t]);
        }
        let value = Tensor::new(vec![b, len, t], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceCh { x, start, len }, rg))
    }

    /// Concatenates `[B, Ci, T]` tensors along channels.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let (b, _, t) = self.value(xs[0]).dims3()?;
        let mut total = 0;
        for &x in xs {
            let (bx, c, tx) = self.value(x).dims3()?;
            if bx != b || tx != t {
                return Err(Error::ShapeMismatch("concat batch/time mismatch".into()));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(b * total * t);
        for bi in 0..b {
            for &x in xs {
                let v = self.value(x);
                let c = v.shape()[1];
                data.extend_from_slice(&v.data()[bi * c * t..][..c * t]);
            }
        }
        let value = Tensor::new(vec![b, total, t], data)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(value, Op::ConcatCh(xs.to_vec()), rg))
    }

    /// Sums `x: [B, C, T]` over channels into `[B, 1, T]`.
    pub fn sum_channels(&mut self, x: Var) -> Result<Var> {
        let (b, c, t) = self.value(x).dims3()?;
        let src = self.value(x).data();
        let mut data = vec![0.0; b * t];
        for bi in 0..b {
            for ci in 0..c {
                let row = &src[(bi * c + ci) * t..][..t];
                data[bi * t..][..t].iter_mut().zip(row).for_each(|(d, s)| *d += s);
            }
        }
        let value = Tensor::new(vec![b, 1, t], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SumCh(x), rg))
    }

    /// Nearest-neighbour upsampling along time.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (b, c, t) = self.value(x).dims3()?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * c * t * factor);
        for row in src.chunks(t) {
            for &v in row {
                data.extend(std::iter::repeat_n(v, factor));
            }
        }
        let value = Tensor::new(vec![b, c, t * factor], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Upsample { x, factor }, rg))
    }

    /// Linear-interpolation upsampling along time with half-sample
    /// alignment: output `i` reads input position `(i + ½)/factor − ½`,
    /// clamped to the ends.
    pub fn upsample_linear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let t = self.check_upsample(x, factor)?;
        self.interp(x, linear_taps(t, factor))
    }

    /// Uniform cubic B-spline upsampling along time: the input samples are
    /// control points at positions `(j + ½)·factor − ½` of the output
    /// grid, with the end points repeated. The output is twice continuously
    /// differentiable in time.
    pub fn upsample_cubic(&mut self, x: Var, factor: usize) -> Result<Var> {
        let t = self.check_upsample(x, factor)?;
        self.interp(x, cubic_taps(t, factor))
    }

    fn check_upsample(&self, x: Var, factor: usize) -> Result<usize> {
        let (_, _, t) = self.value(x).dims3()?;
        if factor == 0 || t == 0 {
            return Err(Error::ShapeMismatch(format!("upsample of length {t} by {factor}")));
        }
        Ok(t)
    }

    /// Fixed linear map along time: output step `i` is `Σ w·x[j]` over
    /// `taps[i]`.
    fn interp(&mut self, x: Var, taps: Vec<Vec<(usize, f64)>>) -> Result<Var> {
        let (b, c, t) = self.value(x).dims3()?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * c * taps.len());
        for row in src.chunks(t) {
            data.extend(taps.iter().map(|tap| tap.iter().map(|&(j, w)| w * row[j]).sum::<f64>()));
        }
        let value = Tensor::new(vec![b, c, taps.len()], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Interp { x, taps }, rg))
    }

    /// Elementwise binary cross-entropy of probabilities `pred` against
    /// `target`, with `pred` clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor, eps: f64) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(pred),
                target.shape()
            )));
        }
        let p = self.value(pred);
        let data = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&ph, &y)| {
                let ph = ph.clamp(eps, 1.0 - eps);
                -y * ph.ln() - (1.0 - y) * (1.0 - ph).ln()
            })
            .collect();
        let value = Tensor::new(p.shape().to_vec(), data)?;
        let rg = self.rg(pred);
        Ok(self.push(value, Op::Bce { pred, target: target.data().to_vec(), eps }, rg))
    }

    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::StopGrad, false)
    }

    /// Forward value of `b`; backward routes the incoming gradient to `z`
    /// unchanged and nothing to `b`.
    pub fn straight_through(&mut self, z: Var, b: Var) -> Result<Var> {
        self.same_shape(z, b)?;
        let value = self.value(b).clone();
        let rg = self.rg(z);
        Ok(self.push(value, Op::StraightThrough { z }, rg))
    }

    /// Rows `idx` of `table: [K, d]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (k, d) = self.value(table).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= k) {
            return Err(Error::OutOfRange(format!("row {bad} of {k}")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&src[i * d..][..d]);
        }
        let value = Tensor::new(vec![idx.len(), d], data)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::GatherRows { table, idx: idx.to_vec() }, rg))
    }

    /// `[B, C, T]` to `[B*T, C]`, row `b*T + t`.
    pub fn to_rows(&mut self, x: Var) -> Result<Var> {
        let (b, c, t) = self.value(x).dims3()?;
        let src = self.value(x).data();
        let mut data = vec![0.0; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    data[(bi * t + ti) * c + ci] = src[(bi * c + ci) * t + ti];
                }
            }
        }
        let value = Tensor::new(vec![b * t, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ToRows(x), rg))
    }

    /// Inverse of [`Tape::to_rows`].
    pub fn from_rows(&mut self, x: Var, batch: usize) -> Result<Var> {
        let (rows, c) = self.value(x).dims2()?;
        if batch == 0 || rows % batch != 0 {
            return Err(Error::ShapeMismatch(format!("{rows} rows into batch {batch}")));
        }
        let t = rows / batch;
        let src = self.value(x).data();
        let mut data = vec![0.0; rows * c];
        for bi in 0..batch {
            for ci in 0..c {
                for ti in 0..t {
                    data[(bi * c + ci) * t + ti] = src[(bi * t + ti) * c + ci];
                }
            }
        }
        let value = Tensor::new(vec![batch, c, t], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::FromRows { x, batch }, rg))
    }

    /// `out[s, k] = -‖z_s − c_k‖²` for `z: [S, d]`, `c: [K, d]`.
    pub fn neg_sq_dist(&mut self, z: Var, c: Var) -> Result<Var> {
        let (s, d) = self.value(z).dims2()?;
        let (k, dc) = self.value(c).dims2()?;
        if d != dc {
            return Err(Error::ShapeMismatch(format!("latent dim {d} vs codebook dim {dc}")));
        }
        let out = kernels::neg_sq_dist(self.value(z).data(), s, self.value(c).data(), k, d);
        let value = Tensor::new(vec![s, k], out)?;
        let rg = self.rg(z) || self.rg(c);
        Ok(self.push(value, Op::NegSqDist { z, c }, rg))
    }

    /// Row-wise softmax of `x: [S, K]`.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, k) = self.value(x).dims2()?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(k) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    /// Column means of `x: [S, K]`, giving `[K]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (s, k) = self.value(x).dims2()?;
        let mut data = vec![0.0; k];
        for row in self.value(x).data().chunks(k) {
            data.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        data.iter_mut().for_each(|d| *d /= s as f64);
        let value = Tensor::new(vec![k], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MeanRows(x), rg))
    }

    /// `y[i] = x[perm[i]]` for a vector `x`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let n = self.value(x).numel();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let src = self.value(x).data();
        let data = perm.iter().map(|&p| src[p]).collect();
        let value = Tensor::new(vec![n], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    /// Jensen–Shannon divergence (nats) between two vectors treated as
    /// distributions: each is floored at `eps` and renormalized first.
    pub fn js_divergence(&mut self, p: Var, q: Var, eps: f64) -> Result<Var> {
        if self.value(p).numel() != self.value(q).numel() {
            return Err(Error::LengthMismatch {
                left: self.value(p).numel(),
                right: self.value(q).numel(),
            });
        }
        let pn = floor_normalize(self.value(p).data(), eps);
        let qn = floor_normalize(self.value(q).data(), eps);
        let v = js_normalized(&pn, &qn);
        let rg = self.rg(p) || self.rg(q);
        Ok(self.push(Tensor::scalar(v), Op::Js { p, q, eps }, rg))
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let n = self.value(root).numel();
        if n != 1 {
            return Err(Error::NonScalarRoot(n));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut shapes: Vec<Vec<usize>> = self.nodes[..=root.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        grads.resize(self.nodes.len(), None);
        shapes.extend(self.nodes[root.0 + 1..].iter().map(|n| n.value.shape().to_vec()));
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, d: &[f64]| {
            if self.nodes[v.0].requires_grad {
                add_into(&mut grads[v.0], d);
            }
        };
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::Conv1d { x, w, b, geom } => {
                let need = (self.rg(*x), self.rg(*w), self.rg(*b));
                let cg = kernels::conv1d_backward(geom, val(*x), val(*w), g, need);
                if let Some(dx) = cg.dx {
                    send(*x, &dx);
                }
                if let Some(dw) = cg.dw {
                    send(*w, &dw);
                }
                if let Some(db) = cg.db {
                    send(*b, &db);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let d: Vec<f64> = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { slope * gv })
                    .collect();
                send(*x, &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<f64> = out.iter().zip(g).map(|(&y, &gv)| gv * y * (1.0 - y)).collect();
                send(*x, &d);
            }
            Op::Add(a, b) => {
                send(*a, g);
                send(*b, g);
            }
            Op::Sub(a, b) => {
                send(*a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                send(*b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(val(*b)).map(|(gv, bv)| gv * bv).collect();
                let db: Vec<f64> = g.iter().zip(val(*a)).map(|(gv, av)| gv * av).collect();
                send(*a, &da);
                send(*b, &db);
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                send(*x, &d);
            }
            Op::Square(x) => {
                let d: Vec<f64> = g.iter().zip(val(*x)).map(|(gv, xv)| 2.0 * gv * xv).collect();
                send(*x, &d);
            }
            Op::AddConst(x) | Op::Reshape(x) => send(*x, g),
            Op::SumAll(x) => {
                let d = vec![g[0]; self.nodes[x.0].value.numel()];
                send(*x, &d);
            }
            Op::MeanAll(x) => {
                let n = self.nodes[x.0].value.numel();
                let d = vec![g[0] / n as f64; n];
                send(*x, &d);
            }
            Op::SliceCh { x, start, len } => {
                let xs = self.nodes[x.0].value.shape();
                let (b, c, t) = (xs[0], xs[1], xs[2]);
                let mut d = vec![0.0; b * c * t];
                for bi in 0..b {
                    d[(bi * c + start) * t..][..len * t].copy_from_slice(&g[bi * len * t..][..len * t]);
                }
                send(*x, &d);
            }
            Op::ConcatCh(xs) => {
                let s = node.value.shape();
                let (b, total, t) = (s[0], s[1], s[2]);
                let mut offset = 0;
                for &x in xs {
                    let c = self.nodes[x.0].value.shape()[1];
                    let mut d = Vec::with_capacity(b * c * t);
                    for bi in 0..b {
                        d.extend_from_slice(&g[(bi * total + offset) * t..][..c * t]);
                    }
                    send(x, &d);
                    offset += c;
                }
            }
            Op::SumCh(x) => {
                let s = self.nodes[x.0].value.shape();
                let (b, c, t) = (s[0], s[1], s[2]);
                let mut d = vec![0.0; b * c * t];
                for bi in 0..b {
                    for ci in 0..c {
                        d[(bi * c + ci) * t..][..t].copy_from_slice(&g[bi * t..][..t]);
                    }
                }
                send(*x, &d);
            }
            Op::Upsample { x, factor } => {
                let d: Vec<f64> = g.chunks(*factor).map(|c| c.iter().sum()).collect();
                send(*x, &d);
            }
            Op::Interp { x, taps } => {
                let t = *self.value(*x).shape().last().unwrap_or(&0);
                let mut d = vec![0.0; self.value(*x).numel()];
                for (drow, grow) in d.chunks_mut(t).zip(g.chunks(taps.len())) {
                    for (tap, &gv) in taps.iter().zip(grow) {
                        for &(j, w) in tap {
                            drow[j] += w * gv;
                        }
                    }
                }
                send(*x, &d);
            }
            Op::Bce { pred, target, eps } => {
                let d: Vec<f64> = val(*pred)
                    .iter()
                    .zip(target)
                    .zip(g)
                    .map(|((&ph, &y), &gv)| {
                        if ph < *eps || ph > 1.0 - eps {
                            0.0
                        } else {
                            gv * (-y / ph + (1.0 - y) / (1.0 - ph))
                        }
                    })
                    .collect();
                send(*pred, &d);
            }
            Op::StraightThrough { z } => send(*z, g),
            Op::GatherRows { table, idx } => {
                let s = self.nodes[table.0].value.shape();
                let d_dim = s[1];
                let mut d = vec![0.0; s[0] * d_dim];
                for (r, &k) in idx.iter().enumerate() {
                    d[k * d_dim..][..d_dim]
                        .iter_mut()
                        .zip(&g[r * d_dim..][..d_dim])
                        .for_each(|(a, b)| *a += b);
                }
                send(*table, &d);
            }
            Op::ToRows(x) => {
                let s = self.nodes[x.0].value.shape();
                let (b, c, t) = (s[0], s[1], s[2]);
                let mut d = vec![0.0; b * c * t];
                for bi in 0..b {
                    for ci in 0..c {
                        for ti in 0..t {
                            d[(bi * c + ci) * t + ti] = g[(bi * t + ti) * c + ci];
                        }
                    }
                }
                send(*x, &d);
            }
            Op::FromRows { x, batch } => {
                let s = self.nodes[x.0].value.shape();
                let (rows, c) = (s[0], s[1]);
                let t = rows / batch;
                let mut d = vec![0.0; rows * c];
                for bi in 0..*batch {
                    for ci in 0..c {
                        for ti in 0..t {
                            d[(bi * t + ti) * c + ci] = g[(bi * c + ci) * t + ti];
                        }
                    }
                }
                send(*x, &d);
            }
            Op::NegSqDist { z, c } => {
                let zs = self.nodes[z.0].value.shape();
                let (s, dim) = (zs[0], zs[1]);
                let k = self.nodes[c.0].value.shape()[0];
                let (zv, cv) = (val(*z), val(*c));
                if self.rg(*z) {
                    let mut dz = vec![0.0; s * dim];
                    for si in 0..s {
                        let row = &mut dz[si * dim..][..dim];
                        for ki in 0..k {
                            let gk = g[si * k + ki];
                            if gk == 0.0 {
                                continue;
                            }
                            for di in 0..dim {
                                row[di] -= 2.0 * gk * (zv[si * dim + di] - cv[ki * dim + di]);
                            }
                        }
                    }
                    send(*z, &dz);
                }
                if self.rg(*c) {
                    let mut dc = vec![0.0; k * dim];
                    for si in 0..s {
                        for ki in 0..k {
                            let gk = g[si * k + ki];
                            if gk == 0.0 {
                                continue;
                            }
                            let row = &mut dc[ki * dim..][..dim];
                            for di in 0..dim {
                                row[di] += 2.0 * gk * (zv[si * dim + di] - cv[ki * dim + di]);
                            }
                        }
                    }
                    send(*c, &dc);
                }
            }
            Op::SoftmaxRows(x) => {
                let k = node.value.shape()[1];
                let mut d = vec![0.0; out.len()];
                for ((dr, yr), gr) in d.chunks_mut(k).zip(out.chunks(k)).zip(g.chunks(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, gv)| y * gv).sum();
                    for ((dv, y), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = y * (gv - dot);
                    }
                }
                send(*x, &d);
            }
            Op::MeanRows(x) => {
                let s = self.nodes[x.0].value.shape();
                let (rows, k) = (s[0], s[1]);
                let scale = 1.0 / rows as f64;
                let mut d = Vec::with_capacity(rows * k);
                for _ in 0..rows {
                    d.extend(g.iter().map(|v| v * scale));
                }
                send(*x, &d);
            }
            Op::Permute { x, perm } => {
                let mut d = vec![0.0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    d[p] += g[i];
                }
                send(*x, &d);
            }
            Op::Js { p, q, eps } => {
                let (dp, dq) = js_grad(val(*p), val(*q), *eps);
                let dp: Vec<f64> = dp.iter().map(|v| v * g[0]).collect();
                let dq: Vec<f64> = dq.iter().map(|v| v * g[0]).collect();
                send(*p, &dp);
                send(*q, &dq);
            }
        }
    }
}

pub(crate) fn floor_normalize(x: &[f64], eps: f64) -> Vec<f64> {
    let floored: Vec<f64> = x.iter().map(|&v| v.max(eps)).collect();
    let s: f64 = floored.iter().sum();
    floored.iter().map(|v| v / s).collect()
}

pub(crate) fn js_normalized(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        acc += 0.5 * a * (a / m).ln() + 0.5 * b * (b / m).ln();
    }
    acc.max(0.0)
}

/// Gradient of the floored/renormalized JS divergence w.r.t. the raw inputs.
fn js_grad(p: &[f64], q: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let pn = floor_normalize(p, eps);
    let qn = floor_normalize(q, eps);
    // ∂JS/∂P_i = ½ ln(P_i / M_i)
    let gp: Vec<f64> = pn.iter().zip(&qn).map(|(&a, &b)| 0.5 * (a / (0.5 * (a + b))).ln()).collect();
    let gq: Vec<f64> = pn.iter().zip(&qn).map(|(&a, &b)| 0.5 * (b / (0.5 * (a + b))).ln()).collect();
    let back = |raw: &[f64], norm: &[f64], gn: &[f64]| -> Vec<f64> {
        let s: f64 = raw.iter().map(|&v| v.max(eps)).sum();
        let dot: f64 = gn.iter().zip(norm).map(|(a, b)| a * b).sum();
        raw.iter()
            .zip(gn)
            .map(|(&r, &gv)| if r > eps { (gv - dot) / s } else { 0.0 })
            .collect()
    };
    (back(p, &pn, &gp), back(q, &qn, &gq))
}
