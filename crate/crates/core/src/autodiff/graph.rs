use super::tensor::{dot, l2_norm, Tensor};
use crate::error::{CpcdError, Result};

/// Inputs to `acos` are clamped to `[-1 + ACOS_EPS, 1 - ACOS_EPS]`.
pub const ACOS_EPS: f64 = 1e-7;

/// Rows whose norm falls below this are rejected by `l2_normalize`.
pub const MIN_NORM: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a local gradient rule. Only used to prove that
/// the gradient checks catch real mistakes.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFault {
    FlipAcosSign,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Cos(Var),
    Acos { x: Var, clamped: Vec<bool> },
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    SumLastAxis(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Dot(Var, Var),
    RowDot(Var, Var),
    BatchedMatVec(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    L2Normalize(Var),
    LogSumExp(Var),
    LogSumExpExcluding(Var),
    LogAddExp(Var, Var),
    SelectLastAxis { x: Var, idx: Vec<usize> },
    Conv2d { input: Var, weight: Var, geom: ConvGeom },
    GlobalAvgPool(Var),
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eagerly evaluated reverse-mode tape.
///
/// Nodes are appended in evaluation order, so insertion order is already a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    acos_clamps: usize,
    fault: Option<GradFault>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> CpcdError {
    CpcdError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match dst {
        Some(d) => d.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *dst = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn set_fault(&mut self, fault: Option<GradFault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of `acos` inputs that had to be clamped so far.
    pub fn acos_clamp_count(&self) -> usize {
        self.acos_clamps
    }

    /// Records a leaf. Gradients are tracked when the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        if !t.is_finite() {
            return Err(CpcdError::NonFinite(format!(
                "graph leaf of shape {:?}",
                t.shape()
            )));
        }
        let rg = t.requires_grad();
        Ok(self.push(t, Op::Leaf, rg))
    }

    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t.with_requires_grad(false))
    }

    /// Copy of `v`'s value with no path back into the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone().with_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&a| f(a)).collect();
        let out = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds a vector along the last axis of `a` (bias broadcast).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let c = ta.cols();
        if tb.numel() != c || tb.shape().len() != 1 {
            return Err(mismatch("add_bias", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(c) {
            chunk.iter_mut().zip(tb.data()).for_each(|(x, b)| *x += b);
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |a| a * c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |a| a + c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |a| a.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, Op::Cos(x), f64::cos)
    }

    /// `acos` with inputs clamped to `[-1 + ACOS_EPS, 1 - ACOS_EPS]`; clamped
    /// entries get zero gradient and bump the clamp counter.
    pub fn acos(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let lo = -1.0 + ACOS_EPS;
        let hi = 1.0 - ACOS_EPS;
        let clamped: Vec<bool> = src.data().iter().map(|&a| a < lo || a > hi).collect();
        let data = src.data().iter().map(|&a| a.clamp(lo, hi).acos()).collect();
        let out = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.acos_clamps += clamped.iter().filter(|&&c| c).count();
        let rg = self.rg(&[x]);
        self.push(out, Op::Acos { x, clamped }, rg)
    }

    /// Elementwise clamp; gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |a| a.clamp(lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Sums over the last axis: `[.., n] -> [..]`.
    pub fn sum_last_axis(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() < 2 {
            return Err(mismatch("sum_last_axis", t.shape(), &[]));
        }
        let c = t.cols();
        let data = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        let out = Tensor::new(t.shape()[..t.shape().len() - 1].to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SumLastAxis(x), rg))
    }

    /// Subtracts the mean row from every row of a matrix.
    pub fn center_rows(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).rows() as f64;
        let t = self.transpose(x)?;
        let col_sums = self.sum_last_axis(t)?;
        let neg_mean = self.scale(col_sums, -1.0 / n);
        self.add_bias(x, neg_mean)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = Tensor::new(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(mismatch("transpose", t.shape(), &[0, 0]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let out = Tensor::new(vec![c, r], transpose_raw(t.data(), r, c))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 1 || ta.shape() != tb.shape() {
            return Err(mismatch("dot", ta.shape(), tb.shape()));
        }
        let d = dot(ta.data(), tb.data());
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(d), Op::Dot(a, b), rg))
    }

    /// Row-wise inner products of two `B × d` matrices, giving `B` values.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || ta.shape() != tb.shape() {
            return Err(mismatch("row_dot", ta.shape(), tb.shape()));
        }
        let d = ta.cols();
        let data = ta
            .data()
            .chunks(d)
            .zip(tb.data().chunks(d))
            .map(|(x, y)| dot(x, y))
            .collect();
        let out = Tensor::new(vec![ta.rows()], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::RowDot(a, b), rg))
    }

    /// Per-row matrix-vector product: `A: B×n×d`, `x: B×d` gives `B×n`.
    pub fn batched_matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (ta, tx) = (self.value(a), self.value(x));
        let sa = ta.shape();
        if sa.len() != 3 || tx.shape().len() != 2 || sa[0] != tx.shape()[0] || sa[2] != tx.shape()[1]
        {
            return Err(mismatch("batched_matvec", sa, tx.shape()));
        }
        let (b, n, d) = (sa[0], sa[1], sa[2]);
        let mut data = Vec::with_capacity(b * n);
        for i in 0..b {
            let xi = &tx.data()[i * d..(i + 1) * d];
            for j in 0..n {
                let off = (i * n + j) * d;
                data.push(dot(&ta.data()[off..off + d], xi));
            }
        }
        let out = Tensor::new(vec![b, n], data)?;
        let rg = self.rg(&[a, x]);
        Ok(self.push(out, Op::BatchedMatVec(a, x), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| CpcdError::input("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(mismatch("concat", &base, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().with_requires_grad(false).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Scales every slice along the last axis to unit L2 norm. Rows with
    /// norm below [`MIN_NORM`] are rejected, naming the first offender.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let mut data = t.data().to_vec();
        for (row, chunk) in data.chunks_mut(c).enumerate() {
            let norm = l2_norm(chunk);
            if !(norm >= MIN_NORM) {
                return Err(CpcdError::ZeroRow { row, norm });
            }
            chunk.iter_mut().for_each(|v| *v /= norm);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::L2Normalize(x), rg))
    }

    /// Stable `log Σ exp` over the last axis.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() < 2 {
            return Err(mismatch("logsumexp", t.shape(), &[]));
        }
        let data = t.data().chunks(t.cols()).map(lse).collect();
        let out = Tensor::new(t.shape()[..t.shape().len() - 1].to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSumExp(x), rg))
    }

    /// For each position `j` of the last axis, `log Σ_{l≠j} exp(x_l)`.
    /// A one-element axis yields `-inf`.
    pub fn logsumexp_excluding(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() < 2 {
            return Err(mismatch("logsumexp_excluding", t.shape(), &[]));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(t.numel());
        let mut scratch = Vec::with_capacity(c);
        for row in t.data().chunks(c) {
            for j in 0..c {
                scratch.clear();
                scratch.extend(row.iter().enumerate().filter(|(l, _)| *l != j).map(|(_, v)| *v));
                data.push(lse(&scratch));
            }
        }
        // -inf entries are allowed here; they only feed logaddexp/clamp.
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSumExpExcluding(x), rg))
    }

    pub fn logaddexp(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("logaddexp", a, b, Op::LogAddExp(a, b), |x, y| lse(&[x, y]))
    }

    /// Picks `x[r, idx[r]]` from a `B × n` matrix.
    pub fn select_last_axis(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || t.rows() != idx.len() {
            return Err(mismatch("select_last_axis", t.shape(), &[idx.len()]));
        }
        let c = t.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(CpcdError::OutOfRange { index: bad, len: c });
        }
        let data = idx.iter().enumerate().map(|(r, &i)| t.data()[r * c + i]).collect();
        let out = Tensor::new(vec![idx.len()], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::SelectLastAxis {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Square-kernel convolution over `B × H × W × Cin` input with a
    /// `k × k × Cin × Cout` weight, zero padding `pad` and step `stride`.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let (ti, tw) = (self.value(input), self.value(weight));
        let (si, sw) = (ti.shape(), tw.shape());
        if si.len() != 4 || sw.len() != 4 || sw[0] != sw[1] || sw[2] != si[3] || stride == 0 {
            return Err(mismatch("conv2d", si, sw));
        }
        let k = sw[0];
        if si[1] + 2 * pad < k || si[2] + 2 * pad < k {
            return Err(mismatch("conv2d", si, sw));
        }
        let geom = ConvGeom {
            batch: si[0],
            h: si[1],
            w: si[2],
            cin: si[3],
            cout: sw[3],
            k,
            stride,
            pad,
            ho: (si[1] + 2 * pad - k) / stride + 1,
            wo: (si[2] + 2 * pad - k) / stride + 1,
        };
        let data = conv_forward(ti.data(), tw.data(), &geom);
        let out = Tensor::new(vec![geom.batch, geom.ho, geom.wo, geom.cout], data)?;
        let rg = self.rg(&[input, weight]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                geom,
            },
            rg,
        ))
    }

    /// Mean over the spatial axes: `B × H × W × C -> B × C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 4 {
            return Err(mismatch("global_avg_pool", s, &[0, 0, 0, 0]));
        }
        let (b, hw, c) = (s[0], s[1] * s[2], s[3]);
        let mut data = vec![0.0; b * c];
        for i in 0..b {
            let acc = &mut data[i * c..(i + 1) * c];
            for p in 0..hw {
                let off = (i * hw + p) * c;
                acc.iter_mut()
                    .zip(&t.data()[off..off + c])
                    .for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= hw as f64);
        }
        let out = Tensor::new(vec![b, c], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`]; leaves the root does not depend on
    /// receive zeros.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rt = self.value(root);
        if rt.numel() != 1 {
            return Err(CpcdError::NotScalar(rt.shape().to_vec()));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            local[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let Some(go) = local[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                local[i] = Some(go);
                continue;
            }
            for (v, g) in self.local_grads(i, &go) {
                if self.nodes[v.0].requires_grad {
                    add_into(&mut local[v.0], g);
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                continue;
            }
            let g = local
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; node.value.numel()]);
            add_into(&mut self.leaf_grads[i], g);
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn local_grads(&self, i: usize, go: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let zip = |a: &[f64], f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            a.iter().zip(go).map(|(&x, &g)| f(x, g)).collect()
        };
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, go.to_vec()), (*b, go.to_vec())],
            Op::Sub(a, b) => vec![(*a, go.to_vec()), (*b, go.iter().map(|g| -g).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                vec![(*a, zip(vb, &|y, g| y * g)), (*b, zip(va, &|x, g| x * g))]
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let ga = zip(vb, &|y, g| g / y);
                let gb = va
                    .iter()
                    .zip(vb)
                    .zip(go)
                    .map(|((x, y), g)| -g * x / (y * y))
                    .collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddBias(a, b) => {
                let c = self.nodes[b.0].value.numel();
                let mut gb = vec![0.0; c];
                for chunk in go.chunks(c) {
                    gb.iter_mut().zip(chunk).for_each(|(s, g)| *s += g);
                }
                vec![(*a, go.to_vec()), (*b, gb)]
            }
            Op::Scale(a, c) => vec![(*a, go.iter().map(|g| g * c).collect())],
            Op::AddScalar(a) => vec![(*a, go.to_vec())],
            Op::Relu(a) => vec![(*a, zip(self.val(*a), &|x, g| if x > 0.0 { g } else { 0.0 }))],
            Op::Exp(a) => vec![(*a, zip(out, &|y, g| y * g))],
            Op::Log(a) => vec![(*a, zip(self.val(*a), &|x, g| g / x))],
            Op::Sqrt(a) => vec![(*a, zip(out, &|y, g| g / (2.0 * y)))],
            Op::Cos(a) => vec![(*a, zip(self.val(*a), &|x, g| -g * x.sin()))],
            Op::Acos { x, clamped } => {
                let sign = if self.fault == Some(GradFault::FlipAcosSign) {
                    1.0
                } else {
                    -1.0
                };
                let g = self
                    .val(*x)
                    .iter()
                    .zip(go)
                    .zip(clamped)
                    .map(|((&v, &g), &c)| {
                        if c {
                            0.0
                        } else {
                            sign * g / (1.0 - v * v).sqrt()
                        }
                    })
                    .collect();
                vec![(*x, g)]
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                vec![(
                    *x,
                    zip(self.val(*x), &|v, g| if v >= lo && v <= hi { g } else { 0.0 }),
                )]
            }
            Op::Sum(a) => vec![(*a, vec![go[0]; self.val(*a).len()])],
            Op::Mean(a) => {
                let n = self.val(*a).len();
                vec![(*a, vec![go[0] / n as f64; n])]
            }
            Op::SumLastAxis(a) => {
                let c = self.nodes[a.0].value.cols();
                vec![(*a, go.iter().flat_map(|&g| std::iter::repeat_n(g, c)).collect())]
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let bt = transpose_raw(self.val(*b), k, n);
                let at = transpose_raw(self.val(*a), m, k);
                vec![
                    (*a, matmul_raw(go, &bt, m, n, k)),
                    (*b, matmul_raw(&at, go, k, m, n)),
                ]
            }
            Op::Transpose(a) => {
                let s = self.nodes[a.0].value.shape();
                vec![(*a, transpose_raw(go, s[1], s[0]))]
            }
            Op::Dot(a, b) => {
                let g = go[0];
                vec![
                    (*a, self.val(*b).iter().map(|y| y * g).collect()),
                    (*b, self.val(*a).iter().map(|x| x * g).collect()),
                ]
            }
            Op::RowDot(a, b) => {
                let d = self.nodes[a.0].value.cols();
                let (va, vb) = (self.val(*a), self.val(*b));
                let ga = vb.iter().enumerate().map(|(j, y)| y * go[j / d]).collect();
                let gb = va.iter().enumerate().map(|(j, x)| x * go[j / d]).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::BatchedMatVec(a, x) => {
                let s = self.nodes[a.0].value.shape();
                let (bsz, n, d) = (s[0], s[1], s[2]);
                let (va, vx) = (self.val(*a), self.val(*x));
                let mut ga = vec![0.0; va.len()];
                let mut gx = vec![0.0; vx.len()];
                for i in 0..bsz {
                    for j in 0..n {
                        let g = go[i * n + j];
                        let off = (i * n + j) * d;
                        for k in 0..d {
                            ga[off + k] = g * vx[i * d + k];
                            gx[i * d + k] += g * va[off + k];
                        }
                    }
                }
                vec![(*a, ga), (*x, gx)]
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                let mut res = Vec::with_capacity(inputs.len());
                for v in inputs {
                    let w = self.nodes[v.0].value.shape()[*axis] * inner;
                    let mut g = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        g.extend_from_slice(&go[o * total + offset..o * total + offset + w]);
                    }
                    offset += w;
                    res.push((*v, g));
                }
                res
            }
            Op::Reshape(a) => vec![(*a, go.to_vec())],
            Op::L2Normalize(a) => {
                let c = node.value.cols();
                let va = self.val(*a);
                let mut g = Vec::with_capacity(va.len());
                for ((x, y), gr) in va.chunks(c).zip(out.chunks(c)).zip(go.chunks(c)) {
                    let norm = l2_norm(x);
                    let proj = dot(gr, y);
                    g.extend(gr.iter().zip(y).map(|(gi, yi)| (gi - yi * proj) / norm));
                }
                vec![(*a, g)]
            }
            Op::LogSumExp(a) => {
                let va = self.val(*a);
                let c = self.nodes[a.0].value.cols();
                let g = va
                    .iter()
                    .enumerate()
                    .map(|(j, x)| go[j / c] * (x - out[j / c]).exp())
                    .collect();
                vec![(*a, g)]
            }
            Op::LogSumExpExcluding(a) => {
                let va = self.val(*a);
                let c = node.value.cols();
                let mut g = vec![0.0; va.len()];
                for r in 0..va.len() / c {
                    for j in 0..c {
                        let o = out[r * c + j];
                        let gj = go[r * c + j];
                        if o == f64::NEG_INFINITY || gj == 0.0 {
                            continue;
                        }
                        for l in (0..c).filter(|&l| l != j) {
                            g[r * c + l] += gj * (va[r * c + l] - o).exp();
                        }
                    }
                }
                vec![(*a, g)]
            }
            Op::LogAddExp(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let part = |v: &[f64]| -> Vec<f64> {
                    v.iter()
                        .zip(out)
                        .zip(go)
                        .map(|((x, o), g)| {
                            if *o == f64::NEG_INFINITY {
                                0.0
                            } else {
                                g * (x - o).exp()
                            }
                        })
                        .collect()
                };
                vec![(*a, part(va)), (*b, part(vb))]
            }
            Op::SelectLastAxis { x, idx } => {
                let c = self.nodes[x.0].value.cols();
                let mut g = vec![0.0; self.val(*x).len()];
                for (r, &i) in idx.iter().enumerate() {
                    g[r * c + i] = go[r];
                }
                vec![(*x, g)]
            }
            Op::Conv2d {
                input,
                weight,
                geom,
            } => {
                let (gi, gw) = conv_backward(self.val(*input), self.val(*weight), go, geom);
                vec![(*input, gi), (*weight, gw)]
            }
            Op::GlobalAvgPool(a) => {
                let s = self.nodes[a.0].value.shape();
                let (hw, c) = (s[1] * s[2], s[3]);
                let mut g = Vec::with_capacity(self.val(*a).len());
                for i in 0..s[0] {
                    for _ in 0..hw {
                        g.extend(go[i * c..(i + 1) * c].iter().map(|v| v / hw as f64));
                    }
                }
                vec![(*a, g)]
            }
        }
    }
}

/// Max-shifted `log Σ exp`; empty input gives `-inf`.
pub(crate) fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            row.iter_mut()
                .zip(&b[p * n..(p + 1) * n])
                .for_each(|(o, y)| *o += x * y);
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Yields `(input offset, weight offset)` pairs contributing to output
/// position `(b, oy, ox)`.
fn conv_taps(g: &ConvGeom, b: usize, oy: usize, ox: usize, mut f: impl FnMut(usize, usize)) {
    for ky in 0..g.k {
        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
        if iy < 0 || iy >= g.h as isize {
            continue;
        }
        for kx in 0..g.k {
            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
            if ix < 0 || ix >= g.w as isize {
                continue;
            }
            let in_off = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
            let w_off = (ky * g.k + kx) * g.cin * g.cout;
            f(in_off, w_off);
        }
    }
}

fn conv_forward(input: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.ho * g.wo * g.cout];
    for b in 0..g.batch {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let o_off = ((b * g.ho + oy) * g.wo + ox) * g.cout;
                let acc = &mut out[o_off..o_off + g.cout];
                conv_taps(g, b, oy, ox, |in_off, w_off| {
                    for ci in 0..g.cin {
                        let x = input[in_off + ci];
                        let wrow = &weight[w_off + ci * g.cout..w_off + (ci + 1) * g.cout];
                        acc.iter_mut().zip(wrow).for_each(|(a, w)| *a += x * w);
                    }
                });
            }
        }
    }
    out
}

fn conv_backward(input: &[f64], weight: &[f64], go: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let mut gi = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    for b in 0..g.batch {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let o_off = ((b * g.ho + oy) * g.wo + ox) * g.cout;
                let gout = &go[o_off..o_off + g.cout];
                conv_taps(g, b, oy, ox, |in_off, w_off| {
                    for ci in 0..g.cin {
                        let x = input[in_off + ci];
                        let wrow = &weight[w_off + ci * g.cout..w_off + (ci + 1) * g.cout];
                        gi[in_off + ci] += dot(wrow, gout);
                        gw[w_off + ci * g.cout..w_off + (ci + 1) * g.cout]
                            .iter_mut()
                            .zip(gout)
                            .for_each(|(a, gv)| *a += x * gv);
                    }
                });
            }
        }
    }
    (gi, gw)
}
