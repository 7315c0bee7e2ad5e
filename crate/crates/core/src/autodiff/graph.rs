use std::borrow::Cow;
use std::collections::HashMap;

use crate::autodiff::params::{ParamId, ParameterStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{gemm_nn, gemm_nt, transposed, Tensor};

/// Node handle on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Work counters, incremented by forward evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub matmuls: u64,
    pub matmul_flops: u64,
    /// Scalar results produced by pointwise kernels.
    pub elementwise: u64,
}

impl OpCounts {
    fn since(&self, start: &OpCounts) -> OpCounts {
        OpCounts {
            matmuls: self.matmuls - start.matmuls,
            matmul_flops: self.matmul_flops - start.matmul_flops,
            elementwise: self.elementwise - start.elementwise,
        }
    }
}

/// Counters accumulated inside one sequential time loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopStats {
    pub label: &'static str,
    pub steps: usize,
    pub counts: OpCounts,
}

impl LoopStats {
    pub fn elementwise_per_step(&self) -> f64 {
        self.counts.elementwise as f64 / self.steps.max(1) as f64
    }

    pub fn matmul_flops_per_step(&self) -> f64 {
        self.counts.matmul_flops as f64 / self.steps.max(1) as f64
    }
}

#[must_use]
pub struct LoopToken {
    label: &'static str,
    start: OpCounts,
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Const,
    Variable,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulNT {
        a: Var,
        b: Var,
    },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    SegmentSum {
        x: Var,
        r: usize,
    },
    BlockRepeat {
        x: Var,
        r: usize,
    },
    ConcatLast {
        xs: Vec<Var>,
    },
    SliceLast {
        x: Var,
        start: usize,
    },
    ConcatRows {
        xs: Vec<Var>,
    },
    WeightedSumAxis {
        x: Var,
        axis: usize,
        weights: Vec<T>,
    },
    Reshape(Var),
    TimeStep {
        x: Var,
        t: usize,
    },
    StackTime {
        xs: Vec<Var>,
    },
    PermuteTime {
        x: Var,
        src: Vec<usize>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    GatedScan {
        gates: Var,
        cand: Var,
        init: Option<Var>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
}

pub(crate) struct Node<'s, T: Scalar> {
    pub(crate) value: Cow<'s, Tensor<T>>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Values of parameters are borrowed from the store, so several graphs may
/// run over the same read-only parameters; their gradients are merged with
/// [`ParameterStore::accumulate`].
pub struct Graph<'s, T: Scalar> {
    store: Option<&'s ParameterStore<T>>,
    pub(crate) nodes: Vec<Node<'s, T>>,
    param_nodes: HashMap<ParamId, Var>,
    training: bool,
    counts: OpCounts,
    loops: Vec<LoopStats>,
    relu_margin: f64,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParameterStore<T>) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            training: false,
            counts: OpCounts::default(),
            loops: Vec::new(),
            relu_margin: f64::INFINITY,
        }
    }

    /// A graph with no parameter store; only constants and variables.
    pub fn detached() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            training: false,
            counts: OpCounts::default(),
            loops: Vec::new(),
            relu_margin: f64::INFINITY,
        }
    }

    pub fn training(mut self, on: bool) -> Self {
        self.training = on;
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counts(&self) -> OpCounts {
        self.counts
    }

    /// Smallest nonzero `|x|` fed to any relu so far: how close the graph sits
    /// to a kink. Exact zeros are skipped; they come from masked positions and
    /// stay zero under perturbation.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    pub fn loops(&self) -> &[LoopStats] {
        &self.loops
    }

    pub fn begin_loop(&self, label: &'static str) -> LoopToken {
        LoopToken {
            label,
            start: self.counts,
        }
    }

    pub fn end_loop(&mut self, token: LoopToken, steps: usize) {
        self.loops.push(LoopStats {
            label: token.label,
            steps,
            counts: self.counts.since(&token.start),
        });
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Const, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Variable, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        self.nodes.push(Node {
            value: Cow::Borrowed(store.value(id)),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// A parameter read as a constant: borrowed, never differentiated.
    pub fn param_frozen(&mut self, id: ParamId) -> Var {
        let store = self.store.expect("graph has no parameter store");
        self.nodes.push(Node {
            value: Cow::Borrowed(store.value(id)),
            op: Op::Const,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn param_count(&self) -> usize {
        self.store.map_or(0, ParameterStore::len)
    }

    // ---------------------------------------------------------------- linear algebra

    /// `[…, k] × [k, n] → […, n]`; leading axes are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let k = av.last_dim();
        if bv.rank() != 2 || bv.shape()[0] != k {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let (m, n) = (av.rows(), bv.shape()[1]);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = n;
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, av.data(), bv.data(), T::zero(), &mut out);
        self.counts.matmuls += 1;
        self.counts.matmul_flops += 2 * (m * k * n) as u64;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul { a, b }, ng))
    }

    /// `[m, k] × [n, k]ᵀ → [m, n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(Error::shape("matmul_nt", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
        let mut out = vec![T::zero(); m * n];
        gemm_nt(m, k, n, av.data(), bv.data(), T::zero(), &mut out);
        self.counts.matmuls += 1;
        self.counts.matmul_flops += 2 * (m * k * n) as u64;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMulNT { a, b }, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Transpose(x), ng))
    }

    // ---------------------------------------------------------------- pointwise

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, av.shape(), bv.shape()));
        }
        let out = av.zip_map(bv, f)?;
        self.counts.elementwise += out.len() as u64;
        Ok(out)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let out = self.value(x).map(f);
        self.counts.elementwise += out.len() as u64;
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Multiplies by a fixed tensor (masks, feature switches).
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        let c = self.constant(c);
        self.mul(x, c)
    }

    /// Adds a rank-1 bias to every row. The only broadcast the tape supports.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = xv.last_dim();
        if bv.rank() != 1 || bv.len() != d {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.counts.elementwise += out.len() as u64;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddBias { x, bias }, ng))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.unary(x, |v| scale * v + shift);
        let ng = self.ng(x);
        self.push(out, Op::Affine { x, scale }, ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.unary(x, sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.unary(x, T::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let margin = self.value(x).data().iter().fold(f64::INFINITY, |m, v| {
            let a = v.abs().as_f64();
            if a > 0.0 {
                m.min(a)
            } else {
                m
            }
        });
        self.relu_margin = self.relu_margin.min(margin);
        let out = self.unary(x, |v| if v > T::zero() { v } else { T::zero() });
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    // ---------------------------------------------------------------- normalisation / losses

    /// Softmax over the last axis. Masked-out entries (mask `false`) get
    /// probability exactly zero; a row with no unmasked entry is an error.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(Error::shape("softmax", xv.shape(), &[m.len()]));
            }
        }
        let mut out = xv.clone();
        for (r, row) in out.data_mut().chunks_exact_mut(d).enumerate() {
            let keep = mask.map(|m| &m[r * d..(r + 1) * d]);
            softmax_row(row, keep).ok_or(Error::FullyMasked {
                op: "softmax",
                row: r,
            })?;
        }
        self.counts.elementwise += out.len() as u64;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    /// Mean over rows of `-log softmax(logits)[label]`; returns shape `[1]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                lv.shape(),
                &[labels.len()],
            ));
        }
        let k = lv.shape()[1];
        if let Some(m) = mask {
            if m.len() != lv.len() {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    lv.shape(),
                    &[m.len()],
                ));
            }
        }
        let mut probs = lv.data().to_vec();
        let mut loss = T::zero();
        for (r, (row, &label)) in probs.chunks_exact_mut(k).zip(labels).enumerate() {
            let keep = mask.map(|m| &m[r * k..(r + 1) * k]);
            if label >= k || keep.is_some_and(|m| !m[label]) {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            let log_norm = softmax_row(row, keep).ok_or(Error::FullyMasked {
                op: "softmax_cross_entropy",
                row: r,
            })?;
            loss += log_norm - lv.data()[r * k + label];
        }
        let b = T::from_usize(labels.len()).expect("batch size");
        self.counts.elementwise += probs.len() as u64;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss / b),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    // ---------------------------------------------------------------- sequence structure

    /// Sums every `r` consecutive time steps; a short final block is summed as-is.
    pub fn segment_sum(&mut self, x: Var, r: usize) -> Result<Var> {
        if r == 0 {
            return Err(Error::invalid("segment_sum", "range must be >= 1"));
        }
        let xv = self.value(x);
        let (b, l, d) = xv.seq_dims()?;
        let m = l.div_ceil(r);
        let mut out = vec![T::zero(); b * m * d];
        for bi in 0..b {
            for t in 0..l {
                let src = &xv.data()[(bi * l + t) * d..][..d];
                let dst = &mut out[(bi * m + t / r) * d..][..d];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        let shape = with_time(xv.shape(), m);
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::SegmentSum { x, r }, ng))
    }

    /// Repeats block `i` at every position `t` with `t / r == i`, truncated to `len`.
    pub fn block_repeat(&mut self, x: Var, r: usize, len: usize) -> Result<Var> {
        if r == 0 || len == 0 {
            return Err(Error::invalid(
                "block_repeat",
                "range and length must be >= 1",
            ));
        }
        let xv = self.value(x);
        let (b, m, d) = xv.seq_dims()?;
        if m != len.div_ceil(r) {
            return Err(Error::invalid(
                "block_repeat",
                format!("{m} blocks inconsistent with length {len} and range {r}"),
            ));
        }
        let mut out = Vec::with_capacity(b * len * d);
        for bi in 0..b {
            for t in 0..len {
                out.extend_from_slice(&xv.data()[(bi * m + t / r) * d..][..d]);
            }
        }
        let shape = with_time(xv.shape(), len);
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::BlockRepeat { x, r }, ng))
    }

    /// Column-wise concatenation; all leading dimensions must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("concat_last", "no inputs"))?;
        if xs.len() == 1 {
            return Ok(first);
        }
        let lead = self
            .value(first)
            .shape()
            .split_last()
            .expect("rank >= 1")
            .1
            .to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat_last", self.value(first).shape(), s));
            }
            widths.push(*s.last().expect("rank >= 1"));
        }
        let total: usize = widths.iter().sum();
        let rows = self.value(first).rows();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::ConcatLast { xs: xs.to_vec() },
            ng,
        ))
    }

    /// Columns `start..start + width` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if width == 0 || start + width > d {
            return Err(Error::invalid(
                "slice_last",
                format!(
                    "columns {start}..{} out of range for width {d}",
                    start + width
                ),
            ));
        }
        let mut out = Vec::with_capacity(xv.rows() * width);
        for row in xv.data().chunks_exact(d) {
            out.extend_from_slice(&row[start..start + width]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = width;
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::SliceLast { x, start }, ng))
    }

    /// Stacks rank-2 blocks of equal width along the first axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?;
        let w = self.value(first).last_dim();
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let v = self.value(x);
            if v.rank() != 2 || v.last_dim() != w {
                return Err(Error::shape(
                    "concat_rows",
                    self.value(first).shape(),
                    v.shape(),
                ));
            }
            rows += v.shape()[0];
            out.extend_from_slice(v.data());
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(
            Tensor::new(&[rows, w], out)?,
            Op::ConcatRows { xs: xs.to_vec() },
            ng,
        ))
    }

    fn weighted_sum_axis(&mut self, x: Var, axis: usize, weights: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        let (outer, n, inner) = axis_split(xv.shape(), axis)?;
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for (j, &w) in weights.iter().enumerate() {
                if w == T::zero() {
                    continue;
                }
                let src = &xv.data()[(o * n + j) * inner..][..inner];
                for (acc, &s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *acc += w * s;
                }
            }
        }
        let mut shape: Vec<usize> = xv.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::WeightedSumAxis { x, axis, weights },
            ng,
        ))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .value(x)
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid("sum_axis", format!("axis {axis} out of range")))?;
        self.weighted_sum_axis(x, axis, vec![T::one(); n])
    }

    /// Mean over `axis`; with a mask only entries marked `true` count.
    pub fn mean_axis(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let n = *self
            .value(x)
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid("mean_axis", format!("axis {axis} out of range")))?;
        let keep: Vec<bool> = match mask {
            Some(m) if m.len() != n => {
                return Err(Error::shape("mean_axis", self.value(x).shape(), &[m.len()]))
            }
            Some(m) => m.to_vec(),
            None => vec![true; n],
        };
        let count = keep.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::invalid("mean_axis", "mean over an empty axis"));
        }
        let w = T::one() / T::from_usize(count).expect("count");
        let weights = keep
            .iter()
            .map(|&k| if k { w } else { T::zero() })
            .collect();
        self.weighted_sum_axis(x, axis, weights)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.sum_axis(flat, 0)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Time step `t` of a sequence as `[batch, width]`.
    pub fn time_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let xv = self.value(x);
        let (b, l, d) = xv.seq_dims()?;
        if t >= l {
            return Err(Error::invalid(
                "time_step",
                format!("step {t} out of range for length {l}"),
            ));
        }
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            out.extend_from_slice(&xv.data()[(bi * l + t) * d..][..d]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[b, d], out)?, Op::TimeStep { x, t }, ng))
    }

    /// Inverse of [`Graph::time_step`]: `[batch, width]` steps to
    /// `[batch, len, width]`, or `[len, width]` when `batched` is false.
    pub fn stack_time(&mut self, xs: &[Var], batched: bool) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("stack_time", "no steps"))?;
        let s0 = self.value(first).shape().to_vec();
        if s0.len() != 2 || (!batched && s0[0] != 1) {
            return Err(Error::invalid(
                "stack_time",
                format!("bad step shape {s0:?}"),
            ));
        }
        let (b, d, l) = (s0[0], s0[1], xs.len());
        for &x in xs {
            if self.value(x).shape() != &s0[..] {
                return Err(Error::shape("stack_time", &s0, self.value(x).shape()));
            }
        }
        let mut out = vec![T::zero(); b * l * d];
        for (t, &x) in xs.iter().enumerate() {
            for (bi, row) in self.value(x).data().chunks_exact(d).enumerate() {
                out[(bi * l + t) * d..][..d].copy_from_slice(row);
            }
        }
        let shape = if batched { vec![b, l, d] } else { vec![l, d] };
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::StackTime { xs: xs.to_vec() },
            ng,
        ))
    }

    /// Reorders time steps per sequence: output step `t` of batch item `b`
    /// is input step `src[b * len + t]`.
    pub fn permute_time(&mut self, x: Var, src: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (b, l, d) = xv.seq_dims()?;
        if src.len() != b * l || src.iter().any(|&s| s >= l) {
            return Err(Error::invalid(
                "permute_time",
                "index map does not match the sequence",
            ));
        }
        let mut out = Vec::with_capacity(xv.len());
        for bi in 0..b {
            for t in 0..l {
                out.extend_from_slice(&xv.data()[(bi * l + src[bi * l + t]) * d..][..d]);
            }
        }
        let shape = xv.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::PermuteTime { x, src }, ng))
    }

    /// Row lookup (embedding tables).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 || ids.is_empty() {
            return Err(Error::invalid(
                "gather_rows",
                "rank-2 table and at least one id required",
            ));
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= v {
                return Err(Error::invalid(
                    "gather_rows",
                    format!("row {i} out of range for {v} rows"),
                ));
            }
            out.extend_from_slice(tv.row(i));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::new(&[ids.len(), d], out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Elementwise recurrence `c_t = g_t ⊙ c_{t-1} + (1 - g_t) ⊙ z_t` over the
    /// time axis, returning every `c_t`. `init` is `[width]` (shared across
    /// the batch) or `[batch, width]`; absent means zeros. No matrix products
    /// happen inside the loop.
    pub fn gated_scan(&mut self, gates: Var, cand: Var, init: Option<Var>) -> Result<Var> {
        let (gv, zv) = (self.value(gates), self.value(cand));
        if gv.shape() != zv.shape() {
            return Err(Error::shape("gated_scan", gv.shape(), zv.shape()));
        }
        let (b, l, d) = gv.seq_dims()?;
        let init_rows = match init {
            Some(c0) => {
                let s = self.value(c0).shape();
                if s == [d] {
                    1
                } else if s == [b, d] {
                    b
                } else {
                    return Err(Error::shape("gated_scan", gv.shape(), s));
                }
            }
            None => 0,
        };
        let mut cells = vec![T::zero(); b * l * d];
        for bi in 0..b {
            let mut prev: Vec<T> = match init {
                Some(c0) => self.value(c0).data()[(bi % init_rows) * d..][..d].to_vec(),
                None => vec![T::zero(); d],
            };
            for t in 0..l {
                let off = (bi * l + t) * d;
                let g = &gv.data()[off..off + d];
                let z = &zv.data()[off..off + d];
                let c = &mut cells[off..off + d];
                for i in 0..d {
                    c[i] = g[i] * prev[i] + (T::one() - g[i]) * z[i];
                }
                prev.copy_from_slice(c);
            }
        }
        let shape = gv.shape().to_vec();
        self.counts.elementwise += 3 * cells.len() as u64;
        let ng = self.ng(gates) || self.ng(cand) || init.is_some_and(|c| self.ng(c));
        Ok(self.push(
            Tensor::new(&shape, cells)?,
            Op::GatedScan { gates, cand, init },
            ng,
        ))
    }

    /// Inverted dropout: identity unless the graph is in training mode.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(
                "dropout",
                format!("rate {rate} outside [0, 1)"),
            ));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
            .collect();
        let out = Tensor::new(
            self.value(x).shape(),
            self.value(x)
                .data()
                .iter()
                .zip(&mask)
                .map(|(&v, &m)| v * m)
                .collect(),
        )?;
        self.counts.elementwise += n as u64;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Dropout { x, mask }, ng))
    }
}

/// In-place masked softmax of one row; returns `max + ln Σ exp(x - max)`.
fn softmax_row<T: Scalar>(row: &mut [T], keep: Option<&[bool]>) -> Option<T> {
    let kept = |i: usize| keep.is_none_or(|k| k[i]);
    let max = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| kept(i))
        .map(|(_, &v)| v)
        .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.max(v))))?;
    let mut total = T::zero();
    for (i, v) in row.iter_mut().enumerate() {
        if kept(i) {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = T::zero();
        }
    }
    for v in row.iter_mut() {
        *v /= total;
    }
    Some(max + total.ln())
}

fn with_time(shape: &[usize], len: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let n = s.len();
    s[n - 2] = len;
    s
}

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::invalid(
            "reduce",
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn transpose_2d<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    Tensor::new(&[c, r], transposed(t.data(), r, c)).expect("transpose shape")
}
