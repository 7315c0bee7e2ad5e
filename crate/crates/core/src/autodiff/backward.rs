use std::collections::HashMap;

use crate::autodiff::graph::{axis_split, transpose_2d, Graph, Op, Var};
use crate::autodiff::params::Gradients;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Output of one reverse sweep.
#[derive(Debug, Clone)]
pub struct Grads<T: Scalar> {
    params: Gradients<T>,
    vars: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn params(&self) -> &Gradients<T> {
        &self.params
    }

    pub fn into_params(self) -> Gradients<T> {
        self.params
    }

    /// Gradient with respect to a [`Graph::variable`] leaf.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.vars.get(&v)
    }
}

struct GradBufs<T: Scalar> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradBufs<T> {
    /// Accumulator for `v`, zero-initialised on first use.
    fn buf(&mut self, v: Var, shape: &[usize]) -> &mut Tensor<T> {
        self.slots[v.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    fn add(&mut self, v: Var, shape: &[usize], g: &[T]) {
        let buf = self.buf(v, shape);
        for (a, &b) in buf.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    fn add_owned(&mut self, v: Var, g: Tensor<T>) {
        match &mut self.slots[v.0] {
            Some(buf) => buf.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

impl<T: Scalar> Graph<'_, T> {
    /// Reverse-mode sweep from a scalar `loss`. Parameters that are not on
    /// the loss path get no entry (read as zero).
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut g = GradBufs {
            slots: vec![None; self.nodes.len()],
        };
        g.slots[loss.0] = Some(Tensor::ones(lv.shape()));

        let mut params: Vec<Option<Tensor<T>>> = vec![None; self.param_count()];
        let mut vars = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = g.slots[idx].take() else {
                continue;
            };
            let y = &*node.value;
            let sh = |v: Var| self.value(v).shape();
            let want = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Const => {}
                Op::Variable => {
                    vars.insert(Var(idx), dy);
                }
                Op::Param(id) => {
                    params[id.index()] = Some(dy);
                }
                Op::MatMul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.last_dim(), bv.shape()[1]);
                    if want(*a) {
                        let da = g.buf(*a, av.shape());
                        gemm_nt(m, n, k, dy.data(), bv.data(), T::one(), da.data_mut());
                    }
                    if want(*b) {
                        let db = g.buf(*b, bv.shape());
                        gemm_tn(k, m, n, av.data(), dy.data(), T::one(), db.data_mut());
                    }
                }
                Op::MatMulNT { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                    if want(*a) {
                        let da = g.buf(*a, av.shape());
                        gemm_nn(m, n, k, dy.data(), bv.data(), T::one(), da.data_mut());
                    }
                    if want(*b) {
                        let db = g.buf(*b, bv.shape());
                        gemm_tn(n, m, k, dy.data(), av.data(), T::one(), db.data_mut());
                    }
                }
                Op::Transpose(x) => {
                    if want(*x) {
                        g.add_owned(*x, transpose_2d(&dy));
                    }
                }
                Op::Add(a, b) => {
                    if want(*a) {
                        g.add(*a, sh(*a), dy.data());
                    }
                    if want(*b) {
                        g.add(*b, sh(*b), dy.data());
                    }
                }
                Op::Sub(a, b) => {
                    if want(*a) {
                        g.add(*a, sh(*a), dy.data());
                    }
                    if want(*b) {
                        let neg = dy.map(|v| -v);
                        g.add_owned(*b, neg);
                    }
                }
                Op::Mul(a, b) => {
                    if want(*a) {
                        let da = dy.zip_map(self.value(*b), |d, bv| d * bv)?;
                        g.add_owned(*a, da);
                    }
                    if want(*b) {
                        let db = dy.zip_map(self.value(*a), |d, av| d * av)?;
                        g.add_owned(*b, db);
                    }
                }
                Op::AddBias { x, bias } => {
                    if want(*x) {
                        g.add(*x, sh(*x), dy.data());
                    }
                    if want(*bias) {
                        let d = dy.last_dim();
                        let db = g.buf(*bias, sh(*bias));
                        for row in dy.data().chunks_exact(d) {
                            for (acc, &v) in db.data_mut().iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    g.add_owned(*x, dy.map(|v| v * s));
                }
                Op::Sigmoid(x) => {
                    g.add_owned(*x, dy.zip_map(y, |d, s| d * s * (T::one() - s))?);
                }
                Op::Tanh(x) => {
                    g.add_owned(*x, dy.zip_map(y, |d, t| d * (T::one() - t * t))?);
                }
                Op::Relu(x) => {
                    // y > 0 exactly when the input was > 0, so relu'(0) = 0
                    g.add_owned(
                        *x,
                        dy.zip_map(y, |d, r| if r > T::zero() { d } else { T::zero() })?,
                    );
                }
                Op::Softmax(x) => {
                    let d = y.last_dim();
                    let mut dx = dy.clone();
                    for (dr, yr) in dx
                        .data_mut()
                        .chunks_exact_mut(d)
                        .zip(y.data().chunks_exact(d))
                    {
                        let dot: T = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for (v, &p) in dr.iter_mut().zip(yr) {
                            *v = p * (*v - dot);
                        }
                    }
                    g.add_owned(*x, dx);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let shape = sh(*logits);
                    let k = shape[1];
                    let scale = dy.data()[0] / T::from_usize(labels.len()).expect("batch");
                    let mut dl = probs.clone();
                    for (r, &label) in labels.iter().enumerate() {
                        dl[r * k + label] -= T::one();
                    }
                    dl.iter_mut().for_each(|v| *v *= scale);
                    g.add_owned(*logits, Tensor::new(shape, dl)?);
                }
                Op::SegmentSum { x, r } => {
                    let xs = sh(*x);
                    let (b, l, d) = self.value(*x).seq_dims()?;
                    let m = dy.seq_dims()?.1;
                    let dx = g.buf(*x, xs);
                    for bi in 0..b {
                        for t in 0..l {
                            let src = &dy.data()[(bi * m + t / r) * d..][..d];
                            for (acc, &v) in
                                dx.data_mut()[(bi * l + t) * d..][..d].iter_mut().zip(src)
                            {
                                *acc += v;
                            }
                        }
                    }
                }
                Op::BlockRepeat { x, r } => {
                    let xs = sh(*x);
                    let (b, m, d) = self.value(*x).seq_dims()?;
                    let l = dy.seq_dims()?.1;
                    let dx = g.buf(*x, xs);
                    for bi in 0..b {
                        for t in 0..l {
                            let src = &dy.data()[(bi * l + t) * d..][..d];
                            for (acc, &v) in dx.data_mut()[(bi * m + t / r) * d..][..d]
                                .iter_mut()
                                .zip(src)
                            {
                                *acc += v;
                            }
                        }
                    }
                }
                Op::ConcatLast { xs } => {
                    let total = dy.last_dim();
                    let mut off = 0;
                    for &x in xs {
                        let w = self.value(x).last_dim();
                        if want(x) {
                            let dx = g.buf(x, sh(x));
                            for (dst, src) in dx
                                .data_mut()
                                .chunks_exact_mut(w)
                                .zip(dy.data().chunks_exact(total))
                            {
                                for (a, &v) in dst.iter_mut().zip(&src[off..off + w]) {
                                    *a += v;
                                }
                            }
                        }
                        off += w;
                    }
                }
                Op::SliceLast { x, start } => {
                    let w = dy.last_dim();
                    let d = self.value(*x).last_dim();
                    let dx = g.buf(*x, sh(*x));
                    for (dst, src) in dx
                        .data_mut()
                        .chunks_exact_mut(d)
                        .zip(dy.data().chunks_exact(w))
                    {
                        for (a, &v) in dst[*start..*start + w].iter_mut().zip(src) {
                            *a += v;
                        }
                    }
                }
                Op::ConcatRows { xs } => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.value(x).len();
                        if want(x) {
                            g.add(x, sh(x), &dy.data()[off..off + n]);
                        }
                        off += n;
                    }
                }
                Op::WeightedSumAxis { x, axis, weights } => {
                    let (outer, n, inner) = axis_split(sh(*x), *axis)?;
                    let dx = g.buf(*x, sh(*x));
                    for o in 0..outer {
                        let src = &dy.data()[o * inner..][..inner];
                        for (j, &w) in weights.iter().enumerate().take(n) {
                            if w == T::zero() {
                                continue;
                            }
                            for (a, &v) in dx.data_mut()[(o * n + j) * inner..][..inner]
                                .iter_mut()
                                .zip(src)
                            {
                                *a += w * v;
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    g.add(*x, sh(*x), dy.data());
                }
                Op::TimeStep { x, t } => {
                    let (b, l, d) = self.value(*x).seq_dims()?;
                    let dx = g.buf(*x, sh(*x));
                    for bi in 0..b {
                        let src = &dy.data()[bi * d..][..d];
                        for (a, &v) in dx.data_mut()[(bi * l + t) * d..][..d].iter_mut().zip(src) {
                            *a += v;
                        }
                    }
                }
                Op::StackTime { xs } => {
                    let (b, l, d) = dy.seq_dims()?;
                    for (t, &x) in xs.iter().enumerate() {
                        if !want(x) {
                            continue;
                        }
                        let mut step = Vec::with_capacity(b * d);
                        for bi in 0..b {
                            step.extend_from_slice(&dy.data()[(bi * l + t) * d..][..d]);
                        }
                        g.add(x, sh(x), &step);
                    }
                }
                Op::PermuteTime { x, src } => {
                    let (b, l, d) = dy.seq_dims()?;
                    let dx = g.buf(*x, sh(*x));
                    for bi in 0..b {
                        for t in 0..l {
                            let from = &dy.data()[(bi * l + t) * d..][..d];
                            let to = (bi * l + src[bi * l + t]) * d;
                            for (a, &v) in dx.data_mut()[to..to + d].iter_mut().zip(from) {
                                *a += v;
                            }
                        }
                    }
                }
                Op::GatherRows { table, ids } => {
                    let d = dy.last_dim();
                    let dt = g.buf(*table, sh(*table));
                    for (r, &i) in ids.iter().enumerate() {
                        for (a, &v) in dt.data_mut()[i * d..][..d]
                            .iter_mut()
                            .zip(&dy.data()[r * d..][..d])
                        {
                            *a += v;
                        }
                    }
                }
                Op::GatedScan { gates, cand, init } => {
                    self.scan_backward(&mut g, &dy, y, *gates, *cand, *init)?;
                }
                Op::Dropout { x, mask } => {
                    let dx: Vec<T> = dy.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                    g.add_owned(*x, Tensor::new(dy.shape(), dx)?);
                }
            }
        }

        Ok(Grads {
            params: Gradients { params },
            vars,
        })
    }

    fn scan_backward(
        &self,
        g: &mut GradBufs<T>,
        dy: &Tensor<T>,
        cells: &Tensor<T>,
        gates: Var,
        cand: Var,
        init: Option<Var>,
    ) -> Result<()> {
        let (gv, zv) = (self.value(gates), self.value(cand));
        let (b, l, d) = gv.seq_dims()?;
        let mut dgate = vec![T::zero(); gv.len()];
        let mut dcand = vec![T::zero(); zv.len()];
        let init_val = init.map(|c| self.value(c));
        let init_rows = init_val.map_or(0, |c| c.rows());
        let mut dinit = vec![T::zero(); init_val.map_or(0, Tensor::len)];
        for bi in 0..b {
            let mut carry = vec![T::zero(); d];
            for t in (0..l).rev() {
                let off = (bi * l + t) * d;
                for i in 0..d {
                    let dc = dy.data()[off + i] + carry[i];
                    let prev = if t > 0 {
                        cells.data()[off - d + i]
                    } else {
                        init_val.map_or(T::zero(), |c| c.data()[(bi % init_rows.max(1)) * d + i])
                    };
                    let gi = gv.data()[off + i];
                    dgate[off + i] = dc * (prev - zv.data()[off + i]);
                    dcand[off + i] = dc * (T::one() - gi);
                    carry[i] = dc * gi;
                }
            }
            if init_rows > 0 {
                for (a, &v) in dinit[(bi % init_rows) * d..][..d].iter_mut().zip(&carry) {
                    *a += v;
                }
            }
        }
        if self.nodes[gates.0].needs_grad {
            g.add(gates, gv.shape(), &dgate);
        }
        if self.nodes[cand.0].needs_grad {
            g.add(cand, zv.shape(), &dcand);
        }
        if let Some(c0) = init {
            if self.nodes[c0.0].needs_grad {
                g.add(c0, self.value(c0).shape(), &dinit);
            }
        }
        Ok(())
    }
}
