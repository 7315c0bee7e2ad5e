//! Reference recurrent encoders, bidirectional wrapping, the BiLSTM + MRU
//! stack and the identity encoder, behind one [`Encoder`] dispatch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParameterStore, Var};
use crate::error::{Error, Result};
use crate::layers::blend;
use crate::mask::SeqMask;
use crate::mru::{MruConfig, MruLayer, MruVariant};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    /// Gate blocks stacked in the weight matrices.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// Input weights `d × G·h`, recurrent weights `h × G·h`, bias `G·h`.
/// LSTM blocks are ordered input, forget, cell, output; GRU blocks reset,
/// update, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RnnParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub w_in: ParamId,
    pub w_rec: ParamId,
    pub bias: ParamId,
}

impl RnnParams {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let gh = kind.gates() * hidden;
        let w_in = store.add(format!("{name}.w_in"), rng.glorot(input_dim, gh))?;
        let w_rec = store.add(format!("{name}.w_rec"), rng.glorot(hidden, gh))?;
        let mut b = Tensor::zeros(&[gh]);
        if kind == CellKind::Lstm {
            b.data_mut()[hidden..2 * hidden].fill(T::one());
        }
        let bias = store.add(format!("{name}.b"), b)?;
        Ok(RnnParams {
            kind,
            input_dim,
            hidden,
            w_in,
            w_rec,
            bias,
        })
    }
}

/// Per-step keep mask `[batch, h]`, or `None` when every item is valid at `t`.
fn step_keep<T: Scalar>(mask: &SeqMask, t: usize, h: usize) -> Option<Tensor<T>> {
    if mask.lens().iter().all(|&n| t < n) {
        return None;
    }
    let data = mask
        .lens()
        .iter()
        .flat_map(|&n| std::iter::repeat_n(if t < n { T::one() } else { T::zero() }, h))
        .collect();
    Some(Tensor::new(&[mask.batch(), h], data).expect("keep shape"))
}

fn check_input<T: Scalar>(
    g: &Graph<'_, T>,
    x: Var,
    mask: &SeqMask,
    dim: usize,
) -> Result<(usize, usize, bool)> {
    let xv = g.value(x);
    let (b, l, d) = xv.seq_dims()?;
    if d != dim {
        return Err(Error::shape("rnn", xv.shape(), &[dim]));
    }
    if mask.batch() != b || mask.len() != l {
        return Err(Error::shape("rnn", &[b, l], &[mask.batch(), mask.len()]));
    }
    Ok((b, l, xv.rank() == 3))
}

fn initial<T: Scalar>(g: &mut Graph<'_, T>, given: Option<Var>, b: usize, h: usize) -> Result<Var> {
    match given {
        Some(v) if g.shape(v) == [b, h] => Ok(v),
        Some(v) => Err(Error::shape("rnn initial state", g.shape(v), &[b, h])),
        None => Ok(g.constant(Tensor::zeros(&[b, h]))),
    }
}

/// Carries `prev` where the step is padding.
fn carry<T: Scalar>(
    g: &mut Graph<'_, T>,
    keep: &Option<Tensor<T>>,
    new: Var,
    prev: Var,
) -> Result<Var> {
    match keep {
        None => Ok(new),
        Some(k) => {
            let m = g.constant(k.clone());
            blend(g, m, new, prev)
        }
    }
}

fn emit<T: Scalar>(g: &mut Graph<'_, T>, keep: &Option<Tensor<T>>, h: Var) -> Result<Var> {
    match keep {
        None => Ok(h),
        Some(k) => g.mul_const(h, k.clone()),
    }
}

/// Standard LSTM without peepholes. Padded steps carry state and emit zeros.
pub fn lstm_forward<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    mask: &SeqMask,
    p: &RnnParams,
    h0: Option<Var>,
    c0: Option<Var>,
) -> Result<Var> {
    let (b, l, batched) = check_input(g, x, mask, p.input_dim)?;
    let hd = p.hidden;
    let w_in = g.param(p.w_in);
    let w_rec = g.param(p.w_rec);
    let bias = g.param(p.bias);
    let xp = g.matmul(x, w_in)?;
    let xp = g.add_bias(xp, bias)?;
    let mut h = initial(g, h0, b, hd)?;
    let mut c = initial(g, c0, b, hd)?;
    let mut outs = Vec::with_capacity(l);
    let token = g.begin_loop("lstm");
    for t in 0..l {
        let keep = step_keep::<T>(mask, t, hd);
        let xt = g.time_step(xp, t)?;
        let rec = g.matmul(h, w_rec)?;
        let pre = g.add(xt, rec)?;
        let i = g.slice_last(pre, 0, hd)?;
        let i = g.sigmoid(i);
        let f = g.slice_last(pre, hd, hd)?;
        let f = g.sigmoid(f);
        let cand = g.slice_last(pre, 2 * hd, hd)?;
        let cand = g.tanh(cand);
        let o = g.slice_last(pre, 3 * hd, hd)?;
        let o = g.sigmoid(o);
        let fc = g.mul(f, c)?;
        let ic = g.mul(i, cand)?;
        let c_new = g.add(fc, ic)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        c = carry(g, &keep, c_new, c)?;
        h = carry(g, &keep, h_new, h)?;
        outs.push(emit(g, &keep, h_new)?);
    }
    g.end_loop(token, l);
    g.stack_time(&outs, batched)
}

/// GRU after Cho et al.: `h_t = u ⊙ h_{t−1} + (1 − u) ⊙ tanh(x W + (r ⊙ h_{t−1}) U + b)`.
pub fn gru_forward<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    mask: &SeqMask,
    p: &RnnParams,
    h0: Option<Var>,
) -> Result<Var> {
    let (b, l, batched) = check_input(g, x, mask, p.input_dim)?;
    let hd = p.hidden;
    let w_in = g.param(p.w_in);
    let w_rec = g.param(p.w_rec);
    let bias = g.param(p.bias);
    let xp = g.matmul(x, w_in)?;
    let xp = g.add_bias(xp, bias)?;
    let u_gates = g.slice_last(w_rec, 0, 2 * hd)?;
    let u_cand = g.slice_last(w_rec, 2 * hd, hd)?;
    let mut h = initial(g, h0, b, hd)?;
    let mut outs = Vec::with_capacity(l);
    let token = g.begin_loop("gru");
    for t in 0..l {
        let keep = step_keep::<T>(mask, t, hd);
        let xt = g.time_step(xp, t)?;
        let x_gates = g.slice_last(xt, 0, 2 * hd)?;
        let x_cand = g.slice_last(xt, 2 * hd, hd)?;
        let rec = g.matmul(h, u_gates)?;
        let gates = g.add(x_gates, rec)?;
        let gates = g.sigmoid(gates);
        let r = g.slice_last(gates, 0, hd)?;
        let u = g.slice_last(gates, hd, hd)?;
        let rh = g.mul(r, h)?;
        let rec_c = g.matmul(rh, u_cand)?;
        let cand = g.add(x_cand, rec_c)?;
        let cand = g.tanh(cand);
        let h_new = blend(g, u, h, cand)?;
        h = carry(g, &keep, h_new, h)?;
        outs.push(emit(g, &keep, h_new)?);
    }
    g.end_loop(token, l);
    g.stack_time(&outs, batched)
}

/// Runs `run(x, false)` on the input and `run(x_rev, true)` on each sequence
/// with its valid prefix reversed, and concatenates per position.
pub fn bidirectional<'s, T, F>(
    g: &mut Graph<'s, T>,
    x: Var,
    mask: &SeqMask,
    mut run: F,
) -> Result<Var>
where
    T: Scalar,
    F: FnMut(&mut Graph<'s, T>, Var, bool) -> Result<Var>,
{
    let fwd = run(g, x, false)?;
    let rev = mask.reverse_index();
    let xr = g.permute_time(x, rev.clone())?;
    let hr = run(g, xr, true)?;
    let bwd = g.permute_time(hr, rev)?;
    g.concat_last(&[fwd, bwd])
}

/// One recurrent layer, optionally bidirectional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RnnLayer {
    pub forward: RnnParams,
    pub backward: Option<RnnParams>,
}

impl RnnLayer {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        bidirectional: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let forward = RnnParams::new(store, &format!("{name}.fwd"), kind, input_dim, hidden, rng)?;
        let backward = if bidirectional {
            Some(RnnParams::new(
                store,
                &format!("{name}.bwd"),
                kind,
                input_dim,
                hidden,
                rng,
            )?)
        } else {
            None
        };
        Ok(RnnLayer { forward, backward })
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden * if self.backward.is_some() { 2 } else { 1 }
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, mask: &SeqMask) -> Result<Var> {
        let one = |g: &mut Graph<'_, T>, x: Var, p: &RnnParams| match p.kind {
            CellKind::Lstm => lstm_forward(g, x, mask, p, None, None),
            CellKind::Gru => gru_forward(g, x, mask, p, None),
        };
        match &self.backward {
            None => one(g, x, &self.forward),
            Some(bp) => bidirectional(g, x, mask, |g, x, rev| {
                one(g, x, if rev { bp } else { &self.forward })
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    None,
    Lstm,
    Gru,
    Bilstm,
    SimpleMru,
    Mru,
    MruLstm,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 7] = [
        EncoderKind::None,
        EncoderKind::Lstm,
        EncoderKind::Gru,
        EncoderKind::Bilstm,
        EncoderKind::SimpleMru,
        EncoderKind::Mru,
        EncoderKind::MruLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::None => "none",
            EncoderKind::Lstm => "lstm",
            EncoderKind::Gru => "gru",
            EncoderKind::Bilstm => "bilstm",
            EncoderKind::SimpleMru => "simple_mru",
            EncoderKind::Mru => "mru",
            EncoderKind::MruLstm => "mru_lstm",
        }
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("encoder", format!("unknown encoder kind `{s}`")))
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Width bookkeeping for one layer of an encoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDescriptor {
    pub kind: &'static str,
    pub input: usize,
    pub output: usize,
    pub bidirectional: bool,
}

/// Builds a stack after checking that adjacent widths compose.
pub fn check_stack(layers: &[LayerDescriptor]) -> Result<()> {
    for w in layers.windows(2) {
        if w[0].output != w[1].input {
            return Err(Error::invalid(
                "encoder stack",
                format!(
                    "{} emits width {} but {} expects {}",
                    w[0].kind, w[0].output, w[1].kind, w[1].input
                ),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Encoder {
    Identity {
        dim: usize,
    },
    Rnn(RnnLayer),
    Mru(MruLayer),
    /// BiLSTM of half width followed by a recurrent MRU over its output.
    MruLstm {
        rnn: RnnLayer,
        mru: MruLayer,
    },
}

impl Encoder {
    /// `mru` supplies ranges and switches for the MRU-based kinds; its
    /// variant is overridden by `kind`.
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        kind: EncoderKind,
        dim: usize,
        mru: &MruConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let half = |what: &str| {
            if dim % 2 == 1 {
                Err(Error::invalid(
                    "encoder",
                    format!("{what} needs an even width, got {dim}"),
                ))
            } else {
                Ok(dim / 2)
            }
        };
        let enc = match kind {
            EncoderKind::None => Encoder::Identity { dim },
            EncoderKind::Lstm => Encoder::Rnn(RnnLayer::new(
                store,
                name,
                CellKind::Lstm,
                dim,
                dim,
                false,
                rng,
            )?),
            EncoderKind::Gru => Encoder::Rnn(RnnLayer::new(
                store,
                name,
                CellKind::Gru,
                dim,
                dim,
                false,
                rng,
            )?),
            EncoderKind::Bilstm => Encoder::Rnn(RnnLayer::new(
                store,
                name,
                CellKind::Lstm,
                dim,
                half("bilstm")?,
                true,
                rng,
            )?),
            EncoderKind::SimpleMru | EncoderKind::Mru => {
                let mut cfg = mru.clone();
                cfg.variant = if kind == EncoderKind::Mru {
                    MruVariant::Recurrent
                } else {
                    MruVariant::Simple
                };
                Encoder::Mru(MruLayer::new(store, name, dim, cfg, rng)?)
            }
            EncoderKind::MruLstm => {
                let rnn = RnnLayer::new(
                    store,
                    &format!("{name}.bilstm"),
                    CellKind::Lstm,
                    dim,
                    half("mru_lstm")?,
                    true,
                    rng,
                )?;
                let mut cfg = mru.clone();
                cfg.variant = MruVariant::Recurrent;
                let mru = MruLayer::new(store, &format!("{name}.mru"), rnn.output_dim(), cfg, rng)?;
                Encoder::MruLstm { rnn, mru }
            }
        };
        check_stack(&enc.layers())?;
        Ok(enc)
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Identity { .. } => EncoderKind::None,
            Encoder::Rnn(r) if r.backward.is_some() => EncoderKind::Bilstm,
            Encoder::Rnn(r) => match r.forward.kind {
                CellKind::Lstm => EncoderKind::Lstm,
                CellKind::Gru => EncoderKind::Gru,
            },
            Encoder::Mru(m) => match m.config.variant {
                MruVariant::Simple => EncoderKind::SimpleMru,
                MruVariant::Recurrent => EncoderKind::Mru,
            },
            Encoder::MruLstm { .. } => EncoderKind::MruLstm,
        }
    }

    pub fn layers(&self) -> Vec<LayerDescriptor> {
        let rnn_desc = |r: &RnnLayer| LayerDescriptor {
            kind: match r.forward.kind {
                CellKind::Lstm => "lstm",
                CellKind::Gru => "gru",
            },
            input: r.forward.input_dim,
            output: r.output_dim(),
            bidirectional: r.backward.is_some(),
        };
        let mru_desc = |m: &MruLayer| LayerDescriptor {
            kind: match m.config.variant {
                MruVariant::Simple => "simple_mru",
                MruVariant::Recurrent => "mru",
            },
            input: m.forward.dim,
            output: m.output_dim(),
            bidirectional: m.backward.is_some(),
        };
        match self {
            Encoder::Identity { dim } => vec![LayerDescriptor {
                kind: "none",
                input: *dim,
                output: *dim,
                bidirectional: false,
            }],
            Encoder::Rnn(r) => vec![rnn_desc(r)],
            Encoder::Mru(m) => vec![mru_desc(m)],
            Encoder::MruLstm { rnn, mru } => vec![rnn_desc(rnn), mru_desc(mru)],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers()[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers().last().expect("non-empty stack").output
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, mask: &SeqMask) -> Result<Var> {
        match self {
            Encoder::Identity { .. } => identity_encoder(g, x, mask),
            Encoder::Rnn(r) => r.encode(g, x, mask),
            Encoder::Mru(m) => m.encode(g, x, mask),
            Encoder::MruLstm { rnn, mru } => {
                let h = rnn.encode(g, x, mask)?;
                mru.encode(g, h, mask)
            }
        }
    }
}

/// Returns the input with padded rows zeroed; adds no parameters.
pub fn identity_encoder<T: Scalar>(g: &mut Graph<'_, T>, x: Var, mask: &SeqMask) -> Result<Var> {
    if mask.is_full() {
        return Ok(x);
    }
    let xv = g.value(x);
    let keep = mask.to_tensor(xv.last_dim(), xv.rank() == 3);
    g.mul_const(x, keep)
}
