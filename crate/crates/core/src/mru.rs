//! Multi-range gated encoders: contract-and-expand gate construction and the
//! position-wise and recurrent encoding cells.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParameterStore, Var};
use crate::error::{Error, Result};
use crate::layers::{blend, Linear};
use crate::mask::SeqMask;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Strictly increasing block sizes used for contraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct RangeSet {
    ranges: Vec<usize>,
}

impl RangeSet {
    pub fn new(ranges: Vec<usize>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::invalid("ranges", "at least one range is required"));
        }
        if ranges[0] == 0 || ranges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "ranges",
                format!("{ranges:?} must be positive and strictly increasing"),
            ));
        }
        Ok(RangeSet { ranges })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn min(&self) -> usize {
        self.ranges[0]
    }

    /// Non-fatal configuration diagnostic: without a unit range every block
    /// of `min()` tokens shares one gate vector.
    pub fn warning(&self) -> Option<String> {
        (self.ranges[0] != 1).then(|| {
            format!(
                "ranges {:?} lack 1: every {} consecutive tokens will share a gate",
                self.ranges, self.ranges[0]
            )
        })
    }

    /// Ranges clamped to a sequence of length `len`.
    pub fn clamped(&self, len: usize) -> impl Iterator<Item = usize> + '_ {
        self.ranges.iter().map(move |&r| r.min(len))
    }
}

impl Default for RangeSet {
    fn default() -> Self {
        RangeSet {
            ranges: vec![1, 2, 4, 10, 25],
        }
    }
}

impl TryFrom<Vec<usize>> for RangeSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        RangeSet::new(v)
    }
}

impl From<RangeSet> for Vec<usize> {
    fn from(r: RangeSet) -> Self {
        r.ranges
    }
}

impl FromStr for RangeSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ranges = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::invalid("ranges", format!("`{p}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        RangeSet::new(ranges)
    }
}

impl fmt::Display for RangeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ranges.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MruVariant {
    Simple,
    Recurrent,
}

impl FromStr for MruVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(MruVariant::Simple),
            "recurrent" => Ok(MruVariant::Recurrent),
            other => Err(Error::invalid(
                "variant",
                format!("unknown MRU variant `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MruConfig {
    pub variant: MruVariant,
    pub ranges: RangeSet,
    /// Recurrent variant only; the simple variant is position-wise.
    pub bidirectional: bool,
    /// `relu(W w + b)` and `tanh(W w + b)` instead of adding the bias after
    /// the nonlinearity.
    pub bias_inside: bool,
    /// Use the affine output gate without a sigmoid.
    pub raw_output_gate: bool,
}

impl MruConfig {
    pub fn new(variant: MruVariant, ranges: RangeSet) -> Self {
        MruConfig {
            variant,
            ranges,
            bidirectional: false,
            bias_inside: false,
            raw_output_gate: false,
        }
    }

    pub fn is_bidirectional(&self) -> bool {
        self.bidirectional && self.variant == MruVariant::Recurrent
    }
}

/// One contract layer per range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContractParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// Weights of one encoding direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MruParams {
    pub dim: usize,
    pub contract: Vec<ContractParams>,
    pub fuse_hidden: Linear,
    pub fuse_out: Linear,
    pub proj: Linear,
    pub out_gate: Option<Linear>,
}

impl MruParams {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        k: usize,
        variant: MruVariant,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut contract = Vec::with_capacity(k);
        for j in 0..k {
            contract.push(ContractParams {
                w: store.add(format!("{name}.contract{j}.w"), rng.glorot(dim, dim))?,
                b: store.add(format!("{name}.contract{j}.b"), Tensor::zeros(&[dim]))?,
            });
        }
        let fuse_hidden = Linear::new(store, &format!("{name}.fuse1"), k * dim, dim, true, rng)?;
        let fuse_out = Linear::new(store, &format!("{name}.fuse2"), dim, dim, true, rng)?;
        let proj = Linear::new(store, &format!("{name}.proj"), dim, dim, true, rng)?;
        let out_gate = match variant {
            MruVariant::Recurrent => Some(Linear::new(
                store,
                &format!("{name}.out_gate"),
                dim,
                dim,
                true,
                rng,
            )?),
            MruVariant::Simple => None,
        };
        Ok(MruParams {
            dim,
            contract,
            fuse_hidden,
            fuse_out,
            proj,
            out_gate,
        })
    }

    pub fn k(&self) -> usize {
        self.contract.len()
    }
}

fn act_bias<T: Scalar>(
    g: &mut Graph<'_, T>,
    pre: Var,
    bias: Var,
    bias_inside: bool,
    act: fn(&mut Graph<'_, T>, Var) -> Var,
) -> Result<Var> {
    if bias_inside {
        let x = g.add_bias(pre, bias)?;
        Ok(act(g, x))
    } else {
        let a = act(g, pre);
        g.add_bias(a, bias)
    }
}

/// Sums blocks of `r` tokens and applies `relu(W ·) + b` per block:
/// `[.., ceil(len / r), d]`.
pub fn contract<T: Scalar>(
    g: &mut Graph<'_, T>,
    seq: Var,
    r: usize,
    p: ContractParams,
    bias_inside: bool,
) -> Result<Var> {
    let blocks = g.segment_sum(seq, r)?;
    let w = g.param(p.w);
    let pre = g.matmul(blocks, w)?;
    let b = g.param(p.b);
    act_bias(g, pre, b, bias_inside, |g, x| g.relu(x))
}

/// [`contract`], then each block repeated back over its positions.
pub fn contract_expand<T: Scalar>(
    g: &mut Graph<'_, T>,
    seq: Var,
    r: usize,
    p: ContractParams,
    bias_inside: bool,
) -> Result<Var> {
    let len = g.value(seq).seq_dims()?.1;
    let r = r.min(len);
    let act = contract(g, seq, r, p, bias_inside)?;
    g.block_repeat(act, r, len)
}

/// Two relu layers over the concatenated range views; returns pre-sigmoid gates.
pub fn fuse_gates<T: Scalar>(
    g: &mut Graph<'_, T>,
    expanded: &[Var],
    hidden: &Linear,
    out: &Linear,
) -> Result<Var> {
    let cat = g.concat_last(expanded)?;
    let width = g.value(cat).last_dim();
    if width != hidden.fan_in {
        return Err(Error::shape("fuse_gates", &[width], &[hidden.fan_in]));
    }
    let h = hidden.forward(g, cat)?;
    let h = g.relu(h);
    let o = out.forward(g, h)?;
    Ok(g.relu(o))
}

/// Gate logits for every position from all ranges.
///
/// Equals [`fuse_gates`] over the [`contract_expand`] views, but the first
/// fusion layer is applied per block before expanding: a view is constant
/// within its blocks, so range `r` costs `1 / r` of a full-length product.
pub fn gates<T: Scalar>(
    g: &mut Graph<'_, T>,
    seq: Var,
    params: &MruParams,
    cfg: &MruConfig,
) -> Result<Var> {
    if params.k() != cfg.ranges.len() {
        return Err(Error::invalid(
            "mru",
            format!(
                "{} contract layers for {} ranges",
                params.k(),
                cfg.ranges.len()
            ),
        ));
    }
    let len = g.value(seq).seq_dims()?.1;
    let d = params.dim;
    let w1 = g.param(params.fuse_hidden.w);
    let w1t = g.transpose(w1)?;
    let mut hidden: Option<Var> = None;
    for (j, (r, &p)) in cfg.ranges.clamped(len).zip(&params.contract).enumerate() {
        let act = contract(g, seq, r, p, cfg.bias_inside)?;
        let wj = g.slice_last(w1t, j * d, d)?;
        let wj = g.transpose(wj)?;
        let part = g.matmul(act, wj)?;
        let part = g.block_repeat(part, r, len)?;
        hidden = Some(match hidden {
            Some(h) => g.add(h, part)?,
            None => part,
        });
    }
    let h = params
        .fuse_hidden
        .add_bias(g, hidden.expect("at least one range"))?;
    let h = g.relu(h);
    let o = params.fuse_out.forward(g, h)?;
    Ok(g.relu(o))
}

/// Candidate `tanh(W w) + b`.
pub fn candidate<T: Scalar>(
    g: &mut Graph<'_, T>,
    seq: Var,
    proj: &Linear,
    bias_inside: bool,
) -> Result<Var> {
    let pre = proj.matmul(g, seq)?;
    let b = g.param(proj.b.expect("projection has a bias"));
    act_bias(g, pre, b, bias_inside, |g, x| g.tanh(x))
}

/// Highway-style blend `σ(gate) ⊙ w + (1 − σ(gate)) ⊙ z`.
pub fn simple_cell<T: Scalar>(
    g: &mut Graph<'_, T>,
    gate_logits: Var,
    seq: Var,
    cand: Var,
) -> Result<Var> {
    let s = g.sigmoid(gate_logits);
    blend(g, s, seq, cand)
}

/// `c_t = gate_t ⊙ c_{t−1} + (1 − gate_t) ⊙ z_t`, `h_t = out_t ⊙ c_t` with
/// gates already in their final range. Everything but the scan is hoisted.
pub fn recurrent_cell<T: Scalar>(
    g: &mut Graph<'_, T>,
    gate: Var,
    cand: Var,
    out_gate: Var,
    init: Option<Var>,
) -> Result<Var> {
    let len = g.value(gate).seq_dims()?.1;
    let token = g.begin_loop("recurrent_mru");
    let cells = g.gated_scan(gate, cand, init)?;
    g.end_loop(token, len);
    g.mul(out_gate, cells)
}

pub fn simple_mru<T: Scalar>(
    g: &mut Graph<'_, T>,
    seq: Var,
    params: &MruParams,
    cfg: &MruConfig,
) -> Result<Var> {
    let gl = gates(g, seq, params, cfg)?;
    let z = candidate(g, seq, &params.proj, cfg.bias_inside)?;
    simple_cell(g, gl, seq, z)
}

pub fn recurrent_mru<T: Scalar>(
    g: &mut Graph<'_, T>,
    seq: Var,
    params: &MruParams,
    cfg: &MruConfig,
    init: Option<Var>,
) -> Result<Var> {
    let out_lin = params
        .out_gate
        .as_ref()
        .ok_or_else(|| Error::invalid("recurrent_mru", "parameters have no output gate"))?;
    let gl = gates(g, seq, params, cfg)?;
    let gate = g.sigmoid(gl);
    let z = candidate(g, seq, &params.proj, cfg.bias_inside)?;
    let o = out_lin.forward(g, seq)?;
    let o = if cfg.raw_output_gate { o } else { g.sigmoid(o) };
    recurrent_cell(g, gate, z, o, init)
}

/// A configured encoder layer: one or two directions of weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MruLayer {
    pub config: MruConfig,
    pub forward: MruParams,
    pub backward: Option<MruParams>,
}

impl MruLayer {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        config: MruConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let k = config.ranges.len();
        let forward = MruParams::new(store, &format!("{name}.fwd"), dim, k, config.variant, rng)?;
        let backward = if config.is_bidirectional() {
            Some(MruParams::new(
                store,
                &format!("{name}.bwd"),
                dim,
                k,
                config.variant,
                rng,
            )?)
        } else {
            None
        };
        Ok(MruLayer {
            config,
            forward,
            backward,
        })
    }

    pub fn output_dim(&self) -> usize {
        if self.backward.is_some() {
            2 * self.forward.dim
        } else {
            self.forward.dim
        }
    }

    fn direction<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, p: &MruParams) -> Result<Var> {
        match self.config.variant {
            MruVariant::Simple => simple_mru(g, x, p, &self.config),
            MruVariant::Recurrent => recurrent_mru(g, x, p, &self.config, None),
        }
    }

    /// Encodes a `[len, d]` or `[batch, len, d]` sequence. Padded rows are
    /// zeroed before gate construction and in the output.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, seq: Var, mask: &SeqMask) -> Result<Var> {
        mru_encode(g, seq, mask, self)
    }
}

pub fn mru_encode<T: Scalar>(
    g: &mut Graph<'_, T>,
    seq: Var,
    mask: &SeqMask,
    layer: &MruLayer,
) -> Result<Var> {
    let xv = g.value(seq);
    let (b, l, d) = xv.seq_dims()?;
    let batched = xv.rank() == 3;
    if d != layer.forward.dim {
        return Err(Error::shape("mru_encode", xv.shape(), &[layer.forward.dim]));
    }
    if mask.batch() != b || mask.len() != l {
        return Err(Error::shape(
            "mru_encode",
            &[b, l],
            &[mask.batch(), mask.len()],
        ));
    }
    let (x, keep) = if mask.is_full() {
        (seq, None)
    } else {
        let keep = mask.to_tensor::<T>(d, batched);
        (g.mul_const(seq, keep.clone())?, Some(keep))
    };
    let fwd = layer.direction(g, x, &layer.forward)?;
    let out = match &layer.backward {
        None => fwd,
        Some(bp) => {
            let rev = mask.reverse_index();
            let xr = g.permute_time(x, rev.clone())?;
            let hr = layer.direction(g, xr, bp)?;
            let bwd = g.permute_time(hr, rev)?;
            let fwd = match &keep {
                Some(k) => g.mul_const(fwd, k.clone())?,
                None => fwd,
            };
            let bwd = match &keep {
                Some(k) => g.mul_const(bwd, k.clone())?,
                None => bwd,
            };
            return g.concat_last(&[fwd, bwd]);
        }
    };
    match keep {
        Some(k) => g.mul_const(out, k),
        None => Ok(out),
    }
}
