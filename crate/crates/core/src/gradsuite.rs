//! Finite-difference gradient checks of every differentiable component at
//! tiny sizes.
//!
//! Fixtures draw every parameter from uniform(−1, 1) and are redrawn until
//! they are generic: every relu input sits at least [`KINK_MARGIN`] from
//! zero, and no option-scoring unit is active for every option (such a
//! unit's bias shifts all option scores alike, so its true gradient is
//! exactly zero and the comparison would only measure rounding noise).
//! Genericity is decided from the forward pass alone.

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Graph, ParameterStore, Var};
use crate::baselines::{CellKind, RnnLayer};
use crate::data::dataset::{McqRecord, SpanRecord, Task};
use crate::data::vocab::Vocab;
use crate::error::{Error, Result};
use crate::layers::{Highway, Linear};
use crate::mask::SeqMask;
use crate::model::{
    BiAttention, BiAttentiveModel, Compare, CompareMode, Head, McqInstance, ModelConfig,
    ProjectedEncoder, SpanHead, SpanInstance,
};
use crate::mru::{
    contract_expand, fuse_gates, recurrent_mru, simple_mru, MruConfig, MruLayer, MruParams,
    MruVariant, RangeSet,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Encoder, EncoderKind};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Smallest accepted `|x|` at any relu input of a fixture.
pub const KINK_MARGIN: f64 = 1e-3;
/// Finite-difference step.
pub const STEP: f64 = 1e-5;
const MAX_DRAWS: u64 = 500;

pub const COMPONENTS: [&str; 17] = [
    "contract_expand",
    "fuse_gates",
    "simple_mru",
    "recurrent_mru",
    "recurrent_mru_bidirectional",
    "lstm",
    "gru",
    "bilstm",
    "hybrid_stack",
    "highway",
    "bi_attention",
    "span_compare_submultnn",
    "span_compare_mult",
    "pointer",
    "mcq_head",
    "span_head",
    "span_head_simple_mru",
];

type Store64 = ParameterStore<f64>;
type LossFn = Box<dyn for<'a> Fn(&mut Graph<'a, f64>) -> Result<Var>>;

struct Fixture {
    store: Store64,
    loss: LossFn,
    /// Extra genericity condition beyond the relu margin.
    generic: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub fixture_seed: u64,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

/// Runs one named component check.
pub fn run_component(name: &str) -> Result<SuiteEntry> {
    let name = COMPONENTS
        .iter()
        .copied()
        .find(|&c| c == name)
        .ok_or_else(|| Error::invalid("gradcheck", format!("unknown component `{name}`")))?;
    let opts = GradCheckOptions {
        step: STEP,
        max_coords: 64,
        seed: 0,
    };
    for seed in 0..MAX_DRAWS {
        let fx = build(name, seed)?;
        if !fx.generic {
            continue;
        }
        let margin = {
            let mut g = Graph::new(&fx.store);
            (fx.loss)(&mut g)?;
            g.relu_margin()
        };
        if margin < KINK_MARGIN {
            continue;
        }
        let report = grad_check(&fx.store, &fx.loss, opts)?;
        return Ok(SuiteEntry {
            name,
            fixture_seed: seed,
            report,
        });
    }
    Err(Error::invalid(
        "gradcheck",
        format!("no generic fixture for `{name}` in {MAX_DRAWS} draws"),
    ))
}

pub fn run_suite() -> Result<Vec<SuiteEntry>> {
    COMPONENTS.iter().map(|c| run_component(c)).collect()
}

fn randomize(store: &mut Store64, rng: &mut Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let v = rng.uniform_tensor(store.value(id).shape(), -1.0, 1.0);
        store.set_value(id, v).expect("same shape");
    }
}

/// Contracts an output of any shape to a scalar with fixed random weights.
fn readout(g: &mut Graph<'_, f64>, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = Rng::new(0x5eed).uniform_tensor(&shape, -1.0, 1.0);
    let y = g.mul_const(out, w)?;
    g.sum_all(y)
}

fn tiny_mru(variant: MruVariant, ranges: &[usize]) -> MruConfig {
    MruConfig::new(
        variant,
        RangeSet::new(ranges.to_vec()).expect("valid ranges"),
    )
}

/// Stores, initialises and randomises; `input` shapes become parameters
/// named `input{i}` so input gradients are checked too.
fn fixture<M>(
    seed: u64,
    inputs: &[&[usize]],
    make: impl FnOnce(&mut Store64, &mut Rng) -> Result<M>,
) -> Result<(Store64, M, Vec<crate::autodiff::ParamId>)> {
    let mut rng = Rng::new(seed);
    let mut store = Store64::new();
    let ids = inputs
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("input{i}"), Tensor::zeros(s)))
        .collect::<Result<Vec<_>>>()?;
    let m = make(&mut store, &mut rng)?;
    randomize(&mut store, &mut rng);
    Ok((store, m, ids))
}

fn plain(store: Store64, loss: LossFn) -> Fixture {
    Fixture {
        store,
        loss,
        generic: true,
    }
}

fn build(name: &str, seed: u64) -> Result<Fixture> {
    Ok(match name {
        "contract_expand" => {
            let (store, p, ids) = fixture(seed, &[&[7, 4]], |s, r| {
                MruParams::new(s, "mru", 4, 1, MruVariant::Simple, r)
            })?;
            plain(
                store,
                Box::new(move |g| {
                    let x = g.param(ids[0]);
                    let y = contract_expand(g, x, 3, p.contract[0], false)?;
                    readout(g, y)
                }),
            )
        }
        "fuse_gates" => {
            let cfg = tiny_mru(MruVariant::Simple, &[1, 2, 4]);
            let (store, p, ids) = fixture(seed, &[&[6, 4]], |s, r| {
                MruParams::new(s, "mru", 4, 3, MruVariant::Simple, r)
            })?;
            plain(
                store,
                Box::new(move |g| {
                    let x = g.param(ids[0]);
                    let views = cfg
                        .ranges
                        .as_slice()
                        .iter()
                        .zip(&p.contract)
                        .map(|(&r, &c)| contract_expand(g, x, r, c, false))
                        .collect::<Result<Vec<_>>>()?;
                    let y = fuse_gates(g, &views, &p.fuse_hidden, &p.fuse_out)?;
                    readout(g, y)
                }),
            )
        }
        "simple_mru" => {
            let cfg = tiny_mru(MruVariant::Simple, &[1, 2]);
            let (store, p, ids) = fixture(seed, &[&[6, 4]], |s, r| {
                MruParams::new(s, "mru", 4, 2, MruVariant::Simple, r)
            })?;
            plain(
                store,
                Box::new(move |g| {
                    let x = g.param(ids[0]);
                    let y = simple_mru(g, x, &p, &cfg)?;
                    readout(g, y)
                }),
            )
        }
        "recurrent_mru" => {
            let cfg = tiny_mru(MruVariant::Recurrent, &[1, 2, 4]);
            let (store, p, ids) = fixture(seed, &[&[2, 8, 4], &[4]], |s, r| {
                MruParams::new(s, "mru", 4, 3, MruVariant::Recurrent, r)
            })?;
            plain(
                store,
                Box::new(move |g| {
                    let x = g.param(ids[0]);
                    let c0 = g.param(ids[1]);
                    let y = recurrent_mru(g, x, &p, &cfg, Some(c0))?;
                    readout(g, y)
                }),
            )
        }
        "recurrent_mru_bidirectional" => {
            let mut cfg = tiny_mru(MruVariant::Recurrent, &[1, 2]);
            cfg.bidirectional = true;
            let (store, layer, ids) = fixture(seed, &[&[2, 6, 4]], |s, r| {
                MruLayer::new(s, "mru", 4, cfg, r)
            })?;
            let mask = SeqMask::from_lengths(6, vec![6, 4])?;
            plain(
                store,
                Box::new(move |g| {
                    let x = g.param(ids[0]);
                    let y = layer.encode(g, x, &mask)?;
                    readout(g, y)
                }),
            )
        }
        "lstm" | "gru" | "bilstm" => {
            let kind = if name == "gru" {
                CellKind::Gru
            } else {
                CellKind::Lstm
            };
            let bidi = name == "bilstm";
            let (store, layer, ids) = fixture(seed, &[&[2, 6, 3]], |s, r| {
                RnnLayer::new(s, "rnn", kind, 3, 4, bidi, r)
            })?;
            let mask = SeqMask::from_lengths(6, vec![6, 4])?;
            plain(
                store,
                Box::new(move |g| {
                    let x = g.param(ids[0]);
                    let y = layer.encode(g, x, &mask)?;
                    readout(g, y)
                }),
            )
        }
        "hybrid_stack" => {
            let cfg = tiny_mru(MruVariant::Recurrent, &[1, 2]);
            let (store, enc, ids) = fixture(seed, &[&[6, 4]], |s, r| {
                Encoder::new(s, "stack", EncoderKind::MruLstm, 4, &cfg, r)
            })?;
            plain(
                store,
                Box::new(move |g| {
                    let x = g.param(ids[0]);
                    let y = enc.encode(g, x, &SeqMask::full(1, 6))?;
                    readout(g, y)
                }),
            )
        }
        "highway" => {
            let (store, hw, ids) =
                fixture(seed, &[&[5, 4]], |s, r| Highway::new(s, "highway", 4, r))?;
            plain(
                store,
                Box::new(move |g| {
                    let x = g.param(ids[0]);
                    let y = hw.forward(g, x)?;
                    readout(g, y)
                }),
            )
        }
        "bi_attention" => {
            let (store, att, ids) = fixture(seed, &[&[5, 4], &[3, 4]], |s, r| {
                BiAttention::new(s, "att", 4, r)
            })?;
            plain(
                store,
                Box::new(move |g| {
                    let (x, y) = (g.param(ids[0]), g.param(ids[1]));
                    let al = att.forward(g, x, y, None, None, true)?;
                    let a = readout(g, al.x_to_y)?;
                    let b = readout(g, al.y_to_x)?;
                    g.add(a, b)
                }),
            )
        }
        "span_compare_submultnn" | "span_compare_mult" => {
            let mode = if name.ends_with("mult") {
                CompareMode::Mult
            } else {
                CompareMode::Submultnn
            };
            let (store, cmp, ids) = fixture(seed, &[&[5, 4], &[5, 4]], |s, r| {
                Compare::new(s, "compare", mode, 4, r)
            })?;
            plain(
                store,
                Box::new(move |g| {
                    let (a, p) = (g.param(ids[0]), g.param(ids[1]));
                    let y = cmp.forward(g, a, p)?;
                    readout(g, y)
                }),
            )
        }
        "pointer" => {
            let cfg = tiny_mru(MruVariant::Recurrent, &[1, 2]);
            let (store, head, ids) = fixture(seed, &[&[7, 4]], |s, r| {
                let enc = |s: &mut Store64, n: &str, r: &mut Rng| {
                    ProjectedEncoder::new(s, n, EncoderKind::Mru, 4, &cfg, r)
                };
                Ok(SpanHead {
                    align: BiAttention::new(s, "unused", 4, r)?,
                    compare: Compare::new(s, "unused.compare", CompareMode::Mult, 4, r)?,
                    start_encoder: enc(s, "start_encoder", r)?,
                    end_encoder: enc(s, "end_encoder", r)?,
                    start: Linear::new(s, "start", 4, 1, false, r)?,
                    end: Linear::new(s, "end", 4, 1, false, r)?,
                })
            })?;
            let gold = (Rng::new(seed).below(7), 0);
            let gold = (gold.0, gold.0 + Rng::new(seed + 1).below(7 - gold.0));
            plain(
                store,
                Box::new(move |g| {
                    let pq = g.param(ids[0]);
                    let (s, e) = head.pointer(g, pq)?;
                    let a = g.softmax_cross_entropy(s, &[gold.0], None)?;
                    let b = g.softmax_cross_entropy(e, &[gold.1], None)?;
                    g.add(a, b)
                }),
            )
        }
        "mcq_head" => mcq_fixture(seed)?,
        "span_head" => span_fixture(seed, EncoderKind::Mru)?,
        "span_head_simple_mru" => span_fixture(seed, EncoderKind::SimpleMru)?,
        other => unreachable!("component `{other}` has no fixture"),
    })
}

fn random_tokens(rng: &mut Rng, n: usize, prefix: &str, pool: usize) -> Vec<String> {
    (0..n)
        .map(|_| format!("{prefix}{}", rng.below(pool)))
        .collect()
}

fn tiny_model(
    task: Task,
    vocab: &Vocab,
    kind: EncoderKind,
    rng: &mut Rng,
) -> Result<(Store64, BiAttentiveModel)> {
    let mut cfg = ModelConfig::new(task, vocab.len());
    cfg.embedding_dim = 4;
    cfg.dim = 4;
    cfg.encoder = kind;
    cfg.mru.ranges = RangeSet::new(vec![1, 2])?;
    cfg.frozen_embeddings = false;
    cfg.dropout = 0.0;
    let mut store = Store64::new();
    let emb = Tensor::zeros(&[vocab.len(), 4]);
    let model = BiAttentiveModel::new(cfg, &mut store, emb, rng)?;
    randomize(&mut store, rng);
    Ok((store, model))
}

fn mcq_fixture(seed: u64) -> Result<Fixture> {
    let mut rng = Rng::new(seed);
    let rec = McqRecord {
        id: "fixture".into(),
        passage: random_tokens(&mut rng, 9, "t", 12),
        question: random_tokens(&mut rng, 2, "t", 12),
        options: (1..=3)
            .map(|n| random_tokens(&mut rng, n, "t", 12))
            .collect(),
        label: rng.below(3),
    };
    let vocab = Vocab::build([
        rec.passage.as_slice(),
        rec.question.as_slice(),
        rec.options.concat().as_slice(),
    ]);
    let idf: Vec<f64> = (0..vocab.len()).map(|_| rng.uniform(1.0, 3.0)).collect();
    let inst = McqInstance::new(&rec, &vocab, &idf, 100);
    let (store, model) = tiny_model(Task::Mcq, &vocab, EncoderKind::SimpleMru, &mut rng)?;
    let generic = {
        let Head::Mcq(head) = &model.head else {
            unreachable!("mcq model")
        };
        let mut g = Graph::new(&store);
        let feats = model.option_features(&mut g, &inst, &mut Rng::new(0))?;
        let mut always_on = vec![true; model.config.dim];
        for f in feats {
            let h = head.hidden.forward(&mut g, f)?;
            for (on, &v) in always_on.iter_mut().zip(g.value(h).data()) {
                *on &= v > 0.0;
            }
        }
        !always_on.contains(&true)
    };
    Ok(Fixture {
        store,
        loss: Box::new(move |g| model.mcq_loss(g, &inst, &mut Rng::new(0))),
        generic,
    })
}

fn span_fixture(seed: u64, kind: EncoderKind) -> Result<Fixture> {
    let mut rng = Rng::new(seed);
    let passage = random_tokens(&mut rng, 10, "t", 14);
    let s = rng.below(10);
    let e = (s + rng.below(3)).min(9);
    let rec = SpanRecord {
        id: "fixture".into(),
        question: random_tokens(&mut rng, 2, "t", 14),
        passage,
        answer_start: s,
        answer_end: e,
        answer_text: None,
    };
    let vocab = Vocab::build([rec.passage.as_slice(), rec.question.as_slice()]);
    let inst = SpanInstance::new(&rec, &vocab, 100);
    let (store, model) = tiny_model(Task::Span, &vocab, kind, &mut rng)?;
    Ok(plain(
        store,
        Box::new(move |g| model.span_loss(g, &inst, &mut Rng::new(0))),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_component_rejected() {
        assert!(run_component("nope").is_err());
    }
}
