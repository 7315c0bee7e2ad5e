//! Bi-attentive reading-comprehension model with a multiple-choice head and
//! a span-pointer head around a swappable sequence encoder.

pub mod attention;
pub mod best_span;
pub mod features;
pub mod instance;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParameterStore, Var};
use crate::baselines::{Encoder, EncoderKind};
use crate::data::dataset::Task;
use crate::error::{Error, Result};
use crate::layers::{Highway, Linear};
use crate::mask::SeqMask;
use crate::mru::{MruConfig, MruVariant, RangeSet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use attention::{align, Aligned, BiAttention, Compare, CompareMode};
pub use best_span::best_span;
pub use features::{em_features, overlap_features};
pub use instance::{
    McqInstance, Sequence, SpanInstance, MCQ_CHANNELS, OVERLAP_FEATURES, SPAN_CHANNELS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub dim: usize,
    pub encoder: EncoderKind,
    pub mru: MruConfig,
    pub compare: CompareMode,
    /// Learned affinities; `false` aligns with uniform weights.
    pub attention: bool,
    /// Run the encoder over the question as well as the passage.
    pub apply_to_query: bool,
    pub max_span_len: usize,
    pub dropout: f64,
    pub frozen_embeddings: bool,
}

impl ModelConfig {
    pub fn new(task: Task, vocab_size: usize) -> Self {
        ModelConfig {
            task,
            vocab_size,
            embedding_dim: 50,
            dim: 64,
            encoder: EncoderKind::Mru,
            mru: MruConfig::new(MruVariant::Recurrent, RangeSet::default()),
            compare: CompareMode::default(),
            attention: true,
            apply_to_query: false,
            max_span_len: 15,
            dropout: 0.1,
            frozen_embeddings: true,
        }
    }

    fn channels(&self) -> usize {
        match self.task {
            Task::Mcq => MCQ_CHANNELS,
            Task::Span => SPAN_CHANNELS,
        }
    }
}

/// An encoder with a projection back to the model width when it emits a
/// different width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectedEncoder {
    pub encoder: Encoder,
    pub proj: Option<Linear>,
}

impl ProjectedEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        kind: EncoderKind,
        dim: usize,
        mru: &MruConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let encoder = Encoder::new(store, name, kind, dim, mru, rng)?;
        let proj = if encoder.output_dim() != dim {
            Some(Linear::new(
                store,
                &format!("{name}.out"),
                encoder.output_dim(),
                dim,
                true,
                rng,
            )?)
        } else {
            None
        };
        Ok(ProjectedEncoder { encoder, proj })
    }

    /// `x` is `[len, dim]`; the sequence is unpadded.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let len = g.shape(x)[0];
        let h = self.encoder.encode(g, x, &SeqMask::full(1, len))?;
        match self.proj {
            Some(p) => p.forward(g, h),
            None => Ok(h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McqHead {
    pub align: BiAttention,
    pub compare: Compare,
    pub option_align: BiAttention,
    pub hidden: Linear,
    pub score: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanHead {
    pub align: BiAttention,
    pub compare: Compare,
    pub start_encoder: ProjectedEncoder,
    pub end_encoder: ProjectedEncoder,
    pub start: Linear,
    pub end: Linear,
}

impl SpanHead {
    /// Start logits from one encoder pass over `p_q` `[len, dim]`, end logits
    /// from a second pass over the first; each `[1, len]`.
    pub fn pointer<T: Scalar>(&self, g: &mut Graph<'_, T>, p_q: Var) -> Result<(Var, Var)> {
        let len = g.shape(p_q)[0];
        let h1 = self.start_encoder.forward(g, p_q)?;
        let h2 = self.end_encoder.forward(g, h1)?;
        let s = self.start.forward(g, h1)?;
        let e = self.end.forward(g, h2)?;
        Ok((g.reshape(s, &[1, len])?, g.reshape(e, &[1, len])?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Head {
    Mcq(McqHead),
    Span(SpanHead),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiAttentiveModel {
    pub config: ModelConfig,
    pub embedding: ParamId,
    pub input_proj: Linear,
    pub highway: Highway,
    pub encoder: ProjectedEncoder,
    pub head: Head,
}

/// Pointer layers reuse the encoder kind; the two-layer stack falls back to
/// its BiLSTM part.
fn pointer_kind(kind: EncoderKind) -> EncoderKind {
    match kind {
        EncoderKind::MruLstm => EncoderKind::Bilstm,
        k => k,
    }
}

impl BiAttentiveModel {
    /// `embeddings` is the `[vocab_size, embedding_dim]` table; it is stored
    /// as the `embedding` parameter.
    pub fn new<T: Scalar>(
        config: ModelConfig,
        store: &mut ParameterStore<T>,
        embeddings: Tensor<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let want = [config.vocab_size, config.embedding_dim];
        if embeddings.shape() != want {
            return Err(Error::shape("embedding", embeddings.shape(), &want));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::invalid(
                "model",
                format!("dropout {} outside [0, 1)", config.dropout),
            ));
        }
        let d = config.dim;
        let embedding = store.add("embedding", embeddings)?;
        let input_proj = Linear::new(
            store,
            "input.proj",
            config.embedding_dim + config.channels(),
            d,
            true,
            rng,
        )?;
        let highway = Highway::new(store, "input.highway", d, rng)?;
        let encoder = ProjectedEncoder::new(store, "encoder", config.encoder, d, &config.mru, rng)?;
        let head = match config.task {
            Task::Mcq => Head::Mcq(McqHead {
                align: BiAttention::new(store, "mcq.align", d, rng)?,
                compare: Compare::new(store, "mcq.compare", config.compare, d, rng)?,
                option_align: BiAttention::new(store, "mcq.option_align", d, rng)?,
                hidden: Linear::new(store, "mcq.hidden", 2 * d + OVERLAP_FEATURES, d, true, rng)?,
                // a shared bias cancels in the softmax over options
                score: Linear::new(store, "mcq.score", d, 1, false, rng)?,
            }),
            Task::Span => {
                let kind = pointer_kind(config.encoder);
                Head::Span(SpanHead {
                    align: BiAttention::new(store, "span.align", d, rng)?,
                    compare: Compare::new(store, "span.compare", config.compare, d, rng)?,
                    start_encoder: ProjectedEncoder::new(
                        store,
                        "span.start_encoder",
                        kind,
                        d,
                        &config.mru,
                        rng,
                    )?,
                    end_encoder: ProjectedEncoder::new(
                        store,
                        "span.end_encoder",
                        kind,
                        d,
                        &config.mru,
                        rng,
                    )?,
                    // position-independent biases cancel in the softmax
                    start: Linear::new(store, "span.start", d, 1, false, rng)?,
                    end: Linear::new(store, "span.end", d, 1, false, rng)?,
                })
            }
        };
        Ok(BiAttentiveModel {
            config,
            embedding,
            input_proj,
            highway,
            encoder,
            head,
        })
    }

    /// Embedding lookup, feature channels, projection and highway: `[len, dim]`.
    pub fn embed<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        seq: &Sequence,
        rng: &mut Rng,
    ) -> Result<Var> {
        if seq.is_empty() {
            return Err(Error::invalid("model", "empty token sequence"));
        }
        if seq.channels != self.config.channels() {
            return Err(Error::invalid(
                "model",
                format!(
                    "{} feature channels, model expects {}",
                    seq.channels,
                    self.config.channels()
                ),
            ));
        }
        if let Some(&bad) = seq.ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::invalid(
                "model",
                format!("token id {bad} outside vocabulary"),
            ));
        }
        let table = if self.config.frozen_embeddings {
            g.param_frozen(self.embedding)
        } else {
            g.param(self.embedding)
        };
        let e = g.gather_rows(table, &seq.ids)?;
        let e = g.dropout(e, self.config.dropout, rng)?;
        let f = g.constant(Tensor::from_f64(&[seq.len(), seq.channels], &seq.features)?);
        let x = g.concat_last(&[e, f])?;
        let x = self.input_proj.forward(g, x)?;
        self.highway.forward(g, x)
    }

    /// Embedded and encoded passage.
    pub fn encode_passage<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        seq: &Sequence,
        rng: &mut Rng,
    ) -> Result<Var> {
        let x = self.embed(g, seq, rng)?;
        let h = self.encoder.forward(g, x)?;
        g.dropout(h, self.config.dropout, rng)
    }

    pub fn encode_question<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        seq: &Sequence,
        rng: &mut Rng,
    ) -> Result<Var> {
        if self.config.apply_to_query {
            self.encode_passage(g, seq, rng)
        } else {
            self.embed(g, seq, rng)
        }
    }

    /// Per-option scoring input `[1, 2·dim + 8]`: sum-pooled alignments of
    /// the question-aware passage and the option, plus overlap features.
    pub fn option_features<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        inst: &McqInstance,
        rng: &mut Rng,
    ) -> Result<Vec<Var>> {
        let Head::Mcq(head) = &self.head else {
            return Err(Error::invalid(
                "model",
                "multiple-choice instance for a span model",
            ));
        };
        if inst.options.is_empty() || inst.overlap.len() != inst.options.len() {
            return Err(Error::invalid(
                "model",
                "instance needs one overlap row per option",
            ));
        }
        if inst.passages.len() != inst.options.len() || inst.questions.len() != inst.options.len() {
            return Err(Error::invalid(
                "model",
                "instance needs one passage and question copy per option",
            ));
        }
        let attend = self.config.attention;
        let mut feats = Vec::with_capacity(inst.options.len());
        for (j, (opt, overlap)) in inst.options.iter().zip(&inst.overlap).enumerate() {
            let p = self.encode_passage(g, &inst.passages[j], rng)?;
            let q = self.encode_question(g, &inst.questions[j], rng)?;
            let pq = head.align.forward(g, p, q, None, None, attend)?;
            let p_q = head.compare.forward(g, pq.x_to_y, p)?;
            let a = self.embed(g, opt, rng)?;
            let al = head.option_align.forward(g, p_q, a, None, None, attend)?;
            let sp = g.sum_axis(al.x_to_y, 0)?;
            let sa = g.sum_axis(al.y_to_x, 0)?;
            let ov = g.constant(Tensor::from_f64(&[OVERLAP_FEATURES], overlap)?);
            let feat = g.concat_last(&[sp, sa, ov])?;
            feats.push(g.reshape(feat, &[1, 2 * self.config.dim + OVERLAP_FEATURES])?);
        }
        Ok(feats)
    }

    /// Option scores `[1, options]`.
    pub fn mcq_logits<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        inst: &McqInstance,
        rng: &mut Rng,
    ) -> Result<Var> {
        let feats = self.option_features(g, inst, rng)?;
        let Head::Mcq(head) = &self.head else {
            unreachable!("checked by option_features")
        };
        let mut scores = Vec::with_capacity(feats.len());
        for feat in feats {
            let h = head.hidden.forward(g, feat)?;
            let h = g.relu(h);
            scores.push(head.score.forward(g, h)?);
        }
        g.concat_last(&scores)
    }

    /// Start and end logits, each `[1, passage_len]`.
    pub fn span_logits<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        inst: &SpanInstance,
        rng: &mut Rng,
    ) -> Result<(Var, Var)> {
        let Head::Span(head) = &self.head else {
            return Err(Error::invalid(
                "model",
                "span instance for a multiple-choice model",
            ));
        };
        let p = self.encode_passage(g, &inst.passage, rng)?;
        let q = self.encode_question(g, &inst.question, rng)?;
        let al = head
            .align
            .forward(g, p, q, None, None, self.config.attention)?;
        let p_q = head.compare.forward(g, al.x_to_y, p)?;
        head.pointer(g, p_q)
    }

    /// Cross-entropy over the options; needs at least two of them.
    pub fn mcq_loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        inst: &McqInstance,
        rng: &mut Rng,
    ) -> Result<Var> {
        if inst.options.len() < 2 {
            return Err(Error::invalid(
                "model",
                "training needs at least two options",
            ));
        }
        let logits = self.mcq_logits(g, inst, rng)?;
        g.softmax_cross_entropy(logits, &[inst.label], None)
    }

    /// Start plus end cross-entropy.
    pub fn span_loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        inst: &SpanInstance,
        rng: &mut Rng,
    ) -> Result<Var> {
        let (s, e) = inst.gold.ok_or_else(|| {
            Error::invalid("model", "gold span lies beyond the truncated passage")
        })?;
        let (ls, le) = self.span_logits(g, inst, rng)?;
        let a = g.softmax_cross_entropy(ls, &[s], None)?;
        let b = g.softmax_cross_entropy(le, &[e], None)?;
        g.add(a, b)
    }

    /// Option probabilities, inference mode.
    pub fn mcq_probs<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        inst: &McqInstance,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new(store).training(false);
        let mut rng = Rng::new(0);
        let logits = self.mcq_logits(&mut g, inst, &mut rng)?;
        let p = g.softmax(logits, None)?;
        Ok(g.value(p).to_f64_vec())
    }

    /// Start and end distributions, inference mode.
    pub fn span_probs<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        inst: &SpanInstance,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new(store).training(false);
        let mut rng = Rng::new(0);
        let (ls, le) = self.span_logits(&mut g, inst, &mut rng)?;
        let ps = g.softmax(ls, None)?;
        let pe = g.softmax(le, None)?;
        Ok((g.value(ps).to_f64_vec(), g.value(pe).to_f64_vec()))
    }

    pub fn predict_option<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        inst: &McqInstance,
    ) -> Result<usize> {
        let p = self.mcq_probs(store, inst)?;
        Ok(argmax(&p))
    }

    pub fn predict_span<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        inst: &SpanInstance,
    ) -> Result<(usize, usize)> {
        let (ps, pe) = self.span_probs(store, inst)?;
        Ok(best_span(&ps, &pe, self.config.max_span_len))
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
