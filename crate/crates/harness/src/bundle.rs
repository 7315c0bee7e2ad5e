//! A model together with everything needed to feed it: configuration,
//! vocabulary, idf weights and parameters.

use mru_core::data::metrics::rouge_l_best_span;
use mru_core::data::{build_embeddings, idf_table, Dataset, SpanRecord, Task, Vocab};
use mru_core::model::{McqInstance, SpanInstance};
use mru_core::{BiAttentiveModel, ParameterStore, Rng, Scalar, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};

/// Model inputs for one dataset.
#[derive(Debug, Clone)]
pub enum Instances {
    Mcq(Vec<McqInstance>),
    Span(Vec<SpanInstance>),
}

impl Instances {
    pub fn len(&self) -> usize {
        match self {
            Instances::Mcq(v) => v.len(),
            Instances::Span(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct ModelBundle<T: Scalar> {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub idf: Vec<f64>,
    pub model: BiAttentiveModel,
    pub store: ParameterStore<T>,
}

/// Vocabulary over every token of the given datasets, in order.
pub fn build_vocab(datasets: &[&Dataset]) -> Vocab {
    Vocab::build(datasets.iter().flat_map(|d| d.token_sequences()))
}

/// Idf weights with passages as documents.
pub fn passage_idf(vocab: &Vocab, data: &Dataset) -> Vec<f64> {
    match data {
        Dataset::Mcq(rs) => idf_table(vocab, rs.iter().map(|r| r.passage.as_slice())),
        Dataset::Span(rs) => idf_table(vocab, rs.iter().map(|r| r.passage.as_slice())),
    }
}

/// Training target for a span record: the stored span, or for free-form
/// answers the passage span with the best Rouge-L against the answer.
/// `None` when a free-form answer shares no token with the passage.
pub fn training_span(rec: &SpanRecord, max_span_len: usize) -> Option<SpanRecord> {
    let Some(answer) = &rec.answer_text else {
        return Some(rec.clone());
    };
    let best = rouge_l_best_span(&rec.passage, answer, max_span_len);
    if best.degenerate {
        return None;
    }
    Some(SpanRecord {
        answer_start: best.start,
        answer_end: best.end,
        ..rec.clone()
    })
}

impl<T: Scalar> ModelBundle<T> {
    /// Fresh parameters from `config.seed`.
    pub fn init(config: TrainConfig, vocab: Vocab, idf: Vec<f64>) -> Result<Self> {
        let rng = Rng::new(config.seed);
        let emb: Tensor<T> = build_embeddings(
            &vocab,
            config.embedding_dim,
            config.pretrained.as_deref(),
            &mut rng.fork(1),
        )?;
        let mut store = ParameterStore::new();
        let model = BiAttentiveModel::new(
            config.model_config(vocab.len()),
            &mut store,
            emb,
            &mut rng.fork(2),
        )?;
        Ok(ModelBundle {
            config,
            vocab,
            idf,
            model,
            store,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let vocab = ckpt.vocab()?;
        let mut config = ckpt.config.clone();
        // the stored table replaces whatever the pretrained file would give
        config.pretrained = None;
        let mut bundle = Self::init(config, vocab, ckpt.idf.clone())?;
        bundle.config.pretrained = ckpt.config.pretrained.clone();
        ckpt.restore(&mut bundle.store)?;
        Ok(bundle)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, &self.vocab, &self.idf, &self.store)
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    fn check_task(&self, data: &Dataset) -> Result<()> {
        if data.task() != self.task() {
            return Err(HarnessError::config(
                "task",
                format!(
                    "{} model cannot read a {} dataset",
                    self.task(),
                    data.task()
                ),
            ));
        }
        Ok(())
    }

    /// Inputs for every record, truncated to `train.max_len`.
    pub fn instances(&self, data: &Dataset) -> Result<Instances> {
        self.check_task(data)?;
        let max_len = self.config.max_len;
        Ok(match data {
            Dataset::Mcq(rs) => Instances::Mcq(
                rs.iter()
                    .map(|r| McqInstance::new(r, &self.vocab, &self.idf, max_len))
                    .collect(),
            ),
            Dataset::Span(rs) => Instances::Span(
                rs.iter()
                    .map(|r| SpanInstance::new(r, &self.vocab, max_len))
                    .collect(),
            ),
        })
    }

    /// Training inputs: free-form span answers are mapped to passage spans
    /// and records without a usable target are dropped. Returns the inputs
    /// and the number dropped.
    pub fn training_instances(&self, data: &Dataset) -> Result<(Instances, usize)> {
        self.check_task(data)?;
        Ok(match data {
            Dataset::Mcq(_) => (self.instances(data)?, 0),
            Dataset::Span(rs) => {
                let kept: Vec<SpanInstance> = rs
                    .iter()
                    .filter_map(|r| training_span(r, self.config.max_span_len))
                    .map(|r| SpanInstance::new(&r, &self.vocab, self.config.max_len))
                    .filter(|i| i.gold.is_some())
                    .collect();
                let dropped = rs.len() - kept.len();
                (Instances::Span(kept), dropped)
            }
        })
    }
}
