//! Datasets, synthetic tasks, vocabularies and evaluation metrics.

pub mod dataset;
pub mod metrics;
pub mod synthetic;
pub mod vocab;

pub use dataset::{load_jsonl, parse_jsonl, save_jsonl, Dataset, McqRecord, SpanRecord, Task};
pub use metrics::MetricReport;
pub use synthetic::{gen_mcq_synthetic, gen_span_synthetic, McqSynthParams, SpanSynthParams};
pub use vocab::{build_embeddings, idf_table, Vocab};
