//! Deterministic evaluation of a model bundle on a dataset.

use mru_core::data::metrics::{accuracy, bleu, exact_match, f1, normalize_answer, rouge_l};
use mru_core::data::{Dataset, McqRecord, MetricReport, SpanRecord, Task};
use mru_core::Scalar;

use crate::bundle::{Instances, ModelBundle};
use crate::error::{HarnessError, Result};

/// Metric used for model selection.
pub fn dev_metric(task: Task) -> &'static str {
    match task {
        Task::Mcq => "accuracy",
        Task::Span => "f1",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predictions {
    Options(Vec<usize>),
    Spans(Vec<(usize, usize)>),
}

fn count_mismatch(preds: usize, records: usize) -> HarnessError {
    HarnessError::config(
        "evaluate",
        format!("{preds} predictions for {records} records"),
    )
}

pub fn score_mcq(preds: &[usize], records: &[McqRecord]) -> Result<MetricReport> {
    let golds: Vec<usize> = records.iter().map(|r| r.label).collect();
    let acc = accuracy(preds, &golds).map_err(|_| count_mismatch(preds.len(), records.len()))?;
    Ok(MetricReport::new(records.len()).with("accuracy", acc))
}

/// EM, F1, BLEU-1/4 and Rouge-L of predicted passage spans against each
/// record's reference, all on normalized tokens.
pub fn score_span(preds: &[(usize, usize)], records: &[SpanRecord]) -> Result<MetricReport> {
    if preds.len() != records.len() {
        return Err(count_mismatch(preds.len(), records.len()));
    }
    let mut sums = [0.0f64; 5];
    for (&(s, e), r) in preds.iter().zip(records) {
        if s > e || e >= r.passage.len() {
            return Err(HarnessError::config(
                "evaluate",
                format!("span ({s}, {e}) outside record `{}`", r.id),
            ));
        }
        let pred = &r.passage[s..=e];
        let gold = r.reference();
        let (np, ng) = (normalize_answer(pred), normalize_answer(gold));
        let scores = [
            f64::from(u8::from(exact_match(pred, gold))),
            f1(&np, &ng),
            bleu(&np, &ng, 1),
            bleu(&np, &ng, 4),
            rouge_l(&np, &ng),
        ];
        for (acc, v) in sums.iter_mut().zip(scores) {
            *acc += v;
        }
    }
    let n = records.len().max(1) as f64;
    let mut report = MetricReport::new(records.len());
    for (name, total) in ["em", "f1", "bleu1", "bleu4", "rouge_l"]
        .into_iter()
        .zip(sums)
    {
        report = report.with(name, total / n);
    }
    Ok(report)
}

pub fn predict<T: Scalar>(bundle: &ModelBundle<T>, insts: &Instances) -> Result<Predictions> {
    let (model, store) = (&bundle.model, &bundle.store);
    Ok(match insts {
        Instances::Mcq(v) => Predictions::Options(
            v.iter()
                .map(|i| model.predict_option(store, i))
                .collect::<mru_core::Result<_>>()?,
        ),
        Instances::Span(v) => Predictions::Spans(
            v.iter()
                .map(|i| model.predict_span(store, i))
                .collect::<mru_core::Result<_>>()?,
        ),
    })
}

pub fn score(preds: &Predictions, data: &Dataset) -> Result<MetricReport> {
    match (preds, data) {
        (Predictions::Options(p), Dataset::Mcq(rs)) => score_mcq(p, rs),
        (Predictions::Spans(p), Dataset::Span(rs)) => score_span(p, rs),
        _ => Err(HarnessError::config(
            "evaluate",
            "prediction and dataset tasks differ",
        )),
    }
}

/// Metrics with dropout off.
pub fn evaluate<T: Scalar>(bundle: &ModelBundle<T>, data: &Dataset) -> Result<MetricReport> {
    let insts = bundle.instances(data)?;
    score(&predict(bundle, &insts)?, data)
}
