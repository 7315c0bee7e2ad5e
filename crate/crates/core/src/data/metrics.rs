//! Accuracy, exact match, token F1, BLEU and Rouge-L, plus the Rouge-L
//! search for approximate answer spans.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{Error, Result};

/// Named fractions in `[0, 1]` with the number of scored instances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub count: usize,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new(count: usize) -> Self {
        MetricReport {
            count,
            metrics: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("count,{}\n", self.count));
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}

impl fmt::Display for MetricReport {
    /// Flat `key=value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "count={}", self.count)?;
        for (k, v) in &self.metrics {
            writeln!(f, "{k}={v:.6}")?;
        }
        Ok(())
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(
            "metric",
            format!("{a} predictions for {b} references"),
        ));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, trims punctuation from both ends of each token and drops
/// articles and tokens that become empty.
pub fn normalize_answer<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            t.as_ref()
                .to_lowercase()
                .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
                .to_string()
        })
        .filter(|t| !t.is_empty() && !ARTICLES.contains(&t.as_str()))
        .collect()
}

/// Whitespace tokenisation followed by [`normalize_answer`].
pub fn normalize_text(text: &str) -> Vec<String> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    normalize_answer(&toks)
}

pub fn exact_match<S: AsRef<str>>(pred: &[S], gold: &[S]) -> bool {
    normalize_answer(pred) == normalize_answer(gold)
}

pub fn metric_em<S: AsRef<str>>(preds: &[Vec<S>], golds: &[Vec<S>]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| exact_match(p, g))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

fn counts<S: AsRef<str>>(tokens: &[S]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_ref()).or_insert(0) += 1;
    }
    m
}

/// Bag-of-tokens F1 on the tokens as given.
pub fn f1<S: AsRef<str>>(pred: &[S], gold: &[S]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let gc = counts(gold);
    let common: usize = counts(pred)
        .iter()
        .map(|(t, &c)| c.min(gc.get(t).copied().unwrap_or(0)))
        .sum();
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

const BLEU_EPS: f64 = 1e-9;

/// Sentence BLEU with a single reference: clipped n-gram precisions for
/// n = 1..=max_n, geometric mean, brevity penalty. Orders longer than the
/// prediction have no n-grams to score and are left out of the mean; a zero
/// clipped count becomes `1e-9`.
pub fn bleu<S: AsRef<str>>(pred: &[S], gold: &[S], max_n: usize) -> f64 {
    let orders = max_n.min(pred.len());
    if orders == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let total = pred.len() - (n - 1);
        let gc = ngram_counts(gold, n);
        let clipped: usize = ngram_counts(pred, n)
            .iter()
            .map(|(g, &c)| c.min(gc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if clipped == 0 {
            BLEU_EPS
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let (c, r) = (pred.len() as f64, gold.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / orders as f64).exp()
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Longest common subsequence length, two-row dynamic programme.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with β = 1, i.e. `2·lcs / (|pred| + |gold|)`.
fn rouge_from_lcs(lcs: usize, pred_len: usize, gold_len: usize) -> f64 {
    if pred_len + gold_len == 0 {
        return 1.0;
    }
    if lcs == 0 {
        return 0.0;
    }
    2.0 * lcs as f64 / (pred_len + gold_len) as f64
}

pub fn rouge_l<S: AsRef<str>>(pred: &[S], gold: &[S]) -> f64 {
    rouge_from_lcs(lcs_len(pred, gold), pred.len(), gold.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxSpan {
    pub start: usize,
    pub end: usize,
    pub score: f64,
    /// No passage span shares a token with the reference.
    pub degenerate: bool,
}

/// Span of at most `max_len` tokens maximising Rouge-L against `reference`.
/// Ties go to the smallest start, then the shortest span.
pub fn rouge_l_best_span<S: AsRef<str>>(
    passage: &[S],
    reference: &[S],
    max_len: usize,
) -> ApproxSpan {
    let m = reference.len();
    let mut best = ApproxSpan {
        start: 0,
        end: 0,
        score: 0.0,
        degenerate: true,
    };
    let mut prev = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    for s in 0..passage.len() {
        prev.fill(0);
        for e in s..passage.len().min(s + max_len.max(1)) {
            let x = passage[e].as_ref();
            cur[0] = 0;
            for (j, y) in reference.iter().enumerate() {
                cur[j + 1] = if x == y.as_ref() {
                    prev[j] + 1
                } else {
                    prev[j + 1].max(cur[j])
                };
            }
            std::mem::swap(&mut prev, &mut cur);
            let score = rouge_from_lcs(prev[m], e - s + 1, m);
            if score > best.score {
                best = ApproxSpan {
                    start: s,
                    end: e,
                    score,
                    degenerate: false,
                };
            }
        }
    }
    best
}
