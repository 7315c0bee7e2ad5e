//! Records converted to vocabulary ids plus lexical feature channels.

use crate::data::dataset::{McqRecord, SpanRecord};
use crate::data::vocab::Vocab;
use crate::model::features::{em_features, overlap_features};

/// Token ids with `channels` binary feature columns per token, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub ids: Vec<usize>,
    pub features: Vec<f64>,
    pub channels: usize,
}

impl Sequence {
    /// `against` lists the sequences whose exact-match flags become channels.
    pub fn new(tokens: &[String], vocab: &Vocab, against: &[&[String]]) -> Self {
        let flags: Vec<Vec<bool>> = against.iter().map(|o| em_features(tokens, o)).collect();
        let mut features = Vec::with_capacity(tokens.len() * against.len());
        for i in 0..tokens.len() {
            features.extend(flags.iter().map(|f| if f[i] { 1.0 } else { 0.0 }));
        }
        Sequence {
            ids: vocab.encode(tokens),
            features,
            channels: against.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn truncate(tokens: &[String], max_len: usize) -> &[String] {
    &tokens[..tokens.len().min(max_len.max(1))]
}

pub const MCQ_CHANNELS: usize = 2;
pub const SPAN_CHANNELS: usize = 1;
pub const OVERLAP_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct McqInstance {
    /// One copy per option: the answer-match channel depends on the option.
    pub passages: Vec<Sequence>,
    pub questions: Vec<Sequence>,
    pub options: Vec<Sequence>,
    /// Per option: overlap with the passage, then with the question.
    pub overlap: Vec<[f64; OVERLAP_FEATURES]>,
    pub label: usize,
}

impl McqInstance {
    /// `idf` is indexed by vocabulary id. Passages are cut to `max_len`.
    pub fn new(rec: &McqRecord, vocab: &Vocab, idf: &[f64], max_len: usize) -> Self {
        let p = truncate(&rec.passage, max_len);
        let q = rec.question.as_slice();
        let weight = |t: &str| idf.get(vocab.id(t)).copied().unwrap_or(1.0);
        let overlap = rec
            .options
            .iter()
            .map(|a| {
                let mut f = [0.0; OVERLAP_FEATURES];
                f[..4].copy_from_slice(&overlap_features(a, p, weight));
                f[4..].copy_from_slice(&overlap_features(a, q, weight));
                f
            })
            .collect();
        McqInstance {
            passages: rec
                .options
                .iter()
                .map(|a| Sequence::new(p, vocab, &[q, a]))
                .collect(),
            questions: rec
                .options
                .iter()
                .map(|a| Sequence::new(q, vocab, &[p, a]))
                .collect(),
            options: rec
                .options
                .iter()
                .map(|a| Sequence::new(a, vocab, &[p, q]))
                .collect(),
            overlap,
            label: rec.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanInstance {
    pub passage: Sequence,
    pub question: Sequence,
    /// `None` when truncation cut the gold span off.
    pub gold: Option<(usize, usize)>,
}

impl SpanInstance {
    pub fn new(rec: &SpanRecord, vocab: &Vocab, max_len: usize) -> Self {
        let p = truncate(&rec.passage, max_len);
        let q = rec.question.as_slice();
        SpanInstance {
            passage: Sequence::new(p, vocab, &[q]),
            question: Sequence::new(q, vocab, &[p]),
            gold: (rec.answer_end < p.len()).then_some((rec.answer_start, rec.answer_end)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn channels_and_truncation() {
        let rec = SpanRecord {
            id: "a".into(),
            passage: toks("x y z w"),
            question: toks("y"),
            answer_start: 3,
            answer_end: 3,
            answer_text: None,
        };
        let vocab = Vocab::build([rec.passage.as_slice(), rec.question.as_slice()]);
        let inst = SpanInstance::new(&rec, &vocab, 3);
        assert_eq!(inst.passage.features, vec![0.0, 1.0, 0.0]);
        assert_eq!(inst.gold, None);
        assert_eq!(SpanInstance::new(&rec, &vocab, 10).gold, Some((3, 3)));
    }

    #[test]
    fn answer_channel_follows_each_option() {
        let rec = McqRecord {
            id: "m".into(),
            passage: toks("k v u"),
            question: toks("k"),
            options: vec![toks("v"), toks("u")],
            label: 0,
        };
        let vocab = Vocab::build([
            rec.passage.as_slice(),
            rec.question.as_slice(),
            rec.options.concat().as_slice(),
        ]);
        let inst = McqInstance::new(&rec, &vocab, &vec![1.0; vocab.len()], 10);
        assert_eq!(
            inst.passages[0].features,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            inst.passages[1].features,
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(inst.questions[1].features, vec![1.0, 0.0]);
        assert_eq!(inst.options[1].features, vec![1.0, 0.0]);
    }
}
