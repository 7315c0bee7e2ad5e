//! Seeded generators for toy comprehension tasks with planted long-range
//! dependencies.
//!
//! Token strings are drawn from disjoint families so that the generated
//! vocabulary partition is visible in the data: `k*` keys, `v*` values,
//! `m*` markers, `a*` answer tokens and `w*` filler.

use crate::data::dataset::{McqRecord, SpanRecord};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McqSynthParams {
    pub seed: u64,
    pub n: usize,
    pub len: usize,
    pub vocab_size: usize,
    pub gap: usize,
    pub num_options: usize,
}

impl Default for McqSynthParams {
    fn default() -> Self {
        McqSynthParams {
            seed: 0,
            n: 2000,
            len: 60,
            vocab_size: 200,
            gap: 20,
            num_options: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanSynthParams {
    pub seed: u64,
    pub n: usize,
    pub len: usize,
    pub vocab_size: usize,
    pub gap: usize,
    pub answer_len: usize,
    /// Marker-plus-span structures per passage, the gold one included.
    pub structures: usize,
}

impl Default for SpanSynthParams {
    fn default() -> Self {
        SpanSynthParams {
            seed: 0,
            n: 2000,
            len: 80,
            vocab_size: 200,
            gap: 10,
            answer_len: 2,
            structures: 3,
        }
    }
}

fn infeasible(msg: String) -> Error {
    Error::invalid("synthetic", msg)
}

/// Places `count` intervals of `width` tokens without overlap inside
/// `0..len`, returning sorted start positions.
fn place_intervals(rng: &mut Rng, len: usize, width: usize, count: usize) -> Vec<usize> {
    // sorted offsets into the free slack, shifted so intervals never touch
    let slack = len - width * count;
    let mut cuts: Vec<usize> = (0..count).map(|_| rng.below(slack + 1)).collect();
    cuts.sort_unstable();
    cuts.iter()
        .enumerate()
        .map(|(i, &c)| c + i * width)
        .collect()
}

/// Key-value retrieval. Each passage holds `num_options` pairs with the
/// value `gap` tokens after its key; the question is a key and the options
/// are the planted values, exactly one of them paired with the asked key.
pub fn gen_mcq_synthetic(p: &McqSynthParams) -> Result<Vec<McqRecord>> {
    let na = p.num_options;
    if na < 1 || p.gap == 0 || p.gap >= p.len {
        return Err(infeasible(format!(
            "need 1 <= gap < len, got gap {} len {}",
            p.gap, p.len
        )));
    }
    let family = p.vocab_size / 4;
    if family < na || p.vocab_size - 2 * family == 0 {
        return Err(infeasible(format!(
            "vocabulary of {} is too small for {na} options",
            p.vocab_size
        )));
    }
    let filler = p.vocab_size - 2 * family;
    // key positions must be distinct from each other and from every value
    let starts = p.len - p.gap;
    if starts < na || 2 * na > p.len {
        return Err(infeasible(format!(
            "cannot place {na} pairs with gap {} in {} tokens",
            p.gap, p.len
        )));
    }
    let mut rng = Rng::new(p.seed);
    let mut out = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let keys = rng.sample_distinct(family, na);
        let values = rng.sample_distinct(family, na);
        let mut passage: Vec<String> = (0..p.len)
            .map(|_| format!("w{}", rng.below(filler)))
            .collect();
        let mut used = vec![false; p.len];
        let mut placed = 0;
        let mut attempts = 0;
        while placed < na {
            attempts += 1;
            if attempts > 10_000 {
                return Err(infeasible(format!(
                    "could not place {na} pairs with gap {} in {} tokens",
                    p.gap, p.len
                )));
            }
            let pos = rng.below(starts);
            if used[pos] || used[pos + p.gap] {
                continue;
            }
            used[pos] = true;
            used[pos + p.gap] = true;
            passage[pos] = format!("k{}", keys[placed]);
            passage[pos + p.gap] = format!("v{}", values[placed]);
            placed += 1;
        }
        let asked = rng.below(na);
        let mut order: Vec<usize> = (0..na).collect();
        rng.shuffle(&mut order);
        let options = order
            .iter()
            .map(|&j| vec![format!("v{}", values[j])])
            .collect();
        let label = order
            .iter()
            .position(|&j| j == asked)
            .expect("asked pair is an option");
        out.push(McqRecord {
            id: format!("mcq-{i}"),
            passage,
            question: vec![format!("k{}", keys[asked])],
            options,
            label,
        });
    }
    Ok(out)
}

/// Marker-offset extraction. The question names one marker; the gold span
/// starts `gap` tokens after that marker. Distractor markers carry spans at
/// the same offset.
pub fn gen_span_synthetic(p: &SpanSynthParams) -> Result<Vec<SpanRecord>> {
    let width = p.gap + p.answer_len;
    if p.answer_len == 0 || p.gap == 0 || width >= p.len {
        return Err(infeasible(format!(
            "need gap + answer length < len, got {} + {} and {}",
            p.gap, p.answer_len, p.len
        )));
    }
    if p.structures == 0 || width * p.structures > p.len {
        return Err(infeasible(format!(
            "{} structures of {width} tokens do not fit in {}",
            p.structures, p.len
        )));
    }
    let family = p.vocab_size / 4;
    if family < p.structures || p.vocab_size - 2 * family == 0 {
        return Err(infeasible(format!(
            "vocabulary of {} is too small",
            p.vocab_size
        )));
    }
    let filler = p.vocab_size - 2 * family;
    let mut rng = Rng::new(p.seed);
    let mut out = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let mut passage: Vec<String> = (0..p.len)
            .map(|_| format!("w{}", rng.below(filler)))
            .collect();
        let markers = rng.sample_distinct(family, p.structures);
        let starts = place_intervals(&mut rng, p.len, width, p.structures);
        for (&m, &pos) in markers.iter().zip(&starts) {
            passage[pos] = format!("m{m}");
            for k in 0..p.answer_len {
                passage[pos + p.gap + k] = format!("a{}", rng.below(family));
            }
        }
        let gold = rng.below(p.structures);
        let s = starts[gold] + p.gap;
        let e = s + p.answer_len - 1;
        out.push(SpanRecord {
            id: format!("span-{i}"),
            answer_text: Some(passage[s..=e].to_vec()),
            question: vec![format!("m{}", markers[gold])],
            passage,
            answer_start: s,
            answer_end: e,
        });
    }
    Ok(out)
}

/// Exact-match rate of a uniformly random span of the right length.
pub fn span_chance_rate(len: usize, answer_len: usize) -> f64 {
    1.0 / (len - answer_len + 1) as f64
}
