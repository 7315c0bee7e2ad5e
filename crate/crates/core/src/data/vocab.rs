//! Lowercased vocabularies, embedding tables and idf weights.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id map with `<pad>` = 0 and `<unk>` = 1. Tokens are lowercased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Ids assigned in first-occurrence order.
    pub fn build<'a>(seqs: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut v = Vocab {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(PAD_TOKEN.to_string(), PAD);
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        for seq in seqs {
            for t in seq {
                let t = t.to_lowercase();
                if !v.index.contains_key(&t) {
                    v.index.insert(t.clone(), v.tokens.len());
                    v.tokens.push(t);
                }
            }
        }
        v
    }

    /// Rebuilds from a stored id → token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::invalid(
                "vocab",
                "reserved entries <pad>, <unk> missing",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid("vocab", format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))
            .copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// `|V| × dim` table: pretrained rows where available, uniform(−0.05, 0.05)
/// elsewhere, zero padding row.
pub fn build_embeddings<T: Scalar>(
    vocab: &Vocab,
    dim: usize,
    pretrained: Option<&Path>,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let mut table: Tensor<T> = rng.uniform_tensor(&[vocab.len(), dim], -0.05, 0.05);
    table.data_mut()[..dim].fill(T::zero());
    if let Some(path) = pretrained {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut seen = vec![false; vocab.len()];
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vals: Vec<&str> = parts.collect();
            if vals.len() != dim {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected {dim} values, found {}", vals.len()),
                });
            }
            let Some(id) = vocab.get(tok) else { continue };
            if id == PAD || seen[id] {
                continue;
            }
            seen[id] = true;
            for (j, s) in vals.iter().enumerate() {
                let v: f64 = s.parse().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("value {}: {e}", j + 1),
                })?;
                table.data_mut()[id * dim + j] = T::lit(v);
            }
        }
    }
    Ok(table)
}

/// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1` per
/// vocabulary id; ids never seen get 1.
pub fn idf_table<'a>(vocab: &Vocab, docs: impl IntoIterator<Item = &'a [String]>) -> Vec<f64> {
    let mut df = vec![0usize; vocab.len()];
    let mut n = 0usize;
    let mut mark = vec![usize::MAX; vocab.len()];
    for (d, doc) in docs.into_iter().enumerate() {
        n += 1;
        for t in doc {
            let id = vocab.id(t);
            if mark[id] != d {
                mark[id] = d;
                df[id] += 1;
            }
        }
    }
    df.iter()
        .map(|&c| {
            if c == 0 {
                1.0
            } else {
                ((1.0 + n as f64) / (1.0 + c as f64)).ln() + 1.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn reserved_ids_and_lowercasing() {
        let a = toks("The cat the Cat");
        let v = Vocab::build([a.as_slice()]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("THE"), 2);
        assert_eq!(v.id("dog"), UNK);
        assert_eq!(Vocab::from_tokens(v.tokens().to_vec()).unwrap(), v);
    }

    #[test]
    fn idf_prefers_rare_tokens() {
        let a = toks("x y");
        let b = toks("x z");
        let v = Vocab::build([a.as_slice(), b.as_slice()]);
        let idf = idf_table(&v, [a.as_slice(), b.as_slice()]);
        assert!(idf[v.id("y")] > idf[v.id("x")]);
        assert_eq!(idf[UNK], 1.0);
    }
}
