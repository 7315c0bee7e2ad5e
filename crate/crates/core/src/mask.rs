//! Right-padding masks for batched sequences.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Valid lengths of a `[batch, len]` block whose masks are contiguous
/// prefixes of ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqMask {
    len: usize,
    lens: Vec<usize>,
}

impl SeqMask {
    /// Every position valid.
    pub fn full(batch: usize, len: usize) -> Self {
        SeqMask {
            len,
            lens: vec![len; batch],
        }
    }

    pub fn from_lengths(len: usize, lens: Vec<usize>) -> Result<Self> {
        if lens.is_empty() || lens.iter().any(|&n| n == 0 || n > len) {
            return Err(Error::invalid(
                "mask",
                format!("lengths {lens:?} must lie in 1..={len}"),
            ));
        }
        Ok(SeqMask { len, lens })
    }

    /// Parses `batch × len` flags; each row must be `1…1 0…0` with at least one 1.
    pub fn from_flags(batch: usize, len: usize, flags: &[bool]) -> Result<Self> {
        if flags.len() != batch * len || batch == 0 || len == 0 {
            return Err(Error::shape("mask", &[batch, len], &[flags.len()]));
        }
        let mut lens = Vec::with_capacity(batch);
        for row in flags.chunks_exact(len) {
            let n = row.iter().take_while(|&&f| f).count();
            if row[n..].iter().any(|&f| f) {
                return Err(Error::NonPrefixMask);
            }
            lens.push(n);
        }
        Self::from_lengths(len, lens)
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn is_full(&self) -> bool {
        self.lens.iter().all(|&n| n == self.len)
    }

    pub fn flags(&self) -> Vec<bool> {
        self.lens
            .iter()
            .flat_map(|&n| (0..self.len).map(move |t| t < n))
            .collect()
    }

    /// Flags repeated across a trailing feature axis of width `d`.
    pub fn flags_wide(&self, d: usize) -> Vec<bool> {
        self.flags()
            .into_iter()
            .flat_map(|f| std::iter::repeat_n(f, d))
            .collect()
    }

    /// 0/1 tensor matching a `[batch, len, d]` (or `[len, d]` when
    /// `batched` is false) sequence.
    pub fn to_tensor<T: Scalar>(&self, d: usize, batched: bool) -> Tensor<T> {
        let data = self
            .flags_wide(d)
            .into_iter()
            .map(|f| if f { T::one() } else { T::zero() })
            .collect();
        let shape = if batched {
            vec![self.batch(), self.len, d]
        } else {
            vec![self.len, d]
        };
        Tensor::new(&shape, data).expect("mask shape")
    }

    /// Index map reversing each valid prefix and leaving padding in place.
    pub fn reverse_index(&self) -> Vec<usize> {
        self.lens
            .iter()
            .flat_map(|&n| (0..self.len).map(move |t| if t < n { n - 1 - t } else { t }))
            .collect()
    }
}
