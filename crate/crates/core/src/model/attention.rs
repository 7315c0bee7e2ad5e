//! Pairwise bi-attention between two sequences and the comparison layers
//! that merge an aligned sequence back into its source.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParameterStore, Var};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affinities `S = F(X) M F(Y)ᵀ` with `F(·) = relu(· W + b)`, one projection
/// per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiAttention {
    pub proj_x: Linear,
    pub proj_y: Linear,
    pub bilinear: ParamId,
}

/// Both alignments produced by [`BiAttention::forward`].
#[derive(Debug, Clone, Copy)]
pub struct Aligned {
    /// One row per row of `X`: attention-weighted rows of `Y`.
    pub x_to_y: Var,
    /// One row per row of `Y`: attention-weighted rows of `X`.
    pub y_to_x: Var,
    /// Raw affinity matrix `[len_x, len_y]`.
    pub scores: Var,
}

impl BiAttention {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(BiAttention {
            proj_x: Linear::new(store, &format!("{name}.proj_x"), dim, dim, true, rng)?,
            proj_y: Linear::new(store, &format!("{name}.proj_y"), dim, dim, true, rng)?,
            bilinear: store.add(format!("{name}.bilinear"), rng.glorot(dim, dim))?,
        })
    }

    /// Affinity matrix `[len_x, len_y]`.
    pub fn scores<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, y: Var) -> Result<Var> {
        let fx = self.proj_x.forward(g, x)?;
        let fx = g.relu(fx);
        let fy = self.proj_y.forward(g, y)?;
        let fy = g.relu(fy);
        let m = g.param(self.bilinear);
        let fxm = g.matmul(fx, m)?;
        g.matmul_nt(fxm, fy)
    }

    /// Aligns `x` `[len_x, d]` and `y` `[len_y, d]` against each other.
    /// Masked rows (flag `false`) receive no attention; `attend = false`
    /// replaces the affinities with zeros, giving masked means.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        y: Var,
        mask_x: Option<&[bool]>,
        mask_y: Option<&[bool]>,
        attend: bool,
    ) -> Result<Aligned> {
        let (lx, ly) = (g.shape(x)[0], g.shape(y)[0]);
        let scores = if attend {
            self.scores(g, x, y)?
        } else {
            g.constant(Tensor::zeros(&[lx, ly]))
        };
        align(g, scores, x, y, mask_x, mask_y)
    }
}

/// Row and column softmax of `scores` applied to `y` and `x`.
pub fn align<T: Scalar>(
    g: &mut Graph<'_, T>,
    scores: Var,
    x: Var,
    y: Var,
    mask_x: Option<&[bool]>,
    mask_y: Option<&[bool]>,
) -> Result<Aligned> {
    let (lx, ly) = (g.shape(x)[0], g.shape(y)[0]);
    let check = |m: Option<&[bool]>, n: usize| match m {
        Some(m) if m.len() != n => Err(Error::shape("bi_attention", &[n], &[m.len()])),
        _ => Ok(()),
    };
    check(mask_x, lx)?;
    check(mask_y, ly)?;
    let tile = |m: Option<&[bool]>, rows: usize| m.map(|m| m.repeat(rows));
    let row_mask = tile(mask_y, lx);
    let col_mask = tile(mask_x, ly);
    let a = g.softmax(scores, row_mask.as_deref())?;
    let x_to_y = g.matmul(a, y)?;
    let st = g.transpose(scores)?;
    let b = g.softmax(st, col_mask.as_deref())?;
    let y_to_x = g.matmul(b, x)?;
    Ok(Aligned {
        x_to_y,
        y_to_x,
        scores,
    })
}

/// How an aligned sequence is merged with its source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareMode {
    /// `aligned ⊙ source`.
    Mult,
    /// `relu([(a − s)², a ⊙ s] W + b)`.
    #[default]
    Submultnn,
}

impl FromStr for CompareMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mult" => Ok(CompareMode::Mult),
            "submultnn" => Ok(CompareMode::Submultnn),
            other => Err(Error::invalid(
                "compare",
                format!("unknown mode `{other}` (expected mult or submultnn)"),
            )),
        }
    }
}

impl fmt::Display for CompareMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompareMode::Mult => "mult",
            CompareMode::Submultnn => "submultnn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Compare {
    pub mode: CompareMode,
    pub proj: Option<Linear>,
}

impl Compare {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        mode: CompareMode,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let proj = match mode {
            CompareMode::Mult => None,
            CompareMode::Submultnn => Some(Linear::new(store, name, 2 * dim, dim, true, rng)?),
        };
        Ok(Compare { mode, proj })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        aligned: Var,
        source: Var,
    ) -> Result<Var> {
        let prod = g.mul(aligned, source)?;
        match self.proj {
            None => Ok(prod),
            Some(proj) => {
                let diff = g.sub(aligned, source)?;
                let sq = g.mul(diff, diff)?;
                let cat = g.concat_last(&[sq, prod])?;
                let h = proj.forward(g, cat)?;
                Ok(g.relu(h))
            }
        }
    }
}
