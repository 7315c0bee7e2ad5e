//! Small parameterised building blocks shared by encoders and model heads.

use crate::autodiff::{Graph, ParamId, ParameterStore, Var};
use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `x W + b` over the last axis, Glorot-initialised weights, zero bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), rng.glorot(fan_in, fan_out))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Linear {
            w,
            b,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.matmul(g, x)?;
        self.add_bias(g, y)
    }

    /// The product without the bias.
    pub fn matmul<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        g.matmul(x, w)
    }

    pub fn add_bias<T: Scalar>(&self, g: &mut Graph<'_, T>, y: Var) -> Result<Var> {
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Single-layer highway: `t ⊙ relu(x W_H + b_H) + (1 − t) ⊙ x`, `t = σ(x W_T + b_T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Highway {
    pub transform: Linear,
    pub gate: Linear,
}

impl Highway {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Highway {
            transform: Linear::new(store, &format!("{name}.transform"), dim, dim, true, rng)?,
            gate: Linear::new(store, &format!("{name}.gate"), dim, dim, true, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let t = self.gate.forward(g, x)?;
        let t = g.sigmoid(t);
        let h = self.transform.forward(g, x)?;
        let h = g.relu(h);
        blend(g, t, h, x)
    }
}

/// `gate ⊙ a + (1 − gate) ⊙ b`.
pub fn blend<T: Scalar>(g: &mut Graph<'_, T>, gate: Var, a: Var, b: Var) -> Result<Var> {
    let ga = g.mul(gate, a)?;
    let rest = g.one_minus(gate);
    let rb = g.mul(rest, b)?;
    g.add(ga, rb)
}
