//! Tape-based reverse-mode automatic differentiation.

mod backward;
pub mod gradcheck;
mod graph;
mod params;

pub use backward::Grads;
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, LoopStats, LoopToken, OpCounts, Var};
pub use params::{Gradients, Param, ParamId, ParameterStore};
