//! Central finite-difference verification of reverse-mode gradients.

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::params::{ParamId, ParameterStore};
use crate::error::Result;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates checked per tensor; larger tensors are sub-sampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords: 64,
            seed: 0,
        }
    }
}

/// Worst coordinate found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `backward` against `(f(θ+h) − f(θ−h)) / 2h` for every parameter
/// in `store`. `f` builds the loss on a fresh graph and must be
/// deterministic.
pub fn grad_check<F>(
    store: &ParameterStore<f64>,
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?.into_params()
    };
    let mut work = store.clone();
    let mut rng = Rng::new(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let eval = |s: &ParameterStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = f(&mut g)?;
        Ok(g.scalar_value(loss))
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let coords = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            rng.sample_distinct(n, opts.max_coords)
        };
        let grad = analytic.get_or_zeros(id, store);
        for i in coords {
            let orig = store.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + opts.step;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig - opts.step;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_loss_is_exact() {
        let mut s = ParameterStore::new();
        let w = s
            .add("w", Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let r = grad_check(
            &s,
            |g| {
                let v = g.param(w);
                let v = g.scale(v, 3.0);
                g.sum_all(v)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 3);
    }
}
