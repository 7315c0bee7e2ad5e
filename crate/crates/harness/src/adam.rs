//! Bias-corrected Adam over a parameter store.

use mru_core::{ParameterStore, Scalar};

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Returns the largest absolute change of any coordinate.
    pub fn step(&mut self, store: &mut ParameterStore<T>) -> f64 {
        if self.m.is_empty() {
            self.m = store
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps, one) = (T::lit(self.lr), T::lit(self.eps), T::one());
        let mut largest = 0.0f64;
        for ((value, grad), (m, v)) in store
            .slices_mut()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let delta = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                value[i] -= delta;
                largest = largest.max(delta.abs().as_f64());
                grad[i] = T::zero();
            }
        }
        largest
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mru_core::{Store64, Tensor};

    fn scalar_store(x: f64) -> Store64 {
        let mut s = Store64::new();
        s.add("theta", Tensor::from_f64(&[1], &[x]).unwrap())
            .unwrap();
        s
    }

    fn set_grad(s: &mut Store64, g: f64) {
        for (_, grad) in s.slices_mut() {
            grad[0] = g;
        }
    }

    #[test]
    fn first_step_moves_by_lr_whatever_the_gradient() {
        for g in [1e-3, 1.0, 250.0, -7.0] {
            let mut s = scalar_store(0.0);
            set_grad(&mut s, g);
            let mut opt = Adam::new(0.01);
            opt.step(&mut s);
            let moved = s.iter().next().unwrap().value.data()[0];
            assert!(
                (moved.abs() - 0.01).abs() <= 0.01 * 1e-8 / g.abs() + 1e-15,
                "{g}: {moved}"
            );
            assert_eq!(moved.signum(), -g.signum());
            assert_eq!(s.iter().next().unwrap().grad.data()[0], 0.0);
        }
    }

    #[test]
    fn zero_gradient_gives_zero_update() {
        let mut s = scalar_store(0.7);
        let mut opt = Adam::new(0.1);
        assert_eq!(opt.step(&mut s), 0.0);
        assert_eq!(s.iter().next().unwrap().value.data()[0], 0.7);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn minimises_a_parabola() {
        let mut s = scalar_store(1.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..200 {
            let theta = s.iter().next().unwrap().value.data()[0];
            set_grad(&mut s, 2.0 * theta);
            // per-coordinate step bound of bias-corrected Adam
            assert!(opt.step(&mut s) <= 0.1 / (1.0f64 - 0.9) + 1e-12);
        }
        let theta = s.iter().next().unwrap().value.data()[0];
        assert!(theta.abs() < 0.05, "{theta}");
    }
}
