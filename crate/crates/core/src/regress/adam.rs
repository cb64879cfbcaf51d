//! Adam with fixed β1 0.9, β2 0.999, ε 1e-8, over an ordered tensor list.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

pub struct Adam<T> {
    lr: T,
    step: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Allocates first/second-moment state matching the given tensors.
    pub fn new(learning_rate: f64, tensors: &[ArrayViewD<'_, T>]) -> Self {
        Adam {
            lr: T::from_f64(learning_rate).unwrap(),
            step: 0,
            m: tensors.iter().map(|t| ArrayD::zeros(t.raw_dim())).collect(),
            v: tensors.iter().map(|t| ArrayD::zeros(t.raw_dim())).collect(),
        }
    }

    /// One update over all tensors; `params` and `grads` must be in the
    /// order given at construction.
    pub fn step(
        &mut self,
        params: &mut [ArrayViewMutD<'_, T>],
        grads: &[ArrayViewD<'_, T>],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state holds {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let b1 = T::from_f64(BETA1).unwrap();
        let b2 = T::from_f64(BETA2).unwrap();
        let eps = T::from_f64(EPS).unwrap();
        let one = T::one();
        let bc1 = one - T::from_f64(BETA1.powi(self.step as i32)).unwrap();
        let bc2 = one - T::from_f64(BETA2.powi(self.step as i32)).unwrap();

        for ((theta, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if theta.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?} does not match gradient shape {:?}",
                    theta.shape(),
                    g.shape()
                )));
            }
            ndarray::Zip::from(theta)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|t, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *t = *t - self.lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    /// Minimizing a 1-d quadratic must move toward the optimum at the
    /// configured step size.
    #[test]
    fn first_step_has_learning_rate_magnitude() {
        let mut x: Array1<f64> = array![10.0];
        let views = [x.view().into_dyn()];
        let mut adam = Adam::new(0.1, &views);
        let grad = array![4.0]; // any positive gradient
        adam.step(
            &mut [x.view_mut().into_dyn()],
            &[grad.view().into_dyn()],
        )
        .unwrap();
        // bias-corrected first step is lr · g/|g| up to ε
        assert!((x[0] - (10.0 - 0.1)).abs() < 1e-6, "{}", x[0]);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut x: Array1<f64> = array![3.0, -2.0];
        let views = [x.view().into_dyn()];
        let mut adam = Adam::new(0.05, &views);
        for _ in 0..2000 {
            let grad = x.mapv(|v| 2.0 * v);
            adam.step(
                &mut [x.view_mut().into_dyn()],
                &[grad.view().into_dyn()],
            )
            .unwrap();
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }

    #[test]
    fn tensor_count_mismatch_is_an_error() {
        let mut x: Array1<f64> = array![1.0];
        let views = [x.view().into_dyn()];
        let mut adam = Adam::new(0.1, &views);
        assert!(adam.step(&mut [x.view_mut().into_dyn()], &[]).is_err());
    }
}
