//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::diffcore::store::{GradientStore, ParameterStore};
use crate::diffcore::DiffError;
use crate::scalar::Real;

/// Per-parameter first/second moments plus a shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> AdamState<T> {
    /// Allocates moment arrays for every parameter matched by `filter`.
    pub fn new(params: &ParameterStore<T>, lr: T, filter: impl Fn(&str) -> bool) -> Self {
        let moments = params
            .iter()
            .filter(|(name, _)| filter(name))
            .map(|(name, p)| {
                (
                    name.to_string(),
                    (vec![T::zero(); p.len()], vec![T::zero(); p.len()]),
                )
            })
            .collect();
        AdamState {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every entry of `grads`. Requires pre-allocated
/// optimizer state for each gradient key; a missing key is a configuration
/// error rather than a silent lazy init.
pub fn adam_step<T: Real>(
    params: &mut ParameterStore<T>,
    grads: &GradientStore<T>,
    opt: &mut AdamState<T>,
) -> Result<(), DiffError> {
    grads.ensure_finite()?;
    opt.step += 1;
    let t = opt.step;
    let bias1 = T::one() - opt.beta1.powi(t as i32);
    let bias2 = T::one() - opt.beta2.powi(t as i32);
    let one = T::one();

    for (name, grad) in grads.iter() {
        let (m, v) = opt
            .moments
            .get_mut(name)
            .ok_or_else(|| DiffError::MissingOptimizerState {
                name: name.to_string(),
            })?;
        let values = params.values_mut(name)?;
        if values.len() != grad.len() {
            return Err(DiffError::ShapeMismatch {
                context: format!(
                    "adam: gradient for {name} has length {}, parameter has {}",
                    grad.len(),
                    values.len()
                ),
            });
        }
        for i in 0..values.len() {
            let g = grad[i];
            m[i] = opt.beta1 * m[i] + (one - opt.beta1) * g;
            v[i] = opt.beta2 * v[i] + (one - opt.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            values[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_setup(value: f64, lr: f64) -> (ParameterStore<f64>, AdamState<f64>) {
        let mut params = ParameterStore::new();
        params.insert("x", vec![1], vec![value]).unwrap();
        let opt = AdamState::new(&params, lr, |_| true);
        (params, opt)
    }

    #[test]
    fn zero_gradient_is_identity() {
        let (mut params, mut opt) = scalar_setup(3.25, 1e-3);
        let mut grads = GradientStore::new();
        grads.accumulate("x", &[0.0]);
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut opt).unwrap();
        }
        assert_eq!(params.values("x").unwrap(), &[3.25]);
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        for &g in &[1.0, -4.0, 250.0] {
            let lr = 3e-4;
            let (mut params, mut opt) = scalar_setup(0.0, lr);
            let mut grads = GradientStore::new();
            grads.accumulate("x", &[g]);
            adam_step(&mut params, &grads, &mut opt).unwrap();
            let delta = params.values("x").unwrap()[0].abs();
            assert!(
                delta >= 0.99 * lr && delta <= lr,
                "first-step delta {delta} outside [0.99 lr, lr]"
            );
            // Step direction opposes the gradient.
            assert_eq!(params.values("x").unwrap()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn ten_step_trajectory_matches_independent_recurrence() {
        // Independent Adam oracle written as plain scalar arithmetic.
        let lr = 0.01;
        let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
        let gradient_stream = [0.5, -1.0, 2.0, 0.0, 0.25, -0.75, 1.5, 1.5, -0.1, 0.6];

        let mut x_oracle = 1.0_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for (k, &g) in gradient_stream.iter().enumerate() {
            let t = (k + 1) as i32;
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            let m_hat = m / (1.0 - beta1.powi(t));
            let v_hat = v / (1.0 - beta2.powi(t));
            x_oracle -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let (mut params, mut opt) = scalar_setup(1.0, lr);
        for &g in &gradient_stream {
            let mut grads = GradientStore::new();
            grads.accumulate("x", &[g]);
            adam_step(&mut params, &grads, &mut opt).unwrap();
        }
        let got = params.values("x").unwrap()[0];
        assert!(
            (got - x_oracle).abs() < 1e-10,
            "adam diverged from oracle: {got} vs {x_oracle}"
        );
    }

    #[test]
    fn missing_state_is_a_configuration_error() {
        let mut params = ParameterStore::new();
        params.insert("a", vec![1], vec![0.0]).unwrap();
        params.insert("b", vec![1], vec![0.0]).unwrap();
        let mut opt = AdamState::new(&params, 1e-3, |name| name == "a");
        let mut grads = GradientStore::new();
        grads.accumulate("b", &[1.0]);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut opt),
            Err(DiffError::MissingOptimizerState { .. })
        ));
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let (mut params, mut opt) = scalar_setup(0.0, 1e-3);
        let mut grads = GradientStore::new();
        grads.accumulate("x", &[f64::INFINITY]);
        assert!(adam_step(&mut params, &grads, &mut opt).is_err());
        assert_eq!(params.values("x").unwrap(), &[0.0]);
    }
}
