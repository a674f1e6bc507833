//! Heavy-ball SGD. The paper-facing schedules only fix learning rates, so
//! the optimizer family is pinned here: v <- mu*v - lr*g, p <- p + v.

use super::TensorError;

/// Velocity and schedule knobs for one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub name: String,
    pub velocity: Vec<f64>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptState {
    pub fn new(
        name: impl Into<String>,
        len: usize,
        learning_rate: f64,
        momentum: f64,
    ) -> Result<Self, TensorError> {
        let name = name.into();
        if !(learning_rate > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::InvalidSpec {
                op: "OptState",
                reason: format!(
                    "{name}: learning rate must be positive and momentum in [0,1) \
                     (lr={learning_rate}, momentum={momentum})"
                ),
            });
        }
        Ok(OptState {
            name,
            velocity: vec![0.0; len],
            learning_rate,
            momentum,
        })
    }

    /// One momentum step in place. Rejects the whole update on the first
    /// non-finite gradient entry so training can abort with the last good
    /// parameters intact.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), TensorError> {
        sgd_step_slice(
            params,
            grads,
            &mut self.velocity,
            self.learning_rate,
            self.momentum,
            &self.name,
        )
    }
}

pub fn sgd_step_slice(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    learning_rate: f64,
    momentum: f64,
    name: &str,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(TensorError::AxisMismatch {
            op: "sgd_step",
            axis: "parameter",
            expected: params.len(),
            got: grads.len().min(velocity.len()),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TensorError::NonFinite {
            what: format!("gradient of {name}[{i}]"),
        });
    }
    for i in 0..params.len() {
        velocity[i] = momentum * velocity[i] - learning_rate * grads[i];
        params[i] += velocity[i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_momentum_is_plain_gradient_descent() {
        let mut p = vec![1.0, -2.0];
        let g = vec![1.0, -2.0];
        let mut opt = OptState::new("p", 2, 1.0, 0.0).unwrap();
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let mut p = vec![0.5; 4];
        let mut opt = OptState::new("p", 4, 0.1, 0.9).unwrap();
        opt.step(&mut p, &[0.0; 4]).unwrap();
        assert_eq!(p, vec![0.5; 4]);
    }

    #[test]
    fn momentum_recurrence_hand_unrolled() {
        // p0=1, g=1, lr=0.1, mu=0.9: v1=-0.1, p1=0.9; v2=-0.19, p2=0.71
        let mut p = vec![1.0];
        let mut opt = OptState::new("p", 1, 0.1, 0.9).unwrap();
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = vec![1.0, 1.0];
        let mut opt = OptState::new("encoder.conv1.weight", 2, 0.1, 0.9).unwrap();
        let err = opt.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("encoder.conv1.weight[1]"), "{msg}");
        // params untouched on failure
        assert_eq!(p, vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(OptState::new("p", 1, 0.0, 0.9).is_err());
        assert!(OptState::new("p", 1, 0.1, 1.0).is_err());
    }
}
