//! SGD with classical momentum.

use super::TrainError;

/// Momentum optimizer over a flat parameter vector:
///
/// ```text
/// v <- momentum * v + g
/// p <- p - lr * v
/// ```
///
/// Momentum 0 reduces to plain gradient descent.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl MomentumSgd {
    pub fn new(learning_rate: f64, momentum: f64, param_count: usize) -> MomentumSgd {
        MomentumSgd { learning_rate, momentum, velocity: vec![0.0; param_count] }
    }

    /// One update step. A non-finite gradient aborts with a diagnostic
    /// naming the offending parameter.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), TrainError> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(TrainError::DimensionMismatch {
                expected: self.velocity.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (i, &g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGradient { param_index: i });
            }
            self.velocity[i] = self.momentum * self.velocity[i] + g;
            params[i] -= self.learning_rate * self.velocity[i];
        }
        Ok(())
    }
}
