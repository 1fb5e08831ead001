use crate::error::{Error, Result};

/// Momentum SGD with L2 weight decay folded into the gradient:
/// `v <- μ v - lr (g + wd p)`, then `p <- p + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, num_params: usize) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: vec![0.0; num_params],
        }
    }

    /// lr 1e-2, momentum 0.9, weight decay 5e-4.
    pub fn toy(num_params: usize) -> Self {
        Self::new(1e-2, 0.9, 5e-4, num_params)
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// Replaces the velocity buffer, e.g. when resuming from a saved model.
    pub fn set_velocity(&mut self, velocity: Vec<f64>) -> Result<()> {
        if velocity.len() != self.velocity.len() {
            return Err(Error::ShapeMismatch(format!(
                "velocity has {} entries, optimizer tracks {}",
                velocity.len(),
                self.velocity.len()
            )));
        }
        self.velocity = velocity;
        Ok(())
    }
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], state: &mut Sgd) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} velocity entries",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        *v = state.momentum * *v - state.lr * (g + state.weight_decay * *p);
        *p += *v;
    }
    Ok(())
}
