use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// SGD with momentum and L2 weight decay folded into the velocity:
/// `v ← momentum·v + grad + weight_decay·w`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T = f64> {
    pub momentum: T,
    pub weight_decay: T,
    velocities: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: T, weight_decay: T) -> Self {
        Self {
            momentum,
            weight_decay,
            velocities: Vec::new(),
        }
    }

    pub fn velocities(&self) -> &[Vec<T>] {
        &self.velocities
    }

    pub fn set_velocities(&mut self, v: Vec<Vec<T>>) {
        self.velocities = v;
    }

    /// Updates every parameter and clears its gradient. Parameters are
    /// matched to velocity buffers by position.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], lr: T) -> Result<()> {
        if params.iter().any(|p| p.grad().is_none()) {
            return Err(Error::State("sgd step on a parameter without gradient".into()));
        }
        if self.velocities.is_empty() {
            self.velocities = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        if self.velocities.len() != params.len()
            || self.velocities.iter().zip(params.iter()).any(|(v, p)| v.len() != p.len())
        {
            return Err(Error::State("velocity buffers do not match parameters".into()));
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocities) {
            let g = p.take_grad().expect("checked above");
            for ((w, vel), gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = self.momentum * *vel + gi + self.weight_decay * *w;
                *w = *w - lr * *vel;
            }
        }
        Ok(())
    }
}
