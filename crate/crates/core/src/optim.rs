//! SGD with momentum and weight decay, plus the step-decay schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::HashMap;

/// Stochastic gradient descent with classic momentum.
///
/// Per parameter: `v <- momentum * v + (grad + weight_decay * param)`,
/// then `param <- param - lr * v`. Velocity buffers are created lazily and
/// keyed by tensor id; parameters without an accumulated gradient are
/// skipped (callers that need the disconnected-parameter contract fill
/// zeros via [`crate::tensor::backward_params`]).
pub struct Sgd<F: Scalar> {
    lr: F,
    momentum: F,
    weight_decay: F,
    velocity: HashMap<u64, Vec<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArg(format!("learning rate must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArg(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidArg(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(Sgd {
            lr: F::from_f64_c(lr),
            momentum: F::from_f64_c(momentum),
            weight_decay: F::from_f64_c(weight_decay),
            velocity: HashMap::new(),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = F::from_f64_c(lr);
    }

    pub fn lr(&self) -> f64 {
        self.lr.to_f64_c()
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &[Tensor<F>]) -> Result<()> {
        for p in params {
            let guard = p.grad_guard();
            let Some(grad) = guard.as_ref() else { continue };
            if grad.len() != p.len() {
                return Err(Error::shape(
                    "sgd_step",
                    p.len().to_string(),
                    grad.len().to_string(),
                ));
            }
            let v = self
                .velocity
                .entry(p.id())
                .or_insert_with(|| vec![F::zero(); p.len()]);
            if v.len() != p.len() {
                return Err(Error::shape(
                    "sgd_step velocity",
                    p.len().to_string(),
                    v.len().to_string(),
                ));
            }
            let mut data = p.data_mut();
            for ((pv, g), vel) in data.iter_mut().zip(grad.iter()).zip(v.iter_mut()) {
                *vel = self.momentum * *vel + (*g + self.weight_decay * *pv);
                *pv = *pv - self.lr * *vel;
            }
        }
        Ok(())
    }

    /// Velocity buffer for a parameter, if one has been created.
    pub fn velocity(&self, id: u64) -> Option<&Vec<F>> {
        self.velocity.get(&id)
    }

    /// Restores a velocity buffer (checkpoint resume).
    pub fn set_velocity(&mut self, id: u64, v: Vec<F>) {
        self.velocity.insert(id, v);
    }
}

/// Step-decay schedule: base rate, cut by 10x at 50% and again at 75% of
/// the epoch budget.
pub fn step_decay_lr(base: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs == 0 {
        return base;
    }
    let frac = epoch as f64 / total_epochs as f64;
    if frac >= 0.75 {
        base * 0.01
    } else if frac >= 0.5 {
        base * 0.1
    } else {
        base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(p: &Tensor<f64>, g: &[f64], opt: &mut Sgd<f64>) {
        p.set_grad(g.to_vec());
        opt.step(std::slice::from_ref(p)).unwrap();
        p.zero_grad();
    }

    #[test]
    fn plain_gradient_step() {
        // p=1.0, g=0.5, lr=0.1, no momentum, no decay -> 0.95
        let p = Tensor::param(vec![1.0], &[1]).unwrap();
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        step_once(&p, &[0.5], &mut opt);
        assert_eq!(p.to_vec(), vec![0.95]);
    }

    #[test]
    fn momentum_recurrence_hand_unrolled() {
        // p=0, g=1, lr=1, momentum=0.9:
        // step 1: v=1,   p=-1
        // step 2: v=1.9, p=-2.9
        let p = Tensor::param(vec![0.0], &[1]).unwrap();
        let mut opt = Sgd::new(1.0, 0.9, 0.0).unwrap();
        step_once(&p, &[1.0], &mut opt);
        assert_eq!(p.to_vec(), vec![-1.0]);
        step_once(&p, &[1.0], &mut opt);
        assert_eq!(opt.velocity(p.id()).unwrap(), &vec![1.9]);
        assert_eq!(p.to_vec(), vec![-2.9]);
    }

    #[test]
    fn zero_grad_zero_velocity_is_fixed_point() {
        let p = Tensor::param(vec![3.0, -2.0], &[2]).unwrap();
        let mut opt = Sgd::new(0.5, 0.9, 0.0).unwrap();
        step_once(&p, &[0.0, 0.0], &mut opt);
        assert_eq!(p.to_vec(), vec![3.0, -2.0]);
    }

    #[test]
    fn zero_lr_is_identity_on_parameters() {
        let p = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let mut opt = Sgd::new(0.0, 0.9, 5e-4).unwrap();
        step_once(&p, &[0.7, -0.3], &mut opt);
        assert_eq!(p.to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_hyperparameters_and_shapes() {
        assert!(Sgd::<f64>::new(-0.1, 0.0, 0.0).is_err());
        assert!(Sgd::<f64>::new(0.1, 1.0, 0.0).is_err());
        assert!(Sgd::<f64>::new(0.1, 0.0, -1.0).is_err());
        let p = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        p.set_grad(vec![1.0, 2.0]);
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        opt.set_velocity(p.id(), vec![0.0]);
        assert!(opt.step(std::slice::from_ref(&p)).is_err());
    }

    #[test]
    fn decay_schedule_milestones() {
        assert_eq!(step_decay_lr(0.1, 0, 8), 0.1);
        assert_eq!(step_decay_lr(0.1, 3, 8), 0.1);
        assert_eq!(step_decay_lr(0.1, 4, 8), 0.1 * 0.1);
        assert_eq!(step_decay_lr(0.1, 6, 8), 0.1 * 0.01);
    }
}
