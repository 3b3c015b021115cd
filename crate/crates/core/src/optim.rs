//! SGD with momentum and weight decay, plus the milestone learning-rate
//! schedule.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::nn::{ParamBank, ParamKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stateful SGD: one velocity buffer per trainable bank entry.
/// `v <- momentum*v + (grad + weight_decay*param)`, `param <- param - lr*v`.
/// Running statistics ([`ParamKind::Stat`]) are never touched.
pub struct Sgd<T: Scalar> {
    velocity: Vec<Tensor<T>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(bank: &ParamBank<T>, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            velocity: bank
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
            momentum,
            weight_decay,
        }
    }

    /// Applies one update. `grads` is indexed by `ParamId`; `None` entries
    /// (and all running statistics) are skipped.
    pub fn step(
        &mut self,
        bank: &mut ParamBank<T>,
        grads: &[Option<Tensor<T>>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != bank.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "expected {} gradient slots, got {}",
                bank.len(),
                grads.len()
            )));
        }
        let m = T::of_f64(self.momentum);
        let wd = T::of_f64(self.weight_decay);
        let lr = T::of_f64(lr);
        for (id, entry) in bank.entries.iter_mut().enumerate() {
            if entry.kind == ParamKind::Stat {
                continue;
            }
            let Some(g) = &grads[id] else { continue };
            if g.shape() != entry.value.shape() {
                return Err(TensorError::ShapeMismatch(format!(
                    "gradient shape {:?} does not match parameter `{}` {:?}",
                    g.shape(),
                    entry.name,
                    entry.value.shape()
                )));
            }
            let v = &mut self.velocity[id];
            for i in 0..v.data().len() {
                let p = entry.value.data()[i];
                let vel = m * v.data()[i] + (g.data()[i] + wd * p);
                v.data_mut()[i] = vel;
                entry.value.data_mut()[i] = p - lr * vel;
            }
        }
        Ok(())
    }
}

/// Milestone schedule: `base_lr * 0.1^(number of milestones <= step)`.
pub fn lr_schedule(step: usize, base_lr: f64, milestones: &[usize]) -> f64 {
    let passed = milestones.iter().filter(|&&mm| mm <= step).count();
    base_lr * 0.1f64.powi(passed as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn one_param_bank(value: f64) -> ParamBank<f64> {
        let mut bank = ParamBank::<f64>::new();
        bank.add(
            "w".to_string(),
            Tensor::from_f64_slice(&[1], &[value]).unwrap(),
            ParamKind::Weight,
        );
        bank
    }

    #[test]
    fn plain_gradient_step() {
        let mut bank = one_param_bank(1.0);
        let mut opt = Sgd::new(&bank, 0.0, 0.0);
        let g = Some(Tensor::from_f64_slice(&[1], &[0.5]).unwrap());
        opt.step(&mut bank, &[g], 0.1).unwrap();
        assert!((bank.get(0).data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn pure_weight_decay_step() {
        let mut bank = one_param_bank(1.0);
        let mut opt = Sgd::new(&bank, 0.0, 0.0005);
        let g = Some(Tensor::zeros(&[1]));
        opt.step(&mut bank, &[g], 0.1).unwrap();
        assert!((bank.get(0).data()[0] - 0.99995).abs() < 1e-15);
    }

    #[test]
    fn momentum_matches_hand_recurrence() {
        let mut bank = one_param_bank(1.0);
        let mut opt = Sgd::new(&bank, 0.9, 0.0);
        let g = Tensor::from_f64_slice(&[1], &[0.5]).unwrap();
        opt.step(&mut bank, &[Some(g.clone())], 0.1).unwrap();
        opt.step(&mut bank, &[Some(g)], 0.1).unwrap();
        // v1 = 0.5, p1 = 1 - 0.05 = 0.95
        // v2 = 0.9*0.5 + 0.5 = 0.95, p2 = 0.95 - 0.095 = 0.855
        assert!((bank.get(0).data()[0] - 0.855).abs() < 1e-15);
    }

    #[test]
    fn stats_are_never_updated() {
        let mut bank = ParamBank::<f64>::new();
        let id = bank.add(
            "bn.running_mean".to_string(),
            Tensor::from_f64_slice(&[1], &[2.0]).unwrap(),
            ParamKind::Stat,
        );
        let mut opt = Sgd::new(&bank, 0.9, 0.0005);
        let g = Some(Tensor::from_f64_slice(&[1], &[1.0]).unwrap());
        opt.step(&mut bank, &[g], 0.1).unwrap();
        assert_eq!(bank.get(id).data()[0], 2.0);
    }

    #[test]
    fn mismatched_gradient_shape_rejected() {
        let mut bank = one_param_bank(1.0);
        let mut opt = Sgd::new(&bank, 0.0, 0.0);
        let g = Some(Tensor::zeros(&[2]));
        assert!(opt.step(&mut bank, &[g], 0.1).is_err());
    }

    #[test]
    fn schedule_examples() {
        let ms = vec![20_000, 30_000, 40_000];
        assert_eq!(lr_schedule(0, 0.1, &ms), 0.1);
        assert!((lr_schedule(25_000, 0.1, &ms) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(45_000, 0.1, &ms) - 0.0001).abs() < 1e-15);
        // Boundary: a milestone equal to the step has been passed.
        assert!((lr_schedule(20_000, 0.1, &ms) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_non_increasing_and_piecewise_constant() {
        let ms = vec![5, 9];
        let mut prev = f64::INFINITY;
        for step in 0..12 {
            let lr = lr_schedule(step, 0.1, &ms);
            assert!(lr <= prev);
            prev = lr;
        }
        assert_eq!(lr_schedule(6, 0.1, &ms), lr_schedule(8, 0.1, &ms));
    }
}
