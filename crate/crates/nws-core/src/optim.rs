//! SGD with momentum, weight decay, and milestone learning-rate decay.

use crate::tensor::{Float, Tensor};

pub struct Sgd {
    params: Vec<Tensor>,
    velocity: Vec<Vec<Float>>,
    pub lr: Float,
    pub momentum: Float,
    pub weight_decay: Float,
    /// Epochs after which the learning rate is divided by 10.
    pub milestones: Vec<usize>,
}

impl Sgd {
    pub fn new(params: Vec<Tensor>, lr: Float, momentum: Float, weight_decay: Float) -> Sgd {
        let velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Sgd {
            params,
            velocity,
            lr,
            momentum,
            weight_decay,
            milestones: Vec::new(),
        }
    }

    pub fn with_milestones(mut self, milestones: Vec<usize>) -> Sgd {
        self.milestones = milestones;
        self
    }

    /// Call once at the start of each epoch (0-based).
    pub fn schedule_epoch(&mut self, epoch: usize) {
        if self.milestones.contains(&epoch) {
            self.lr /= 10.0;
        }
    }

    pub fn step(&mut self) {
        for (param, vel) in self.params.iter().zip(self.velocity.iter_mut()) {
            let grad = match param.grad() {
                Some(g) => g,
                None => continue,
            };
            let data = param.data();
            let mut step = vec![0.0; grad.len()];
            for i in 0..grad.len() {
                let g = grad[i] + self.weight_decay * data[i];
                vel[i] = self.momentum * vel[i] + g;
                step[i] = self.lr * vel[i];
            }
            param.apply_step(&step);
        }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn plain_sgd_moves_against_gradient() {
        let w = Tensor::new(vec![2], vec![1.0, -2.0], true).unwrap();
        let mut opt = Sgd::new(vec![w.clone()], 0.1, 0.0, 0.0);
        let loss = ops::sum(&ops::mul(&w, &w));
        loss.backward().unwrap();
        opt.step();
        let d = w.data();
        assert!((d[0] - 0.8).abs() < 1e-6);
        assert!((d[1] + 1.6).abs() < 1e-6);
    }

    #[test]
    fn milestone_divides_lr_by_ten() {
        let w = Tensor::new(vec![1], vec![0.0], true).unwrap();
        let mut opt = Sgd::new(vec![w], 0.5, 0.9, 0.0).with_milestones(vec![3]);
        opt.schedule_epoch(0);
        assert_eq!(opt.lr, 0.5);
        opt.schedule_epoch(3);
        assert!((opt.lr - 0.05).abs() < 1e-9);
    }
}
