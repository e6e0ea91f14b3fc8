use super::tensor::{Parameter, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates for a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. The L2 term `decay * w` is added to each gradient first.
    pub fn step<F: Real>(&mut self, params: &mut [&mut Parameter<F>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let decay = p.decay;
            let Parameter { value, grad, .. } = &mut **p;
            for (((w, g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let wf = w.as_f64();
                let g = g.as_f64() + decay * wf;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                *w = F::cast(wf - update);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap());
        p.grad = Tensor::from_vec(&[3], vec![0.3, -7.0, 0.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        let d = p.value.data();
        assert!((d[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((d[1] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[2], vec![1.5f64, -0.5]).unwrap());
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        assert_eq!(p.value.data(), [1.5, -0.5]);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[1], vec![0.25f32]).unwrap()).with_decay(0.001);
        p.grad = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..Default::default() });
        adam.step(&mut [&mut p]);
        assert_eq!(p.value.data(), [0.25]);
    }

    #[test]
    fn first_step_size_is_lr() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[1], vec![0.0f64]).unwrap());
        p.grad = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        assert!((p.value.data()[0] + 1e-3).abs() < 1e-5);
        // Decay alone: w = 10 gives an effective gradient of 0.01.
        let mut q = Parameter::new("q", Tensor::from_vec(&[1], vec![10.0f64]).unwrap()).with_decay(0.001);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut q]);
        assert!((q.value.data()[0] - (10.0 - 1e-3)).abs() < 1e-5);
    }

    #[test]
    fn decay_pulls_toward_zero() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[1], vec![2.0f64]).unwrap()).with_decay(0.1);
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..200 {
            p.zero_grad();
            adam.step(&mut [&mut p]);
        }
        assert!(p.value.data()[0].abs() < 0.5);
    }

    #[test]
    fn minimises_quadratic() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[2], vec![3.0f64, -4.0]).unwrap());
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..500 {
            let g: Vec<f64> = p.value.data().iter().map(|w| 2.0 * (w - 1.0)).collect();
            p.grad = Tensor::from_vec(&[2], g).unwrap();
            adam.step(&mut [&mut p]);
        }
        assert!(p.value.data().iter().all(|w| (w - 1.0).abs() < 1e-2));
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(AdamConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
