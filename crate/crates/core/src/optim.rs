//! Trainable parameters and SGD with a progress-annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named trainable tensor with its pending gradient and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    velocity: Option<Tensor>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
            grad: None,
            velocity: None,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub anneal_a: f64,
    pub anneal_b: f64,
    pub momentum: f64,
    /// L2 penalty coefficient added to every gradient as `weight_decay·w`.
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            base_lr: 0.01,
            anneal_a: 10.0,
            anneal_b: 0.75,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("sgd.base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(self.anneal_a >= 0.0 && self.anneal_b >= 0.0) {
            return Err(Error::Config("sgd annealing constants must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("sgd.momentum must be in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("sgd.weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }

    /// `base_lr / (1 + anneal_a·p)^anneal_b`
    pub fn learning_rate(&self, progress: f64) -> f64 {
        self.base_lr / (1.0 + self.anneal_a * progress).powf(self.anneal_b)
    }
}

/// Applies one SGD update at training progress `progress ∈ [0,1]` and clears
/// every gradient. All parameters must carry a gradient.
pub fn sgd_step(params: &mut [&mut Param], config: &SgdConfig, progress: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGrad(p.name.clone()));
    }
    let lr = config.learning_rate(progress);
    for p in params.iter_mut() {
        let mut grad = p.grad.take().expect("checked above");
        if grad.shape() != p.value.shape() {
            return Err(Error::shape(
                "sgd_step",
                format!("{}: grad {:?} vs value {:?}", p.name, grad.shape(), p.value.shape()),
            ));
        }
        if config.weight_decay > 0.0 {
            for (g, w) in grad.data_mut().iter_mut().zip(p.value.data()) {
                *g += config.weight_decay * w;
            }
        }
        let step = if config.momentum > 0.0 {
            let v = p
                .velocity
                .get_or_insert_with(|| Tensor::zeros(grad.shape()));
            for (vi, gi) in v.data_mut().iter_mut().zip(grad.data()) {
                *vi = config.momentum * *vi + gi;
            }
            v.clone()
        } else {
            grad
        };
        for (w, g) in p.value.data_mut().iter_mut().zip(step.data()) {
            *w -= lr * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: Option<f64>) -> Param {
        let mut p = Param::new("w", Tensor::new(vec![1], vec![v]).unwrap());
        p.grad = g.map(|g| Tensor::new(vec![1], vec![g]).unwrap());
        p
    }

    #[test]
    fn plain_update() {
        let cfg = SgdConfig {
            base_lr: 0.1,
            anneal_a: 0.0,
            ..SgdConfig::default()
        };
        let mut p = param(1.0, Some(0.5));
        sgd_step(&mut [&mut p], &cfg, 0.3).unwrap();
        assert!((p.value.item() - 0.95).abs() < 1e-15);
        assert!(p.grad.is_none());
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = SgdConfig::default();
        assert_eq!(cfg.learning_rate(0.0), 0.01);
        let expected = 0.01 / 11f64.powf(0.75);
        assert!((cfg.learning_rate(1.0) - expected).abs() < 1e-18);
        assert!((cfg.learning_rate(1.0) - 1.6556e-3).abs() < 1e-7);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut p = param(1.0, None);
        assert!(matches!(
            sgd_step(&mut [&mut p], &SgdConfig::default(), 0.0),
            Err(Error::MissingGrad(_))
        ));
    }

    #[test]
    fn zero_grad_leaves_value_bit_identical() {
        let mut p = param(0.123456789, Some(0.0));
        let before = p.value.item().to_bits();
        sgd_step(&mut [&mut p], &SgdConfig::default(), 0.5).unwrap();
        assert_eq!(p.value.item().to_bits(), before);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let cfg = SgdConfig {
            base_lr: 1.0,
            anneal_a: 0.0,
            anneal_b: 0.0,
            momentum: 0.5,
            weight_decay: 0.0,
        };
        let mut p = param(0.0, Some(1.0));
        sgd_step(&mut [&mut p], &cfg, 0.0).unwrap();
        p.grad = Some(Tensor::new(vec![1], vec![1.0]).unwrap());
        sgd_step(&mut [&mut p], &cfg, 0.0).unwrap();
        // v1 = 1, v2 = 1.5
        assert_eq!(p.value.item(), -2.5);
    }

    #[test]
    fn weight_decay_shrinks_toward_zero() {
        let cfg = SgdConfig {
            base_lr: 0.5,
            anneal_a: 0.0,
            weight_decay: 0.1,
            ..SgdConfig::default()
        };
        let mut p = param(2.0, Some(0.0));
        sgd_step(&mut [&mut p], &cfg, 0.0).unwrap();
        // 2 − 0.5·(0 + 0.1·2)
        assert!((p.value.item() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = SgdConfig::default();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        cfg.momentum = 0.0;
        cfg.base_lr = 0.0;
        assert!(cfg.validate().is_err());
        cfg.base_lr = 0.01;
        cfg.weight_decay = -1.0;
        assert!(cfg.validate().is_err());
    }
}
