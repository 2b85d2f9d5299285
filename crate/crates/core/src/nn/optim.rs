// SPDX-License-Identifier: Apache-2.0

use super::model::ModelWeights;
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Momentum SGD with L2 weight decay folded into the gradient:
///
/// ```text
/// g' = g + weight_decay * w
/// v  = momentum * v + g'
/// w  = w - lr * v
/// ```
#[derive(Debug, Clone)]
pub struct SgdState<T = f32> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Option<ModelWeights<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(SgdState {
            lr,
            momentum,
            weight_decay,
            buffers: None,
        })
    }

    pub fn buffers(&self) -> Option<&ModelWeights<T>> {
        self.buffers.as_ref()
    }

    pub fn step(&mut self, model: &mut ModelWeights<T>, grads: &ModelWeights<T>) -> Result<()> {
        model.check_compatible(grads)?;
        let buffers = match &mut self.buffers {
            Some(b) => {
                b.check_compatible(model)?;
                b
            }
            None => self.buffers.insert(model.zeros_like()),
        };
        let lr = T::from_f64(self.lr);
        let mom = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        let use_mom = self.momentum != 0.0;
        let use_wd = self.weight_decay != 0.0;
        for ((w, g), v) in model.params_mut().zip(grads.params()).zip(buffers.params_mut()) {
            for ((w, &g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let g = if use_wd { g + wd * *w } else { g };
                let d = if use_mom {
                    *v = mom * *v + g;
                    *v
                } else {
                    g
                };
                *w = *w - lr * d;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Architecture;
    use crate::rng::{stream, Purpose};

    fn setup() -> (ModelWeights<f64>, ModelWeights<f64>) {
        let arch = Architecture::mlp(3, &[2], 2);
        let w = ModelWeights::init(&arch, &mut stream(1, Purpose::Init, 0, 0)).unwrap();
        let g = ModelWeights::init(&arch, &mut stream(2, Purpose::Init, 0, 0)).unwrap();
        (w, g)
    }

    #[test]
    fn plain_step() {
        let (mut w, g) = setup();
        let before = w.flatten();
        SgdState::new(1.0, 0.0, 0.0).unwrap().step(&mut w, &g).unwrap();
        for ((a, b), gi) in w.flatten().iter().zip(before).zip(g.flatten()) {
            assert_eq!(*a, b - gi);
        }
    }

    #[test]
    fn momentum_two_step_recursion() {
        // second update = lr * (g + 0.9 g) = lr * 1.9 g
        let (mut w, g) = setup();
        let mut opt = SgdState::new(0.1, 0.9, 0.0).unwrap();
        opt.step(&mut w, &g).unwrap();
        let mid = w.flatten();
        opt.step(&mut w, &g).unwrap();
        for ((after, before), gi) in w.flatten().iter().zip(mid).zip(g.flatten()) {
            assert!(((before - after) - 0.1 * 1.9 * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn pure_decay_shrinks() {
        let (mut w, g) = setup();
        let zero = g.zeros_like();
        let before = w.flatten();
        SgdState::new(1.0, 0.0, 0.1).unwrap().step(&mut w, &zero).unwrap();
        for (a, b) in w.flatten().iter().zip(before) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(SgdState::<f32>::new(0.0, 0.9, 0.0).is_err());
        assert!(SgdState::<f32>::new(0.1, 1.0, 0.0).is_err());
        assert!(SgdState::<f32>::new(0.1, 0.5, -1.0).is_err());
    }
}
