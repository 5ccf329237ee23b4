//! Parameter update rules: plain SGD and bias-corrected Adam.
//!
//! An optimizer is bound to one network's parameter layout at
//! construction; Adam moments are kept per trainable tensor in the
//! network's canonical parameter order.

use super::loss::{self, LossTarget};
use super::network::Network;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    /// First/second moment per trainable tensor; empty for SGD.
    moments: Vec<Moments>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, net: &Network) -> Result<Self> {
        check_rate(learning_rate)?;
        let moments = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => net
                .trainable_params()
                .iter()
                .map(|p| Moments { m: vec![0.0; p.len()], v: vec![0.0; p.len()] })
                .collect(),
        };
        Ok(Optimizer { kind, learning_rate, moments, step_count: 0 })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Change the rate for subsequent steps; Adam moments carry over.
    pub fn set_learning_rate(&mut self, learning_rate: f64) -> Result<()> {
        check_rate(learning_rate)?;
        self.learning_rate = learning_rate;
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update from the gradients stored on the network's
    /// parameter tensors, consuming them.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        let mut params = net.trainable_params_mut();
        if let OptimizerKind::Adam = self.kind {
            if params.len() != self.moments.len() {
                return Err(Error::State(format!(
                    "optimizer built for {} parameter tensors, network has {}",
                    self.moments.len(),
                    params.len()
                )));
            }
        }
        for (i, param) in params.iter().enumerate() {
            match param.grad() {
                None => {
                    return Err(Error::State(format!(
                        "optimizer step without gradients on parameter tensor {i}"
                    )))
                }
                Some(g) if g.iter().any(|v| !v.is_finite()) => {
                    return Err(Error::NonFinite {
                        layer: format!("parameter tensor {i}"),
                        op: "optimizer step".into(),
                    })
                }
                Some(_) => {}
            }
        }

        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for param in params.iter_mut() {
                    let grad = param.grad().expect("checked above").to_vec();
                    for (p, g) in param.data_mut().iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                    param.clear_grad();
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let m_corr = 1.0 - ADAM_BETA1.powi(t);
                let v_corr = 1.0 - ADAM_BETA2.powi(t);
                for (param, moments) in params.iter_mut().zip(&mut self.moments) {
                    let grad = param.grad().expect("checked above").to_vec();
                    for (((p, g), m), v) in param
                        .data_mut()
                        .iter_mut()
                        .zip(&grad)
                        .zip(&mut moments.m)
                        .zip(&mut moments.v)
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / m_corr;
                        let v_hat = *v / v_corr;
                        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                    param.clear_grad();
                }
            }
        }
        Ok(())
    }

    /// One full training step: train-mode forward, loss, backward,
    /// parameter update. Returns the pre-update batch loss.
    pub fn fit_batch(
        &mut self,
        net: &mut Network,
        batch: &super::tensor::Tensor,
        target: &LossTarget,
    ) -> Result<f64> {
        let pass = net.forward_train(batch)?;
        let scores = pass.output();
        let loss = loss::evaluate_loss(scores, target)?;
        let dscores = loss::loss_grad(scores, target)?;
        let grads = net.backward_from(&pass, &dscores)?;
        net.store_grads(grads);
        self.step(net)?;
        Ok(loss)
    }
}

/// Zero is allowed: a zero-rate step leaves parameters bitwise intact.
fn check_rate(learning_rate: f64) -> Result<()> {
    if !(learning_rate.is_finite() && learning_rate >= 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be finite and non-negative, got {learning_rate}"
        )));
    }
    Ok(())
}

/// Split a sample order into training mini-batches of `batch_size`.
/// A trailing chunk of a single sample is folded into the batch before
/// it (batch statistics need at least two samples), so every sample is
/// visited exactly once per pass.
pub fn mini_batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    let mut start = 0;
    while start < order.len() {
        let mut take = batch_size.min(order.len() - start);
        if order.len() - (start + take) == 1 {
            take += 1;
        }
        batches.push(&order[start..start + take]);
        start += take;
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::spec::{LayerSpec, NetworkSpec, ValueShape};

    fn one_dense_net() -> Network {
        let spec = NetworkSpec::new(
            ValueShape::Features(1),
            vec![LayerSpec::Dense { inputs: 1, outputs: 1 }],
            1,
        )
        .unwrap();
        Network::initialize(spec, 3)
    }

    fn set_single_grad(net: &mut Network, g: f64) {
        let mut params = net.trainable_params_mut();
        let w = &mut params[0];
        w.data_mut()[0] = 1.0;
        w.set_grad(vec![g]).unwrap();
        params[1].set_grad(vec![0.0]).unwrap();
    }

    #[test]
    fn sgd_applies_exact_update() {
        let mut net = one_dense_net();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &net).unwrap();
        set_single_grad(&mut net, 2.0);
        opt.step(&mut net).unwrap();
        let w = net.trainable_params()[0].data()[0];
        assert!((w - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_sgd_parameters_unchanged() {
        let mut net = one_dense_net();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &net).unwrap();
        set_single_grad(&mut net, 0.0);
        opt.step(&mut net).unwrap();
        assert_eq!(net.trainable_params()[0].data()[0], 1.0);
    }

    #[test]
    fn first_adam_step_matches_closed_form() {
        // Bias correction makes the first step lr * g / (|g| + eps).
        let g = 2.0_f64;
        let lr = 0.001;
        let mut net = one_dense_net();
        let mut opt = Optimizer::new(OptimizerKind::Adam, lr, &net).unwrap();
        set_single_grad(&mut net, g);
        opt.step(&mut net).unwrap();
        let w = net.trainable_params()[0].data()[0];
        let expected = 1.0 - lr * g / (g.abs() + ADAM_EPS);
        assert!((w - expected).abs() < 1e-12, "w={w}, expected {expected}");
    }

    #[test]
    fn step_without_gradients_is_a_state_error() {
        let mut net = one_dense_net();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &net).unwrap();
        assert!(matches!(opt.step(&mut net), Err(Error::State(_))));
    }

    #[test]
    fn non_finite_gradient_is_rejected_before_any_update() {
        let mut net = one_dense_net();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &net).unwrap();
        set_single_grad(&mut net, f64::NAN);
        let before = net.export_stored();
        assert!(matches!(opt.step(&mut net), Err(Error::NonFinite { .. })));
        assert_eq!(net.export_stored(), before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn mini_batches_cover_all_samples_and_fold_trailing_singletons() {
        let order: Vec<usize> = (0..10).collect();
        let b = mini_batches(&order, 4);
        assert_eq!(b, vec![&order[0..4], &order[4..8], &order[8..10]]);
        // 9 = 4 + 5: the trailing single sample joins the second batch.
        let order: Vec<usize> = (0..9).collect();
        let b = mini_batches(&order, 4);
        assert_eq!(b, vec![&order[0..4], &order[4..9]]);
        let order = [7usize];
        assert_eq!(mini_batches(&order, 4), vec![&order[..]]);
        assert!(mini_batches(&[], 4).is_empty());
    }

    #[test]
    fn rejects_invalid_learning_rate() {
        let net = one_dense_net();
        assert!(Optimizer::new(OptimizerKind::Sgd, -0.1, &net).is_err());
        assert!(Optimizer::new(OptimizerKind::Sgd, f64::INFINITY, &net).is_err());
        assert!(Optimizer::new(OptimizerKind::Sgd, 0.0, &net).is_ok());
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &net).unwrap();
        assert!(opt.set_learning_rate(f64::NAN).is_err());
    }
}
