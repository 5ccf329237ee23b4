//! Feed-forward network: parameter storage, forward passes, and
//! back-propagation.
//!
//! Two API levels coexist. The stateful level (`forward`, `backward`,
//! optimizer steps) drives training loops. The pure level
//! (`forward_pass`, `backward_from`, `infer`) computes the same values
//! without touching the network, which keeps frozen snapshots safe to
//! probe from analysis code and finite-difference checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::layers::{self, NormBatchStats, NormCache};
use super::spec::{LayerSpec, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Whether training-time semantics (batch statistics) are in effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which statistics batch norm uses in a pure forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsMode {
    Batch,
    Running,
}

/// Running statistics for one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

enum LayerCache {
    None,
    Conv { cols: Vec<f64> },
    Norm { cache: NormCache, stats: Option<NormBatchStats> },
}

/// Everything one forward pass recorded, enough to back-propagate.
pub struct ForwardPass {
    input: Tensor,
    outputs: Vec<Tensor>,
    caches: Vec<LayerCache>,
}

impl ForwardPass {
    /// Final-layer output (the input itself for a zero-layer network).
    pub fn output(&self) -> &Tensor {
        self.outputs.last().unwrap_or(&self.input)
    }

    /// Every layer's output, in layer order.
    pub fn outputs(&self) -> &[Tensor] {
        &self.outputs
    }

    fn layer_input(&self, layer: usize) -> &Tensor {
        if layer == 0 {
            &self.input
        } else {
            &self.outputs[layer - 1]
        }
    }
}

pub struct Network {
    spec: NetworkSpec,
    /// Trainable tensors per layer (weights/bias or gamma/beta).
    params: Vec<Vec<Tensor>>,
    /// Running statistics per layer; None for layers without them.
    norm_state: Vec<Option<NormState>>,
    mode: Mode,
    /// Pass recorded by the last train-mode forward, consumed by backward.
    pending: Option<ForwardPass>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("spec", &self.spec)
            .field("mode", &self.mode)
            .field("pending", &self.pending.is_some())
            .finish_non_exhaustive()
    }
}

/// Cloning copies parameters, statistics and mode; a recorded forward
/// pass is training transient and does not survive the copy.
impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            spec: self.spec.clone(),
            params: self.params.clone(),
            norm_state: self.norm_state.clone(),
            mode: self.mode,
            pending: None,
        }
    }
}

impl Network {
    /// Fresh network with uniform Glorot weights drawn from `seed`.
    /// Biases start at zero; batch-norm starts as the identity map with
    /// running statistics (mean 0, variance 1).
    pub fn initialize(spec: NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.layers.len());
        let mut norm_state = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    let w = glorot(&mut rng, vec![outputs, inputs], inputs, outputs);
                    params.push(vec![w, Tensor::zeros(vec![outputs])]);
                    norm_state.push(None);
                }
                LayerSpec::Conv1d { in_channels, out_channels, kernel } => {
                    let w = glorot(
                        &mut rng,
                        vec![out_channels, in_channels, kernel],
                        in_channels * kernel,
                        out_channels * kernel,
                    );
                    params.push(vec![w, Tensor::zeros(vec![out_channels])]);
                    norm_state.push(None);
                }
                LayerSpec::BatchNorm1d { channels, .. } => {
                    let gamma = Tensor::new(vec![channels], vec![1.0; channels])
                        .expect("gamma size");
                    params.push(vec![gamma, Tensor::zeros(vec![channels])]);
                    norm_state.push(Some(NormState {
                        running_mean: vec![0.0; channels],
                        running_var: vec![1.0; channels],
                    }));
                }
                LayerSpec::Relu | LayerSpec::GlobalAvgPool1d | LayerSpec::Softmax => {
                    params.push(Vec::new());
                    norm_state.push(None);
                }
            }
        }
        let net = Network { spec, params, norm_state, mode: Mode::Train, pending: None };
        debug_assert_eq!(
            net.params.iter().flatten().map(Tensor::len).sum::<usize>(),
            net.spec.trainable_param_count()
        );
        net
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Eval {
            self.pending = None;
        }
    }

    /// Trainable tensors in canonical order (layer order, weights before
    /// biases). The optimizer walks this same order.
    pub fn trainable_params(&self) -> Vec<&Tensor> {
        self.params.iter().flatten().collect()
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().flatten().collect()
    }

    // ----------------------------------------------------------- forward

    /// Mode-honoring forward. Train mode normalizes with batch
    /// statistics, updates running statistics, and records the pass for
    /// a following `backward`. Eval mode is pure. `taps` are 1-based
    /// layer indices whose outputs are returned alongside the scores.
    pub fn forward(
        &mut self,
        batch: &Tensor,
        taps: &[usize],
    ) -> Result<(Tensor, Vec<(usize, Tensor)>)> {
        self.check_taps(taps)?;
        let pass = match self.mode {
            Mode::Train => {
                let pass = self.forward_train(batch)?;
                let out = (pass.output().clone(), collect_taps(&pass, taps));
                self.pending = Some(pass);
                return Ok(out);
            }
            Mode::Eval => self.forward_pass(batch, StatsMode::Running)?,
        };
        Ok((pass.output().clone(), collect_taps(&pass, taps)))
    }

    /// Train-mode forward: batch statistics, running-stat update,
    /// caches returned to the caller.
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<ForwardPass> {
        let pass = self.forward_pass(batch, StatsMode::Batch)?;
        for (layer, cache) in pass.caches.iter().enumerate() {
            if let LayerCache::Norm { stats: Some(stats), .. } = cache {
                let state = self.norm_state[layer]
                    .as_mut()
                    .expect("norm cache only on batch-norm layers");
                let momentum = match self.spec.layers[layer] {
                    LayerSpec::BatchNorm1d { momentum, .. } => momentum,
                    _ => unreachable!(),
                };
                // Running variance uses the unbiased estimate.
                let n = stats.per_channel_count as f64;
                let correction = n / (n - 1.0);
                for c in 0..state.running_mean.len() {
                    state.running_mean[c] =
                        (1.0 - momentum) * state.running_mean[c] + momentum * stats.mean[c];
                    state.running_var[c] = (1.0 - momentum) * state.running_var[c]
                        + momentum * stats.var[c] * correction;
                }
            }
        }
        Ok(pass)
    }

    /// Pure eval-semantics forward, scores only.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_pass(batch, StatsMode::Running)?.output().clone())
    }

    /// Pure eval-semantics forward returning scores plus the outputs of
    /// the 1-based `taps` layers.
    pub fn infer_with_taps(
        &self,
        batch: &Tensor,
        taps: &[usize],
    ) -> Result<(Tensor, Vec<(usize, Tensor)>)> {
        self.check_taps(taps)?;
        let pass = self.forward_pass(batch, StatsMode::Running)?;
        Ok((pass.output().clone(), collect_taps(&pass, taps)))
    }

    fn check_taps(&self, taps: &[usize]) -> Result<()> {
        let count = self.spec.layer_count();
        for &t in taps {
            if t == 0 || t > count {
                return Err(Error::Validation(format!(
                    "tap index {t} outside 1..={count}"
                )));
            }
        }
        Ok(())
    }

    /// Every layer's output for one pure forward pass, in layer order.
    pub fn layer_outputs(&self, batch: &Tensor, stats: StatsMode) -> Result<Vec<Tensor>> {
        Ok(self.forward_pass(batch, stats)?.outputs)
    }

    /// Pure forward pass with explicit statistics mode. Does not update
    /// running statistics even when batch statistics are used.
    pub fn forward_pass(&self, batch: &Tensor, stats: StatsMode) -> Result<ForwardPass> {
        self.check_input(batch)?;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.spec.layers.len());
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.spec.layers.len());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = outputs.last().unwrap_or(batch);
            let (y, cache) = match *layer {
                LayerSpec::Dense { .. } => {
                    let y = layers::dense_forward(x, &self.params[i][0], &self.params[i][1])?;
                    (y, LayerCache::None)
                }
                LayerSpec::Conv1d { .. } => {
                    let (y, cols) =
                        layers::conv1d_forward(x, &self.params[i][0], &self.params[i][1])?;
                    (y, LayerCache::Conv { cols })
                }
                LayerSpec::BatchNorm1d { eps, .. } => {
                    let gamma = &self.params[i][0];
                    let beta = &self.params[i][1];
                    match stats {
                        StatsMode::Batch => {
                            let (y, cache, batch_stats) =
                                layers::batchnorm_forward_train(x, gamma, beta, eps)?;
                            (y, LayerCache::Norm { cache, stats: Some(batch_stats) })
                        }
                        StatsMode::Running => {
                            let state = self.norm_state[i]
                                .as_ref()
                                .expect("running stats exist for batch-norm layers");
                            let (y, cache) = layers::batchnorm_forward_eval(
                                x,
                                gamma,
                                beta,
                                &state.running_mean,
                                &state.running_var,
                                eps,
                            );
                            (y, LayerCache::Norm { cache, stats: None })
                        }
                    }
                }
                LayerSpec::Relu => (layers::relu_forward(x), LayerCache::None),
                LayerSpec::GlobalAvgPool1d => {
                    (layers::global_avg_pool_forward(x), LayerCache::None)
                }
                LayerSpec::Softmax => (layers::softmax_forward(x), LayerCache::None),
            };
            if !y.all_finite() {
                return Err(Error::NonFinite {
                    layer: format!("{} (layer {})", layer.name(), i + 1),
                    op: "forward".into(),
                });
            }
            outputs.push(y);
            caches.push(cache);
        }
        Ok(ForwardPass { input: batch.clone(), outputs, caches })
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let expected = self.spec.input.batch_shape(batch.shape().first().copied().unwrap_or(0));
        if batch.shape() != expected.as_slice() {
            return Err(Error::shape(
                "network input",
                format!("{expected:?}"),
                format!("{:?}", batch.shape()),
            ));
        }
        Ok(())
    }

    // ---------------------------------------------------------- backward

    /// Back-propagate `dscores` through the recorded pass. Pure: returns
    /// per-layer parameter gradients in the same nesting as the
    /// trainable parameters.
    pub fn backward_from(&self, pass: &ForwardPass, dscores: &Tensor) -> Result<Vec<Vec<Tensor>>> {
        if dscores.shape() != pass.output().shape() {
            return Err(Error::shape(
                "score gradient",
                format!("{:?}", pass.output().shape()),
                format!("{:?}", dscores.shape()),
            ));
        }
        let mut grads: Vec<Vec<Tensor>> = self
            .params
            .iter()
            .map(|p| p.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect())
            .collect();
        let mut dy = dscores.clone();
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let x = pass.layer_input(i);
            dy = match *layer {
                LayerSpec::Dense { .. } => {
                    let (dx, dw, db) = layers::dense_backward(x, &self.params[i][0], &dy);
                    grads[i][0] = dw;
                    grads[i][1] = db;
                    dx
                }
                LayerSpec::Conv1d { .. } => {
                    let cols = match &pass.caches[i] {
                        LayerCache::Conv { cols } => cols,
                        _ => unreachable!("conv cache recorded in forward"),
                    };
                    let (dx, dw, db) =
                        layers::conv1d_backward(x, cols, &self.params[i][0], &dy);
                    grads[i][0] = dw;
                    grads[i][1] = db;
                    dx
                }
                LayerSpec::BatchNorm1d { .. } => {
                    let cache = match &pass.caches[i] {
                        LayerCache::Norm { cache, .. } => cache,
                        _ => unreachable!("norm cache recorded in forward"),
                    };
                    let (dx, dgamma, dbeta) =
                        layers::batchnorm_backward(cache, x.shape(), &self.params[i][0], &dy);
                    grads[i][0] = dgamma;
                    grads[i][1] = dbeta;
                    dx
                }
                LayerSpec::Relu => layers::relu_backward(&pass.outputs[i], &dy),
                LayerSpec::GlobalAvgPool1d => layers::global_avg_pool_backward(x.shape(), &dy),
                LayerSpec::Softmax => layers::softmax_backward(&pass.outputs[i], &dy),
            };
        }
        Ok(grads)
    }

    /// Stateful backward: consumes the pass recorded by the last
    /// train-mode `forward` and stores gradients on the parameter
    /// tensors. Errors when no pass is pending.
    pub fn backward(&mut self, dscores: &Tensor) -> Result<()> {
        let pass = self.pending.take().ok_or_else(|| {
            Error::State("backward called without a recorded forward pass".into())
        })?;
        let grads = self.backward_from(&pass, dscores)?;
        self.store_grads(grads);
        Ok(())
    }

    /// Write a gradient set produced by `backward_from` onto the
    /// parameter tensors.
    pub fn store_grads(&mut self, grads: Vec<Vec<Tensor>>) {
        for (params, layer_grads) in self.params.iter_mut().zip(grads) {
            for (param, grad) in params.iter_mut().zip(layer_grads) {
                let data = grad.into_data();
                param.set_grad(data).expect("gradient shape matches parameter");
            }
        }
    }

    // ------------------------------------------------- stored value view

    /// All stored arrays in canonical order: layer order; weights then
    /// bias, or gamma, beta, running mean, running variance.
    pub fn export_stored(&self) -> Vec<Vec<f64>> {
        let mut arrays = Vec::new();
        for (i, params) in self.params.iter().enumerate() {
            for p in params {
                arrays.push(p.data().to_vec());
            }
            if let Some(state) = &self.norm_state[i] {
                arrays.push(state.running_mean.clone());
                arrays.push(state.running_var.clone());
            }
        }
        arrays
    }

    /// Replace every stored array. Wipes pending gradients: the loaded
    /// values describe a different point in parameter space.
    pub fn import_stored(&mut self, arrays: &[Vec<f64>]) -> Result<()> {
        let expected = self.spec.stored_array_sizes();
        if arrays.len() != expected.len() {
            return Err(Error::shape(
                "stored arrays",
                format!("{} arrays", expected.len()),
                format!("{} arrays", arrays.len()),
            ));
        }
        for (idx, (arr, want)) in arrays.iter().zip(&expected).enumerate() {
            if arr.len() != *want {
                return Err(Error::shape(
                    "stored array",
                    format!("array {idx} of length {want}"),
                    format!("length {}", arr.len()),
                ));
            }
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "stored array {idx} contains non-finite values"
                )));
            }
        }
        let mut it = arrays.iter();
        for (i, params) in self.params.iter_mut().enumerate() {
            for p in params.iter_mut() {
                let src = it.next().expect("length checked above");
                p.data_mut().copy_from_slice(src);
                p.clear_grad();
            }
            if let Some(state) = &mut self.norm_state[i] {
                state.running_mean.copy_from_slice(it.next().expect("length checked"));
                let var = it.next().expect("length checked");
                if var.iter().any(|v| *v < 0.0) {
                    return Err(Error::Validation(
                        "negative running variance in stored arrays".into(),
                    ));
                }
                state.running_var.copy_from_slice(var);
            }
        }
        self.pending = None;
        Ok(())
    }
}

fn collect_taps(pass: &ForwardPass, taps: &[usize]) -> Vec<(usize, Tensor)> {
    let mut sorted: Vec<usize> = taps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.into_iter().map(|t| (t, pass.outputs[t - 1].clone())).collect()
}

fn glorot(rng: &mut ChaCha20Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape, data).expect("shape/data agree by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::spec::mlp_spec;

    fn small_mlp() -> Network {
        Network::initialize(mlp_spec(4, &[8], 3).unwrap(), 7)
    }

    #[test]
    fn initialization_is_deterministic_per_seed() {
        let a = Network::initialize(mlp_spec(4, &[8], 3).unwrap(), 7);
        let b = Network::initialize(mlp_spec(4, &[8], 3).unwrap(), 7);
        let c = Network::initialize(mlp_spec(4, &[8], 3).unwrap(), 8);
        assert_eq!(a.export_stored(), b.export_stored());
        assert_ne!(a.export_stored(), c.export_stored());
    }

    #[test]
    fn parameter_count_matches_spec_formula() {
        let net = small_mlp();
        let total: usize = net.trainable_params().iter().map(|t| t.len()).sum();
        assert_eq!(total, net.spec().trainable_param_count());
    }

    #[test]
    fn eval_forward_is_reproducible() {
        let mut net = small_mlp();
        net.set_mode(Mode::Eval);
        let x = Tensor::new(vec![2, 4], vec![0.1, -0.2, 0.3, 0.4, 1.0, 0.0, -1.0, 0.5]).unwrap();
        let a = net.infer(&x).unwrap();
        let b = net.infer(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scores_are_probability_rows() {
        let net = small_mlp();
        let x = Tensor::new(vec![2, 4], vec![0.1, -0.2, 0.3, 0.4, 1.0, 0.0, -1.0, 0.5]).unwrap();
        let scores = net.infer(&x).unwrap();
        for row in scores.data().chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut net = small_mlp();
        let dy = Tensor::zeros(vec![2, 3]);
        let err = net.backward(&dy).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn eval_forward_does_not_arm_backward() {
        let mut net = small_mlp();
        net.set_mode(Mode::Eval);
        let x = Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        net.forward(&x, &[]).unwrap();
        assert!(net.backward(&Tensor::zeros(vec![1, 3])).is_err());
    }

    #[test]
    fn tap_outside_layer_range_is_rejected() {
        let net = small_mlp();
        let x = Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(net.infer_with_taps(&x, &[0]).is_err());
        assert!(net.infer_with_taps(&x, &[9]).is_err());
        let count = net.spec().layer_count();
        assert!(net.infer_with_taps(&x, &[1, count]).is_ok());
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let net = small_mlp();
        let x = Tensor::new(vec![1, 5], vec![0.0; 5]).unwrap();
        assert!(matches!(net.infer(&x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn stored_roundtrip_preserves_network() {
        let mut net = small_mlp();
        let arrays = net.export_stored();
        let mut other = Network::initialize(mlp_spec(4, &[8], 3).unwrap(), 99);
        assert_ne!(other.export_stored(), arrays);
        other.import_stored(&arrays).unwrap();
        assert_eq!(other.export_stored(), arrays);
        net.import_stored(&arrays).unwrap();
        assert_eq!(net.export_stored(), arrays);
    }

    #[test]
    fn import_rejects_wrong_array_count() {
        let mut net = small_mlp();
        let mut arrays = net.export_stored();
        arrays.pop();
        assert!(net.import_stored(&arrays).is_err());
    }
}
