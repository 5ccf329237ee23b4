//! The membership classifier: a fully convolutional time-series
//! network trained on per-sample feature trajectories, plus the shared
//! scoring/evaluation machinery every membership attack reports
//! through.
//!
//! The classifier reads one trajectory (a 1-channel series, one value
//! per observed epoch) and emits two softmax scores, non-member and
//! member. Global average pooling makes its parameter count
//! independent of the trajectory length.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::engine::{
    mini_batches, LayerSpec, LossTarget, Mode, Network, NetworkSpec, Optimizer, OptimizerKind,
    Tensor, ValueShape,
};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::fl::{load_trace, save_trace, CheckpointTrace};
use crate::seed::derive_seed;

/// Output class indices of the membership head.
pub const NON_MEMBER_CLASS: usize = 0;
pub const MEMBER_CLASS: usize = 1;

/// Scores at or above this are called members.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Inference batch size; results are independent of this chunking.
const EVAL_BATCH: usize = 256;

/// Architecture of the membership classifier: three convolution
/// blocks (conv, batch norm, ReLU), global average pooling, and a
/// two-way dense softmax head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackFcnSpec {
    /// (out_channels, kernel) per block, applied in order.
    pub conv_blocks: [(usize, usize); 3],
}

impl Default for AttackFcnSpec {
    fn default() -> Self {
        AttackFcnSpec { conv_blocks: [(128, 8), (256, 5), (128, 3)] }
    }
}

impl AttackFcnSpec {
    /// The concrete layer chain for trajectories of length `input_len`.
    pub fn network_spec(&self, input_len: usize) -> Result<NetworkSpec> {
        let mut layers = Vec::with_capacity(3 * self.conv_blocks.len() + 3);
        let mut channels = 1;
        for &(out_channels, kernel) in &self.conv_blocks {
            layers.push(LayerSpec::Conv1d { in_channels: channels, out_channels, kernel });
            layers.push(LayerSpec::batch_norm(out_channels));
            layers.push(LayerSpec::Relu);
            channels = out_channels;
        }
        layers.push(LayerSpec::GlobalAvgPool1d);
        layers.push(LayerSpec::Dense { inputs: channels, outputs: 2 });
        layers.push(LayerSpec::Softmax);
        NetworkSpec::new(ValueShape::Series { channels: 1, len: input_len }, layers, 2)
    }
}

/// Fresh, untrained membership classifier.
pub fn build_attack_fcn(input_len: usize, spec: &AttackFcnSpec, seed: u64) -> Result<Network> {
    Ok(Network::initialize(spec.network_spec(input_len)?, seed))
}

/// Training settings for the membership classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackHyperparams {
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for AttackHyperparams {
    fn default() -> Self {
        AttackHyperparams {
            optimizer: OptimizerKind::Adam,
            batch_size: 100,
            learning_rate: 0.001,
            epochs: 100,
            seed: 0,
        }
    }
}

impl AttackHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A trained membership classifier plus its per-epoch training loss.
#[derive(Debug)]
pub struct TrainedAttack {
    pub model: Network,
    pub epoch_losses: Vec<f64>,
}

pub(crate) fn check_both_classes(members: &[bool]) -> Result<()> {
    let member_count = members.iter().filter(|m| **m).count();
    if member_count == 0 || member_count == members.len() {
        return Err(Error::Validation(
            "training needs both member and non-member rows".into(),
        ));
    }
    Ok(())
}

fn series_batch(input: ValueShape, rows: &[Vec<f64>], pick: &[usize]) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(pick.len() * input.per_sample_size());
    for &i in pick {
        flat.extend_from_slice(&rows[i]);
    }
    Tensor::new(input.batch_shape(pick.len()), flat)
}

/// Train a membership classifier on labeled trajectories with
/// mini-batch cross entropy. Deterministic given the hyperparameter
/// seed; the returned model is frozen in eval mode.
pub fn train_attack(
    features: &FeatureMatrix,
    spec: &AttackFcnSpec,
    hp: &AttackHyperparams,
) -> Result<TrainedAttack> {
    hp.validate()?;
    if features.is_empty() {
        return Err(Error::Validation("no training rows".into()));
    }
    check_both_classes(features.members())?;

    let mut net = build_attack_fcn(features.width(), spec, derive_seed(hp.seed, "attack-init", &[]))?;
    let mut optimizer = Optimizer::new(hp.optimizer, hp.learning_rate, &net)?;
    let input = net.spec().input;
    let labels: Vec<usize> = features
        .members()
        .iter()
        .map(|m| if *m { MEMBER_CLASS } else { NON_MEMBER_CLASS })
        .collect();

    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..features.len()).collect();
    for epoch in 0..hp.epochs {
        let shuffle_seed = derive_seed(hp.seed, "attack-shuffle", &[epoch as u64]);
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(shuffle_seed));
        let mut loss_sum = 0.0;
        for chunk in mini_batches(&order, hp.batch_size) {
            let batch = series_batch(input, features.rows(), chunk)?;
            let chunk_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss =
                optimizer.fit_batch(&mut net, &batch, &LossTarget::Classes(chunk_labels))?;
            loss_sum += loss * chunk.len() as f64;
        }
        epoch_losses.push(loss_sum / features.len() as f64);
    }
    net.set_mode(Mode::Eval);
    Ok(TrainedAttack { model: net, epoch_losses })
}

/// Member probability for one trajectory, from the model's two-way
/// softmax head.
pub fn predict_membership(model: &Network, row: &[f64]) -> Result<f64> {
    let scores = scores_for_rows(model, std::slice::from_ref(&row.to_vec()))?;
    Ok(scores[0])
}

fn scores_for_rows(model: &Network, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if model.spec().class_count != 2 {
        return Err(Error::Config(format!(
            "membership model must emit 2 classes, this one emits {}",
            model.spec().class_count
        )));
    }
    let input = model.spec().input;
    let width = input.per_sample_size();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::shape(
                format!("trajectory row {i}"),
                format!("{width} values"),
                format!("{} values", row.len()),
            ));
        }
    }
    let mut scores = Vec::with_capacity(rows.len());
    let pick: Vec<usize> = (0..rows.len()).collect();
    for chunk in pick.chunks(EVAL_BATCH) {
        let batch = series_batch(input, rows, chunk)?;
        let out = model.infer(&batch)?;
        scores.extend(chunk.iter().enumerate().map(|(k, _)| out.row(k)[MEMBER_CLASS]));
    }
    Ok(scores)
}

/// Anything that turns a per-sample input row into a member score in
/// [0, 1]; the decision rule is score >= [`DECISION_THRESHOLD`].
pub trait MembershipScorer {
    fn member_scores(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// Scorer view over a trained two-class membership classifier.
pub struct SoftmaxScorer<'a> {
    model: &'a Network,
}

impl<'a> SoftmaxScorer<'a> {
    pub fn new(model: &'a Network) -> Result<Self> {
        if model.spec().class_count != 2 {
            return Err(Error::Config(format!(
                "membership model must emit 2 classes, this one emits {}",
                model.spec().class_count
            )));
        }
        Ok(SoftmaxScorer { model })
    }
}

impl MembershipScorer for SoftmaxScorer<'_> {
    fn member_scores(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        scores_for_rows(self.model, rows)
    }
}

/// Membership decisions tallied against ground truth; members are the
/// positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalReport {
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.true_positives + self.true_negatives + self.false_positives + self.false_negatives
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_positives + self.true_negatives) as f64 / self.total() as f64
    }
}

/// Score every row and tally the thresholded decisions.
pub fn evaluate_accuracy<S: MembershipScorer + ?Sized>(
    scorer: &S,
    rows: &[Vec<f64>],
    members: &[bool],
) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Validation("evaluation needs at least one row".into()));
    }
    if rows.len() != members.len() {
        return Err(Error::shape(
            "evaluation labels",
            format!("{} labels", rows.len()),
            format!("{} labels", members.len()),
        ));
    }
    let scores = scorer.member_scores(rows)?;
    let mut report = EvalReport {
        true_positives: 0,
        true_negatives: 0,
        false_positives: 0,
        false_negatives: 0,
    };
    for (score, &member) in scores.iter().zip(members) {
        if !score.is_finite() {
            return Err(Error::NonFinite {
                layer: "membership scorer".into(),
                op: "scoring".into(),
            });
        }
        let called_member = *score >= DECISION_THRESHOLD;
        match (called_member, member) {
            (true, true) => report.true_positives += 1,
            (false, false) => report.true_negatives += 1,
            (true, false) => report.false_positives += 1,
            (false, true) => report.false_negatives += 1,
        }
    }
    Ok(report)
}

/// Evaluate a trained classifier on a feature matrix.
pub fn evaluate_on_features(model: &Network, features: &FeatureMatrix) -> Result<EvalReport> {
    evaluate_accuracy(&SoftmaxScorer::new(model)?, features.rows(), features.members())
}

/// Persist a trained membership model as a one-snapshot trace file.
pub fn save_model(path: &Path, model: &Network) -> Result<()> {
    let mut trace = CheckpointTrace::new(0, model.spec().clone());
    trace.record(1, model.clone())?;
    save_trace(&trace, path)
}

/// Load a model saved by [`save_model`].
pub fn load_model(path: &Path) -> Result<Network> {
    let trace = load_trace(path)?;
    match trace.epochs().as_slice() {
        [single] => Ok(trace.get(*single).expect("epoch listed").clone()),
        epochs => Err(Error::Validation(format!(
            "model file holds {} snapshots, expected exactly 1",
            epochs.len()
        ))),
    }
}
