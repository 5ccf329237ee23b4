//! The white-box reference attack this workbench compares against: for
//! each auxiliary sample it assembles one wide flat vector from every
//! observed snapshot — per-snapshot loss gradients, the loss value and
//! all layer outputs, plus a one-hot class label — and trains a small
//! convolutional regressor on membership with squared error.
//!
//! Its input grows with the target model's parameter count, which is
//! exactly the cost the trajectory attack avoids; the accounting
//! module quantifies that gap.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::attack::{check_both_classes, MembershipScorer};
use crate::data::AuxiliaryDataset;
use crate::engine::loss::{evaluate_loss, loss_grad};
use crate::engine::{
    mini_batches, LayerSpec, LossTarget, Mode, Network, NetworkSpec, Optimizer, StatsMode,
    Tensor, ValueShape,
};
use crate::error::{Error, Result};
use crate::fl::CheckpointTrace;
use crate::seed::derive_seed;

pub use crate::attack::AttackHyperparams;

/// Inference batch size; results are independent of this chunking.
const EVAL_BATCH: usize = 64;

/// Flat input length: per snapshot, the gradient (d values), the loss
/// (1 value) and every layer output (sum of layer_sizes values); plus
/// one one-hot class block of m values.
pub fn baseline_input_size(
    d: usize,
    layer_sizes: &[usize],
    n_targets: usize,
    m: usize,
) -> usize {
    (d + 1 + layer_sizes.iter().sum::<usize>()) * n_targets + m
}

/// [`baseline_input_size`] with d, layer sizes and class count taken
/// from a target architecture.
pub fn input_size_for(spec: &NetworkSpec, n_targets: usize) -> Result<usize> {
    Ok(baseline_input_size(
        spec.trainable_param_count(),
        &spec.layer_output_sizes()?,
        n_targets,
        spec.class_count,
    ))
}

/// Build the flat vector for one labeled sample. Per snapshot in
/// ascending epoch order: gradients in canonical parameter order, then
/// the loss, then every layer's outputs in layer order; after all
/// snapshots, the one-hot label.
pub fn build_baseline_input(
    trace: &CheckpointTrace,
    input: &[f64],
    label: usize,
) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::Validation("trace holds no snapshots".into()));
    }
    let spec = trace.spec();
    let m = spec.class_count;
    if label >= m {
        return Err(Error::Validation(format!("label {label} outside 0..{m}")));
    }
    let batch = Tensor::new(spec.input.batch_shape(1), input.to_vec())?;
    let target = LossTarget::Classes(vec![label]);

    let mut values =
        Vec::with_capacity(input_size_for(spec, trace.len())?);
    for (_, net) in trace.iter() {
        let pass = net.forward_pass(&batch, StatsMode::Running)?;
        let loss = evaluate_loss(pass.output(), &target)?;
        let dscores = loss_grad(pass.output(), &target)?;
        for layer_grads in net.backward_from(&pass, &dscores)? {
            for grad in layer_grads {
                values.extend_from_slice(grad.data());
            }
        }
        values.push(loss);
        for out in pass.outputs() {
            values.extend_from_slice(out.data());
        }
    }
    for class in 0..m {
        values.push(f64::from(class == label));
    }
    Ok(values)
}

/// Baseline inputs for a whole auxiliary split, one wide row per
/// sample, ordered by ascending sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineInputs {
    sample_ids: Vec<usize>,
    members: Vec<bool>,
    rows: Vec<Vec<f64>>,
}

impl BaselineInputs {
    /// Assemble from parts, enforcing the invariants `build_baseline_inputs`
    /// guarantees: ascending ids, one membership flag per row, equal
    /// non-zero widths, finite values.
    pub fn from_parts(
        sample_ids: Vec<usize>,
        members: Vec<bool>,
        rows: Vec<Vec<f64>>,
    ) -> Result<BaselineInputs> {
        if rows.is_empty() {
            return Err(Error::Validation("baseline inputs need at least one row".into()));
        }
        if sample_ids.len() != rows.len() || members.len() != rows.len() {
            return Err(Error::Validation(format!(
                "{} ids and {} membership flags for {} rows",
                sample_ids.len(),
                members.len(),
                rows.len()
            )));
        }
        if !sample_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("sample ids must be strictly ascending".into()));
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(Error::Validation("baseline rows must not be empty".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Validation(format!(
                    "row {i} has {} values, the first row has {width}",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("row {i} holds non-finite value {bad}")));
            }
        }
        Ok(BaselineInputs { sample_ids, members, rows })
    }

    pub fn sample_ids(&self) -> &[usize] {
        &self.sample_ids
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Build baseline inputs for every auxiliary sample. The baseline is a
/// white-box attack and needs labels; a label-free split is refused.
pub fn build_baseline_inputs(
    trace: &CheckpointTrace,
    auxiliary: &AuxiliaryDataset,
) -> Result<BaselineInputs> {
    if auxiliary.is_empty() {
        return Err(Error::Validation("auxiliary set is empty".into()));
    }
    let mut order: Vec<usize> = (0..auxiliary.len()).collect();
    order.sort_by_key(|&i| auxiliary.samples()[i].pool_index);

    let mut sample_ids = Vec::with_capacity(order.len());
    let mut members = Vec::with_capacity(order.len());
    let mut rows = Vec::with_capacity(order.len());
    for &i in &order {
        let sample = &auxiliary.samples()[i];
        let label = sample.label.ok_or_else(|| {
            Error::Capability(
                "baseline inputs need class labels, but the auxiliary set is label-free"
                    .into(),
            )
        })?;
        sample_ids.push(sample.pool_index);
        members.push(sample.is_member);
        rows.push(build_baseline_input(trace, &sample.input, label)?);
    }
    Ok(BaselineInputs { sample_ids, members, rows })
}

/// Write the inputs in the same CSV schema as trajectory feature
/// files, just with far wider rows.
pub fn save_baseline_csv(inputs: &BaselineInputs, path: &Path) -> Result<()> {
    crate::features::write_rows_csv(
        path,
        inputs.width(),
        &inputs.sample_ids,
        &inputs.members,
        &inputs.rows,
    )
}

/// Read inputs saved by [`save_baseline_csv`]; the row width comes
/// from the file header.
pub fn load_baseline_csv(path: &Path) -> Result<BaselineInputs> {
    let csv = crate::features::read_rows_csv(path)?;
    BaselineInputs::from_parts(csv.sample_ids, csv.members, csv.rows)
}

/// Architecture of the baseline membership regressor: two convolution
/// blocks over the flat input read as a 1-channel series, global
/// average pooling, and a single-output dense head trained with
/// squared error against membership in {0, 1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineAttackSpec {
    /// (out_channels, kernel) per block, applied in order.
    pub conv_blocks: [(usize, usize); 2],
}

impl Default for BaselineAttackSpec {
    fn default() -> Self {
        BaselineAttackSpec { conv_blocks: [(4, 3), (4, 3)] }
    }
}

impl BaselineAttackSpec {
    pub fn network_spec(&self, input_len: usize) -> Result<NetworkSpec> {
        let mut layers = Vec::with_capacity(3 * self.conv_blocks.len() + 2);
        let mut channels = 1;
        for &(out_channels, kernel) in &self.conv_blocks {
            layers.push(LayerSpec::Conv1d { in_channels: channels, out_channels, kernel });
            layers.push(LayerSpec::batch_norm(out_channels));
            layers.push(LayerSpec::Relu);
            channels = out_channels;
        }
        layers.push(LayerSpec::GlobalAvgPool1d);
        layers.push(LayerSpec::Dense { inputs: channels, outputs: 1 });
        NetworkSpec::new(ValueShape::Series { channels: 1, len: input_len }, layers, 1)
    }
}

/// A trained baseline regressor plus its per-epoch training loss.
#[derive(Debug)]
pub struct TrainedBaseline {
    pub model: Network,
    pub epoch_losses: Vec<f64>,
}

/// Train the baseline regressor on wide rows with mini-batch squared
/// error. Deterministic given the hyperparameter seed; the returned
/// model is frozen in eval mode.
pub fn train_baseline_attack(
    inputs: &BaselineInputs,
    spec: &BaselineAttackSpec,
    hp: &AttackHyperparams,
) -> Result<TrainedBaseline> {
    hp.validate()?;
    if inputs.is_empty() {
        return Err(Error::Validation("no training rows".into()));
    }
    check_both_classes(inputs.members())?;

    let mut net = Network::initialize(
        spec.network_spec(inputs.width())?,
        derive_seed(hp.seed, "baseline-init", &[]),
    );
    let mut optimizer = Optimizer::new(hp.optimizer, hp.learning_rate, &net)?;
    let input_shape = net.spec().input;

    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..hp.epochs {
        let shuffle_seed = derive_seed(hp.seed, "baseline-shuffle", &[epoch as u64]);
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(shuffle_seed));
        let mut loss_sum = 0.0;
        for chunk in mini_batches(&order, hp.batch_size) {
            let mut flat = Vec::with_capacity(chunk.len() * inputs.width());
            for &i in chunk {
                flat.extend_from_slice(&inputs.rows()[i]);
            }
            let batch = Tensor::new(input_shape.batch_shape(chunk.len()), flat)?;
            let targets: Vec<f64> =
                chunk.iter().map(|&i| f64::from(inputs.members()[i])).collect();
            let target = LossTarget::Values(Tensor::new(vec![chunk.len(), 1], targets)?);
            let loss = optimizer.fit_batch(&mut net, &batch, &target)?;
            loss_sum += loss * chunk.len() as f64;
        }
        epoch_losses.push(loss_sum / inputs.len() as f64);
    }
    net.set_mode(Mode::Eval);
    Ok(TrainedBaseline { model: net, epoch_losses })
}

/// Scorer view over the baseline regressor: raw outputs clamped into
/// [0, 1] so the shared threshold rule applies.
pub struct RegressionScorer<'a> {
    model: &'a Network,
}

impl<'a> RegressionScorer<'a> {
    pub fn new(model: &'a Network) -> Result<Self> {
        if model.spec().class_count != 1 {
            return Err(Error::Config(format!(
                "baseline model must emit 1 value, this one emits {}",
                model.spec().class_count
            )));
        }
        Ok(RegressionScorer { model })
    }
}

impl MembershipScorer for RegressionScorer<'_> {
    fn member_scores(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let input = self.model.spec().input;
        let width = input.per_sample_size();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::shape(
                    format!("baseline row {i}"),
                    format!("{width} values"),
                    format!("{} values", row.len()),
                ));
            }
        }
        let mut scores = Vec::with_capacity(rows.len());
        let pick: Vec<usize> = (0..rows.len()).collect();
        for chunk in pick.chunks(EVAL_BATCH) {
            let mut flat = Vec::with_capacity(chunk.len() * width);
            for &i in chunk {
                flat.extend_from_slice(&rows[i]);
            }
            let batch = Tensor::new(input.batch_shape(chunk.len()), flat)?;
            let out = self.model.infer(&batch)?;
            scores.extend((0..chunk.len()).map(|k| out.row(k)[0].clamp(0.0, 1.0)));
        }
        Ok(scores)
    }
}
