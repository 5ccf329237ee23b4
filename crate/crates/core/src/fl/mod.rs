//! FedAvg over partitioned clients, with a passive observer recording
//! the target client's uploaded model at chosen rounds.
//!
//! One communication round runs every client's local update from the
//! same broadcast model, snapshots the target's post-update model if
//! the round is observed, then aggregates in ascending client order.
//! The whole simulation is a deterministic function of (config,
//! datasets, seed).

pub mod trace;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{LabeledDataset, Partition};
use crate::engine::loss::argmax_rows;
use crate::engine::{mini_batches, LossTarget, Network, NetworkSpec, Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
pub use trace::{load_trace, save_trace, CheckpointTrace};

/// Weight sums may deviate from 1 by at most this much.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Learning rate as a step function of the 1-based epoch: each
/// breakpoint `(from_epoch, rate)` applies from that epoch onward.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    breakpoints: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Result<Self> {
        LrSchedule::new(vec![(1, rate)])
    }

    pub fn new(breakpoints: Vec<(usize, f64)>) -> Result<Self> {
        if breakpoints.first().map(|b| b.0) != Some(1) {
            return Err(Error::Config("schedule must start at epoch 1".into()));
        }
        if !breakpoints.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(Error::Config("schedule epochs must strictly ascend".into()));
        }
        for &(epoch, rate) in &breakpoints {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::Config(format!(
                    "schedule rate at epoch {epoch} must be a non-negative real, got {rate}"
                )));
            }
        }
        Ok(LrSchedule { breakpoints })
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.breakpoints
            .iter()
            .take_while(|(from, _)| *from <= epoch)
            .last()
            .expect("validated: first breakpoint is epoch 1")
            .1
    }

    pub fn breakpoints(&self) -> &[(usize, f64)] {
        &self.breakpoints
    }
}

/// Everything that defines one federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FlConfig {
    pub n_clients: usize,
    /// Aggregation weights p_c, positive, summing to 1.
    pub weights: Vec<f64>,
    /// Communication rounds T_max; one round is one epoch.
    pub rounds: usize,
    /// Local passes over the client's data per round.
    pub local_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr_schedule: LrSchedule,
    /// Rounds whose uploaded target model the observer records;
    /// strictly ascending, within [1, rounds].
    pub observed_epochs: Vec<usize>,
    pub target_client: usize,
    pub seed: u64,
}

impl FlConfig {
    /// Equal weights 1/n for every client.
    pub fn uniform_weights(n_clients: usize) -> Vec<f64> {
        vec![1.0 / n_clients as f64; n_clients]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0
        {
            return Err(Error::Config(
                "clients, rounds, local_epochs and batch_size must be positive".into(),
            ));
        }
        check_weights(&self.weights, self.n_clients)?;
        if self.target_client >= self.n_clients {
            return Err(Error::Config(format!(
                "target client {} outside 0..{}",
                self.target_client, self.n_clients
            )));
        }
        if !self.observed_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("observed epochs must strictly ascend".into()));
        }
        if let (Some(&first), Some(&last)) =
            (self.observed_epochs.first(), self.observed_epochs.last())
        {
            if first < 1 || last > self.rounds {
                return Err(Error::Config(format!(
                    "observed epochs {:?} outside 1..={}",
                    self.observed_epochs, self.rounds
                )));
            }
        }
        Ok(())
    }
}

fn check_weights(weights: &[f64], expected: usize) -> Result<()> {
    if weights.len() != expected {
        return Err(Error::Config(format!(
            "{} weights for {expected} models",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Config("aggregation weights must be positive".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::Config(format!("aggregation weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// One client's local training for one round: copy the broadcast
/// model, then run `local_epochs` seeded-shuffle passes of mini-batch
/// updates. The optimizer starts fresh each round; its state is not
/// part of what clients exchange.
pub fn local_update(
    pool: &LabeledDataset,
    indices: &[usize],
    global: &Network,
    config: &FlConfig,
    round: usize,
    client_id: usize,
) -> Result<Network> {
    if indices.is_empty() {
        return Err(Error::Validation(format!("client {client_id} has no data")));
    }
    let mut net = global.clone();
    let mut optimizer =
        Optimizer::new(config.optimizer, config.lr_schedule.rate_at(round), &net)?;
    for local_epoch in 0..config.local_epochs {
        let shuffle_seed = derive_seed(
            config.seed,
            "shuffle",
            &[round as u64, client_id as u64, local_epoch as u64],
        );
        let mut order = indices.to_vec();
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(shuffle_seed));
        for chunk in mini_batches(&order, config.batch_size) {
            let (batch, labels) = pool.gather(chunk)?;
            optimizer.fit_batch(&mut net, &batch, &LossTarget::Classes(labels))?;
        }
    }
    Ok(net)
}

/// Stored-value weighted average. Models are combined in the order
/// given (ascending client id by convention); the accumulator starts
/// from the first model's contribution so a single client with weight
/// one reproduces its model bitwise.
pub fn aggregate(models: &[Network], weights: &[f64]) -> Result<Network> {
    let first = models.first().ok_or_else(|| Error::Config("no models to aggregate".into()))?;
    check_weights(weights, models.len())?;
    for m in &models[1..] {
        if m.spec() != first.spec() {
            return Err(Error::Config("models disagree on network spec".into()));
        }
    }
    let mut acc = first.export_stored();
    for arr in &mut acc {
        for v in arr.iter_mut() {
            *v *= weights[0];
        }
    }
    for (model, &w) in models.iter().zip(weights).skip(1) {
        for (dst, src) in acc.iter_mut().zip(model.export_stored()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    let mut out = first.clone();
    out.import_stored(&acc)?;
    Ok(out)
}

/// Accuracy of eval-mode predictions over the given samples.
pub fn classification_accuracy(
    net: &Network,
    pool: &LabeledDataset,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Validation("accuracy over an empty sample set".into()));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(256) {
        let (batch, labels) = pool.gather(chunk)?;
        let scores = net.infer(&batch)?;
        correct += argmax_rows(&scores)
            .iter()
            .zip(&labels)
            .filter(|(pred, label)| pred == label)
            .count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Target-client model quality after one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundAccuracy {
    pub round: usize,
    /// Accuracy on the target client's own training samples.
    pub train_accuracy: f64,
    /// Accuracy on the held-out set, when one was provided.
    pub test_accuracy: Option<f64>,
}

pub struct FlRun {
    pub global: Network,
    pub trace: CheckpointTrace,
    pub accuracy_log: Vec<RoundAccuracy>,
}

/// Run FedAvg for `config.rounds` rounds. The observer records the
/// target client's post-update (pre-aggregation) model at each observed
/// epoch; the accuracy log follows that same uploaded model.
pub fn run_fedavg(
    config: &FlConfig,
    pool: &LabeledDataset,
    partitions: &[Partition],
    model_spec: &NetworkSpec,
    heldout: Option<&LabeledDataset>,
) -> Result<FlRun> {
    config.validate()?;
    if partitions.len() != config.n_clients {
        return Err(Error::Config(format!(
            "{} partitions for {} clients",
            partitions.len(),
            config.n_clients
        )));
    }
    let target = &partitions[config.target_client];
    let heldout_indices: Option<Vec<usize>> = heldout.map(|d| (0..d.len()).collect());

    let mut global =
        Network::initialize(model_spec.clone(), derive_seed(config.seed, "fl", &[]));
    let mut trace = CheckpointTrace::new(config.target_client, model_spec.clone());
    let mut accuracy_log = Vec::with_capacity(config.rounds);

    for round in 1..=config.rounds {
        let mut updated = Vec::with_capacity(config.n_clients);
        for partition in partitions {
            updated.push(local_update(
                pool,
                &partition.indices,
                &global,
                config,
                round,
                partition.client_id,
            )?);
        }
        let uploaded = &updated[config.target_client];
        if config.observed_epochs.contains(&round) {
            trace.record(round, uploaded.clone())?;
        }
        let train_accuracy = classification_accuracy(uploaded, pool, &target.indices)?;
        let test_accuracy = match (&heldout, &heldout_indices) {
            (Some(dataset), Some(indices)) => {
                Some(classification_accuracy(uploaded, dataset, indices)?)
            }
            _ => None,
        };
        accuracy_log.push(RoundAccuracy { round, train_accuracy, test_accuracy });
        global = aggregate(&updated, &config.weights)?;
    }
    Ok(FlRun { global, trace, accuracy_log })
}
