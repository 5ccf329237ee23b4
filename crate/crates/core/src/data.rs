//! Datasets, client partitions, and the observer's auxiliary samples.
//!
//! Everything here is a pure, seeded function: loading preserves file
//! order, generation and partitioning are deterministic per seed, and
//! membership bookkeeping is by sample index into the source pool.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// A classification dataset with constant feature dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    feature_dim: usize,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Validation("class_count must be positive".into()));
        }
        let feature_dim = inputs.first().map(Vec::len).unwrap_or(0);
        if inputs.is_empty() || feature_dim == 0 {
            return Err(Error::Validation("dataset must be non-empty".into()));
        }
        for (i, row) in inputs.iter().enumerate() {
            if row.len() != feature_dim {
                return Err(Error::Validation(format!(
                    "sample {i} has {} features, expected {feature_dim}",
                    row.len()
                )));
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(Error::Validation(format!(
                    "sample {i} has label {label} outside 0..{class_count}"
                )));
            }
        }
        Ok(LabeledDataset { name: name.into(), inputs, labels, feature_dim, class_count })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Batch the given samples as a `[n, feature_dim]` tensor plus their
    /// labels, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let row = self.inputs.get(i).ok_or_else(|| {
                Error::Validation(format!("index {i} outside dataset of size {}", self.len()))
            })?;
            data.extend_from_slice(row);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![indices.len(), self.feature_dim], data)?, labels))
    }
}

/// Load a tabular CSV where each row is an integer class label followed
/// by `feature_dim` binary features.
pub fn load_purchase_style(
    path: impl AsRef<Path>,
    feature_dim: usize,
    class_count: usize,
) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().expect("split yields at least one field");
        let label: usize = label_field.trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("label {label_field:?} is not a non-negative integer"),
        })?;
        if label >= class_count {
            return Err(Error::Validation(format!(
                "line {lineno}: label {label} outside 0..{class_count}"
            )));
        }
        let mut row = Vec::with_capacity(feature_dim);
        for field in fields {
            match field.trim() {
                "0" => row.push(0.0),
                "1" => row.push(1.0),
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("feature {other:?} is not 0 or 1"),
                    })
                }
            }
        }
        if row.len() != feature_dim {
            return Err(Error::Parse {
                line: lineno,
                message: format!("{} features, expected {feature_dim}", row.len()),
            });
        }
        inputs.push(row);
        labels.push(label);
    }
    LabeledDataset::new(name, inputs, labels, class_count)
}

/// Gaussian class clusters: one seeded center per class, points drawn
/// around it with isotropic spread.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dim == 0 || self.per_class == 0 {
            return Err(Error::Validation(
                "synthetic spec needs positive classes, dim and per_class".into(),
            ));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread >= 0.0) {
            return Err(Error::Validation(format!(
                "cluster_spread must be a non-negative real, got {}",
                self.cluster_spread
            )));
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    Ok(generate_synthetic_pair(spec, 0)?.0)
}

/// Generate a training pool plus a same-distribution held-out set that
/// shares the class centers. `test_per_class` of 0 yields an empty
/// second dataset slot (an `Err`-free `None` is avoided by returning
/// the pair only when requested).
pub fn generate_synthetic_pair(
    spec: &SyntheticSpec,
    test_per_class: usize,
) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    spec.validate()?;
    let normal = StandardNormal;
    let mut train_inputs = Vec::with_capacity(spec.classes * spec.per_class);
    let mut train_labels = Vec::with_capacity(spec.classes * spec.per_class);
    let mut test_inputs = Vec::with_capacity(spec.classes * test_per_class);
    let mut test_labels = Vec::with_capacity(spec.classes * test_per_class);
    for class in 0..spec.classes {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(spec.seed, "data", &[class as u64]));
        let center: Vec<f64> = (0..spec.dim).map(|_| normal.sample(&mut rng)).collect();
        let mut draw = |inputs: &mut Vec<Vec<f64>>, labels: &mut Vec<usize>, count: usize| {
            for _ in 0..count {
                let point = center
                    .iter()
                    .map(|c| {
                        let offset: f64 = normal.sample(&mut rng);
                        c + spec.cluster_spread * offset
                    })
                    .collect();
                inputs.push(point);
                labels.push(class);
            }
        };
        draw(&mut train_inputs, &mut train_labels, spec.per_class);
        draw(&mut test_inputs, &mut test_labels, test_per_class);
    }
    let train = LabeledDataset::new("synthetic", train_inputs, train_labels, spec.classes)?;
    let test = if test_per_class == 0 {
        None
    } else {
        Some(LabeledDataset::new("synthetic-heldout", test_inputs, test_labels, spec.classes)?)
    };
    Ok((train, test))
}

/// One client's share of the training pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub client_id: usize,
    /// Ascending indices into the parent dataset.
    pub indices: Vec<usize>,
}

/// Deal the pool uniformly at random into `n_clients` disjoint,
/// jointly exhaustive partitions whose sizes differ by at most one.
/// Each partition's index list is kept sorted; with one client this is
/// the identity partition.
pub fn partition_uniform(
    dataset: &LabeledDataset,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<Partition>> {
    if n_clients == 0 {
        return Err(Error::Validation("need at least one client".into()));
    }
    if n_clients > dataset.len() {
        return Err(Error::Capacity(format!(
            "{n_clients} clients but only {} samples",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "partition", &[]));
    order.shuffle(&mut rng);

    let base = dataset.len() / n_clients;
    let extra = dataset.len() % n_clients;
    let mut partitions = Vec::with_capacity(n_clients);
    let mut cursor = 0;
    for client_id in 0..n_clients {
        let count = base + usize::from(client_id < extra);
        let mut indices: Vec<usize> = order[cursor..cursor + count].to_vec();
        indices.sort_unstable();
        partitions.push(Partition { client_id, indices });
        cursor += count;
    }
    Ok(partitions)
}

/// How many member/non-member samples each attack split receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxCounts {
    pub member_train: usize,
    pub nonmember_train: usize,
    pub member_test: usize,
    pub nonmember_test: usize,
}

/// Which attack split an auxiliary dataset feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxSplit {
    AttackTrain,
    AttackTest,
}

/// One observer-side sample: the input, its class label when the
/// observer knows it, and ground-truth membership in the target
/// client's data.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliarySample {
    /// Index into the source pool; stable across runs and files.
    pub pool_index: usize,
    pub input: Vec<f64>,
    pub label: Option<usize>,
    pub is_member: bool,
}

/// The samples the observer uses for one attack split.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryDataset {
    split: AuxSplit,
    samples: Vec<AuxiliarySample>,
    feature_dim: usize,
    class_count: usize,
}

impl AuxiliaryDataset {
    pub fn split(&self) -> AuxSplit {
        self.split
    }

    pub fn samples(&self) -> &[AuxiliarySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn member_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_member).count()
    }

    /// The same samples with class labels withheld, modeling an
    /// observer who sees inputs but not labels.
    pub fn without_labels(&self) -> AuxiliaryDataset {
        let samples = self
            .samples
            .iter()
            .map(|s| AuxiliarySample { label: None, ..s.clone() })
            .collect();
        AuxiliaryDataset { samples, ..self.clone() }
    }
}

/// Both attack splits drawn from one pool.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryPair {
    pub train: AuxiliaryDataset,
    pub test: AuxiliaryDataset,
}

/// Sample members from the target partition and non-members from the
/// rest of the pool, without replacement and disjoint across splits.
/// Within a split, members precede non-members.
pub fn build_auxiliary(
    target: &Partition,
    pool: &LabeledDataset,
    counts: AuxCounts,
    seed: u64,
) -> Result<AuxiliaryPair> {
    if counts.member_train == 0
        || counts.nonmember_train == 0
        || counts.member_test == 0
        || counts.nonmember_test == 0
    {
        return Err(Error::Validation(
            "every auxiliary split needs at least one member and one non-member".into(),
        ));
    }
    let member_need = counts.member_train + counts.member_test;
    if target.indices.len() < member_need {
        return Err(Error::Capacity(format!(
            "members: need {member_need}, target partition has {}",
            target.indices.len()
        )));
    }
    let in_target: std::collections::HashSet<usize> = target.indices.iter().copied().collect();
    let mut outside: Vec<usize> = (0..pool.len()).filter(|i| !in_target.contains(i)).collect();
    let nonmember_need = counts.nonmember_train + counts.nonmember_test;
    if outside.len() < nonmember_need {
        return Err(Error::Capacity(format!(
            "non-members: need {nonmember_need}, pool outside the target partition has {}",
            outside.len()
        )));
    }

    let mut members = target.indices.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "auxiliary", &[]));
    members.shuffle(&mut rng);
    outside.shuffle(&mut rng);

    let sample = |index: usize, is_member: bool| AuxiliarySample {
        pool_index: index,
        input: pool.input(index).to_vec(),
        label: Some(pool.label(index)),
        is_member,
    };
    let take = |list: &[usize], from: usize, count: usize, is_member: bool| {
        list[from..from + count].iter().map(|&i| sample(i, is_member)).collect::<Vec<_>>()
    };

    let mut train_samples = take(&members, 0, counts.member_train, true);
    train_samples.extend(take(&outside, 0, counts.nonmember_train, false));
    let mut test_samples = take(&members, counts.member_train, counts.member_test, true);
    test_samples.extend(take(&outside, counts.nonmember_train, counts.nonmember_test, false));

    let make = |split, samples| AuxiliaryDataset {
        split,
        samples,
        feature_dim: pool.feature_dim(),
        class_count: pool.class_count(),
    };
    Ok(AuxiliaryPair {
        train: make(AuxSplit::AttackTrain, train_samples),
        test: make(AuxSplit::AttackTest, test_samples),
    })
}
