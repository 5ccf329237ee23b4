//! Per-sample attack inputs derived from an eavesdropped trace: for
//! each auxiliary sample, a short time series of scalars summarizing
//! how the target's score vector for that sample evolved over the
//! observed epochs.
//!
//! Three summaries are offered. The true-label score needs the
//! sample's class label; score entropy and maximum score work for a
//! label-free observer.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::AuxiliaryDataset;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::fl::CheckpointTrace;

/// Inference batch size; results are independent of this chunking.
const BATCH: usize = 256;

/// Which scalar is taken from each epoch's score vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Score assigned to the sample's own class; needs labels.
    TrueLabel,
    /// Entropy of the score vector, in nats; label-free.
    Entropy,
    /// Largest score in the vector; label-free.
    MaxScore,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] =
        [FeatureKind::TrueLabel, FeatureKind::Entropy, FeatureKind::MaxScore];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::TrueLabel => "true_label",
            FeatureKind::Entropy => "entropy",
            FeatureKind::MaxScore => "max_score",
        }
    }

    pub fn requires_labels(&self) -> bool {
        matches!(self, FeatureKind::TrueLabel)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature kind {s:?}")))
    }
}

/// One row per auxiliary sample: that sample's feature value at each
/// observed epoch, ascending, with the membership ground truth kept
/// alongside. Rows are ordered by ascending sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    kind: FeatureKind,
    epochs: Vec<usize>,
    sample_ids: Vec<usize>,
    members: Vec<bool>,
    rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_parts(
        kind: FeatureKind,
        epochs: Vec<usize>,
        sample_ids: Vec<usize>,
        members: Vec<bool>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if epochs.is_empty() {
            return Err(Error::Validation("feature rows need at least one epoch".into()));
        }
        if !epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("epochs must strictly ascend".into()));
        }
        if sample_ids.len() != rows.len() || members.len() != rows.len() {
            return Err(Error::shape(
                "feature matrix",
                format!("{} ids and labels", rows.len()),
                format!("{} ids, {} labels", sample_ids.len(), members.len()),
            ));
        }
        if !sample_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("sample ids must strictly ascend".into()));
        }
        for (id, row) in sample_ids.iter().zip(&rows) {
            if row.len() != epochs.len() {
                return Err(Error::shape(
                    format!("feature row for sample {id}"),
                    format!("{} values", epochs.len()),
                    format!("{} values", row.len()),
                ));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite feature value for sample {id}"
                )));
            }
        }
        Ok(FeatureMatrix { kind, epochs, sample_ids, members, rows })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn epochs(&self) -> &[usize] {
        &self.epochs
    }

    /// Row length |T|: one value per observed epoch.
    pub fn width(&self) -> usize {
        self.epochs.len()
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

    pub fn member_count(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    /// Mean feature value at the last epoch, members and non-members
    /// separately: `(member_mean, non_member_mean)`.
    pub fn final_epoch_means(&self) -> Result<(f64, f64)> {
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for (row, member) in self.rows.iter().zip(&self.members) {
            let group = usize::from(*member);
            sums[group] += row.last().expect("validated: rows are non-empty");
            counts[group] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::Validation(
                "final-epoch means need both members and non-members".into(),
            ));
        }
        Ok((sums[1] / counts[1] as f64, sums[0] / counts[0] as f64))
    }
}

/// Entropy of a score vector in nats, with 0 ln 0 := 0. Clamped to the
/// analytic range [0, ln m] to absorb last-ulp rounding.
pub fn score_entropy(scores: &[f64]) -> f64 {
    let h: f64 = scores.iter().map(|&s| if s > 0.0 { -s * s.ln() } else { 0.0 }).sum();
    h.clamp(0.0, (scores.len() as f64).ln())
}

fn max_score(scores: &[f64]) -> f64 {
    scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_trace(trace: &CheckpointTrace) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::Validation("trace holds no snapshots".into()));
    }
    Ok(())
}

fn single_sample_batch(trace: &CheckpointTrace, input: &[f64]) -> Result<Tensor> {
    let shape = trace.spec().input.batch_shape(1);
    Tensor::new(shape, input.to_vec())
}

/// Score vectors for one sample across all snapshots, epoch-ascending.
fn score_rows(trace: &CheckpointTrace, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_trace(trace)?;
    let batch = single_sample_batch(trace, input)?;
    trace.iter().map(|(_, net)| Ok(net.infer(&batch)?.row(0).to_vec())).collect()
}

/// The score the target assigns to class `label`, per observed epoch.
pub fn true_label_trajectory(
    trace: &CheckpointTrace,
    input: &[f64],
    label: usize,
) -> Result<Vec<f64>> {
    let m = trace.spec().class_count;
    if label >= m {
        return Err(Error::Validation(format!("label {label} outside 0..{m}")));
    }
    Ok(score_rows(trace, input)?.iter().map(|scores| scores[label]).collect())
}

/// Entropy of the target's score vector, per observed epoch.
pub fn entropy_trajectory(trace: &CheckpointTrace, input: &[f64]) -> Result<Vec<f64>> {
    Ok(score_rows(trace, input)?.iter().map(|scores| score_entropy(scores)).collect())
}

/// Largest score in the target's score vector, per observed epoch.
pub fn max_score_trajectory(trace: &CheckpointTrace, input: &[f64]) -> Result<Vec<f64>> {
    Ok(score_rows(trace, input)?.iter().map(|scores| max_score(scores)).collect())
}

/// Extract one feature row per auxiliary sample. Rows are ordered by
/// ascending sample id regardless of the order samples arrive in;
/// inference is batched, which cannot change per-sample values because
/// evaluation treats rows independently.
pub fn extract_features(
    trace: &CheckpointTrace,
    auxiliary: &AuxiliaryDataset,
    kind: FeatureKind,
) -> Result<FeatureMatrix> {
    check_trace(trace)?;
    if auxiliary.is_empty() {
        return Err(Error::Validation("auxiliary set is empty".into()));
    }
    let spec = trace.spec();
    if auxiliary.feature_dim() != spec.input.per_sample_size() {
        return Err(Error::shape(
            "auxiliary samples",
            format!("{} features", spec.input.per_sample_size()),
            format!("{} features", auxiliary.feature_dim()),
        ));
    }
    if kind.requires_labels() && auxiliary.samples().iter().any(|s| s.label.is_none()) {
        return Err(Error::Capability(format!(
            "{kind} features need class labels, but the auxiliary set is label-free"
        )));
    }

    let mut order: Vec<usize> = (0..auxiliary.len()).collect();
    order.sort_by_key(|&i| auxiliary.samples()[i].pool_index);
    let samples = auxiliary.samples();

    let mut rows = vec![Vec::with_capacity(trace.len()); order.len()];
    for chunk in order.chunks(BATCH) {
        let mut flat = Vec::with_capacity(chunk.len() * auxiliary.feature_dim());
        for &i in chunk {
            flat.extend_from_slice(&samples[i].input);
        }
        let batch = Tensor::new(spec.input.batch_shape(chunk.len()), flat)?;
        for (_, net) in trace.iter() {
            let scores = net.infer(&batch)?;
            for (k, &i) in chunk.iter().enumerate() {
                let row = scores.row(k);
                let value = match kind {
                    FeatureKind::TrueLabel => {
                        let label = samples[i].label.expect("checked: labels present");
                        if label >= spec.class_count {
                            return Err(Error::Validation(format!(
                                "label {label} outside 0..{}",
                                spec.class_count
                            )));
                        }
                        row[label]
                    }
                    FeatureKind::Entropy => score_entropy(row),
                    FeatureKind::MaxScore => max_score(row),
                };
                rows[i].push(value);
            }
        }
    }

    // rows[i] is in chunk-pass order per epoch; epochs were visited
    // ascending within each chunk, so each row is already ascending.
    let mut sample_ids = Vec::with_capacity(order.len());
    let mut members = Vec::with_capacity(order.len());
    let mut ordered_rows = Vec::with_capacity(order.len());
    for &i in &order {
        sample_ids.push(samples[i].pool_index);
        members.push(samples[i].is_member);
        ordered_rows.push(std::mem::take(&mut rows[i]));
    }
    FeatureMatrix::from_parts(kind, trace.epochs(), sample_ids, members, ordered_rows)
}

/// Shared CSV body for score trajectories and white-box input rows:
/// header `sample_id,member,f_1,...,f_k`, one row per sample, values
/// printed in shortest round-trip decimal form (re-reading is
/// lossless).
pub(crate) fn write_rows_csv(
    path: &Path,
    width: usize,
    sample_ids: &[usize],
    members: &[bool],
    rows: &[Vec<f64>],
) -> Result<()> {
    let mut out = String::from("sample_id,member");
    for k in 1..=width {
        out.push_str(&format!(",f_{k}"));
    }
    out.push('\n');
    for ((id, member), row) in sample_ids.iter().zip(members).zip(rows) {
        out.push_str(&format!("{id},{}", u8::from(*member)));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Rows parsed back from the shared CSV schema; `width` comes from
/// the header and every row is checked against it.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRows {
    pub width: usize,
    pub sample_ids: Vec<usize>,
    pub members: Vec<bool>,
    pub rows: Vec<Vec<f64>>,
}

/// Read any file in the shared row schema without interpreting it:
/// useful for tooling that only needs ids, membership and raw values.
pub fn read_rows_csv(path: &Path) -> Result<CsvRows> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty row file".into() })?;
    let mut cols = header.split(',');
    if (cols.next(), cols.next()) != (Some("sample_id"), Some("member")) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header {header:?} does not start with sample_id,member"),
        });
    }
    let mut width = 0usize;
    for col in cols {
        width += 1;
        let expected = format!("f_{width}");
        if col != expected {
            return Err(Error::Parse {
                line: 1,
                message: format!("header column {col:?} where {expected:?} was expected"),
            });
        }
    }

    let mut sample_ids = Vec::new();
    let mut members = Vec::new();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let parse = |field: &str, what: &str| -> Error {
            Error::Parse { line: line_no, message: format!("bad {what} {field:?}") }
        };
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or("");
        let id = id.parse::<usize>().map_err(|_| parse(id, "sample id"))?;
        let member = match fields.next() {
            Some("0") => false,
            Some("1") => true,
            other => return Err(parse(other.unwrap_or(""), "membership flag")),
        };
        let mut row = Vec::with_capacity(width);
        for field in fields {
            row.push(field.parse::<f64>().map_err(|_| parse(field, "feature value"))?);
        }
        if row.len() != width {
            return Err(Error::Parse {
                line: line_no,
                message: format!("{} values where the header promises {width}", row.len()),
            });
        }
        sample_ids.push(id);
        members.push(member);
        rows.push(row);
    }
    Ok(CsvRows { width, sample_ids, members, rows })
}

/// Write the matrix as CSV: header `sample_id,member,f_1,...,f_k`,
/// one row per sample in ascending sample-id order.
pub fn save_features_csv(matrix: &FeatureMatrix, path: &Path) -> Result<()> {
    write_rows_csv(path, matrix.width(), &matrix.sample_ids, &matrix.members, &matrix.rows)
}

/// Read a matrix saved by [`save_features_csv`]. The file does not
/// carry the feature kind or the epoch list, so the caller supplies
/// them; the header's column count must match the epochs.
pub fn load_features_csv(
    path: &Path,
    kind: FeatureKind,
    epochs: Vec<usize>,
) -> Result<FeatureMatrix> {
    let csv = read_rows_csv(path)?;
    if csv.width != epochs.len() {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "{} feature columns for {} observed epochs",
                csv.width,
                epochs.len()
            ),
        });
    }
    FeatureMatrix::from_parts(kind, epochs, csv.sample_ids, csv.members, csv.rows)
}
