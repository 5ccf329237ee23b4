//! The pipeline stages behind the subcommands. Every stage reads its
//! inputs from the output directory and writes its products back
//! there, so stages can run in one process or as separate invocations
//! with identical results.

use std::path::{Path, PathBuf};

use fedmia_core::attack::{
    evaluate_accuracy, evaluate_on_features, load_model, save_model, train_attack,
    AttackHyperparams,
};
use fedmia_core::baseline::{
    build_baseline_inputs, input_size_for, load_baseline_csv, save_baseline_csv,
    train_baseline_attack, RegressionScorer,
};
use fedmia_core::cost::compare_costs;
use fedmia_core::data::{build_auxiliary, partition_uniform, AuxiliaryDataset};
use fedmia_core::features::{
    extract_features, load_features_csv, save_features_csv, FeatureKind, FeatureMatrix,
};
use fedmia_core::fl::{load_trace, run_fedavg, save_trace, CheckpointTrace, RoundAccuracy};
use fedmia_core::{Error, Result};

use crate::config::{AttackChoice, ConfigFile};
use crate::report::{
    save_report, unix_now, AttackOutcome, CostRow, CostSection, ExperimentReport, RoundRow,
    SlidingPoint, TrajectoryMeans, REPORT_SCHEMA_VERSION,
};

pub fn trace_path(out: &Path) -> PathBuf {
    out.join("trace.fltr")
}

pub fn accuracy_path(out: &Path) -> PathBuf {
    out.join("accuracy.csv")
}

pub fn features_path(out: &Path, kind: &str, split: &str) -> PathBuf {
    out.join(format!("features_{kind}_{split}.csv"))
}

pub fn model_path(out: &Path, kind: &str) -> PathBuf {
    out.join(format!("attack_{kind}.fltr"))
}

pub fn losses_path(out: &Path, kind: &str) -> PathBuf {
    out.join(format!("attack_{kind}_losses.csv"))
}

pub fn report_path(out: &Path) -> PathBuf {
    out.join("report.json")
}

pub fn sweep_path(out: &Path) -> PathBuf {
    out.join("sweep_observed_epochs.csv")
}

fn require_file(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Validation(format!(
            "{} is missing; run `{produced_by}` first",
            path.display()
        )));
    }
    Ok(())
}

fn save_accuracy_csv(log: &[RoundAccuracy], path: &Path) -> Result<()> {
    let mut out = String::from("round,train_accuracy,test_accuracy\n");
    for row in log {
        let test = row.test_accuracy.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{test}\n", row.round, row.train_accuracy));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn load_accuracy_csv(path: &Path) -> Result<Vec<RoundRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "round,train_accuracy,test_accuracy")) => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected accuracy log header {:?}", other.map(|x| x.1)),
            });
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let bad = |what: &str| Error::Parse {
            line: line_no,
            message: format!("bad {what} in accuracy log"),
        };
        let mut fields = line.split(',');
        let round =
            fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad("round"))?;
        let train_accuracy =
            fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad("train accuracy"))?;
        let test_accuracy = match fields.next() {
            None | Some("") => None,
            Some(field) => Some(field.parse().map_err(|_| bad("test accuracy"))?),
        };
        rows.push(RoundRow { round, train_accuracy, test_accuracy });
    }
    Ok(rows)
}

fn save_losses_csv(losses: &[f64], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (i, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{},{loss}\n", i + 1));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn load_losses_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut losses = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let value = line.split(',').nth(1).and_then(|f| f.parse().ok()).ok_or(Error::Parse {
            line: idx + 1,
            message: "bad loss value".into(),
        })?;
        losses.push(value);
    }
    Ok(losses)
}

/// Rebuild the observer's auxiliary splits exactly as the training
/// stage saw the pool: same dataset seed, same partitioning.
fn observer_view(config: &ConfigFile) -> Result<(AuxiliaryDataset, AuxiliaryDataset)> {
    let (pool, _) = config.load_dataset()?;
    let partitions = partition_uniform(&pool, config.fl.clients, config.seed)?;
    let aux = build_auxiliary(
        &partitions[config.fl.target_client],
        &pool,
        config.aux_counts(),
        config.seed,
    )?;
    if config.auxiliary.label_free {
        Ok((aux.train.without_labels(), aux.test.without_labels()))
    } else {
        Ok((aux.train, aux.test))
    }
}

fn load_trace_checked(config: &ConfigFile, out: &Path) -> Result<CheckpointTrace> {
    let path = trace_path(out);
    require_file(&path, "fl-train")?;
    let trace = load_trace(&path)?;
    if trace.epochs() != config.fl.observed_epochs {
        return Err(Error::Validation(format!(
            "{} was recorded at epochs {:?} but the config observes {:?}; rerun fl-train",
            path.display(),
            trace.epochs(),
            config.fl.observed_epochs
        )));
    }
    Ok(trace)
}

/// Run the federated simulation and persist the observer's trace plus
/// the per-round accuracy log.
pub fn fl_train(config: &ConfigFile, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let (pool, heldout) = config.load_dataset()?;
    let partitions = partition_uniform(&pool, config.fl.clients, config.seed)?;
    let model_spec = config.model_spec()?;
    let fl_config = config.fl_config()?;
    let run = run_fedavg(&fl_config, &pool, &partitions, &model_spec, heldout.as_ref())?;

    let step = (fl_config.rounds / 10).max(1);
    for row in &run.accuracy_log {
        if row.round % step == 0 || row.round == fl_config.rounds {
            match row.test_accuracy {
                Some(test) => println!(
                    "round {:>4}  train {:.4}  test {:.4}",
                    row.round, row.train_accuracy, test
                ),
                None => println!("round {:>4}  train {:.4}", row.round, row.train_accuracy),
            }
        }
    }
    save_trace(&run.trace, trace_path(out))?;
    save_accuracy_csv(&run.accuracy_log, &accuracy_path(out))?;
    println!(
        "wrote {} ({} snapshots) and {}",
        trace_path(out).display(),
        run.trace.len(),
        accuracy_path(out).display()
    );
    Ok(())
}

/// Turn the stored trace into per-attack input files for both splits.
pub fn extract_features_stage(config: &ConfigFile, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let trace = load_trace_checked(config, out)?;
    let (train_aux, test_aux) = observer_view(config)?;
    for choice in config.attack_choices()? {
        let name = choice.name();
        match choice {
            AttackChoice::Feature(kind) => {
                let train = extract_features(&trace, &train_aux, kind)?;
                let test = extract_features(&trace, &test_aux, kind)?;
                save_features_csv(&train, &features_path(out, name, "train"))?;
                save_features_csv(&test, &features_path(out, name, "test"))?;
                println!(
                    "{name}: {} train rows, {} test rows, {} observations each",
                    train.len(),
                    test.len(),
                    train.width()
                );
            }
            AttackChoice::Baseline => {
                let train = build_baseline_inputs(&trace, &train_aux)?;
                let test = build_baseline_inputs(&trace, &test_aux)?;
                save_baseline_csv(&train, &features_path(out, name, "train"))?;
                save_baseline_csv(&test, &features_path(out, name, "test"))?;
                println!(
                    "{name}: {} train rows, {} test rows, width {}",
                    train.len(),
                    test.len(),
                    train.width()
                );
            }
        }
    }
    Ok(())
}

/// Train one membership classifier per configured attack kind.
pub fn attack_train_stage(config: &ConfigFile, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for choice in config.attack_choices()? {
        let name = choice.name();
        let train_path = features_path(out, name, "train");
        require_file(&train_path, "extract-features")?;
        let losses = match choice {
            AttackChoice::Feature(kind) => {
                let features =
                    load_features_csv(&train_path, kind, config.fl.observed_epochs.clone())?;
                let trained = train_attack(
                    &features,
                    &config.attack_fcn_spec()?,
                    &config.attack_hyperparams()?,
                )?;
                save_model(&model_path(out, name), &trained.model)?;
                trained.epoch_losses
            }
            AttackChoice::Baseline => {
                let inputs = load_baseline_csv(&train_path)?;
                let trained = train_baseline_attack(
                    &inputs,
                    &config.baseline_attack_spec()?,
                    &config.baseline_hyperparams()?,
                )?;
                save_model(&model_path(out, name), &trained.model)?;
                trained.epoch_losses
            }
        };
        save_losses_csv(&losses, &losses_path(out, name))?;
        println!(
            "{name}: {} epochs, loss {:.4} -> {:.4}, wrote {}",
            losses.len(),
            losses.first().unwrap_or(&f64::NAN),
            losses.last().unwrap_or(&f64::NAN),
            model_path(out, name).display()
        );
    }
    Ok(())
}

fn means_of(kind: FeatureKind, matrix: &FeatureMatrix) -> TrajectoryMeans {
    let width = matrix.width();
    let mut member_mean = vec![0.0; width];
    let mut non_member_mean = vec![0.0; width];
    let mut members = 0usize;
    let mut non_members = 0usize;
    for (row, is_member) in matrix.rows().iter().zip(matrix.members()) {
        let (sink, count) = if *is_member {
            (&mut member_mean, &mut members)
        } else {
            (&mut non_member_mean, &mut non_members)
        };
        *count += 1;
        for (acc, v) in sink.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut member_mean {
        *v /= members.max(1) as f64;
    }
    for v in &mut non_member_mean {
        *v /= non_members.max(1) as f64;
    }
    TrajectoryMeans {
        kind: kind.name().into(),
        epochs: matrix.epochs().to_vec(),
        member_mean,
        non_member_mean,
    }
}

fn cost_section(config: &ConfigFile) -> Result<CostSection> {
    let n_targets = config.fl.observed_epochs.len();
    let trajectory_spec = config.attack_fcn_spec()?.network_spec(n_targets)?;
    let wide = input_size_for(&config.model_spec()?, n_targets)?;
    let baseline_spec = config.baseline_attack_spec()?.network_spec(wide)?;
    let comparison = compare_costs(&trajectory_spec, &baseline_spec)?;
    let row = |r: &fedmia_core::cost::CostReport| CostRow {
        param_count: r.param_count,
        memory_bytes: r.memory_bytes,
        macs: r.macs,
    };
    Ok(CostSection {
        trajectory_input_len: n_targets,
        baseline_input_len: wide,
        input_len_ratio: wide as f64 / n_targets as f64,
        trajectory: row(&comparison.first),
        baseline: row(&comparison.second),
        memory_ratio: comparison.memory_ratio,
        mac_ratio: comparison.mac_ratio,
    })
}

fn sliding_section(config: &ConfigFile, out: &Path) -> Result<Option<Vec<SlidingPoint>>> {
    let Some(section) = &config.sliding_window else {
        return Ok(None);
    };
    let kind = config.sliding_kind().expect("validated with the config");
    let trace = load_trace_checked(config, out)?;
    let (train_aux, test_aux) = observer_view(config)?;
    let epochs = trace.epochs();

    // Window ends stride across the observed epochs; the final epoch
    // is always included so the curve reaches the end of the run.
    let mut ends: Vec<usize> = (section.window - 1..epochs.len())
        .step_by(section.stride)
        .collect();
    if ends.last() != Some(&(epochs.len() - 1)) {
        ends.push(epochs.len() - 1);
    }

    let spec = config.attack_fcn_spec()?;
    let hp = AttackHyperparams { epochs: section.attack_epochs, ..config.attack_hyperparams()? };
    let mut points = Vec::with_capacity(ends.len());
    for end in ends {
        let window = &epochs[end + 1 - section.window..=end];
        let restricted = trace.restrict(window)?;
        let train = extract_features(&restricted, &train_aux, kind)?;
        let test = extract_features(&restricted, &test_aux, kind)?;
        let trained = train_attack(&train, &spec, &hp)?;
        let accuracy = evaluate_on_features(&trained.model, &test)?.accuracy();
        println!("window ending at epoch {:>4}: attack accuracy {accuracy:.4}", epochs[end]);
        points.push(SlidingPoint { end_epoch: epochs[end], accuracy });
    }
    Ok(Some(points))
}

/// Evaluate every trained attack on the held-back auxiliary split and
/// assemble the full report.
pub fn attack_eval_stage(config: &ConfigFile, out: &Path) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out)?;
    let acc_path = accuracy_path(out);
    require_file(&acc_path, "fl-train")?;
    let federated = load_accuracy_csv(&acc_path)?;

    let mut attacks = Vec::new();
    let mut trajectory_means = Vec::new();
    for choice in config.attack_choices()? {
        let name = choice.name();
        for split in ["train", "test"] {
            require_file(&features_path(out, name, split), "extract-features")?;
        }
        require_file(&model_path(out, name), "attack-train")?;
        let model = load_model(&model_path(out, name))?;
        let losses = load_losses_csv(&losses_path(out, name)).unwrap_or_default();
        let final_train_loss = losses.last().copied().unwrap_or(f64::NAN);
        let (test_report, train_report, train_rows, test_rows) = match choice {
            AttackChoice::Feature(kind) => {
                let observed = config.fl.observed_epochs.clone();
                let train =
                    load_features_csv(&features_path(out, name, "train"), kind, observed.clone())?;
                let test = load_features_csv(&features_path(out, name, "test"), kind, observed)?;
                trajectory_means.push(means_of(kind, &test));
                (
                    evaluate_on_features(&model, &test)?,
                    evaluate_on_features(&model, &train)?,
                    train.len(),
                    test.len(),
                )
            }
            AttackChoice::Baseline => {
                let train = load_baseline_csv(&features_path(out, name, "train"))?;
                let test = load_baseline_csv(&features_path(out, name, "test"))?;
                let scorer = RegressionScorer::new(&model)?;
                (
                    evaluate_accuracy(&scorer, test.rows(), test.members())?,
                    evaluate_accuracy(&scorer, train.rows(), train.members())?,
                    train.len(),
                    test.len(),
                )
            }
        };
        attacks.push(AttackOutcome {
            kind: name.into(),
            test_accuracy: test_report.accuracy(),
            train_accuracy: train_report.accuracy(),
            true_positives: test_report.true_positives,
            true_negatives: test_report.true_negatives,
            false_positives: test_report.false_positives,
            false_negatives: test_report.false_negatives,
            train_rows,
            test_rows,
            final_train_loss,
        });
    }

    let cost = cost_section(config)?;
    let sliding_window = sliding_section(config, out)?;
    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        generated_unix_seconds: unix_now(),
        config: config.clone(),
        federated,
        attacks,
        cost,
        trajectory_means,
        sliding_window,
    };
    save_report(&report, &report_path(out))?;

    println!("attack        test acc  train acc    tp    tn    fp    fn");
    for a in &report.attacks {
        println!(
            "{:<12}  {:>8.4}  {:>9.4}  {:>4}  {:>4}  {:>4}  {:>4}",
            a.kind,
            a.test_accuracy,
            a.train_accuracy,
            a.true_positives,
            a.true_negatives,
            a.false_positives,
            a.false_negatives
        );
    }
    println!("wrote {}", report_path(out).display());
    Ok(report)
}

/// One accuracy row per observed-epoch set, attacks retrained per set
/// on a single shared federated run (observation is passive, so a run
/// recorded at the union of the sets is identical to separate runs).
pub fn sweep_observed_epochs(
    config: &ConfigFile,
    out: &Path,
    sets: &[Vec<usize>],
) -> Result<()> {
    if sets.len() < 2 {
        return Err(Error::Config(format!(
            "an observed-epochs sweep needs at least 2 epoch sets, got {}",
            sets.len()
        )));
    }
    for set in sets {
        if set.is_empty() || !set.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "epoch set {set:?} must be non-empty and strictly ascending"
            )));
        }
        if *set.last().expect("non-empty") > config.fl.rounds {
            return Err(Error::Config(format!(
                "epoch set {set:?} exceeds the {} training rounds",
                config.fl.rounds
            )));
        }
        if set.first().copied() == Some(0) {
            return Err(Error::Config(format!("epoch set {set:?} starts before round 1")));
        }
    }
    std::fs::create_dir_all(out)?;

    let mut union: Vec<usize> = sets.iter().flatten().copied().collect();
    union.sort_unstable();
    union.dedup();

    let (pool, heldout) = config.load_dataset()?;
    let partitions = partition_uniform(&pool, config.fl.clients, config.seed)?;
    let model_spec = config.model_spec()?;
    let mut fl_config = config.fl_config()?;
    fl_config.observed_epochs = union;
    println!("training once, observing {} epochs", fl_config.observed_epochs.len());
    let run = run_fedavg(&fl_config, &pool, &partitions, &model_spec, heldout.as_ref())?;

    let aux = build_auxiliary(
        &partitions[config.fl.target_client],
        &pool,
        config.aux_counts(),
        config.seed,
    )?;
    let (train_aux, test_aux) = if config.auxiliary.label_free {
        (aux.train.without_labels(), aux.test.without_labels())
    } else {
        (aux.train, aux.test)
    };

    let choices = config.attack_choices()?;
    let mut header = String::from("epochs");
    for choice in &choices {
        header.push(',');
        header.push_str(choice.name());
    }
    let mut csv = header.clone();
    csv.push('\n');
    println!("{header}");

    for set in sets {
        let restricted = run.trace.restrict(set)?;
        let label =
            set.iter().map(usize::to_string).collect::<Vec<_>>().join("+");
        let mut row = label.clone();
        for choice in &choices {
            let accuracy = match choice {
                AttackChoice::Feature(kind) => {
                    let train = extract_features(&restricted, &train_aux, *kind)?;
                    let test = extract_features(&restricted, &test_aux, *kind)?;
                    let trained = train_attack(
                        &train,
                        &config.attack_fcn_spec()?,
                        &config.attack_hyperparams()?,
                    )?;
                    evaluate_on_features(&trained.model, &test)?.accuracy()
                }
                AttackChoice::Baseline => {
                    let train = build_baseline_inputs(&restricted, &train_aux)?;
                    let test = build_baseline_inputs(&restricted, &test_aux)?;
                    let trained = train_baseline_attack(
                        &train,
                        &config.baseline_attack_spec()?,
                        &config.baseline_hyperparams()?,
                    )?;
                    let scorer = RegressionScorer::new(&trained.model)?;
                    evaluate_accuracy(&scorer, test.rows(), test.members())?.accuracy()
                }
            };
            row.push_str(&format!(",{accuracy}"));
        }
        println!("{row}");
        csv.push_str(&row);
        csv.push('\n');
    }
    std::fs::write(sweep_path(out), csv)?;
    println!("wrote {}", sweep_path(out).display());
    Ok(())
}
