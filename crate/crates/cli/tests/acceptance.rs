//! Acceptance checks for the whole workbench: one test per shipped
//! guarantee, each printing a single PASS line with the measured
//! values (visible under --nocapture). Heavy federated runs are shared
//! through a once-built fixture, and every test takes a global lock so
//! measured wall times reflect single-threaded execution.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use fedmia_core::attack::{
    evaluate_accuracy, evaluate_on_features, train_attack, AttackFcnSpec, AttackHyperparams,
};
use fedmia_core::baseline::{
    baseline_input_size, build_baseline_inputs, input_size_for, train_baseline_attack,
    BaselineAttackSpec, BaselineInputs, RegressionScorer,
};
use fedmia_core::cost::{count_params, memory_bytes};
use fedmia_core::data::{
    build_auxiliary, generate_synthetic_pair, partition_uniform, AuxCounts, SyntheticSpec,
};
use fedmia_core::engine::loss::{evaluate_loss, loss_grad};
use fedmia_core::engine::spec::{mlp_spec, LayerSpec, NetworkSpec, ValueShape};
use fedmia_core::engine::{
    mini_batches, LossTarget, Network, Optimizer, OptimizerKind, StatsMode, Tensor,
};
use fedmia_core::features::{extract_features, FeatureKind};
use fedmia_core::fl::trace::{load_trace, save_trace, CheckpointTrace};
use fedmia_core::fl::{aggregate, run_fedavg, FlConfig, LrSchedule};
use fedmia_core::seed::derive_seed;

/// Serializes the tests so wall-clock bounds are measured without
/// interference from sibling tests.
fn gate() -> std::sync::MutexGuard<'static, ()> {
    static GATE: OnceLock<Mutex<()>> = OnceLock::new();
    GATE.get_or_init(|| Mutex::new(())).lock().unwrap_or_else(|p| p.into_inner())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ------------------------------------------------------- shared study

const STUDY_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const EARLY: [usize; 5] = [5, 10, 15, 20, 25];
const MIDDLE: [usize; 5] = [40, 45, 50, 55, 60];
const LATE: [usize; 5] = [80, 85, 90, 95, 100];

/// Per-seed results of the reference experiment: a 20-class synthetic
/// pool (dim 50, 200 per class), 4 clients, one-hidden-layer MLP
/// overfit for 100 rounds, trajectory attacks over early/middle/late
/// observation windows plus the label-free variants on the late one.
struct SeedOutcome {
    final_train_accuracy: f64,
    final_test_accuracy: f64,
    late_true_label: f64,
    late_entropy: f64,
    late_max_score: f64,
    early_true_label: f64,
    middle_true_label: f64,
    final_epoch_gap: f64,
    /// FL + late-window extraction + true-label attack, in seconds.
    core_seconds: f64,
}

struct Study {
    outcomes: Vec<SeedOutcome>,
    /// Seed-1 flat inputs over the late window, kept for the
    /// gradient-based comparison attack.
    seed1_flat_train: BaselineInputs,
    seed1_flat_test: BaselineInputs,
}

fn reference_mlp() -> NetworkSpec {
    mlp_spec(50, &[128], 20).unwrap()
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let mut outcomes = Vec::with_capacity(STUDY_SEEDS.len());
        let mut seed1 = None;
        for seed in STUDY_SEEDS {
            let t_core = Instant::now();
            let data_spec = SyntheticSpec {
                classes: 20,
                dim: 50,
                per_class: 200,
                cluster_spread: 4.0,
                seed,
            };
            let (pool, heldout) = generate_synthetic_pair(&data_spec, 50).unwrap();
            let heldout = heldout.unwrap();
            let parts = partition_uniform(&pool, 4, seed).unwrap();
            let mut observed: Vec<usize> = Vec::new();
            observed.extend(EARLY);
            observed.extend(MIDDLE);
            observed.extend(LATE);
            let config = FlConfig {
                n_clients: 4,
                weights: FlConfig::uniform_weights(4),
                rounds: 100,
                local_epochs: 5,
                batch_size: 100,
                optimizer: OptimizerKind::Adam,
                lr_schedule: LrSchedule::constant(0.001).unwrap(),
                observed_epochs: observed,
                target_client: 0,
                seed,
            };
            let run = run_fedavg(&config, &pool, &parts, &reference_mlp(), Some(&heldout)).unwrap();
            let last = run.accuracy_log.last().unwrap().clone();

            let counts = AuxCounts {
                member_train: 200,
                nonmember_train: 200,
                member_test: 500,
                nonmember_test: 500,
            };
            let aux = build_auxiliary(&parts[0], &pool, counts, seed).unwrap();
            let late = run.trace.restrict(&LATE).unwrap();

            let hp = AttackHyperparams { epochs: 100, seed, ..Default::default() };
            let attack = |trace: &CheckpointTrace, kind: FeatureKind| -> (f64, f64) {
                let train_f = extract_features(trace, &aux.train, kind).unwrap();
                let test_f = extract_features(trace, &aux.test, kind).unwrap();
                let trained = train_attack(&train_f, &AttackFcnSpec::default(), &hp).unwrap();
                let acc = evaluate_on_features(&trained.model, &test_f).unwrap().accuracy();
                let gap = {
                    let (mem, non) = test_f.final_epoch_means().unwrap();
                    mem - non
                };
                (acc, gap)
            };

            let (late_true_label, final_epoch_gap) = attack(&late, FeatureKind::TrueLabel);
            let core_seconds = t_core.elapsed().as_secs_f64();

            let (late_entropy, _) = attack(&late, FeatureKind::Entropy);
            let (late_max_score, _) = attack(&late, FeatureKind::MaxScore);
            let early = run.trace.restrict(&EARLY).unwrap();
            let middle = run.trace.restrict(&MIDDLE).unwrap();
            let (early_true_label, _) = attack(&early, FeatureKind::TrueLabel);
            let (middle_true_label, _) = attack(&middle, FeatureKind::TrueLabel);

            if seed == STUDY_SEEDS[0] {
                seed1 = Some((
                    build_baseline_inputs(&late, &aux.train).unwrap(),
                    build_baseline_inputs(&late, &aux.test).unwrap(),
                ));
            }
            outcomes.push(SeedOutcome {
                final_train_accuracy: last.train_accuracy,
                final_test_accuracy: last.test_accuracy.unwrap(),
                late_true_label,
                late_entropy,
                late_max_score,
                early_true_label,
                middle_true_label,
                final_epoch_gap,
                core_seconds,
            });
        }
        let (seed1_flat_train, seed1_flat_test) = seed1.unwrap();
        Study { outcomes, seed1_flat_train, seed1_flat_test }
    })
}

// -------------------------------------------- gradient correctness

const FD_STEP: f64 = 1e-3;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-6;
const KINK_MARGIN: f64 = 5e-3;
const PROB_MARGIN: f64 = 1e-6;
const VAR_FLOOR: f64 = 0.05;

fn gradients_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= f64::max(REL_TOL * analytic.abs().max(numeric.abs()), ABS_FLOOR)
}

/// True when every ReLU input sits away from its kink, every softmax
/// probability clears the loss clamp, and every batch-mode batch norm
/// sees enough per-channel variance for a stable quotient; outside
/// those regions the two-sided difference is not a derivative estimate.
fn smooth_at(net: &Network, batch: &Tensor, stats: StatsMode) -> bool {
    let outputs = net.layer_outputs(batch, stats).unwrap();
    for (i, layer) in net.spec().layers.iter().enumerate() {
        let input: &Tensor = if i == 0 { batch } else { &outputs[i - 1] };
        match layer {
            LayerSpec::Relu => {
                if input.data().iter().any(|v| v.abs() < KINK_MARGIN) {
                    return false;
                }
            }
            LayerSpec::Softmax => {
                if outputs[i].data().iter().any(|p| *p < PROB_MARGIN) {
                    return false;
                }
            }
            LayerSpec::BatchNorm1d { channels, .. } if stats == StatsMode::Batch => {
                let (batch_n, c, len) = match *input.shape() {
                    [b, c] => (b, c, 1),
                    [b, c, l] => (b, c, l),
                    _ => unreachable!(),
                };
                assert_eq!(c, *channels);
                let count = (batch_n * len) as f64;
                for ch in 0..c {
                    let values: Vec<f64> = (0..batch_n)
                        .flat_map(|b| {
                            let base = (b * c + ch) * len;
                            input.data()[base..base + len].to_vec()
                        })
                        .collect();
                    let mean = values.iter().sum::<f64>() / count;
                    let var =
                        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
                    if var < VAR_FLOOR {
                        return false;
                    }
                }
            }
            _ => {}
        }
    }
    true
}

fn loss_at(net: &Network, batch: &Tensor, target: &LossTarget, stats: StatsMode) -> f64 {
    let scores = match stats {
        StatsMode::Running => net.infer(batch).unwrap(),
        StatsMode::Batch => net.forward_pass(batch, StatsMode::Batch).unwrap().output().clone(),
    };
    evaluate_loss(&scores, target).unwrap()
}

/// Sweep every trainable scalar of one network against the central
/// difference of the pure loss. Returns the number of scalars checked.
fn check_gradients(net: &mut Network, batch: &Tensor, target: &LossTarget, stats: StatsMode) -> usize {
    let pass = net.forward_pass(batch, stats).unwrap();
    let dscores = loss_grad(pass.output(), target).unwrap();
    let analytic = net.backward_from(&pass, &dscores).unwrap();
    let flat: Vec<Vec<f64>> = analytic
        .iter()
        .flat_map(|layer| layer.iter().map(|t| t.data().to_vec()))
        .collect();

    let mut checked = 0;
    for t in 0..net.trainable_params().len() {
        for j in 0..net.trainable_params()[t].len() {
            let original = net.trainable_params()[t].data()[j];
            net.trainable_params_mut()[t].data_mut()[j] = original + FD_STEP;
            let up = loss_at(net, batch, target, stats);
            net.trainable_params_mut()[t].data_mut()[j] = original - FD_STEP;
            let down = loss_at(net, batch, target, stats);
            net.trainable_params_mut()[t].data_mut()[j] = original;
            let numeric = (up - down) / (2.0 * FD_STEP);
            assert!(
                gradients_close(flat[t][j], numeric),
                "tensor {t} scalar {j}: analytic {}, numeric {numeric}",
                flat[t][j]
            );
            checked += 1;
        }
    }
    checked
}

fn conv_chain_spec(
    in_channels: usize,
    len: usize,
    out_channels: usize,
    kernel: usize,
    class_count: usize,
) -> NetworkSpec {
    NetworkSpec::new(
        ValueShape::Series { channels: in_channels, len },
        vec![
            LayerSpec::Conv1d { in_channels, out_channels, kernel },
            LayerSpec::batch_norm(out_channels),
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool1d,
            LayerSpec::Dense { inputs: out_channels, outputs: class_count },
            LayerSpec::Softmax,
        ],
        class_count,
    )
    .unwrap()
}

fn random_case_spec(case: usize, rng: &mut ChaCha20Rng) -> NetworkSpec {
    match case % 3 {
        // Dense / ReLU / Softmax classifier.
        0 => {
            let inputs = rng.gen_range(2..=6);
            let hidden = rng.gen_range(3..=8);
            let classes = rng.gen_range(2..=4);
            mlp_spec(inputs, &[hidden], classes).unwrap()
        }
        // Conv / batch norm / ReLU / pool / dense / softmax chain.
        1 => {
            let ci = rng.gen_range(1..=2);
            let len = rng.gen_range(3..=8);
            let co = rng.gen_range(2..=4);
            let k = rng.gen_range(1..=5);
            let classes = rng.gen_range(2..=3);
            conv_chain_spec(ci, len, co, k, classes)
        }
        // Dense regression head behind flat-feature batch norm.
        _ => {
            let inputs = rng.gen_range(2..=5);
            let hidden = rng.gen_range(3..=6);
            let outputs = rng.gen_range(1..=3);
            NetworkSpec::new(
                ValueShape::Features(inputs),
                vec![
                    LayerSpec::Dense { inputs, outputs: hidden },
                    LayerSpec::batch_norm(hidden),
                    LayerSpec::Relu,
                    LayerSpec::Dense { inputs: hidden, outputs },
                ],
                outputs,
            )
            .unwrap()
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let _g = gate();
    let started = Instant::now();
    let mut total = 0usize;
    let mut nets = 0usize;
    'cases: for case in 0..20usize {
        let spec_rng_seed = 4100 + case as u64;
        let mut rng = ChaCha20Rng::seed_from_u64(spec_rng_seed);
        let spec = random_case_spec(case, &mut rng);
        assert!(spec.trainable_param_count() <= 500, "oracle needs small networks");
        let stats = if case % 2 == 0 { StatsMode::Batch } else { StatsMode::Running };
        let batch_size = rng.gen_range(3..=5);
        // A weight draw can sit where no batch is smooth; advance the
        // seed to pick a valid test point, never a passing gradient.
        for variant in 0..20u64 {
            let mut net = Network::initialize(spec.clone(), spec_rng_seed + 1000 * variant);
            let shape = spec.input.batch_shape(batch_size);
            let batch = (0..20).find_map(|_| {
                let len: usize = shape.iter().product();
                let data = (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                let candidate = Tensor::new(shape.clone(), data).unwrap();
                smooth_at(&net, &candidate, stats).then_some(candidate)
            });
            let Some(batch) = batch else { continue };
            let target = if spec.layers.last() == Some(&LayerSpec::Softmax) {
                LossTarget::Classes(
                    (0..batch_size).map(|_| rng.gen_range(0..spec.class_count)).collect(),
                )
            } else {
                let data =
                    (0..batch_size * spec.class_count).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                LossTarget::Values(Tensor::new(vec![batch_size, spec.class_count], data).unwrap())
            };
            total += check_gradients(&mut net, &batch, &target, stats);
            nets += 1;
            continue 'cases;
        }
        panic!("no smooth configuration found for case {case}");
    }
    let elapsed = started.elapsed();
    assert_eq!(nets, 20);
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "PASS gradient check: {total} scalars across {nets} networks agree with central \
         differences (rel tol 1e-4) in {elapsed:.1?}"
    );
}

// ------------------------------------------- federation degeneracy

#[test]
fn single_client_federation_matches_plain_training() {
    let _g = gate();
    let started = Instant::now();
    let seed = 31u64;
    let pool_spec =
        SyntheticSpec { classes: 5, dim: 8, per_class: 12, cluster_spread: 1.0, seed };
    let (pool, _) = generate_synthetic_pair(&pool_spec, 0).unwrap();
    let parts = partition_uniform(&pool, 1, seed).unwrap();
    let schedule = LrSchedule::new(vec![(1, 0.1), (11, 0.05)]).unwrap();
    let spec = mlp_spec(8, &[16], 5).unwrap();
    let config = FlConfig {
        n_clients: 1,
        weights: vec![1.0],
        rounds: 20,
        local_epochs: 1,
        batch_size: 8,
        optimizer: OptimizerKind::Sgd,
        lr_schedule: schedule.clone(),
        observed_epochs: vec![20],
        target_client: 0,
        seed,
    };
    let run = run_fedavg(&config, &pool, &parts, &spec, None).unwrap();

    // The plain loop: same init, same per-epoch shuffle stream, a fresh
    // stateless optimizer per epoch, no aggregation step at all.
    let mut plain = Network::initialize(spec, derive_seed(seed, "fl", &[]));
    for epoch in 1..=20usize {
        let mut optimizer =
            Optimizer::new(OptimizerKind::Sgd, schedule.rate_at(epoch), &plain).unwrap();
        let mut order = parts[0].indices.clone();
        use rand::seq::SliceRandom;
        let shuffle_seed = derive_seed(seed, "shuffle", &[epoch as u64, 0, 0]);
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(shuffle_seed));
        for chunk in mini_batches(&order, 8) {
            let (batch, labels) = pool.gather(chunk).unwrap();
            optimizer.fit_batch(&mut plain, &batch, &LossTarget::Classes(labels)).unwrap();
        }
    }

    let federated = run.global.export_stored();
    let reference = plain.export_stored();
    assert_eq!(federated.len(), reference.len());
    let mut scalars = 0usize;
    for (f, r) in federated.iter().zip(&reference) {
        assert_eq!(f.len(), r.len());
        for (a, b) in f.iter().zip(r) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} != {b}");
            scalars += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "PASS federation degeneracy: single-client run reproduces 20 plain epochs bit for bit \
         ({scalars} stored values) in {elapsed:.1?}"
    );
}

// ------------------------------------------- aggregation identities

#[test]
fn aggregation_identities_hold() {
    let _g = gate();
    let started = Instant::now();

    // Averaging k copies of one model returns that model.
    let spec = conv_chain_spec(2, 6, 3, 3, 4);
    let net = Network::initialize(spec, 97);
    let copies = vec![net.clone(), net.clone(), net.clone(), net.clone()];
    let avg = aggregate(&copies, &[0.25; 4]).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in avg.export_stored().iter().zip(net.export_stored()) {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 1e-12, "worst deviation {worst}");

    // A half-half average of all-zeros and all-twos is exactly one.
    let tiny = NetworkSpec::new(
        ValueShape::Features(1),
        vec![LayerSpec::Dense { inputs: 1, outputs: 1 }],
        1,
    )
    .unwrap();
    let mut zeros = Network::initialize(tiny.clone(), 1);
    let arrays: Vec<Vec<f64>> =
        zeros.export_stored().iter().map(|a| vec![0.0; a.len()]).collect();
    zeros.import_stored(&arrays).unwrap();
    let mut twos = Network::initialize(tiny, 2);
    let arrays: Vec<Vec<f64>> = twos.export_stored().iter().map(|a| vec![2.0; a.len()]).collect();
    twos.import_stored(&arrays).unwrap();
    let mid = aggregate(&[zeros, twos], &[0.5, 0.5]).unwrap();
    for arr in mid.export_stored() {
        for v in arr {
            assert_eq!(v, 1.0, "expected exactly 1.0, got {v}");
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!(
        "PASS aggregation identities: copy average within {worst:.1e} of 1e-12 bound, \
         half-half of zeros and twos exactly one, in {elapsed:.1?}"
    );
}

// --------------------------------------------- trajectory efficacy

#[test]
fn trajectory_attack_separates_members_at_desk_scale() {
    let _g = gate();
    let study = study();
    for (seed, o) in STUDY_SEEDS.iter().zip(&study.outcomes) {
        assert!(
            o.final_train_accuracy >= 0.95,
            "seed {seed}: target train accuracy {:.3} below the overfit precondition",
            o.final_train_accuracy
        );
        assert!(
            o.final_test_accuracy <= 0.70,
            "seed {seed}: target test accuracy {:.3} above the overfit precondition",
            o.final_test_accuracy
        );
    }
    let accs: Vec<f64> = study.outcomes.iter().map(|o| o.late_true_label).collect();
    let med = median(&accs);
    assert!(med >= 0.70, "median attack accuracy {med:.3} below 0.70 (per-seed {accs:?})");
    let total: f64 = study.outcomes.iter().map(|o| o.core_seconds).sum();
    assert!(total < 600.0, "federated runs plus attacks took {total:.0}s, bound 600s");
    println!(
        "PASS trajectory attack: median test accuracy {med:.3} over seeds {STUDY_SEEDS:?} \
         (per-seed {:?}), core work {total:.0}s < 600s",
        accs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
}

// ----------------------------------------- member score separation

#[test]
fn member_scores_exceed_non_member_scores_at_final_epoch() {
    let _g = gate();
    let study = study();
    let gaps: Vec<f64> = study.outcomes.iter().map(|o| o.final_epoch_gap).collect();
    let med = median(&gaps);
    assert!(med >= 0.10, "median final-epoch score gap {med:.3} below 0.10 ({gaps:?})");
    println!(
        "PASS score separation: median member minus non-member final-epoch score {med:.3} \
         >= 0.10 (per-seed {:?})",
        gaps.iter().map(|g| (g * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
}

// ------------------------------------------------ label-free order

#[test]
fn true_label_attack_keeps_pace_with_label_free_variants() {
    let _g = gate();
    let study = study();
    let tl = median(&study.outcomes.iter().map(|o| o.late_true_label).collect::<Vec<_>>());
    let ent = median(&study.outcomes.iter().map(|o| o.late_entropy).collect::<Vec<_>>());
    let max = median(&study.outcomes.iter().map(|o| o.late_max_score).collect::<Vec<_>>());
    assert!(tl >= ent - 0.02, "true-label {tl:.3} trails entropy {ent:.3} by more than 0.02");
    assert!(tl >= max - 0.02, "true-label {tl:.3} trails max-score {max:.3} by more than 0.02");
    println!(
        "PASS label-free ordering: medians true-label {tl:.3}, entropy {ent:.3}, \
         max-score {max:.3} (slack 0.02)"
    );
}

// -------------------------------------------- observation windows

#[test]
fn later_observation_windows_do_not_lose_accuracy() {
    let _g = gate();
    let study = study();
    let early = median(&study.outcomes.iter().map(|o| o.early_true_label).collect::<Vec<_>>());
    let middle = median(&study.outcomes.iter().map(|o| o.middle_true_label).collect::<Vec<_>>());
    let late = median(&study.outcomes.iter().map(|o| o.late_true_label).collect::<Vec<_>>());
    let steps = [middle - early, late - middle];
    let inversions: Vec<f64> = steps.iter().copied().filter(|d| *d < 0.0).collect();
    assert!(
        inversions.len() <= 1,
        "both steps decrease: early {early:.3}, middle {middle:.3}, late {late:.3}"
    );
    assert!(
        inversions.iter().all(|d| -d <= 0.02),
        "inversion deeper than 0.02: early {early:.3}, middle {middle:.3}, late {late:.3}"
    );
    println!(
        "PASS observation windows: median accuracy early {early:.3} -> middle {middle:.3} -> \
         late {late:.3} (at most one inversion <= 0.02)"
    );
}

// -------------------------------------------------- cost accounting

#[test]
fn classifier_memory_is_constant_and_about_one_megabyte() {
    let _g = gate();
    let started = Instant::now();
    let spec = AttackFcnSpec::default();
    let mut seen = Vec::new();
    for input_len in [5usize, 30] {
        let net = spec.network_spec(input_len).unwrap();
        let values = count_params(&net);
        let bytes = memory_bytes(&net);
        assert_eq!(values, 265_986, "input_len {input_len}");
        assert_eq!(bytes, 1_063_944, "input_len {input_len}");
        let rel = (bytes as f64 - 1.06e6).abs() / 1.06e6;
        assert!(rel <= 0.01, "memory {bytes} B strays {rel:.4} from 1.06 MB");
        seen.push(bytes);
    }
    assert_eq!(seen[0], seen[1], "memory must not depend on trajectory length");
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!(
        "PASS memory accounting: default classifier stores 265986 values = 1063944 bytes \
         (within 1% of 1.06 MB) at trajectory lengths 5 and 30, in {elapsed:.1?}"
    );
}

// -------------------------------------------- comparison input size

#[test]
fn comparison_input_size_follows_the_formula() {
    let _g = gate();
    let mut rng = ChaCha20Rng::seed_from_u64(909);
    for _ in 0..100 {
        let d = rng.gen_range(0..5000usize);
        let layer_sizes: Vec<usize> =
            (0..rng.gen_range(0..6usize)).map(|_| rng.gen_range(1..300)).collect();
        let n_targets = rng.gen_range(1..40usize);
        let m = rng.gen_range(0..200usize);
        let expected = (d + 1 + layer_sizes.iter().sum::<usize>()) * n_targets + m;
        let got = baseline_input_size(d, &layer_sizes, n_targets, m);
        assert_eq!(got, expected, "d={d} s={layer_sizes:?} n={n_targets} m={m}");
    }

    // Constructed inputs must land exactly on the same count.
    let study = study();
    let formula = input_size_for(&reference_mlp(), LATE.len()).unwrap();
    assert_eq!(study.seed1_flat_train.width(), formula);

    let trajectory_len = LATE.len();
    let ratio = formula as f64 / trajectory_len as f64;
    assert!(ratio >= 100.0, "input-size ratio {ratio:.0} below 100");
    println!(
        "PASS comparison input size: 100 random shapes match the closed form; the reference \
         MLP needs {formula} values vs {trajectory_len} per trajectory (ratio {ratio:.0})"
    );
}

// ------------------------------------------- gradient-based attack

#[test]
fn gradient_based_comparison_attack_beats_chance() {
    let _g = gate();
    let study = study();
    let train_in = &study.seed1_flat_train;
    let test_in = &study.seed1_flat_test;
    let hp = AttackHyperparams {
        epochs: 30,
        batch_size: 50,
        learning_rate: 0.05,
        seed: STUDY_SEEDS[0],
        ..Default::default()
    };
    let spec = BaselineAttackSpec::default();
    let trained = train_baseline_attack(train_in, &spec, &hp).unwrap();
    let scorer = RegressionScorer::new(&trained.model).unwrap();
    let acc = evaluate_accuracy(&scorer, test_in.rows(), test_in.members()).unwrap().accuracy();
    assert!(acc > 0.55, "comparison attack accuracy {acc:.3} not above 0.55");
    println!(
        "PASS gradient-based comparison: flat-input regressor reaches test accuracy {acc:.3} \
         > 0.55 on {}-wide rows",
        test_in.width()
    );
}

// ------------------------------------------ determinism round trip

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn report_without_timestamp(path: &Path) -> String {
    String::from_utf8(read(path))
        .unwrap()
        .lines()
        .filter(|line| !line.contains("generated_unix_seconds"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn repeated_pipelines_are_byte_identical_and_traces_round_trip() {
    let _g = gate();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.toml");
    fs::write(
        &config_path,
        r#"
seed = 11

[dataset]
kind = "synthetic"
classes = 4
dim = 6
per_class = 40
cluster_spread = 1.2
holdout_per_class = 10

[model]
hidden = [16]

[fl]
clients = 2
rounds = 8
batch_size = 20
optimizer = "sgd"
learning_rate = 0.05
observed_epochs = [2, 4, 6, 8]

[auxiliary]
member_train = 30
nonmember_train = 30
member_test = 40
nonmember_test = 40

[attack]
kinds = ["true_label"]
epochs = 15
batch_size = 20
"#,
    )
    .unwrap();

    let run = |out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_fedmia"))
            .args(["report", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success(), "pipeline run into {} failed", out.display());
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a);
    run(&out_b);

    for name in ["features_true_label_train.csv", "features_true_label_test.csv"] {
        assert_eq!(read(&out_a.join(name)), read(&out_b.join(name)), "{name} differs");
    }
    assert_eq!(
        report_without_timestamp(&out_a.join("report.json")),
        report_without_timestamp(&out_b.join("report.json")),
        "report differs beyond the timestamp"
    );
    assert_eq!(
        read(&out_a.join("trace.fltr")),
        read(&out_b.join("trace.fltr")),
        "trace differs"
    );

    // Round trip: reading a trace and writing it back is byte-stable.
    let trace = load_trace(out_a.join("trace.fltr")).unwrap();
    let copy = dir.path().join("copy.fltr");
    save_trace(&trace, &copy).unwrap();
    assert_eq!(read(&out_a.join("trace.fltr")), read(&copy), "resave changed bytes");

    // And a fresh in-memory model survives with exactly f32 rounding.
    let spec = mlp_spec(6, &[16], 4).unwrap();
    let net = Network::initialize(spec.clone(), 123);
    let mut fresh = CheckpointTrace::new(0, spec);
    fresh.record(1, net.clone()).unwrap();
    let fresh_path = dir.path().join("fresh.fltr");
    save_trace(&fresh, &fresh_path).unwrap();
    let loaded = load_trace(&fresh_path).unwrap();
    let original = net.export_stored();
    let recovered = loaded.get(1).unwrap().export_stored();
    for (o_arr, r_arr) in original.iter().zip(&recovered) {
        for (o, r) in o_arr.iter().zip(r_arr) {
            assert_eq!(*r, *o as f32 as f64, "loaded {r} vs rounded {o}");
        }
    }
    println!(
        "PASS determinism: repeated runs byte-identical (features, report sans timestamp, \
         trace); traces round-trip with exactly 64->32-bit rounding"
    );
}
