//! `fedmia`: config-driven harness around the federated training
//! simulator and the membership-inference attacks.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error
//! (missing or malformed inputs), 4 numeric failure.

mod config;
mod pipeline;
mod plot;
mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use fedmia_core::features::read_rows_csv;
use fedmia_core::{Error, Result};

use config::ConfigFile;
use plot::Series;

#[derive(Parser)]
#[command(
    name = "fedmia",
    version,
    about = "Federated-learning simulator and membership-inference workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the federated simulation; write the observer's checkpoint
    /// trace and the per-round accuracy log.
    FlTrain(CommonArgs),
    /// Turn the stored trace into per-attack input files.
    ExtractFeatures(CommonArgs),
    /// Train the configured membership classifiers.
    AttackTrain(CommonArgs),
    /// Evaluate the trained attacks and write the JSON report.
    AttackEval(CommonArgs),
    /// Full pipeline in one go, or an observed-epochs sweep.
    Report(ReportArgs),
    /// Render SVG charts from a report or a feature file.
    Plot(PlotArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; this flag beats FEDMIA_OUT, which beats the
    /// config's [output] dir.
    #[arg(long, env = "FEDMIA_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sweep mode; the only supported value is "observed-epochs".
    #[arg(long, requires = "sets")]
    sweep: Option<String>,
    /// Epoch sets for the sweep: comma-separated epochs, sets joined
    /// by semicolons, e.g. "5,10,15;45,50,55;90,95,100".
    #[arg(long, requires = "sweep")]
    sets: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Report JSON produced by `report` or `attack-eval`.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    report: Option<PathBuf>,
    /// Feature CSV; renders the mean-trajectory chart only.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Output directory for SVG files (default: the input's directory).
    #[arg(long, env = "FEDMIA_OUT")]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::NonFinite { .. } | Error::State(_) => 4,
        _ => 3,
    }
}

fn load_config(args: &CommonArgs) -> Result<(ConfigFile, PathBuf)> {
    let mut config = ConfigFile::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args.out.clone().unwrap_or_else(|| config.output.dir.clone());
    Ok((config, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FlTrain(args) => {
            let (config, out) = load_config(&args)?;
            pipeline::fl_train(&config, &out)
        }
        Command::ExtractFeatures(args) => {
            let (config, out) = load_config(&args)?;
            pipeline::extract_features_stage(&config, &out)
        }
        Command::AttackTrain(args) => {
            let (config, out) = load_config(&args)?;
            pipeline::attack_train_stage(&config, &out)
        }
        Command::AttackEval(args) => {
            let (config, out) = load_config(&args)?;
            pipeline::attack_eval_stage(&config, &out).map(drop)
        }
        Command::Report(args) => run_report(args),
        Command::Plot(args) => run_plot(args),
    }
}

fn run_report(args: ReportArgs) -> Result<()> {
    let (config, out) = load_config(&args.common)?;
    match args.sweep.as_deref() {
        None => {
            pipeline::fl_train(&config, &out)?;
            pipeline::extract_features_stage(&config, &out)?;
            pipeline::attack_train_stage(&config, &out)?;
            pipeline::attack_eval_stage(&config, &out).map(drop)
        }
        Some("observed-epochs") => {
            let sets = parse_epoch_sets(args.sets.as_deref().expect("clap enforces --sets"))?;
            pipeline::sweep_observed_epochs(&config, &out, &sets)
        }
        Some(other) => Err(Error::Config(format!(
            "unknown sweep {other:?}; the supported sweep is \"observed-epochs\""
        ))),
    }
}

fn parse_epoch_sets(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut sets = Vec::new();
    for part in text.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let mut set = Vec::new();
        for field in part.split(',') {
            let field = field.trim();
            set.push(
                field
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad epoch {field:?} in --sets")))?,
            );
        }
        sets.push(set);
    }
    Ok(sets)
}

fn write_svg(out: &Path, name: &str, svg: &str) -> Result<()> {
    let path = out.join(name);
    std::fs::write(&path, svg)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn trajectory_chart(kind: &str, xs: &[f64], member: &[f64], non_member: &[f64]) -> String {
    let pair = |ys: &[f64]| xs.iter().copied().zip(ys.iter().copied()).collect();
    let series = [
        Series { label: "members".into(), points: pair(member) },
        Series { label: "non-members".into(), points: pair(non_member) },
    ];
    plot::line_chart(
        &format!("Mean {kind} trajectory by membership"),
        "observed epoch",
        kind,
        &series,
        None,
    )
}

fn run_plot(args: PlotArgs) -> Result<()> {
    let input = args.report.as_ref().or(args.features.as_ref()).expect("clap enforces one");
    let out = args
        .out
        .clone()
        .or_else(|| input.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;

    if let Some(path) = &args.report {
        let loaded = report::load_report(path)?;
        if let Some(sliding) = &loaded.sliding_window {
            let mut series = vec![Series {
                label: "attack accuracy (sliding window)".into(),
                points: sliding.iter().map(|p| (p.end_epoch as f64, p.accuracy)).collect(),
            }];
            series.push(Series {
                label: "target train accuracy".into(),
                points: loaded
                    .federated
                    .iter()
                    .map(|r| (r.round as f64, r.train_accuracy))
                    .collect(),
            });
            if loaded.federated.iter().any(|r| r.test_accuracy.is_some()) {
                series.push(Series {
                    label: "target test accuracy".into(),
                    points: loaded
                        .federated
                        .iter()
                        .filter_map(|r| r.test_accuracy.map(|t| (r.round as f64, t)))
                        .collect(),
                });
            }
            let svg = plot::line_chart(
                "Attack and target accuracy over training",
                "round",
                "accuracy",
                &series,
                Some((0.0, 1.0)),
            );
            write_svg(&out, "accuracy_over_training.svg", &svg)?;
        } else {
            println!(
                "report has no sliding-window series; skipping the accuracy-over-training chart"
            );
        }
        for means in &loaded.trajectory_means {
            let xs: Vec<f64> = means.epochs.iter().map(|&e| e as f64).collect();
            let svg =
                trajectory_chart(&means.kind, &xs, &means.member_mean, &means.non_member_mean);
            write_svg(&out, &format!("score_trajectories_{}.svg", means.kind), &svg)?;
        }
        return Ok(());
    }

    let path = args.features.as_ref().expect("clap enforces one");
    let csv = read_rows_csv(path)?;
    if csv.rows.is_empty() {
        return Err(Error::Validation(format!("{} holds no rows to plot", path.display())));
    }
    let mut member = vec![0.0; csv.width];
    let mut non_member = vec![0.0; csv.width];
    let mut members = 0usize;
    let mut non_members = 0usize;
    for (row, is_member) in csv.rows.iter().zip(&csv.members) {
        let (sink, count) = if *is_member {
            (&mut member, &mut members)
        } else {
            (&mut non_member, &mut non_members)
        };
        *count += 1;
        for (acc, v) in sink.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut member {
        *v /= members.max(1) as f64;
    }
    for v in &mut non_member {
        *v /= non_members.max(1) as f64;
    }
    let xs: Vec<f64> = (1..=csv.width).map(|i| i as f64).collect();
    let svg = trajectory_chart("score", &xs, &member, &non_member);
    write_svg(&out, "score_trajectories.svg", &svg)
}
