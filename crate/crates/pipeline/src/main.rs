use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tp3_core::Transform;
use tp3_pipeline::batches::prepare_batches;
use tp3_pipeline::eval::{
    inference_setup, run_evaluate_detection, run_evaluate_segmentation, run_register, run_registration_benchmark,
    MetricReport,
};
use tp3_pipeline::io::{
    detection_records, read_boxes, read_cloud, read_features, read_predictions, read_transform, write_cloud,
    write_predictions, RegionPrediction,
};
use tp3_pipeline::log::log_metrics;
use tp3_pipeline::synthetic::synthetic_room;
use tp3_pipeline::RunConfig;

/// Point-cloud data engine: preprocessing, protocol sampling, evaluation and
/// registration.
#[derive(Parser)]
#[command(name = "tp3", version)]
struct Cli {
    /// YAML run configuration; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured worker count
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Append each metric report to this JSON-lines file
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply the configured pre_transforms to a cloud
    Preprocess {
        input: PathBuf,
        output: PathBuf,
    },
    /// Prepare one training epoch, or with --inference write the inference
    /// regions as a prediction template
    Sample(SampleArgs),
    /// Score sphere predictions (one file per voting run) against a labeled cloud
    EvaluateSeg {
        cloud: PathBuf,
        #[arg(required = true)]
        predictions: Vec<PathBuf>,
    },
    /// Score predicted boxes against ground-truth boxes
    EvaluateDet {
        predictions: PathBuf,
        ground_truth: PathBuf,
    },
    /// Estimate the transform mapping source onto target and score it
    Register(RegisterArgs),
    /// Synthetic benchmarks
    Bench {
        #[command(subcommand)]
        kind: BenchKind,
    },
}

#[derive(Args)]
struct SampleArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
    /// Write a TP3P template for the inference spheres instead
    #[arg(long, value_name = "PATH")]
    inference: Option<PathBuf>,
    /// Class count of the template's uniform probability rows
    #[arg(long, default_value_t = 1)]
    classes: usize,
}

#[derive(Args)]
struct RegisterArgs {
    source: PathBuf,
    target: PathBuf,
    /// Ground-truth 4x4 transform (16 numbers, row-major)
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, requires = "target_features")]
    source_features: Option<PathBuf>,
    #[arg(long, requires = "source_features")]
    target_features: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchKind {
    /// Register synthetic pairs and report the success rate
    Registration {
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 0.3)]
        outliers: f64,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
    },
    /// Time epoch preparation on a synthetic room
    Pipeline {
        #[arg(long, default_value_t = 1_000_000)]
        points: usize,
        #[arg(long, default_value_t = 13)]
        classes: usize,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(report: &MetricReport, cfg: &RunConfig, log: Option<&Path>) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    if let Some(path) = log {
        log_metrics(report, cfg, path)?;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let log = cli.log.as_deref();
    match &cli.command {
        Command::Preprocess { input, output } => {
            let cloud = read_cloud(input)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let out = cfg.data.pre_transforms.apply(&cloud, &mut rng)?;
            write_cloud(output, &out)?;
            eprintln!("{} -> {} points ({})", cloud.len(), out.len(), cfg.data.pre_transforms);
        }
        Command::Sample(args) => sample(&cfg, args)?,
        Command::EvaluateSeg { cloud, predictions } => {
            let cloud = read_cloud(cloud)?;
            let runs = predictions
                .iter()
                .map(read_predictions)
                .collect::<Result<Vec<_>, _>>()?;
            emit(&run_evaluate_segmentation(&cfg, &cloud, &runs)?, &cfg, log)?;
        }
        Command::EvaluateDet {
            predictions,
            ground_truth,
        } => {
            let records = detection_records(read_boxes(predictions)?, read_boxes(ground_truth)?);
            emit(&run_evaluate_detection(&cfg, &records)?, &cfg, log)?;
        }
        Command::Register(args) => {
            let source = read_cloud(&args.source)?;
            let target = read_cloud(&args.target)?;
            let truth = match &args.truth {
                Some(p) => read_transform(p)?,
                None => Transform::identity(),
            };
            let feats: Option<(Array2<f64>, Array2<f64>)> = match (&args.source_features, &args.target_features) {
                (Some(a), Some(b)) => Some((read_features(a)?, read_features(b)?)),
                _ => None,
            };
            let report = run_register(&cfg, &source, &target, feats.as_ref().map(|(a, b)| (a, b)), &truth)?;
            emit(&report, &cfg, log)?;
        }
        Command::Bench { kind } => bench(&cfg, kind, log)?,
    }
    Ok(())
}

fn sample(cfg: &RunConfig, args: &SampleArgs) -> anyhow::Result<()> {
    let cloud = read_cloud(&args.input)?;
    if let Some(out) = &args.inference {
        if args.classes == 0 {
            bail!("--classes must be at least 1");
        }
        let (sub, regions) = inference_setup(cfg, &cloud)?;
        let template: Vec<RegionPrediction> = regions
            .iter()
            .map(|g| RegionPrediction {
                members: g.members.iter().map(|&m| m as i64).collect(),
                prob: Array2::from_elem((g.members.len(), args.classes), 1.0 / args.classes as f64),
            })
            .collect();
        write_predictions(out, &template).with_context(|| format!("writing {}", out.display()))?;
        eprintln!("{} regions over {} subsampled points", regions.len(), sub.len());
        return Ok(());
    }
    let start = Instant::now();
    let summary = prepare_batches(cfg, &cloud, args.epoch, |_| Ok(()))?;
    let secs = start.elapsed().as_secs_f64();
    println!(
        "{}",
        serde_json::json!({
            "epoch": args.epoch,
            "batches": summary.batches,
            "points": summary.points,
            "peak_buffered": summary.peak_buffered,
            "digest": summary.digest,
            "seconds": secs,
        })
    );
    Ok(())
}

fn bench(cfg: &RunConfig, kind: &BenchKind, log: Option<&Path>) -> anyhow::Result<()> {
    match *kind {
        BenchKind::Registration {
            pairs,
            points,
            outliers,
            sigma,
        } => {
            let start = Instant::now();
            let report = run_registration_benchmark(cfg, pairs, points, outliers, sigma)?;
            eprintln!("{pairs} pairs in {:.1}s", start.elapsed().as_secs_f64());
            emit(&report, cfg, log)?;
        }
        BenchKind::Pipeline { points, classes } => {
            let cloud = synthetic_room(points, classes, cfg.seed);
            let mut single = cfg.clone();
            single.workers = 1;
            let mut times = Vec::new();
            let mut digests = Vec::new();
            for c in [&single, cfg] {
                let start = Instant::now();
                let s = prepare_batches(c, &cloud, 0, |_| Ok(()))?;
                let secs = start.elapsed().as_secs_f64();
                eprintln!(
                    "workers {}: {} batches, {:.1} kpts/s",
                    c.workers,
                    s.batches,
                    s.points as f64 / secs / 1e3
                );
                times.push(secs);
                digests.push(s.digest);
            }
            println!(
                "{}",
                serde_json::json!({
                    "workers": cfg.workers,
                    "seconds_1": times[0],
                    "seconds_n": times[1],
                    "speedup": times[0] / times[1],
                    "identical": digests[0] == digests[1],
                    "available_parallelism": std::thread::available_parallelism().map_or(1, |n| n.get()),
                })
            );
        }
    }
    Ok(())
}
