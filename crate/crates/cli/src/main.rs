use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dgm_core::driver::dgm_run;
use dgm_core::eval::{label_prf, reid_scores, SetDistanceMode};
use dgm_core::io::{
    assignment_from_rows, label_rows, label_table_shape, read_bundle, read_labels, read_metric, read_truth,
    write_bundle, write_labels, write_metric, write_report, write_truth, EvalSection, Report,
};
use dgm_core::preprocess::{pca_fit, prepare_bundle, stack_frames};
use dgm_core::synth::{generate_benchmark, generate_test_split, SynthConfig};
use dgm_core::{DgmConfig, DgmError, DummyCostMode};

#[derive(Parser)]
#[command(name = "dgm", version, about = "Unsupervised cross-camera label estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-camera benchmark with a held-out query/gallery split.
    Synth(SynthArgs),
    /// Estimate cross-camera labels and a metric from two feature bundles.
    Estimate(EstimateArgs),
    /// Score a label table against a truth pairing.
    Eval(EvalArgs),
    /// Rank a gallery for each query under a learned metric.
    Reid(ReidArgs),
    /// Project a feature bundle onto its leading principal components.
    Pca(PcaArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    identities: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    latent: usize,
    /// Per-frame noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Per-tracklet nuisance standard deviation.
    #[arg(long, default_value_t = 0.15)]
    nuisance: f64,
    /// Distractor identities per camera, as a fraction of --identities.
    #[arg(long, default_value_t = 0.0)]
    distractors: f64,
    /// Fraction of identities whose tracklet is split in two, per camera.
    #[arg(long, default_value_t = 0.0)]
    segments: f64,
    /// Identities in the held-out query/gallery split.
    #[arg(long, default_value_t = 50)]
    test_identities: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    camera_a: PathBuf,
    #[arg(long)]
    camera_b: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    /// mean, fixed:VALUE or percentile:P
    #[arg(long, default_value = "mean")]
    dummy_cost: String,
    #[arg(long, default_value_t = 600)]
    pca_dim: usize,
    #[arg(long, default_value_t = 10)]
    pool_window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ReidArgs {
    #[arg(long)]
    metric: PathBuf,
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
    /// mean, min or min:ALPHA
    #[arg(long, default_value = "mean")]
    mode: String,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct PcaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    dim: usize,
}

fn ensure_dir(dir: &Path) -> dgm_core::Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn synth(args: SynthArgs) -> dgm_core::Result<()> {
    let cfg = SynthConfig {
        num_identities: args.identities,
        latent_dim: args.latent,
        feature_dim: args.dim,
        noise: args.noise,
        nuisance: args.nuisance,
        distractor_frac: args.distractors,
        segment_frac: args.segments,
        test_identities: args.test_identities,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let bench = generate_benchmark(&cfg)?;
    let (query, gallery) = generate_test_split(&cfg)?;
    ensure_dir(&args.out)?;
    write_bundle(&bench.camera_a, &args.out.join("camera_a.dgmf"))?;
    write_bundle(&bench.camera_b, &args.out.join("camera_b.dgmf"))?;
    write_truth(&bench.truth, &args.out.join("truth.csv"))?;
    write_bundle(&query, &args.out.join("query.dgmf"))?;
    write_bundle(&gallery, &args.out.join("gallery.dgmf"))?;
    fs::write(args.out.join("synth.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    println!(
        "wrote {} + {} tracklets, {} truth pairs to {}",
        bench.camera_a.len(),
        bench.camera_b.len(),
        bench.truth.iter().flatten().count(),
        args.out.display()
    );
    Ok(())
}

fn estimate(args: EstimateArgs) -> dgm_core::Result<()> {
    let config = DgmConfig {
        lambda: args.lambda,
        k: args.k,
        max_iter: args.max_iter,
        pca_dim: args.pca_dim,
        pool_window: args.pool_window,
        dummy_cost_mode: args.dummy_cost.parse::<DummyCostMode>()?,
        rng_seed: args.seed,
        ..DgmConfig::default()
    };
    config.validate()?;
    let a = read_bundle(&args.camera_a)?;
    let b = read_bundle(&args.camera_b)?;
    let (a, b) = prepare_bundle(&a, &b, &config)?;
    let out = dgm_run(&a, &b, &config)?;

    ensure_dir(&args.out)?;
    let rows = label_rows(&out.costs, &out.assignment, &out.labels, out.dummy_cost)?;
    write_labels(&rows, &args.out.join("labels.csv"))?;
    write_metric(&out.metric, &args.out.join("metric.dgmm"))?;
    let report = Report {
        config: serde_json::to_value(&config)?,
        history: out.history,
        eval: EvalSection::default(),
    };
    write_report(&report, &args.out.join("report.json"))?;
    println!(
        "{} iterations, {} matched, {} dummy; results in {}",
        report.history.len() - 1,
        out.assignment.len() - out.assignment.num_dummy(),
        out.assignment.num_dummy(),
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> dgm_core::Result<()> {
    let rows = read_labels(&args.labels)?;
    let truth = read_truth(&args.truth)?;
    let (m, n) = label_table_shape(&rows);
    if m != truth.len() {
        return Err(DgmError::DimensionMismatch {
            expected: truth.len(),
            found: m,
        });
    }
    let assignment = assignment_from_rows(&rows, m, n)?;
    let prf = label_prf(&assignment, &truth)?;
    let report = Report {
        config: json!({ "labels": args.labels, "truth": args.truth }),
        history: Vec::new(),
        eval: EvalSection {
            precision: Some(prf.precision),
            recall: Some(prf.recall),
            f_score: Some(prf.f_score),
            ..EvalSection::default()
        },
    };
    write_report(&report, &args.report)?;
    println!(
        "precision {:.4} recall {:.4} f_score {:.4}",
        prf.precision, prf.recall, prf.f_score
    );
    Ok(())
}

fn reid(args: ReidArgs) -> dgm_core::Result<()> {
    let mode: SetDistanceMode = args.mode.parse()?;
    let metric = read_metric(&args.metric)?;
    let query = read_bundle(&args.query)?;
    let gallery = read_bundle(&args.gallery)?;
    let scores = reid_scores(&metric, &query, &gallery, mode)?;
    let report = Report {
        config: json!({
            "metric": args.metric,
            "query": args.query,
            "gallery": args.gallery,
            "mode": args.mode,
        }),
        history: Vec::new(),
        eval: EvalSection {
            cmc: scores.cmc.clone(),
            map: Some(scores.map),
            ..EvalSection::default()
        },
    };
    write_report(&report, &args.report)?;
    println!(
        "{} queries, rank-1 {:.4}, mAP {:.4}",
        scores.num_queries,
        scores.cmc.first().copied().unwrap_or(0.0),
        scores.map
    );
    Ok(())
}

fn pca(args: PcaArgs) -> dgm_core::Result<()> {
    let graph = read_bundle(&args.input)?;
    let model = pca_fit(&stack_frames(&[&graph]), args.dim)?;
    write_bundle(&model.apply_graph(&graph)?, &args.out)?;
    println!("projected {} -> {} dimensions", model.input_dim(), model.output_dim());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth(args),
        Command::Estimate(args) => estimate(args),
        Command::Eval(args) => eval(args),
        Command::Reid(args) => reid(args),
        Command::Pca(args) => pca(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
