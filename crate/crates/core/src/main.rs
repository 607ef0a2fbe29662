use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use alreview::datamodel::{
    generate_synthetic_dataset, inject_noise, load_dataset, load_noise, save_dataset, save_noise, NoiseSidecar,
};
use alreview::detector::{load_predictions, predict_surrogate, save_predictions, PredictionMap};
use alreview::eval::{metrics_csv, render_svg, Curve};
use alreview::harness::{
    evaluate_predictions, resume, run_experiment_until, run_multi, sweep, EvalPredsOptions, ExperimentConfig,
};
use alreview::query::QueryStrategy;
use alreview::review::ReviewPolicy;
use alreview::seeding::{substream, tag};

#[derive(Parser)]
#[command(
    name = "alreview",
    version,
    about = "Active learning for object detection with label-error review"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset, optionally with noise and predictions.
    GenData(GenDataArgs),
    /// Run the active-learning experiment for one or more seeds.
    Run(RunArgs),
    /// Repeat the experiment over a grid of review fractions.
    Sweep(SweepArgs),
    /// Rank, review and evaluate a predictions file once.
    EvalPreds(EvalPredsArgs),
    /// Render metric curves from CSV files as SVG.
    Plot(PlotArgs),
}

/// Flags shared by `run` and `sweep`. Each one overrides the config file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON config file; flags given on the command line win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    u_init: Option<usize>,
    /// Per-cycle budget in boxes.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    cycles: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma_l: Option<f64>,
    #[arg(long)]
    gamma_r: Option<f64>,
    #[arg(long)]
    s_eps: Option<f64>,
    #[arg(long)]
    iou_eps: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    eval_iou: Option<f64>,
    /// random | entropy
    #[arg(long)]
    strategy: Option<QueryStrategy>,
    /// none | random | highest-loss
    #[arg(long)]
    policy: Option<ReviewPolicy>,
    #[arg(long)]
    rollover_unspent: bool,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Fixed predictions instead of the surrogate detector.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    renormalize: bool,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn build(&self, lambda: Option<f64>) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(
            seed, k, n_train, n_test, u_init, budget, cycles, alpha, gamma_l, gamma_r, s_eps, iou_eps, nms_iou,
            eval_iou, strategy, policy
        );
        if let Some(v) = lambda {
            c.lambda = v;
        }
        if self.rollover_unspent {
            c.rollover_unspent = true;
        }
        if self.renormalize {
            c.renormalize = true;
        }
        if self.dataset.is_some() {
            c.dataset = self.dataset.clone();
        }
        if self.noise.is_some() {
            c.noise = self.noise.clone();
        }
        if self.predictions.is_some() {
            c.predictions = self.predictions.clone();
        }
        if self.out.is_some() {
            c.output_dir = self.out.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Fraction of each cycle's budget spent on review.
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated seeds; more than one writes seed_<n>/ plus aggregate.csv.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Stop after this many cycles (the checkpoint stays resumable).
    #[arg(long)]
    stop_after: Option<u32>,
    /// Continue the run checkpointed in this directory; other flags are ignored.
    #[arg(long, conflicts_with_all = ["seeds", "stop_after"])]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated review fractions.
    #[arg(long, value_delimiter = ',', required = true)]
    lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 400)]
    n_test: usize,
    /// Clean dataset output.
    #[arg(long)]
    out: PathBuf,
    /// Also inject noise at `gamma_l` and write the sidecar here.
    #[arg(long)]
    noise_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    gamma_l: f64,
    /// Also write raw surrogate predictions at `skill` for every image.
    #[arg(long)]
    predictions_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    skill: f64,
}

#[derive(Args)]
struct EvalPredsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "entropy")]
    strategy: QueryStrategy,
    #[arg(long, default_value = "highest-loss")]
    policy: ReviewPolicy,
    #[arg(long, default_value_t = 0.7)]
    s_eps: f64,
    #[arg(long, default_value_t = 0.5)]
    nms_iou: f64,
    #[arg(long, default_value_t = 0.3)]
    iou_eps: f64,
    #[arg(long, default_value_t = 0.5)]
    eval_iou: f64,
    #[arg(long, default_value_t = 0.05)]
    gamma_r: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Review budget in boxes; unlimited when omitted.
    #[arg(long)]
    review_budget: Option<u64>,
    #[arg(long)]
    renormalize: bool,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics or aggregate CSV files, one curve each.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Curve labels, in input order; defaults to file stems.
    #[arg(long = "label")]
    labels: Vec<String>,
    #[arg(long, default_value = "map")]
    column: String,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let c = ExperimentConfig {
        seed: a.seed,
        k: a.k,
        n_train: a.n_train,
        n_test: a.n_test,
        gamma_l: a.gamma_l,
        u_init: 0,
        ..ExperimentConfig::default()
    };
    c.validate()?;
    // same substreams as `run`, so `run --dataset --noise` reproduces a synthetic run
    let mut store = generate_synthetic_dataset(&c.synth_spec(), &mut substream(a.seed, &[tag::DATA]))?;
    save_dataset(&store, &a.out)?;
    if let Some(p) = &a.noise_out {
        inject_noise(&mut store, a.gamma_l, &mut substream(a.seed, &[tag::NOISE]))?;
        save_noise(&NoiseSidecar::from_store(&store), p)?;
    }
    if let Some(p) = &a.predictions_out {
        let params = c.surrogate.clone();
        let preds: PredictionMap = store
            .train
            .iter()
            .chain(&store.test)
            .map(|im| {
                let mut rng = substream(a.seed, &[tag::PREDICT, 0, im.id]);
                (im.id, predict_surrogate(im, store.k(), a.skill, &params, &mut rng))
            })
            .collect();
        save_predictions(&preds, p)?;
    }
    eprintln!(
        "wrote {} train and {} test images ({} labels) to {}",
        store.train.len(),
        store.test.len(),
        store.label_count(),
        a.out.display()
    );
    Ok(())
}

fn report_final(rows: &[alreview::eval::CycleMetrics]) {
    if let Some(last) = rows.last() {
        eprintln!("cycle {}: budget {} mAP {:.4}", last.cycle, last.budget_total, last.map);
    }
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    if let Some(dir) = &a.resume {
        let state = resume(dir)?;
        report_final(&state.metrics);
        return Ok(());
    }
    let c = a.config.build(a.lambda)?;
    if a.seeds.len() > 1 {
        let (_, agg) = run_multi(&c, &a.seeds)?;
        if let Some(last) = agg.last() {
            eprintln!(
                "cycle {}: mAP {:.4} ± {:.4} over {} seeds",
                last.cycle,
                last.mean_of("map").unwrap_or(f64::NAN),
                last.std_of("map").unwrap_or(f64::NAN),
                last.seeds
            );
        }
        return Ok(());
    }
    let mut c = c;
    if let Some(&s) = a.seeds.first() {
        c.seed = s;
    }
    let state = run_experiment_until(&c, a.stop_after)?;
    if c.output_dir.is_none() {
        print!("{}", metrics_csv(&state.metrics));
    }
    report_final(&state.metrics);
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let c = a.config.build(None)?;
    let seeds = if a.seeds.is_empty() {
        vec![c.seed]
    } else {
        a.seeds.clone()
    };
    for &l in &a.lambda {
        let mut t = c.clone();
        t.lambda = l;
        t.validate()?;
    }
    for (lambda, agg) in sweep(&c, &a.lambda, &seeds)? {
        if let Some(last) = agg.last() {
            println!(
                "lambda {lambda}: final mAP {:.4}",
                last.mean_of("map").unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

fn cmd_eval_preds(a: &EvalPredsArgs) -> Result<()> {
    let mut store = load_dataset(&a.dataset)?;
    if let Some(p) = &a.noise {
        load_noise(p)?.apply(&mut store)?;
    }
    let raw = load_predictions(&a.predictions, &store, a.renormalize)?;
    let opts = EvalPredsOptions {
        seed: a.seed,
        strategy: a.strategy,
        policy: a.policy,
        s_eps: a.s_eps,
        nms_iou: a.nms_iou,
        iou_eps: a.iou_eps,
        eval_iou: a.eval_iou,
        gamma_r: a.gamma_r,
        alpha: a.alpha,
        review_budget: a.review_budget,
        weight_clamp: (0.1, 10.0),
    };
    let r = evaluate_predictions(&mut store, &raw, &opts)?;
    let report = json!({
        "map": r.map,
        "precision_miss": r.precision_miss,
        "precision_flip": r.precision_flip,
        "ranking": r.ranking.iter().map(|s| json!({"image": s.image_id, "score": s.score})).collect::<Vec<_>>(),
        "reviews": r.outcomes,
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let mut curves = Vec::with_capacity(a.inputs.len());
    for (i, path) in a.inputs.iter().enumerate() {
        let label = a.labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        curves.push(Curve::from_csv(path, &a.column, label)?);
    }
    write(&a.out, &render_svg(&curves, &a.title, &a.column))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<alreview::Error>() {
        Some(e) => e.exit_code() as u8,
        None if err.downcast_ref::<serde_json::Error>().is_some() => 3,
        None => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::EvalPreds(a) => cmd_eval_preds(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
