use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use perfbound::circuit::stage_circuit;
use perfbound::decompose::{decompose_trace, load_decomposition, save_decomposition, IntervalMode};
use perfbound::metrics::{assemble_bounds, BoundPrediction};
use perfbound::noise::{load_noise_trace, save_noise_trace, NoiseTrace};
use perfbound::pipeline::{
    self, EvalInputs, EvaluationReport, ExperimentConfig, ModelErrorEstimate, PipelineError, TimingReport,
};
use perfbound::predictor::{load_checkpoint, save_checkpoint, save_training_log};
use perfbound::rng;
use perfbound::sim::{load_performance_trace, noisy_sim_bounds, save_performance_trace};

const EXIT_VALIDATION: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "perfbound", version, about = "Performance-bound prediction for quantum circuits under drifting noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config file (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides the environment and the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shots: Option<u32>,
    #[arg(long)]
    cl: Option<f64>,
    #[arg(long)]
    dp: Option<usize>,
    #[arg(long, value_parser = parse_interval_mode)]
    interval_mode: Option<IntervalMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole workflow and write every artifact.
    Run(Common),
    /// Generate (or copy) the noise trace.
    GenNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the performance trace under a noise trace.
    SimulateTrace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a performance trace into trend and residual and derive offsets.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the predictor on trend labels.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        decomposition: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict bounds for one snapshot of a noise trace.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        decomposition: Option<PathBuf>,
        /// Predictor error estimate written by `train` or `run`.
        #[arg(long)]
        model_error: Option<PathBuf>,
        /// Position of the snapshot in the noise trace.
        #[arg(long, default_value_t = 0)]
        snapshot: usize,
    },
    /// Min/max envelope of repeated noisy simulation at one snapshot.
    BaselineNoisysim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        snapshot: usize,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Evaluate a trained checkpoint on the held-out snapshots.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        decomposition: Option<PathBuf>,
    },
    /// Summarize the report of a finished run.
    Report {
        /// Run output directory (holding report.json).
        dir: PathBuf,
    },
}

fn parse_interval_mode(s: &str) -> std::result::Result<IntervalMode, String> {
    match s {
        "prediction_interval" | "prediction" => Ok(IntervalMode::PredictionInterval),
        "mean_interval" | "mean" => Ok(IntervalMode::MeanInterval),
        _ => Err(format!("unknown interval mode `{s}`")),
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out_dir: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&c.config)?;
        if let Some(v) = c.seed {
            cfg.seed = v;
        }
        if let Some(v) = c.shots {
            cfg.shots = v;
        }
        if let Some(v) = c.cl {
            cfg.cl = v;
        }
        if let Some(v) = c.dp {
            cfg.dp = v;
        }
        if let Some(v) = c.interval_mode {
            cfg.interval_mode = v;
        }
        cfg.validate()?;
        let out_dir = pipeline::output_dir(&cfg, c.out_dir.as_deref());
        std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Ctx { cfg, out_dir })
    }

    fn file(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join(name))
    }

    fn noise(&self, explicit: &Option<PathBuf>) -> Result<NoiseTrace> {
        let p = self.file(explicit, "noise.json");
        if p.is_file() {
            return Ok(load_noise_trace(&p)?);
        }
        if explicit.is_some() {
            bail!("noise trace {} not found", p.display());
        }
        let circuit = pipeline::build_circuit(&self.cfg)?;
        Ok(pipeline::noise_trace(&self.cfg, &circuit)?)
    }
}

fn stage<T>(stage: pipeline::Stage, r: perfbound::Result<T>) -> Result<T> {
    r.map_err(|source| PipelineError::Stage { stage, source }.into())
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    use pipeline::Stage;
    match cli.command {
        Command::Run(common) => {
            let ctx = Ctx::new(&common)?;
            let outcome = pipeline::run_experiment(&ctx.cfg, &ctx.out_dir)?;
            print_summary(&outcome.report, Some(&outcome.timing));
            eprintln!("artifacts written to {}", outcome.out_dir.display());
        }
        Command::GenNoise { common, out } => {
            let ctx = Ctx::new(&common)?;
            let circuit = stage(Stage::Circuit, pipeline::build_circuit(&ctx.cfg))?;
            let noise = stage(Stage::Noise, pipeline::noise_trace(&ctx.cfg, &circuit))?;
            let path = ctx.file(&out, "noise.json");
            stage(Stage::Noise, save_noise_trace(&noise, &path))?;
            eprintln!("{} snapshot(s) -> {}", noise.len(), path.display());
        }
        Command::SimulateTrace { common, noise, out } => {
            let ctx = Ctx::new(&common)?;
            let circuit = stage(Stage::Circuit, pipeline::build_circuit(&ctx.cfg))?;
            let spec = stage(Stage::Circuit, pipeline::measurement_spec(&ctx.cfg, &circuit))?;
            let noise = ctx.noise(&noise)?;
            let trace = stage(Stage::Simulate, pipeline::performance_trace(&ctx.cfg, &circuit, &noise, &spec))?;
            let path = ctx.file(&out, "trace.csv");
            stage(Stage::Simulate, save_performance_trace(&trace, &path))?;
            eprintln!("{} sample(s) of {:?} -> {}", trace.len(), spec.keys, path.display());
        }
        Command::Decompose { common, trace, out } => {
            let ctx = Ctx::new(&common)?;
            let trace = stage(Stage::Decompose, load_performance_trace(&ctx.file(&trace, "trace.csv")))?;
            let d = stage(
                Stage::Decompose,
                decompose_trace(&trace, ctx.cfg.dp, ctx.cfg.cl, ctx.cfg.interval_mode).map_err(Into::into),
            )?;
            let path = ctx.file(&out, "decomposition.csv");
            stage(Stage::Decompose, save_decomposition(&d, &path, Some((&ctx.cfg.hash(), ctx.cfg.seed))))?;
            for k in &d.keys {
                println!(
                    "{}: mu={} sigma={} L={} U={} removed={}",
                    k.key,
                    k.offsets.mean,
                    k.offsets.std,
                    k.offsets.low,
                    k.offsets.up,
                    k.removed.len()
                );
            }
        }
        Command::Train {
            common,
            noise,
            decomposition,
            out,
            epochs,
        } => {
            let mut ctx = Ctx::new(&common)?;
            if let Some(e) = epochs {
                ctx.cfg.train.max_epochs = e;
                ctx.cfg.validate()?;
            }
            let circuit = stage(Stage::Circuit, pipeline::build_circuit(&ctx.cfg))?;
            let staged = stage_circuit(&circuit);
            let noise = ctx.noise(&noise)?;
            let d = stage(Stage::Dataset, load_decomposition(&ctx.file(&decomposition, "decomposition.csv")))?;
            let (normalizer, dataset) = stage(Stage::Dataset, pipeline::prepare_dataset(&ctx.cfg, &staged, &noise, &d))?;
            let model = stage(Stage::Train, pipeline::train_stage(&ctx.cfg, &dataset, &normalizer))?;
            let path = ctx.file(&out, "checkpoint.ckpt");
            stage(Stage::Train, save_checkpoint(&model, &path, Some(&ctx.cfg.hash())))?;
            stage(Stage::Train, save_training_log(&model.training_log, &path.with_extension("log.csv")))?;
            let err = stage(Stage::Train, pipeline::estimate_model_error(&ctx.cfg, &d, &dataset, &model))?;
            stage(Stage::Train, err.save(&path.with_file_name("model_error.json")))?;
            eprintln!(
                "{} epoch(s), final train loss {:?} -> {}",
                model.training_log.len(),
                model.final_train_loss(),
                path.display()
            );
        }
        Command::Predict {
            common,
            checkpoint,
            noise,
            decomposition,
            model_error,
            snapshot,
        } => {
            let ctx = Ctx::new(&common)?;
            let model = stage(Stage::Evaluate, load_checkpoint(&ctx.file(&checkpoint, "checkpoint.ckpt")))?;
            let circuit = stage(Stage::Circuit, pipeline::build_circuit(&ctx.cfg))?;
            let noise = ctx.noise(&noise)?;
            let snap = noise.snapshots().get(snapshot).ok_or_else(|| {
                anyhow!("snapshot {snapshot} out of range ({} available)", noise.len())
            })?;
            let d = stage(Stage::Evaluate, load_decomposition(&ctx.file(&decomposition, "decomposition.csv")))?;
            let d = stage(Stage::Evaluate, d.with_confidence(ctx.cfg.cl, ctx.cfg.interval_mode).map_err(Into::into))?;
            let err = if ctx.cfg.include_model_error {
                Some(stage(Stage::Evaluate, ModelErrorEstimate::load(&ctx.file(&model_error, "model_error.json")))?)
            } else {
                None
            };
            let p = stage(Stage::Evaluate, model.predict(&circuit, snap).map_err(Into::into))?;
            let b: BoundPrediction = stage(
                Stage::Evaluate,
                assemble_bounds(
                    &model.output_keys,
                    &p.values,
                    &pipeline::bound_offsets_for(&ctx.cfg, &d, err.as_ref()),
                    ctx.cfg.cl,
                    ctx.cfg.interval_mode,
                    model.mode,
                    p.latency_seconds,
                )
                .map_err(Into::into),
            )?;
            print_json(&b)?;
        }
        Command::BaselineNoisysim {
            common,
            noise,
            snapshot,
            runs,
        } => {
            let ctx = Ctx::new(&common)?;
            let circuit = stage(Stage::Circuit, pipeline::build_circuit(&ctx.cfg))?;
            let spec = stage(Stage::Circuit, pipeline::measurement_spec(&ctx.cfg, &circuit))?;
            let noise = ctx.noise(&noise)?;
            let snap = noise.snapshots().get(snapshot).ok_or_else(|| {
                anyhow!("snapshot {snapshot} out of range ({} available)", noise.len())
            })?;
            let runs = runs.unwrap_or(ctx.cfg.baseline.runs);
            let seed = rng::derive_seed_path(ctx.cfg.seed, &[pipeline::seeds::BASELINE, snapshot as u64]);
            let ns = stage(
                Stage::Evaluate,
                noisy_sim_bounds(&circuit, snap, runs, ctx.cfg.shots, &spec, seed, &ctx.cfg.sim).map_err(Into::into),
            )?;
            let summary = serde_json::json!({
                "keys": spec.keys,
                "runs": runs,
                "low": ns.low,
                "up": ns.up,
                "mean": ns.mean,
                "elapsed_seconds": ns.elapsed_seconds,
            });
            print_json(&summary)?;
        }
        Command::Evaluate {
            common,
            checkpoint,
            noise,
            decomposition,
        } => {
            let ctx = Ctx::new(&common)?;
            let model = stage(Stage::Evaluate, load_checkpoint(&ctx.file(&checkpoint, "checkpoint.ckpt")))?;
            let circuit = stage(Stage::Circuit, pipeline::build_circuit(&ctx.cfg))?;
            let staged = stage_circuit(&circuit);
            let spec = stage(Stage::Circuit, pipeline::measurement_spec(&ctx.cfg, &circuit))?;
            if spec.keys != model.output_keys {
                bail!("checkpoint predicts {:?}, config tracks {:?}", model.output_keys, spec.keys);
            }
            let noise = ctx.noise(&noise)?;
            let d = stage(Stage::Dataset, load_decomposition(&ctx.file(&decomposition, "decomposition.csv")))?;
            let dataset = stage(
                Stage::Dataset,
                pipeline::dataset_with(&ctx.cfg, &staged, &noise, &d, &model.normalizer),
            )?;
            let model_error = stage(Stage::Evaluate, pipeline::estimate_model_error(&ctx.cfg, &d, &dataset, &model))?;
            let inputs = EvalInputs {
                circuit: &circuit,
                staged: &staged,
                noise: &noise,
                spec: &spec,
                decomposition: &d,
                dataset: &dataset,
                model: &model,
                model_error: &model_error,
            };
            let eval = stage(Stage::Evaluate, pipeline::evaluate(&ctx.cfg, &inputs))?;
            write(&ctx.out_dir.join("report.csv"), &eval.report.to_csv())?;
            write(&ctx.out_dir.join("report.json"), &eval.report.to_json())?;
            let timing = TimingReport {
                prediction_latency: Some(eval.latency),
                noisysim_seconds: eval.noisysim_seconds.clone(),
                speedup: eval.noisysim_seconds.first().map(|s| s / eval.latency.median),
                ..Default::default()
            };
            write(&ctx.out_dir.join("timing.json"), &timing.to_json())?;
            print_summary(&eval.report, Some(&timing));
        }
        Command::Report { dir } => {
            let path = dir.join("report.json");
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let report = EvaluationReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
            let timing = std::fs::read_to_string(dir.join("timing.json"))
                .ok()
                .and_then(|t| serde_json::from_str::<TimingReport>(&t).ok());
            print_summary(&report, timing.as_ref());
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_summary(r: &EvaluationReport, timing: Option<&TimingReport>) {
    println!(
        "{} ({} mode, keys {:?}): {} snapshots, {} train / {} held out, {} epochs",
        r.circuit,
        r.mode.name(),
        r.keys,
        r.snapshots,
        r.train_entries,
        r.test_entries,
        r.epochs
    );
    for c in &r.compliance {
        let ranges: Vec<String> = c.mean_range.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "  CL {:>5}: BCR {:6.2}% ({}/{}), mean range [{}]",
            c.cl * 100.0,
            c.bcr,
            c.within,
            c.total,
            ranges.join(", ")
        );
    }
    println!(
        "  predictor: MAE {:.4} RMSE {:.4} R2 {:.4}",
        r.regression.mae, r.regression.rmse, r.regression.r2
    );
    if let Some(lr) = &r.linreg {
        println!("  linear baseline: MAE {:.4} RMSE {:.4} R2 {:.4}", lr.mae, lr.rmse, lr.r2);
    }
    for b in &r.baseline {
        println!(
            "  t={} {}: value {:.4}, noisy-sim [{:.4}, {:.4}] mean {:.4}, diff1 {:.4}, diff2 {:.4}",
            b.timestamp, b.key, b.pred, b.noisysim_low, b.noisysim_up, b.noisysim_mean, b.diff1, b.diff2
        );
    }
    if let Some(t) = timing {
        if let Some(l) = &t.prediction_latency {
            println!("  prediction latency: median {:.3} ms, max {:.3} ms", l.median * 1e3, l.max * 1e3);
        }
        if let Some(s) = t.speedup {
            println!("  speedup over repeated simulation: {s:.0}x");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Config(_)));
            ExitCode::from(if validation { EXIT_VALIDATION } else { EXIT_STAGE })
        }
    }
}
