//! End-to-end experiment driver: noise trace, performance trace,
//! decomposition, training, held-out evaluation and artifact emission.

mod calibration;
mod config;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{build_benchmark, load_circuit, stage_circuit, GateKind, QuantumCircuit, StagedCircuit};
use crate::decompose::{decompose_trace, save_decomposition, DecompositionResult};
use crate::encode::{fit_normalizer_for, FeatureNormalizer};
use crate::error::{io_err, Result};
use crate::metrics::{
    assemble_bounds, diff_metrics, evaluate_bounds, linreg_baseline, project_noise_pca, regression_metrics,
    BoundPrediction, LatencyStats, MetricsError,
};
use crate::noise::{load_noise_trace, save_noise_trace, synth_noise_trace, GateKey, NoiseTrace};
use crate::predictor::{build_dataset, save_checkpoint, save_training_log, train, PredictorModel, TrainingDataset};
use crate::rng;
use crate::sim::{
    generate_performance_trace, ideal_probabilities, index_key, noisy_run, noisy_sim_bounds, save_performance_trace,
    MeasurementSpec, PerfMode, PerformanceTrace,
};

pub use calibration::{estimate_model_error, ModelErrorEstimate, MODEL_ERROR_FORMAT};
pub use config::{BaselineConfig, CircuitSpec, ExperimentConfig, MeasurementConfig, NoiseSpec, CONFIG_FORMAT};
pub use report::{
    BaselineRow, ComplianceRow, EvaluationReport, OffsetRow, TimingReport, REPORT_CSV_HEADER, REPORT_FORMAT,
};

/// Environment variable overriding the output directory of a run.
pub const OUT_DIR_ENV: &str = "PERFBOUND_OUT_DIR";

/// Sub-seed indices derived from the experiment seed.
pub mod seeds {
    pub const NOISE: u64 = 1;
    pub const TRACE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const MEASURE: u64 = 5;
    pub const BASELINE: u64 = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Circuit,
    Noise,
    Simulate,
    Decompose,
    Dataset,
    Train,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Circuit => "circuit",
            Stage::Noise => "noise",
            Stage::Simulate => "simulate",
            Stage::Decompose => "decompose",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: crate::Error,
    },
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T, E: Into<crate::Error>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: e.into(),
        })
    }
}

pub fn build_circuit(cfg: &ExperimentConfig) -> Result<QuantumCircuit> {
    if let Some(file) = &cfg.circuit.file {
        return load_circuit(&cfg.resolve(file));
    }
    let family = cfg
        .circuit
        .family
        .as_deref()
        .expect("validated config has a family")
        .parse()?;
    let qubits = cfg.circuit.qubits.expect("validated config has qubits");
    Ok(build_benchmark(family, qubits, cfg.circuit.seed, cfg.circuit.params.as_deref())?)
}

/// Noise trace from the configured file, else synthesized. Unless the
/// profile lists its own keys, the synthetic trace carries the circuit's gate
/// keys plus an identity key per qubit.
pub fn noise_trace(cfg: &ExperimentConfig, circuit: &QuantumCircuit) -> Result<NoiseTrace> {
    let num_qubits = circuit.num_qubits();
    let trace = match &cfg.noise.trace_file {
        Some(f) => load_noise_trace(&cfg.resolve(f))?,
        None => {
            let mut profile = cfg.noise.profile.clone();
            if profile.gate_keys.is_none() {
                let mut keys = GateKey::required_by(circuit);
                keys.extend((0..num_qubits).map(|q| GateKey::new(GateKind::I, &[q])));
                profile.gate_keys = Some(keys.into_iter().collect());
            }
            synth_noise_trace(num_qubits, cfg.noise.length, rng::derive_seed(cfg.seed, seeds::NOISE), &profile)?
        }
    };
    if trace.num_qubits() != num_qubits {
        return Err(crate::noise::NoiseError::InvalidProfile(format!(
            "noise trace covers {} qubit(s), circuit has {num_qubits}",
            trace.num_qubits()
        ))
        .into());
    }
    Ok(trace)
}

/// Tracked keys: the configured ones, else the most likely ideal bitstrings
/// (probability mode) or `Z` on every qubit (observable mode).
pub fn measurement_spec(cfg: &ExperimentConfig, circuit: &QuantumCircuit) -> Result<MeasurementSpec> {
    let mode = cfg.measurement.mode();
    let m = circuit.num_qubits();
    let keys = match &cfg.measurement.keys {
        Some(k) => k.clone(),
        None => match mode {
            PerfMode::Observable => vec!["Z".repeat(m)],
            PerfMode::Probability => {
                let p = ideal_probabilities(circuit)?;
                let top = p.iter().cloned().fold(0.0, f64::max);
                p.iter()
                    .enumerate()
                    .filter(|(_, &v)| v >= top - 1e-9)
                    .map(|(i, _)| index_key(i, m))
                    .collect()
            }
        },
    };
    let spec = MeasurementSpec { mode, keys };
    spec.validate(m)?;
    Ok(spec)
}

pub fn performance_trace(
    cfg: &ExperimentConfig,
    circuit: &QuantumCircuit,
    noise: &NoiseTrace,
    spec: &MeasurementSpec,
) -> Result<PerformanceTrace> {
    let mut trace = generate_performance_trace(
        circuit,
        noise,
        cfg.shots,
        spec,
        rng::derive_seed(cfg.seed, seeds::TRACE),
        &cfg.sim,
    )?;
    trace.noise_ref = "noise.json".into();
    trace.config_hash = Some(cfg.hash());
    Ok(trace)
}

pub fn decompose_stage(cfg: &ExperimentConfig, trace: &PerformanceTrace) -> Result<DecompositionResult> {
    Ok(decompose_trace(trace, cfg.dp, cfg.cl, cfg.interval_mode)?)
}

/// Normalizer fitted over every snapshot of the trace and the split dataset.
pub fn prepare_dataset(
    cfg: &ExperimentConfig,
    staged: &StagedCircuit,
    noise: &NoiseTrace,
    decomposition: &DecompositionResult,
) -> Result<(FeatureNormalizer, TrainingDataset)> {
    let normalizer = fit_normalizer_for(staged, noise.snapshots(), cfg.include_readout)?;
    let dataset = dataset_with(cfg, staged, noise, decomposition, &normalizer)?;
    Ok((normalizer, dataset))
}

/// Dataset and held-out split under an existing normalizer.
pub fn dataset_with(
    cfg: &ExperimentConfig,
    staged: &StagedCircuit,
    noise: &NoiseTrace,
    decomposition: &DecompositionResult,
    normalizer: &FeatureNormalizer,
) -> Result<TrainingDataset> {
    let labelled = decomposition.labelled_positions().len();
    if cfg.test_size >= labelled {
        return Err(crate::predictor::PredictorError::InvalidConfig(format!(
            "test_size {} leaves no training data among {labelled} labelled snapshots",
            cfg.test_size
        ))
        .into());
    }
    let fraction = cfg.test_size as f64 / labelled as f64;
    Ok(build_dataset(
        staged,
        noise,
        decomposition,
        normalizer,
        cfg.measurement.mode(),
        fraction,
        rng::derive_seed(cfg.seed, seeds::SPLIT),
    )?)
}

/// Per-key `(L, U)` used for bounds: the residual offsets, widened for the
/// moving-average shrinkage and the predictor's error as the config asks.
pub fn bound_offsets_for(
    cfg: &ExperimentConfig,
    d: &DecompositionResult,
    model_error: Option<&ModelErrorEstimate>,
) -> Vec<(f64, f64)> {
    let extra = match model_error {
        Some(e) if cfg.include_model_error => e.variance.clone(),
        _ => vec![0.0; d.keys.len()],
    };
    if !cfg.correct_residual_shrinkage && extra.iter().all(|&v| v == 0.0) {
        return d.offsets();
    }
    d.observation_offsets(cfg.correct_residual_shrinkage, &extra)
}

pub fn train_stage(cfg: &ExperimentConfig, dataset: &TrainingDataset, normalizer: &FeatureNormalizer) -> Result<PredictorModel> {
    Ok(train(dataset, normalizer, &cfg.train)?)
}

/// Everything the evaluation stage needs from the earlier stages.
pub struct EvalInputs<'a> {
    pub circuit: &'a QuantumCircuit,
    pub staged: &'a StagedCircuit,
    pub noise: &'a NoiseTrace,
    pub spec: &'a MeasurementSpec,
    pub decomposition: &'a DecompositionResult,
    pub dataset: &'a TrainingDataset,
    pub model: &'a PredictorModel,
    pub model_error: &'a ModelErrorEstimate,
}

/// Held-out evaluation results, including the per-snapshot series used for plots.
pub struct Evaluation {
    pub report: EvaluationReport,
    pub latency: LatencyStats,
    pub noisysim_seconds: Vec<f64>,
    pub timestamps: Vec<u64>,
    /// Bounds at the primary confidence level, one per held-out snapshot.
    pub bounds: Vec<BoundPrediction>,
    pub measured: Vec<Vec<f64>>,
    pub pca: Vec<(bool, Vec<f64>)>,
}

pub fn evaluate(cfg: &ExperimentConfig, inp: &EvalInputs<'_>) -> Result<Evaluation> {
    let ds = inp.dataset;
    let mode = inp.spec.mode;
    let keys = &inp.spec.keys;
    let snaps = inp.noise.snapshots();
    let test: Vec<usize> = ds.test.clone();
    if test.is_empty() {
        return Err(MetricsError::Empty("held-out set").into());
    }

    let mut preds = Vec::with_capacity(test.len());
    let mut latencies = Vec::with_capacity(test.len());
    for &i in &test {
        let snap = &snaps[ds.entries[i].position];
        let p = inp.model.predict_staged(inp.staged, snap)?;
        latencies.push(p.latency_seconds);
        preds.push(p.values);
    }
    let latency = LatencyStats::from_samples(&latencies)?;

    let measured: Vec<Vec<f64>> = test
        .par_iter()
        .map(|&i| {
            let pos = ds.entries[i].position;
            let seed = rng::derive_seed_path(cfg.seed, &[seeds::MEASURE, pos as u64]);
            noisy_run(inp.circuit, &snaps[pos], inp.spec, cfg.shots, seed, &cfg.sim).map(|s| s.values)
        })
        .collect::<std::result::Result<_, _>>()?;

    let mut offsets = Vec::new();
    let mut compliance = Vec::new();
    let mut per_cl_bounds: Vec<Vec<BoundPrediction>> = Vec::new();
    for cl in cfg.confidence_levels() {
        let d = inp.decomposition.with_confidence(cl, cfg.interval_mode)?;
        let off = bound_offsets_for(cfg, &d, Some(inp.model_error));
        for (k, &(low, up)) in d.keys.iter().zip(&off) {
            offsets.push(OffsetRow {
                cl,
                key: k.key.clone(),
                mean: k.offsets.mean,
                std: k.offsets.std,
                n: k.offsets.n,
                low,
                up,
            });
        }
        let bounds = preds
            .iter()
            .zip(&latencies)
            .map(|(p, &lat)| assemble_bounds(keys, p, &off, cl, cfg.interval_mode, mode, lat))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let e = evaluate_bounds(&bounds, &measured)?;
        compliance.push(ComplianceRow {
            cl,
            total: e.total,
            within: e.within,
            bcr: e.bcr,
            mean_range: e.mean_range,
        });
        per_cl_bounds.push(bounds);
    }

    let flat_pred: Vec<f64> = preds.iter().flatten().copied().collect();
    let flat_truth: Vec<f64> = test.iter().flat_map(|&i| ds.entries[i].label.iter().copied()).collect();
    let regression = regression_metrics(&flat_pred, &flat_truth)?;
    let linreg = match linreg_baseline(ds) {
        Ok((_, lr)) => Some(regression_metrics(&lr.into_iter().flatten().collect::<Vec<_>>(), &flat_truth)?),
        Err(MetricsError::TooFewSamples { .. }) | Err(MetricsError::Singular) => None,
        Err(e) => return Err(e.into()),
    };

    let mut baseline = Vec::new();
    let mut noisysim_seconds = Vec::new();
    for (j, &i) in test.iter().enumerate().take(cfg.baseline.snapshots) {
        let e = &ds.entries[i];
        let seed = rng::derive_seed_path(cfg.seed, &[seeds::BASELINE, e.position as u64]);
        let ns = noisy_sim_bounds(inp.circuit, &snaps[e.position], cfg.baseline.runs, cfg.shots, inp.spec, seed, &cfg.sim)?;
        noisysim_seconds.push(ns.elapsed_seconds);
        for (k, key) in keys.iter().enumerate() {
            let (diff1, diff2) = diff_metrics(preds[j][k], ns.low[k], ns.up[k], ns.mean[k])?;
            baseline.push(BaselineRow {
                timestamp: e.timestamp,
                key: key.clone(),
                pred: preds[j][k],
                measured: measured[j][k],
                bounds: per_cl_bounds.iter().map(|b| (b[j].cl, b[j].low[k], b[j].up[k])).collect(),
                noisysim_low: ns.low[k],
                noisysim_up: ns.up[k],
                noisysim_mean: ns.mean[k],
                noisysim_runs: cfg.baseline.runs,
                diff1,
                diff2,
            });
        }
    }

    let in_test: std::collections::BTreeSet<usize> = test.iter().map(|&i| ds.entries[i].position).collect();
    let flat_noise: Vec<Vec<f64>> = snaps.iter().map(|s| s.flatten()).collect();
    let (pca, pca_explained) = match project_noise_pca(&flat_noise, 2) {
        Ok(p) => (
            p.coords.into_iter().enumerate().map(|(i, c)| (in_test.contains(&i), c)).collect(),
            p.explained_ratio,
        ),
        Err(MetricsError::TooFewSamples { .. }) | Err(MetricsError::Misaligned { .. }) => (Vec::new(), Vec::new()),
        Err(e) => return Err(e.into()),
    };

    let removed: usize = inp.decomposition.keys.iter().map(|k| k.removed.len()).sum();
    let report = EvaluationReport {
        format: REPORT_FORMAT,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        circuit: cfg.display_name(),
        mode,
        keys: keys.clone(),
        interval_mode: cfg.interval_mode,
        dp: cfg.dp,
        shots: cfg.shots,
        snapshots: snaps.len(),
        dataset_entries: ds.len(),
        train_entries: ds.train.len(),
        test_entries: test.len(),
        outliers_removed: removed,
        epochs: inp.model.training_log.len(),
        final_train_loss: inp.model.final_train_loss(),
        final_test_loss: inp.model.training_log.last().and_then(|l| l.test_loss),
        offsets,
        model_error_std: cfg
            .include_model_error
            .then(|| inp.model_error.variance.iter().map(|v| v.sqrt()).collect()),
        compliance,
        regression,
        linreg,
        baseline,
        pca_explained,
    };
    Ok(Evaluation {
        report,
        latency,
        noisysim_seconds,
        timestamps: test.iter().map(|&i| ds.entries[i].timestamp).collect(),
        bounds: per_cl_bounds.swap_remove(0),
        measured,
        pca,
    })
}

/// Output directory: explicit override, else the environment variable, else
/// the config's `output_dir`, else `out/<name>`.
pub fn output_dir(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    match &cfg.output_dir {
        Some(p) => cfg.resolve(p),
        None => PathBuf::from("out").join(cfg.display_name()),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub report: EvaluationReport,
    pub timing: TimingReport,
    /// Written files, relative to `out_dir`.
    pub artifacts: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: u32,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    config_hash: &'a str,
    seed: u64,
    artifacts: Vec<String>,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(PathBuf::from(name));
        self.dir.join(name)
    }

    fn add(&mut self, full: &Path) {
        if let Ok(rel) = full.strip_prefix(&self.dir) {
            self.files.push(rel.to_path_buf());
        }
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| io_err(&p, e))
    }

    fn manifest(&self, cfg_hash: &str, seed: u64, failure: Option<(Stage, String)>) -> Result<()> {
        let (status, failed_stage, error) = match failure {
            None => ("complete", None, None),
            Some((s, e)) => ("partial", Some(s), Some(e)),
        };
        let m = Manifest {
            format: 1,
            status,
            failed_stage,
            error,
            config_hash: cfg_hash,
            seed,
            artifacts: self.files.iter().map(|p| p.display().to_string()).collect(),
        };
        let p = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        std::fs::write(&p, text).map_err(|e| io_err(&p, e))
    }
}

/// Runs every stage and writes all artifacts under `out_dir`. On a stage
/// failure the manifest lists what was written and marks the run partial.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> std::result::Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir.join("plots")).map_err(|e| io_err(out_dir, e)).at(Stage::Write)?;
    let mut art = Artifacts {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let hash = cfg.hash();
    let result = run_stages(cfg, &mut art, &hash);
    match result {
        Ok((report, timing)) => {
            art.manifest(&hash, cfg.seed, None).at(Stage::Write)?;
            let mut artifacts = art.files;
            artifacts.push("manifest.json".into());
            Ok(RunOutcome {
                out_dir: out_dir.to_path_buf(),
                report,
                timing,
                artifacts,
            })
        }
        Err(e) => {
            if let PipelineError::Stage { stage, source } = &e {
                let _ = art.manifest(&hash, cfg.seed, Some((*stage, source.to_string())));
            }
            Err(e)
        }
    }
}

fn run_stages(
    cfg: &ExperimentConfig,
    art: &mut Artifacts,
    hash: &str,
) -> std::result::Result<(EvaluationReport, TimingReport), PipelineError> {
    let mut timing = TimingReport::default();
    let mut clock = Instant::now();
    let mut lap = |timing: &mut TimingReport, stage: Stage| {
        timing.stages.push((stage, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    art.write("config.json", &(cfg.to_json() + "\n")).at(Stage::Write)?;
    let circuit = build_circuit(cfg).at(Stage::Circuit)?;
    let staged = stage_circuit(&circuit);
    let spec = measurement_spec(cfg, &circuit).at(Stage::Circuit)?;
    lap(&mut timing, Stage::Circuit);

    let noise = noise_trace(cfg, &circuit).at(Stage::Noise)?;
    save_noise_trace(&noise, &art.path("noise.json")).at(Stage::Noise)?;
    lap(&mut timing, Stage::Noise);

    let trace = performance_trace(cfg, &circuit, &noise, &spec).at(Stage::Simulate)?;
    let tp = art.path("trace.csv");
    save_performance_trace(&trace, &tp).at(Stage::Simulate)?;
    art.add(&crate::sim::meta_path(&tp));
    lap(&mut timing, Stage::Simulate);

    let decomposition = decompose_stage(cfg, &trace).at(Stage::Decompose)?;
    let dp = art.path("decomposition.csv");
    save_decomposition(&decomposition, &dp, Some((hash, cfg.seed))).at(Stage::Decompose)?;
    art.add(&crate::decompose::offsets_path(&dp));
    lap(&mut timing, Stage::Decompose);

    let (normalizer, dataset) = prepare_dataset(cfg, &staged, &noise, &decomposition).at(Stage::Dataset)?;
    lap(&mut timing, Stage::Dataset);

    let model = train_stage(cfg, &dataset, &normalizer).at(Stage::Train)?;
    save_checkpoint(&model, &art.path("checkpoint.ckpt"), Some(hash)).at(Stage::Train)?;
    save_training_log(&model.training_log, &art.path("training_log.csv")).at(Stage::Train)?;
    let model_error = estimate_model_error(cfg, &decomposition, &dataset, &model).at(Stage::Train)?;
    model_error.save(&art.path("model_error.json")).at(Stage::Train)?;
    lap(&mut timing, Stage::Train);

    let inputs = EvalInputs {
        circuit: &circuit,
        staged: &staged,
        noise: &noise,
        spec: &spec,
        decomposition: &decomposition,
        dataset: &dataset,
        model: &model,
        model_error: &model_error,
    };
    let eval = evaluate(cfg, &inputs).at(Stage::Evaluate)?;
    lap(&mut timing, Stage::Evaluate);

    art.write("report.csv", &eval.report.to_csv()).at(Stage::Write)?;
    art.write("report.json", &eval.report.to_json()).at(Stage::Write)?;
    for path in report::write_plots(&art.dir.join("plots"), &trace, &decomposition, &model, &eval).at(Stage::Write)? {
        art.add(&path);
    }
    lap(&mut timing, Stage::Write);

    timing.prediction_latency = Some(eval.latency);
    timing.noisysim_seconds = eval.noisysim_seconds.clone();
    timing.speedup = eval
        .noisysim_seconds
        .first()
        .filter(|_| eval.latency.median > 0.0)
        .map(|s| s / eval.latency.median);
    art.write("timing.json", &timing.to_json()).at(Stage::Write)?;
    Ok((eval.report, timing))
}
