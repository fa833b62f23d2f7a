use std::path::Path;

use perfbound::circuit::BenchmarkFamily;
use perfbound::decompose::load_decomposition;
use perfbound::noise::{load_noise_trace, save_noise_trace, synth_noise_trace, NoiseProfile};
use perfbound::pipeline::{
    run_experiment, EvaluationReport, ExperimentConfig, ModelErrorEstimate, PipelineError, Stage, TimingReport,
};
use perfbound::predictor::load_checkpoint;
use perfbound::sim::load_performance_trace;
use serde_json::Value;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::benchmark(BenchmarkFamily::Ghz, 2);
    cfg.seed = 11;
    cfg.noise.length = 90;
    cfg.shots = 300;
    cfg.test_size = 20;
    cfg.train.hidden_size = 8;
    cfg.train.fc_dims = vec![8];
    cfg.train.max_epochs = 3;
    cfg.baseline.runs = 4;
    cfg
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn every_artifact_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let out = run_experiment(&cfg, dir.path()).unwrap();
    let d = dir.path();

    let reloaded = ExperimentConfig::load(&d.join("config.json")).unwrap();
    assert_eq!(reloaded.hash(), cfg.hash());
    let noise = load_noise_trace(&d.join("noise.json")).unwrap();
    assert_eq!(noise.len(), 90);
    let trace = load_performance_trace(&d.join("trace.csv")).unwrap();
    assert_eq!(trace.len(), 90);
    let dec = load_decomposition(&d.join("decomposition.csv")).unwrap();
    assert_eq!(dec.key_names(), out.report.keys);
    let model = load_checkpoint(&d.join("checkpoint.ckpt")).unwrap();
    assert_eq!(model.output_keys, out.report.keys);
    ModelErrorEstimate::load(&d.join("model_error.json")).unwrap();
    assert_eq!(EvaluationReport::from_json(&read(d, "report.json")).unwrap(), out.report);
    serde_json::from_str::<TimingReport>(&read(d, "timing.json")).unwrap();

    let text = read(d, "report.csv");
    let mut csv = csv::Reader::from_reader(text.as_bytes());
    assert!(csv.records().count() > 0);
    assert!(csv::Reader::from_reader(text.as_bytes()).records().all(|r| r.is_ok()));
    let manifest: Value = serde_json::from_str(&read(d, "manifest.json")).unwrap();
    assert_eq!(manifest["status"], "complete");
    for a in manifest["artifacts"].as_array().unwrap() {
        assert!(d.join(a.as_str().unwrap()).is_file(), "{a}");
    }
    for p in &out.artifacts {
        assert!(d.join(p).is_file(), "{}", p.display());
    }
}

#[test]
fn identical_config_gives_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small();
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    for f in ["noise.json", "trace.csv", "decomposition.csv", "checkpoint.ckpt", "model_error.json", "report.json", "report.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
}

#[test]
fn out_of_range_confidence_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.cl = 1.5;
    let err = run_experiment(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)), "{err}");
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn stage_failure_leaves_a_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    // A trace for the wrong register size passes validation but fails the simulation stage.
    let narrow = synth_noise_trace(1, 90, 1, &NoiseProfile::default()).unwrap();
    let noise_path = dir.path().join("narrow.json");
    save_noise_trace(&narrow, &noise_path).unwrap();
    cfg.noise.trace_file = Some(noise_path);
    let out = dir.path().join("out");
    let err = run_experiment(&cfg, &out).unwrap_err();
    let PipelineError::Stage { stage, .. } = &err else {
        panic!("expected a stage error, got {err}");
    };
    let manifest: Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert_eq!(manifest["status"], "partial");
    assert_eq!(manifest["failed_stage"], serde_json::to_value(stage).unwrap());
    assert!(manifest["error"].as_str().is_some());
    let listed: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(listed.contains(&"config.json"));
    assert!(!listed.contains(&"report.json"));
    assert!(*stage != Stage::Write);
}

#[test]
fn predictor_beats_linear_regression_on_ghz3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::benchmark(BenchmarkFamily::Ghz, 3);
    cfg.seed = 1;
    cfg.baseline.runs = 20;
    let out = run_experiment(&cfg, dir.path()).unwrap();
    let lr = out.report.linreg.as_ref().expect("linear baseline fitted");
    assert!(lr.mae > out.report.regression.mae, "LR {} vs predictor {}", lr.mae, out.report.regression.mae);
    for b in &out.report.baseline {
        assert!((0.0..=1.0).contains(&b.pred));
    }
    let ratio: f64 = out.report.pca_explained.iter().sum();
    assert!(ratio > 0.0 && ratio <= 1.0 + 1e-12);
}

#[test]
fn four_hundred_run_envelope_of_vqe4_is_about_a_tenth() {
    use perfbound::pipeline::{build_circuit, measurement_spec, noise_trace};
    use perfbound::sim::{noisy_sim_bounds, PerfMode};

    let mut cfg = ExperimentConfig::benchmark(BenchmarkFamily::Vqe, 4);
    cfg.measurement.mode = Some(PerfMode::Observable);
    cfg.noise.length = 10;
    let circuit = build_circuit(&cfg).unwrap();
    let spec = measurement_spec(&cfg, &circuit).unwrap();
    let noise = noise_trace(&cfg, &circuit).unwrap();
    let ns = noisy_sim_bounds(&circuit, &noise.snapshots()[5], 400, cfg.shots, &spec, 9, &cfg.sim).unwrap();
    let range = ns.up[0] - ns.low[0];
    assert!((0.04..=0.36).contains(&range), "range {range}");
}
