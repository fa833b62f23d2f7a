//! End-to-end acceptance suite. Runs every criterion in sequence inside one
//! test so that timings are not distorted by parallel tests, prints one
//! PASS/FAIL line per criterion and fails if any criterion failed.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use perfbound::circuit::{build_benchmark, BenchmarkFamily};
use perfbound::decompose::{decompose, decompose_trace, IntervalMode};
use perfbound::metrics::{bcr, diff_metrics, sum_observable_bounds, BoundPrediction};
use perfbound::noise::{GateKey, NoiseSnapshot, NoiseTrace};
use perfbound::pipeline::{run_experiment, EvaluationReport, ExperimentConfig, RunOutcome};
use perfbound::predictor::{gradient_check, kink_free_probe, Loss, TrainConfig};
use perfbound::rng;
use perfbound::sim::{generate_performance_trace, ideal_probabilities, MeasurementSpec, PerfMode, SimOptions};
use rand::Rng;

const BENCHMARKS: [(BenchmarkFamily, usize); 6] = [
    (BenchmarkFamily::Ghz, 3),
    (BenchmarkFamily::Rb, 3),
    (BenchmarkFamily::Ghz, 4),
    (BenchmarkFamily::Hs, 4),
    (BenchmarkFamily::Vqe, 4),
    (BenchmarkFamily::Qaoa, 4),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(cfg: &ExperimentConfig, dir: &Path) -> (RunOutcome, f64) {
    let start = Instant::now();
    let out = run_experiment(cfg, dir).unwrap_or_else(|e| panic!("{}: {e}", cfg.display_name()));
    (out, start.elapsed().as_secs_f64())
}

fn quiet_trace(n: usize, len: usize, keys: &[GateKey]) -> NoiseTrace {
    let snapshots = (0..len)
        .map(|t| NoiseSnapshot {
            timestamp: t as u64,
            wall_clock: None,
            t1: vec![1e12; n],
            t2: vec![1e12; n],
            gate_error: keys.iter().map(|k| (k.clone(), 0.0)).collect::<BTreeMap<_, _>>(),
            readout_error: vec![0.0; n],
        })
        .collect();
    NoiseTrace::new(n, 4, snapshots).unwrap()
}

fn ideal_state() -> Outcome {
    let start = Instant::now();
    let c = build_benchmark(BenchmarkFamily::Ghz, 3, 1, None).unwrap();
    let p = ideal_probabilities(&c).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = p
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let want = if i == 0 || i == 7 { 0.5 } else { 0.0 };
            (v - want).abs()
        })
        .fold(0.0, f64::max);
    outcome(worst <= 1e-12 && secs < 1.0, format!("max deviation {worst:.1e}, {secs:.3} s"))
}

fn sampling_noise_isolation() -> Outcome {
    let start = Instant::now();
    let c = build_benchmark(BenchmarkFamily::Ghz, 3, 1, None).unwrap();
    let keys: Vec<GateKey> = GateKey::required_by(&c).into_iter().collect();
    let noise = quiet_trace(3, 500, &keys);
    let spec = MeasurementSpec::probability(["000", "111"]);
    let trace = generate_performance_trace(&c, &noise, 2000, &spec, 11, &SimOptions::default()).unwrap();
    let d = decompose_trace(&trace, 7, 0.95, IntervalMode::PredictionInterval).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let target = (0.25f64 / 2000.0).sqrt();
    let mut pass = secs < 30.0;
    let mut parts = Vec::new();
    for k in &d.keys {
        let (mu, sigma) = (k.offsets.mean, k.offsets.std);
        pass &= mu.abs() <= 0.005 && (sigma / target - 1.0).abs() <= 0.3;
        parts.push(format!("{}: mu {mu:.2e} sigma {sigma:.4}", k.key));
    }
    outcome(pass, format!("{} (target sigma {target:.4}), {secs:.1} s", parts.join(", ")))
}

fn decomposition_exactness() -> Outcome {
    let mut r = rng::stream(2024);
    let mut checked = 0usize;
    let mut bad = 0usize;
    for trial in 0..50 {
        let len = r.random_range(20..400);
        let dp = r.random_range(2..12);
        let level = r.random_range(0.05..0.95);
        let series: Vec<f64> = (0..len).map(|_| level + r.random_range(-0.05..0.05)).collect();
        let ts: Vec<u64> = (0..len as u64).collect();
        let d = decompose(&ts, &["k".to_string()], &[series], dp, 0.9, IntervalMode::PredictionInterval)
            .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
        let k = &d.keys[0];
        for i in 0..len {
            if let (Some(c), Some(t), Some(res)) = (k.cleaned[i], k.trend[i], k.residual[i]) {
                checked += 1;
                if t + res != c {
                    bad += 1;
                }
            }
        }
    }
    outcome(bad == 0 && checked > 0, format!("{checked} indices, {bad} mismatches"))
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut params = 0;
    for seed in 0..5u64 {
        for loss in [Loss::Msle, Loss::Mse] {
            let cfg = TrainConfig {
                loss,
                seed,
                dropout: 0.0,
                ..Default::default()
            };
            let probe = kink_free_probe(&cfg, 3, 3, 4, 2, 100 + seed, 1e-4);
            let r = gradient_check(&cfg, &probe).unwrap();
            worst = worst.max(r.max_relative_error);
            params = r.checked;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-5 && secs < 60.0,
        format!("max relative error {worst:.2e} over {params} parameters x 10 checks, {secs:.1} s"),
    )
}

fn calibration(reports: &[&EvaluationReport], secs: f64) -> Outcome {
    let mut pass = secs < 900.0;
    let mut parts = Vec::new();
    for r in reports {
        for cl in [0.9, 0.95, 0.99] {
            let c = r.compliance_at(cl).expect("confidence level evaluated");
            pass &= (c.bcr - cl * 100.0).abs() <= 5.0;
            parts.push(format!("{} CL{}: {:.2}", r.circuit, (cl * 100.0).round(), c.bcr));
        }
    }
    outcome(pass, format!("{}; {secs:.0} s", parts.join(", ")))
}

fn in_bound(reports: &[EvaluationReport]) -> Outcome {
    let mut good = 0;
    let mut parts = Vec::new();
    for r in reports {
        let inside = !r.baseline.is_empty() && r.baseline.iter().all(|b| b.diff1 == 0.0 && b.diff2 <= 0.05);
        let worst = r.baseline.iter().map(|b| b.diff2).fold(0.0, f64::max);
        good += usize::from(inside);
        parts.push(format!("{} {} (diff2 {worst:.4})", r.circuit, if inside { "in" } else { "out" }));
    }
    outcome(good >= 5, format!("{good}/6: {}", parts.join(", ")))
}

fn tightness(reports: &[EvaluationReport]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in reports {
        let ci = r.compliance.iter().position(|c| c.cl == 0.9).expect("CL 0.9 evaluated");
        for b in &r.baseline {
            let (_, low, up) = b.bounds[ci];
            let ratio = (up - low) / b.noisysim_range();
            pass &= ratio <= 3.0;
            parts.push(format!("{} {}: {ratio:.2}", r.circuit, b.key));
        }
    }
    outcome(pass, format!("range / noisy-sim range: {}", parts.join(", ")))
}

fn latency(vqe: &RunOutcome) -> Outcome {
    let lat = vqe.timing.prediction_latency.expect("latency measured");
    let speedup = vqe.timing.speedup.expect("baseline timed");
    outcome(
        lat.median <= 1e-3 && speedup >= 1e3,
        format!("median {:.3} ms, speedup {speedup:.0}x", lat.median * 1e3),
    )
}

fn scalability(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig::from_json(
        r#"{"format": 1, "seed": 1, "circuit": {"family": "GHZ", "qubits": 15},
            "noise": {"length": 240}, "shots": 1000, "test_size": 40,
            "sim": {"shots_per_trajectory": 100}, "train": {"max_epochs": 40},
            "baseline": {"runs": 20}}"#,
        Path::new("."),
    )
    .unwrap();
    let (out, secs) = run(&cfg, dir);
    let lat = out.timing.prediction_latency.expect("latency measured");
    outcome(
        lat.median <= 5e-3,
        format!("median {:.3} ms, max {:.3} ms, whole run {secs:.0} s", lat.median * 1e3, lat.max * 1e3),
    )
}

fn metric_exactness() -> Outcome {
    let (d1, d2) = diff_metrics(0.9546, 0.8955, 0.9345, 0.9162).unwrap();
    let samples: Vec<f64> = (0..80).map(|i| if i < 71 { 0.5 } else { 2.0 }).collect();
    let rate = bcr(&samples, &vec![(0.0, 1.0); 80]).unwrap();
    let pass = (d1 - 0.0201).abs() < 5e-5 && (d2 - 0.0384).abs() < 5e-5 && (rate - 88.75).abs() < 1e-9;
    outcome(pass, format!("diff1 {d1:.4}, diff2 {d2:.4}, BCR {rate}"))
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let mut same = true;
    for f in ["report.json", "report.csv", "checkpoint.ckpt"] {
        let a = std::fs::read(first.join(f)).unwrap();
        let b = std::fs::read(second.join(f)).unwrap();
        same &= a == b;
    }
    outcome(same, "report.json, report.csv, checkpoint.ckpt compared byte for byte")
}

fn interval_soundness() -> Outcome {
    let mut r = rng::stream(77);
    let mut violations = 0;
    for _ in 0..10_000 {
        let terms = r.random_range(1..7);
        let mut parts = Vec::new();
        let mut truth = 0.0;
        for t in 0..terms {
            let c: f64 = if r.random_bool(0.1) { 0.0 } else { r.random_range(-2.0..2.0) };
            let v: f64 = r.random_range(-1.0..1.0);
            let low = v - r.random_range(0.0..0.3);
            let up = v + r.random_range(0.0..0.3);
            let mut b = BoundPrediction::exact(format!("P{t}"), v, 0.9, IntervalMode::PredictionInterval);
            b.low = vec![low];
            b.up = vec![up];
            truth += c * v;
            parts.push((c, b));
        }
        let s = sum_observable_bounds(&parts).unwrap();
        if !(s.low[0] <= truth && truth <= s.up[0]) {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations in 10000 trials"))
}

fn report(n: usize, name: &'static str, o: Outcome, results: &mut Vec<(usize, &'static str, Outcome)>) {
    println!("criterion {n:>2} {:<4} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((n, name, o));
}

fn benchmark_config(family: BenchmarkFamily, n: usize, mode: PerfMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::benchmark(family, n);
    cfg.measurement.mode = Some(mode);
    cfg.extra_cls = vec![0.95, 0.99];
    cfg
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();

    report(1, "ideal-state correctness", ideal_state(), &mut results);
    report(2, "sampling-noise isolation", sampling_noise_isolation(), &mut results);
    report(3, "decomposition exactness", decomposition_exactness(), &mut results);
    report(4, "gradient fidelity", gradient_fidelity(), &mut results);

    let mut probability = Vec::new();
    let mut calibration_secs = 0.0;
    let mut vqe = None;
    for (family, n) in BENCHMARKS {
        let cfg = benchmark_config(family, n, PerfMode::Probability);
        let (out, secs) = run(&cfg, &dir(&format!("p_{}", cfg.display_name())));
        if matches!((family, n), (BenchmarkFamily::Ghz, 3) | (BenchmarkFamily::Vqe, 4)) {
            calibration_secs += secs;
        }
        if (family, n) == (BenchmarkFamily::Vqe, 4) {
            vqe = Some(out.clone());
        }
        probability.push(out);
    }
    let calibrated: Vec<&EvaluationReport> = probability
        .iter()
        .map(|o| &o.report)
        .filter(|r| r.circuit == "GHZ-3" || r.circuit == "VQE-4")
        .collect();
    report(5, "BCR calibration", calibration(&calibrated, calibration_secs), &mut results);
    let reports: Vec<EvaluationReport> = probability.iter().map(|o| o.report.clone()).collect();
    report(6, "in-bound prediction", in_bound(&reports), &mut results);

    let observable: Vec<EvaluationReport> = BENCHMARKS
        .iter()
        .map(|&(family, n)| {
            let cfg = benchmark_config(family, n, PerfMode::Observable);
            run(&cfg, &dir(&format!("o_{}", cfg.display_name()))).0.report
        })
        .collect();
    report(7, "bound tightness", tightness(&observable), &mut results);
    report(8, "latency and speedup", latency(vqe.as_ref().expect("VQE-4 ran")), &mut results);
    report(9, "scalability", scalability(&dir("ghz15")), &mut results);
    report(10, "metric exactness", metric_exactness(), &mut results);

    let cfg = benchmark_config(BenchmarkFamily::Ghz, 3, PerfMode::Probability);
    run(&cfg, &dir("p_GHZ-3_again"));
    report(11, "determinism", determinism(&dir("p_GHZ-3"), &dir("p_GHZ-3_again")), &mut results);
    report(12, "interval-arithmetic soundness", interval_soundness(), &mut results);

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("{} ({})", r.0, r.1)).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
