//! Monte-Carlo trajectory simulation under a noise snapshot.
//!
//! Each trajectory starts in `|0...0>` and walks the staged circuit. After
//! every gate a uniformly random non-identity Pauli is applied on its operands
//! with the snapshot's gate-error probability. At the end of each stage every
//! qubit undergoes stochastic amplitude damping (`p = 1 - exp(-d/T1)`) and a
//! stochastic phase flip (`p = max(0, (1 - exp(-d/T2))/2 - p_amp/2)`), with
//! `d` the stage duration. Measurement samples the final state and flips each
//! classical bit with the qubit's readout error.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::state::{matrix, Pauli, StateVector, C};
use super::{key_index, MeasurementSpec, PerfMode, PerformanceSample, SimError, SimOptions};
use super::ideal::MAX_STATEVECTOR_QUBITS;
use crate::circuit::{stage_circuit, GateKind, QuantumCircuit, StagedCircuit};
use crate::noise::NoiseSnapshot;
use crate::rng;

/// Per-qubit damping tables for one stage duration.
struct Damper {
    p_amp: Vec<f64>,
    p_phase: Vec<f64>,
    lo_bits: usize,
    /// `prod_{q in bits(i)} (1 - p_q)` split into low/high halves of `i`.
    f_lo: Vec<f64>,
    f_hi: Vec<f64>,
    any_amp: bool,
}

impl Damper {
    fn new(snapshot: &NoiseSnapshot, n: usize, d: f64) -> Self {
        let p_amp: Vec<f64> = (0..n).map(|q| 1.0 - (-d / snapshot.t1[q]).exp()).collect();
        let p_phase = (0..n)
            .map(|q| (((1.0 - (-d / snapshot.t2[q]).exp()) / 2.0) - p_amp[q] / 2.0).max(0.0))
            .collect();
        let lo_bits = n / 2;
        let table = |qubits: std::ops::Range<usize>| {
            let k = qubits.len();
            (0..1usize << k)
                .map(|i| {
                    (0..k)
                        .filter(|b| i >> b & 1 == 1)
                        .map(|b| 1.0 - p_amp[qubits.start + b])
                        .product::<f64>()
                })
                .collect::<Vec<f64>>()
        };
        let f_lo = table(0..lo_bits);
        let f_hi = table(lo_bits..n);
        let any_amp = p_amp.iter().any(|&p| p > 0.0);
        Damper {
            p_amp,
            p_phase,
            lo_bits,
            f_lo,
            f_hi,
            any_amp,
        }
    }

    #[inline]
    fn no_jump_weight(&self, i: usize) -> f64 {
        self.f_lo[i & ((1 << self.lo_bits) - 1)] * self.f_hi[i >> self.lo_bits]
    }

    fn apply(&self, s: &mut StateVector, r: &mut ChaCha8Rng) {
        if self.any_amp {
            self.amplitude_damping(s, r);
        }
        for (q, &p) in self.p_phase.iter().enumerate() {
            if p > 0.0 && r.random::<f64>() < p {
                s.apply_z(q);
            }
        }
    }

    /// Exact joint unraveling of independent per-qubit damping: first decide
    /// whether any qubit decays, and only if so locate the first decaying
    /// qubit and sample the rest sequentially.
    fn amplitude_damping(&self, s: &mut StateVector, r: &mut ChaCha8Rng) {
        let mut total = 0.0;
        let mut p0 = 0.0;
        for (i, a) in s.amps.iter().enumerate() {
            let w = a.norm_sqr();
            total += w;
            p0 += w * self.no_jump_weight(i);
        }
        let u = r.random::<f64>() * total;
        if u < p0 {
            let inv = 1.0 / p0.sqrt();
            for (i, a) in s.amps.iter_mut().enumerate() {
                *a *= self.no_jump_weight(i).sqrt() * inv;
            }
            return;
        }
        let n = s.n;
        let mut jump = vec![0.0; n];
        for (i, a) in s.amps.iter().enumerate() {
            let mut w = a.norm_sqr();
            for (q, j) in jump.iter_mut().enumerate() {
                if i >> q & 1 == 1 {
                    *j += w * self.p_amp[q];
                    w *= 1.0 - self.p_amp[q];
                }
            }
        }
        let target = u - p0;
        let mut first = None;
        let mut acc = 0.0;
        for (q, &j) in jump.iter().enumerate() {
            if j > 0.0 {
                first = Some(q);
                acc += j;
                if target < acc {
                    break;
                }
            }
        }
        let Some(k) = first else { return };
        for q in 0..k {
            s.damp_no_jump(q, self.p_amp[q]);
        }
        s.damp_jump(k);
        renormalize(s);
        for q in k + 1..n {
            let p = self.p_amp[q];
            if p <= 0.0 {
                continue;
            }
            if r.random::<f64>() < p * s.prob_one(q) {
                s.damp_jump(q);
            } else {
                s.damp_no_jump(q, p);
            }
            renormalize(s);
        }
    }
}

fn renormalize(s: &mut StateVector) {
    let norm = s.norm_sqr();
    if norm > 0.0 {
        s.scale(1.0 / norm.sqrt());
    }
}

enum Op {
    Gate {
        kind: GateKind,
        mat: Option<[[C; 2]; 2]>,
        operands: Vec<usize>,
        error: f64,
    },
    Damp(usize),
}

/// A staged circuit bound to one snapshot.
struct Program {
    n: usize,
    ops: Vec<Op>,
    dampers: Vec<Damper>,
    readout: Vec<f64>,
}

impl Program {
    fn compile(staged: &StagedCircuit, snapshot: &NoiseSnapshot, opts: &SimOptions) -> Result<Self, SimError> {
        let n = staged.num_qubits();
        if snapshot.num_qubits() < n {
            return Err(SimError::QubitMismatch {
                circuit: n,
                snapshot: snapshot.num_qubits(),
            });
        }
        let dampers = vec![
            Damper::new(snapshot, n, opts.single_qubit_stage_us),
            Damper::new(snapshot, n, opts.two_qubit_stage_us),
        ];
        let mut ops = Vec::new();
        for stage in 0..staged.num_stages() {
            for g in staged.stage_gates(stage) {
                let error = snapshot.gate_error_for(g)?;
                let mat = match g.kind {
                    GateKind::H | GateKind::SX | GateKind::Rx | GateKind::Ry | GateKind::Rz => {
                        Some(matrix(g.kind, g.param))
                    }
                    _ => None,
                };
                ops.push(Op::Gate {
                    kind: g.kind,
                    mat,
                    operands: g.operands.clone(),
                    error,
                });
            }
            ops.push(Op::Damp(usize::from(staged.has_two_qubit_gate(stage))));
        }
        Ok(Program {
            n,
            ops,
            dampers,
            readout: (0..n).map(|q| snapshot.readout(q)).collect(),
        })
    }

    fn trajectory(&self, s: &mut StateVector, r: &mut ChaCha8Rng) {
        s.reset();
        for op in &self.ops {
            match op {
                Op::Gate {
                    kind,
                    mat,
                    operands,
                    error,
                } => {
                    match mat {
                        Some(m) => s.apply_1q(m, operands[0]),
                        None => s.apply_gate(*kind, 0.0, operands),
                    }
                    if *error > 0.0 && r.random::<f64>() < *error {
                        if operands.len() == 1 {
                            s.apply_pauli(Pauli::from_index(r.random_range(1..4)), operands[0]);
                        } else {
                            let code = r.random_range(1..16usize);
                            s.apply_pauli(Pauli::from_index(code), operands[0]);
                            s.apply_pauli(Pauli::from_index(code >> 2), operands[1]);
                        }
                    }
                }
                Op::Damp(d) => self.dampers[*d].apply(s, r),
            }
        }
    }

    fn read(&self, mut outcome: usize, r: &mut ChaCha8Rng) -> usize {
        for (q, &p) in self.readout.iter().enumerate() {
            if p > 0.0 && r.random::<f64>() < p {
                outcome ^= 1 << q;
            }
        }
        outcome
    }
}

/// Measurement basis rotation applied before sampling.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Basis {
    Z,
    X,
    Y,
}

/// Observable keys sharing one measurement basis.
struct BasisGroup {
    basis: Vec<Basis>,
    /// (key position, parity mask)
    members: Vec<(usize, usize)>,
}

enum Plan {
    Probability(Vec<usize>),
    Observable(Vec<BasisGroup>),
}

impl Plan {
    fn new(spec: &MeasurementSpec) -> Self {
        match spec.mode {
            PerfMode::Probability => Plan::Probability(spec.keys.iter().map(|k| key_index(k)).collect()),
            PerfMode::Observable => {
                let mut groups: Vec<BasisGroup> = Vec::new();
                for (pos, key) in spec.keys.iter().enumerate() {
                    let basis: Vec<Basis> = key
                        .chars()
                        .map(|c| match c {
                            'X' => Basis::X,
                            'Y' => Basis::Y,
                            _ => Basis::Z,
                        })
                        .collect();
                    let mask = key
                        .chars()
                        .enumerate()
                        .filter(|(_, c)| *c != 'I')
                        .fold(0usize, |m, (q, _)| m | 1 << q);
                    match groups.iter_mut().find(|g| g.basis == basis) {
                        Some(g) => g.members.push((pos, mask)),
                        None => groups.push(BasisGroup {
                            basis,
                            members: vec![(pos, mask)],
                        }),
                    }
                }
                Plan::Observable(groups)
            }
        }
    }
}

fn sample_index(cumulative: &[f64], r: &mut ChaCha8Rng) -> usize {
    let total = *cumulative.last().expect("non-empty state");
    let u = r.random::<f64>() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn cumulative(s: &StateVector, out: &mut Vec<f64>) {
    out.clear();
    let mut acc = 0.0;
    out.extend(s.amps.iter().map(|a| {
        acc += a.norm_sqr();
        acc
    }));
}

fn rotate(s: &mut StateVector, basis: &[Basis]) {
    let h = matrix(GateKind::H, 0.0);
    let sdg = [[C::new(1.0, 0.0), C::new(0.0, 0.0)], [C::new(0.0, 0.0), C::new(0.0, -1.0)]];
    for (q, b) in basis.iter().enumerate() {
        match b {
            Basis::Z => {}
            Basis::X => s.apply_1q(&h, q),
            Basis::Y => {
                s.apply_1q(&sdg, q);
                s.apply_1q(&h, q);
            }
        }
    }
}

fn execute(program: &Program, plan: &Plan, num_keys: usize, shots: u32, per_trajectory: u32, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed);
    let mut s = StateVector::zero(program.n);
    let mut rotated = s.clone();
    let mut cum = Vec::with_capacity(s.amps.len());
    let mut acc = vec![0.0; num_keys];
    let mut remaining = shots;
    while remaining > 0 {
        let batch = remaining.min(per_trajectory);
        remaining -= batch;
        program.trajectory(&mut s, &mut r);
        match plan {
            Plan::Probability(indices) => {
                cumulative(&s, &mut cum);
                for _ in 0..batch {
                    let outcome = program.read(sample_index(&cum, &mut r), &mut r);
                    for (slot, &idx) in acc.iter_mut().zip(indices) {
                        if idx == outcome {
                            *slot += 1.0;
                        }
                    }
                }
            }
            Plan::Observable(groups) => {
                for g in groups {
                    let state = if g.basis.iter().all(|b| *b == Basis::Z) {
                        &s
                    } else {
                        rotated.amps.copy_from_slice(&s.amps);
                        rotate(&mut rotated, &g.basis);
                        &rotated
                    };
                    cumulative(state, &mut cum);
                    for _ in 0..batch {
                        let outcome = program.read(sample_index(&cum, &mut r), &mut r);
                        for &(pos, mask) in &g.members {
                            acc[pos] += if (outcome & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                        }
                    }
                }
            }
        }
    }
    acc.iter().map(|v| v / f64::from(shots)).collect()
}

pub(crate) struct Runner {
    staged: StagedCircuit,
    plan: Plan,
    num_keys: usize,
    opts: SimOptions,
}

impl Runner {
    pub(crate) fn new(circuit: &QuantumCircuit, spec: &MeasurementSpec, opts: &SimOptions) -> Result<Self, SimError> {
        let m = circuit.num_qubits();
        if m > MAX_STATEVECTOR_QUBITS {
            return Err(SimError::TooManyQubits {
                qubits: m,
                limit: MAX_STATEVECTOR_QUBITS,
            });
        }
        spec.validate(m)?;
        opts.validate()?;
        Ok(Runner {
            staged: stage_circuit(circuit),
            plan: Plan::new(spec),
            num_keys: spec.keys.len(),
            opts: *opts,
        })
    }

    pub(crate) fn run(&self, snapshot: &NoiseSnapshot, shots: u32, seed: u64) -> Result<PerformanceSample, SimError> {
        if shots == 0 {
            return Err(SimError::NoShots);
        }
        let program = Program::compile(&self.staged, snapshot, &self.opts)?;
        let values = execute(&program, &self.plan, self.num_keys, shots, self.opts.shots_per_trajectory, seed);
        Ok(PerformanceSample {
            timestamp: snapshot.timestamp,
            values,
            shots,
        })
    }
}

/// Simulates `shots` noisy executions of `circuit` under `snapshot` and
/// returns the tracked values. Deterministic in `seed`.
pub fn noisy_run(
    circuit: &QuantumCircuit,
    snapshot: &NoiseSnapshot,
    spec: &MeasurementSpec,
    shots: u32,
    seed: u64,
    opts: &SimOptions,
) -> Result<PerformanceSample, SimError> {
    Runner::new(circuit, spec, opts)?.run(snapshot, shots, seed)
}

/// Min/max envelope of repeated noisy runs under one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisySimBounds {
    pub low: Vec<f64>,
    pub up: Vec<f64>,
    pub mean: Vec<f64>,
    /// Per-run values, one row per run.
    pub runs: Vec<Vec<f64>>,
    pub elapsed_seconds: f64,
}

/// Repeats [`noisy_run`] `runs` times with seeds derived from `seed` and
/// keeps the per-key minimum and maximum.
#[allow(clippy::too_many_arguments)]
pub fn noisy_sim_bounds(
    circuit: &QuantumCircuit,
    snapshot: &NoiseSnapshot,
    runs: usize,
    shots: u32,
    spec: &MeasurementSpec,
    seed: u64,
    opts: &SimOptions,
) -> Result<NoisySimBounds, SimError> {
    if runs < 2 {
        return Err(SimError::TooFewRuns(runs));
    }
    let seeds: Vec<u64> = (0..runs as u64).map(|i| rng::derive_seed(seed, i)).collect();
    noisy_sim_bounds_with_seeds(circuit, snapshot, &seeds, shots, spec, opts)
}

/// [`noisy_sim_bounds`] over an explicit list of per-run seeds.
pub fn noisy_sim_bounds_with_seeds(
    circuit: &QuantumCircuit,
    snapshot: &NoiseSnapshot,
    seeds: &[u64],
    shots: u32,
    spec: &MeasurementSpec,
    opts: &SimOptions,
) -> Result<NoisySimBounds, SimError> {
    if seeds.len() < 2 {
        return Err(SimError::TooFewRuns(seeds.len()));
    }
    let start = Instant::now();
    let runner = Runner::new(circuit, spec, opts)?;
    let runs: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| runner.run(snapshot, shots, s).map(|p| p.values))
        .collect::<Result<_, _>>()?;
    let k = spec.keys.len();
    let mut low = vec![f64::INFINITY; k];
    let mut up = vec![f64::NEG_INFINITY; k];
    let mut mean = vec![0.0; k];
    for row in &runs {
        for j in 0..k {
            low[j] = low[j].min(row[j]);
            up[j] = up[j].max(row[j]);
            mean[j] += row[j];
        }
    }
    for m in &mut mean {
        *m /= runs.len() as f64;
    }
    Ok(NoisySimBounds {
        low,
        up,
        mean,
        runs,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}
