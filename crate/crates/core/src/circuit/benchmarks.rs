//! Benchmark circuit families: GHZ, RB, HS, VQE, QAOA.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{append_inverse, CircuitError, GateKind, QuantumCircuit};
use crate::rng;

/// Number of random Clifford layers in an RB circuit before its inverse.
pub const RB_DEFAULT_LAYERS: usize = 8;
const VQE_REPS: usize = 2;
const QAOA_DEFAULT_ANGLES: [f64; 4] = [0.8, 0.35, 0.55, 0.6];
const HS_DEFAULT_ANGLES: [f64; 2] = [0.25, 0.35];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BenchmarkFamily {
    Ghz,
    Rb,
    Hs,
    Vqe,
    Qaoa,
}

impl BenchmarkFamily {
    pub const ALL: [BenchmarkFamily; 5] = [
        BenchmarkFamily::Ghz,
        BenchmarkFamily::Rb,
        BenchmarkFamily::Hs,
        BenchmarkFamily::Vqe,
        BenchmarkFamily::Qaoa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkFamily::Ghz => "GHZ",
            BenchmarkFamily::Rb => "RB",
            BenchmarkFamily::Hs => "HS",
            BenchmarkFamily::Vqe => "VQE",
            BenchmarkFamily::Qaoa => "QAOA",
        }
    }
}

impl fmt::Display for BenchmarkFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkFamily {
    type Err = CircuitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchmarkFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CircuitError::Unsupported(format!("unknown family `{s}`")))
    }
}

/// Builds a deterministic benchmark circuit labelled `<FAMILY>-<n>`.
///
/// `params` overrides the family's angles: VQE takes `n * (reps + 1)` Ry
/// angles, QAOA `[gamma1, beta1, gamma2, beta2]`, HS `[J*dt, h*dt]`. GHZ and RB
/// take none. `seed` drives the randomized parts (RB sequence, QAOA graph,
/// default VQE angles).
pub fn build_benchmark(
    family: BenchmarkFamily,
    num_qubits: usize,
    seed: u64,
    params: Option<&[f64]>,
) -> Result<QuantumCircuit, CircuitError> {
    if num_qubits < 2 {
        return Err(CircuitError::Unsupported(format!(
            "{family} needs at least 2 qubits, got {num_qubits}"
        )));
    }
    let label = format!("{family}-{num_qubits}");
    match family {
        BenchmarkFamily::Ghz => {
            reject_params(family, params)?;
            ghz(num_qubits, label)
        }
        BenchmarkFamily::Rb => {
            reject_params(family, params)?;
            build_rb(num_qubits, seed, RB_DEFAULT_LAYERS)
        }
        BenchmarkFamily::Hs => {
            let angles = angles_or(family, params, &HS_DEFAULT_ANGLES)?;
            hamiltonian_step(num_qubits, angles[0], angles[1], label)
        }
        BenchmarkFamily::Vqe => {
            let count = num_qubits * (VQE_REPS + 1);
            let angles = match params {
                Some(p) if p.len() == count => p.to_vec(),
                Some(p) => {
                    return Err(CircuitError::Unsupported(format!(
                        "VQE-{num_qubits} takes {count} angles, got {}",
                        p.len()
                    )))
                }
                None => {
                    let mut r = rng::stream(rng::derive_seed(seed, 0x5643));
                    (0..count).map(|_| r.random_range(0.0..2.0 * PI)).collect()
                }
            };
            vqe(num_qubits, &angles, label)
        }
        BenchmarkFamily::Qaoa => {
            let angles = angles_or(family, params, &QAOA_DEFAULT_ANGLES)?;
            let edges = qaoa_graph(num_qubits, seed);
            qaoa(num_qubits, &edges, &angles, label)
        }
    }
}

fn reject_params(family: BenchmarkFamily, params: Option<&[f64]>) -> Result<(), CircuitError> {
    match params {
        Some(p) if !p.is_empty() => Err(CircuitError::Unsupported(format!(
            "{family} takes no parameters"
        ))),
        _ => Ok(()),
    }
}

fn angles_or(
    family: BenchmarkFamily,
    params: Option<&[f64]>,
    default: &[f64],
) -> Result<Vec<f64>, CircuitError> {
    match params {
        None => Ok(default.to_vec()),
        Some(p) if p.len() == default.len() => Ok(p.to_vec()),
        Some(p) => Err(CircuitError::Unsupported(format!(
            "{family} takes {} angles, got {}",
            default.len(),
            p.len()
        ))),
    }
}

fn ghz(n: usize, label: String) -> Result<QuantumCircuit, CircuitError> {
    let mut c = QuantumCircuit::new(n, label)?;
    c.push(GateKind::H, 0.0, &[0])?;
    for q in 0..n - 1 {
        c.push(GateKind::CNOT, 0.0, &[q, q + 1])?;
    }
    Ok(c)
}

/// Random single-qubit Clifford layers interleaved with one nearest-neighbour
/// two-qubit gate per layer, followed by the inverse sequence.
pub fn build_rb(n: usize, seed: u64, layers: usize) -> Result<QuantumCircuit, CircuitError> {
    const CLIFFORDS: [GateKind; 5] = [GateKind::H, GateKind::SX, GateKind::X, GateKind::Y, GateKind::Z];
    let mut r = rng::stream(rng::derive_seed(seed, 0x5242));
    let mut c = QuantumCircuit::new(n, format!("RB-{n}"))?;
    for _ in 0..layers {
        for q in 0..n {
            let kind = CLIFFORDS[r.random_range(0..CLIFFORDS.len())];
            c.push(kind, 0.0, &[q])?;
        }
        let a = r.random_range(0..n - 1);
        let (ctrl, tgt) = if r.random_bool(0.5) { (a, a + 1) } else { (a + 1, a) };
        let kind = if r.random_bool(0.5) { GateKind::CNOT } else { GateKind::CZ };
        c.push(kind, 0.0, &[ctrl, tgt])?;
    }
    let mut full = append_inverse(&c);
    full.set_label(format!("RB-{n}"));
    Ok(full)
}

/// One first-order Trotter step of `J sum Z_i Z_{i+1} + h sum X_i`.
fn hamiltonian_step(n: usize, j_dt: f64, h_dt: f64, label: String) -> Result<QuantumCircuit, CircuitError> {
    let mut c = QuantumCircuit::new(n, label)?;
    for q in 0..n {
        c.push(GateKind::Rx, 2.0 * h_dt, &[q])?;
    }
    for parity in [0, 1] {
        for q in (parity..n - 1).step_by(2) {
            c.push(GateKind::CNOT, 0.0, &[q, q + 1])?;
            c.push(GateKind::Rz, 2.0 * j_dt, &[q + 1])?;
            c.push(GateKind::CNOT, 0.0, &[q, q + 1])?;
        }
    }
    Ok(c)
}

/// Hardware-efficient ansatz: Ry layer, linear CNOT chain, repeated, closing Ry layer.
fn vqe(n: usize, angles: &[f64], label: String) -> Result<QuantumCircuit, CircuitError> {
    let mut c = QuantumCircuit::new(n, label)?;
    let mut it = angles.iter().copied();
    for rep in 0..=VQE_REPS {
        for q in 0..n {
            c.push(GateKind::Ry, it.next().unwrap(), &[q])?;
        }
        if rep < VQE_REPS {
            for q in 0..n - 1 {
                c.push(GateKind::CNOT, 0.0, &[q, q + 1])?;
            }
        }
    }
    Ok(c)
}

/// Seeded random graph with every vertex degree capped at 3. Each candidate
/// pair (in shuffled order) is kept with probability 1/2; a graph that ends
/// up empty keeps its first candidate.
pub fn qaoa_graph(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut r = rng::stream(rng::derive_seed(seed, 0x5141));
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(&mut r);
    let mut degree = vec![0usize; n];
    let mut edges = Vec::new();
    for &(a, b) in &pairs {
        let keep = r.random_bool(0.5);
        if keep && degree[a] < 3 && degree[b] < 3 {
            degree[a] += 1;
            degree[b] += 1;
            edges.push((a, b));
        }
    }
    if edges.is_empty() {
        edges.push(pairs[0]);
    }
    edges.sort_unstable();
    edges
}

fn qaoa(n: usize, edges: &[(usize, usize)], angles: &[f64], label: String) -> Result<QuantumCircuit, CircuitError> {
    let mut c = QuantumCircuit::new(n, label)?;
    for q in 0..n {
        c.push(GateKind::H, 0.0, &[q])?;
    }
    for layer in angles.chunks(2) {
        let (gamma, beta) = (layer[0], layer[1]);
        for &(a, b) in edges {
            c.push(GateKind::CNOT, 0.0, &[a, b])?;
            c.push(GateKind::Rz, 2.0 * gamma, &[b])?;
            c.push(GateKind::CNOT, 0.0, &[a, b])?;
        }
        for q in 0..n {
            c.push(GateKind::Rx, 2.0 * beta, &[q])?;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ghz3_matches_reference_layout() {
        let c = build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap();
        let summary: Vec<_> = c
            .gates()
            .iter()
            .map(|g| (g.kind, g.operands.clone(), g.step))
            .collect();
        assert_eq!(
            summary,
            vec![
                (GateKind::H, vec![0], 0),
                (GateKind::CNOT, vec![0, 1], 1),
                (GateKind::CNOT, vec![1, 2], 2),
            ]
        );
        assert_eq!(c.label(), "GHZ-3");
    }

    #[test]
    fn ghz2_is_h_then_cnot() {
        let c = build_benchmark(BenchmarkFamily::Ghz, 2, 99, None).unwrap();
        let kinds: Vec<_> = c.gates().iter().map(|g| g.kind).collect();
        assert_eq!(kinds, vec![GateKind::H, GateKind::CNOT]);
    }

    #[test]
    fn randomized_families_are_deterministic() {
        for family in [BenchmarkFamily::Rb, BenchmarkFamily::Qaoa, BenchmarkFamily::Vqe] {
            let a = build_benchmark(family, 3, 7, None).unwrap();
            let b = build_benchmark(family, 3, 7, None).unwrap();
            assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        }
        let a = build_benchmark(BenchmarkFamily::Rb, 3, 7, None).unwrap();
        let c = build_benchmark(BenchmarkFamily::Rb, 3, 8, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_single_qubit_and_bad_params() {
        assert!(build_benchmark(BenchmarkFamily::Ghz, 1, 0, None).is_err());
        assert!(build_benchmark(BenchmarkFamily::Ghz, 3, 0, Some(&[1.0])).is_err());
        assert!(build_benchmark(BenchmarkFamily::Qaoa, 4, 0, Some(&[1.0])).is_err());
        assert!(build_benchmark(BenchmarkFamily::Vqe, 4, 0, Some(&[0.1; 12])).is_ok());
        assert!(build_benchmark(BenchmarkFamily::Vqe, 4, 0, Some(&[0.1; 11])).is_err());
    }

    #[test]
    fn qaoa_graph_respects_degree_cap() {
        for seed in 0..50 {
            for n in 2..9 {
                let edges = qaoa_graph(n, seed);
                assert!(!edges.is_empty());
                let mut deg = vec![0; n];
                for &(a, b) in &edges {
                    assert!(a < b && b < n);
                    deg[a] += 1;
                    deg[b] += 1;
                }
                assert!(deg.iter().all(|&d| d <= 3));
            }
        }
    }

    #[test]
    fn family_names_parse() {
        assert_eq!("ghz".parse::<BenchmarkFamily>().unwrap(), BenchmarkFamily::Ghz);
        assert_eq!("QAOA".parse::<BenchmarkFamily>().unwrap(), BenchmarkFamily::Qaoa);
        assert!("QFT".parse::<BenchmarkFamily>().is_err());
    }
}
