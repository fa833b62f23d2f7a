use super::state::StateVector;
use super::SimError;
use crate::circuit::QuantumCircuit;

pub const MAX_STATEVECTOR_QUBITS: usize = 20;

/// Exact noiseless output distribution over the `2^m` basis states.
pub fn ideal_probabilities(circuit: &QuantumCircuit) -> Result<Vec<f64>, SimError> {
    let m = circuit.num_qubits();
    if m > MAX_STATEVECTOR_QUBITS {
        return Err(SimError::TooManyQubits {
            qubits: m,
            limit: MAX_STATEVECTOR_QUBITS,
        });
    }
    let mut s = StateVector::zero(m);
    for g in circuit.gates() {
        s.apply_gate(g.kind, g.param, &g.operands);
    }
    Ok(s.probabilities())
}

fn check_distribution(name: &str, p: &[f64]) -> Result<(), SimError> {
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(SimError::InvalidDistribution(format!("{name}[{i}] = {v}")));
    }
    let total: f64 = p.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(SimError::InvalidDistribution(format!("{name} sums to {total}")));
    }
    Ok(())
}

/// Squared Bhattacharyya overlap `(sum_i sqrt(p_i q_i))^2`.
pub fn fidelity(p_ideal: &[f64], p_observed: &[f64]) -> Result<f64, SimError> {
    if p_ideal.len() != p_observed.len() {
        return Err(SimError::InvalidDistribution(format!(
            "length mismatch: {} vs {}",
            p_ideal.len(),
            p_observed.len()
        )));
    }
    check_distribution("p_ideal", p_ideal)?;
    check_distribution("p_observed", p_observed)?;
    let s: f64 = p_ideal.iter().zip(p_observed).map(|(a, b)| (a * b).sqrt()).sum();
    Ok((s * s).min(1.0))
}

/// Expectation of a Z-type Pauli string (`I`/`Z` only) under a distribution
/// indexed by basis state.
pub fn observable_expectation(probabilities: &[f64], pauli: &str) -> Result<f64, SimError> {
    let m = pauli.len();
    let bad = |reason: String| SimError::BadKey {
        key: pauli.to_string(),
        reason,
    };
    if probabilities.len() != 1usize << m {
        return Err(bad(format!("{} probabilities do not cover {m} qubit(s)", probabilities.len())));
    }
    let mut mask = 0usize;
    for (q, c) in pauli.chars().enumerate() {
        match c {
            'Z' => mask |= 1 << q,
            'I' => {}
            _ => return Err(bad(format!("`{c}` is not a Z-basis Pauli"))),
        }
    }
    Ok(probabilities
        .iter()
        .enumerate()
        .map(|(i, p)| if (i & mask).count_ones() % 2 == 0 { *p } else { -*p })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_benchmark, BenchmarkFamily, GateKind};
    use approx::assert_abs_diff_eq;

    #[test]
    fn ghz3_is_half_half() {
        let c = build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap();
        let p = ideal_probabilities(&c).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[7], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_and_hadamard() {
        let c = QuantumCircuit::new(2, "").unwrap();
        assert_eq!(ideal_probabilities(&c).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let mut h = QuantumCircuit::new(1, "").unwrap();
        h.push(GateKind::H, 0.0, &[0]).unwrap();
        let p = ideal_probabilities(&h).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn too_many_qubits_is_rejected() {
        let c = QuantumCircuit::new(21, "").unwrap();
        let err = ideal_probabilities(&c).unwrap_err().to_string();
        assert!(err.contains("20"), "{err}");
    }

    #[test]
    fn fidelity_examples() {
        let p = [0.25, 0.25, 0.5];
        assert_abs_diff_eq!(fidelity(&p, &p).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(fidelity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(fidelity(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5, epsilon = 1e-12);
        assert!(fidelity(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn z_expectations() {
        assert_eq!(observable_expectation(&[1.0, 0.0, 0.0, 0.0], "ZZ").unwrap(), 1.0);
        let ghz = [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5];
        assert_abs_diff_eq!(observable_expectation(&ghz, "ZZZ").unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(observable_expectation(&ghz, "ZZI").unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(observable_expectation(&[0.5, 0.5], "Z").unwrap(), 0.0);
        assert!(observable_expectation(&[0.5, 0.5], "ZZ").is_err());
        assert!(observable_expectation(&[0.5, 0.5], "X").is_err());
    }
}
