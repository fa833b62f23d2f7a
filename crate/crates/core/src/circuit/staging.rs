//! As-soon-as-possible leveling of a circuit into identity-filled stages.

use std::borrow::Cow;

use super::{Gate, QuantumCircuit};

/// Occupant of one (stage, qubit) slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSlot {
    /// No gate on this qubit in this stage; treated as an identity gate.
    Idle,
    /// Index into the source circuit's gate list.
    Gate(usize),
}

/// A circuit leveled into stages where every qubit holds exactly one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedCircuit {
    circuit: QuantumCircuit,
    stages: Vec<Vec<StageSlot>>,
}

/// Places each gate in the earliest stage after all prior gates on its
/// operands, then fills empty slots with identities.
pub fn stage_circuit(circuit: &QuantumCircuit) -> StagedCircuit {
    let n = circuit.num_qubits();
    let mut frontier = vec![0usize; n];
    let mut stages: Vec<Vec<StageSlot>> = Vec::new();
    for (index, gate) in circuit.gates().iter().enumerate() {
        let level = gate.operands.iter().map(|&q| frontier[q]).max().unwrap_or(0);
        while stages.len() <= level {
            stages.push(vec![StageSlot::Idle; n]);
        }
        for &q in &gate.operands {
            stages[level][q] = StageSlot::Gate(index);
            frontier[q] = level + 1;
        }
    }
    StagedCircuit {
        circuit: circuit.clone(),
        stages,
    }
}

impl StagedCircuit {
    pub fn circuit(&self) -> &QuantumCircuit {
        &self.circuit
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn num_qubits(&self) -> usize {
        self.circuit.num_qubits()
    }

    pub fn slot(&self, stage: usize, qubit: usize) -> StageSlot {
        self.stages[stage][qubit]
    }

    pub fn rows(&self) -> &[Vec<StageSlot>] {
        &self.stages
    }

    /// The gate occupying `(stage, qubit)`, an identity if the slot is idle.
    pub fn gate_at(&self, stage: usize, qubit: usize) -> Cow<'_, Gate> {
        match self.stages[stage][qubit] {
            StageSlot::Idle => Cow::Owned(Gate::identity(qubit, stage)),
            StageSlot::Gate(i) => Cow::Borrowed(&self.circuit.gates()[i]),
        }
    }

    /// Distinct non-identity gates of a stage, in source order.
    pub fn stage_gates(&self, stage: usize) -> Vec<&Gate> {
        let mut idx: Vec<usize> = self.stages[stage]
            .iter()
            .filter_map(|s| match s {
                StageSlot::Gate(i) => Some(*i),
                StageSlot::Idle => None,
            })
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx.into_iter().map(|i| &self.circuit.gates()[i]).collect()
    }

    pub fn has_two_qubit_gate(&self, stage: usize) -> bool {
        self.stage_gates(stage).iter().any(|g| g.operands.len() == 2)
    }

    /// Gate indices in stage order, identities dropped.
    pub fn flatten(&self) -> Vec<usize> {
        (0..self.num_stages())
            .flat_map(|s| {
                let mut idx: Vec<usize> = self.stages[s]
                    .iter()
                    .filter_map(|slot| match slot {
                        StageSlot::Gate(i) => Some(*i),
                        StageSlot::Idle => None,
                    })
                    .collect();
                idx.sort_unstable();
                idx.dedup();
                idx
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_benchmark, BenchmarkFamily, GateKind};
    use crate::rng;
    use rand::Rng;
    use std::f64::consts::PI;

    fn kinds(staged: &StagedCircuit, stage: usize) -> Vec<GateKind> {
        (0..staged.num_qubits()).map(|q| staged.gate_at(stage, q).kind).collect()
    }

    #[test]
    fn ghz3_has_three_identity_filled_stages() {
        let c = build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap();
        let s = stage_circuit(&c);
        assert_eq!(s.num_stages(), 3);
        assert_eq!(kinds(&s, 0), vec![GateKind::H, GateKind::I, GateKind::I]);
        assert_eq!(kinds(&s, 1), vec![GateKind::CNOT, GateKind::CNOT, GateKind::I]);
        assert_eq!(kinds(&s, 2), vec![GateKind::I, GateKind::CNOT, GateKind::CNOT]);
        assert_eq!(s.slot(1, 0), s.slot(1, 1));
    }

    #[test]
    fn single_gate_gives_single_stage() {
        let mut c = QuantumCircuit::new(2, "").unwrap();
        c.push(GateKind::H, 0.0, &[0]).unwrap();
        let s = stage_circuit(&c);
        assert_eq!(s.num_stages(), 1);
        assert_eq!(kinds(&s, 0), vec![GateKind::H, GateKind::I]);
    }

    #[test]
    fn disjoint_rotations_share_a_stage() {
        let mut c = QuantumCircuit::new(2, "").unwrap();
        c.push(GateKind::Rx, PI / 3.0, &[0]).unwrap();
        c.push(GateKind::Rx, PI / 5.0, &[1]).unwrap();
        let s = stage_circuit(&c);
        assert_eq!(s.num_stages(), 1);
        assert_eq!(s.stage_gates(0).len(), 2);
    }

    fn random_circuit(seed: u64) -> QuantumCircuit {
        let mut r = rng::stream(seed);
        let n = r.random_range(2..6);
        let mut c = QuantumCircuit::new(n, "rand").unwrap();
        for _ in 0..r.random_range(0..30) {
            let kind = GateKind::ALL[r.random_range(0..GateKind::ALL.len())];
            if kind.arity() == 2 {
                let a = r.random_range(0..n);
                let mut b = r.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                c.push(kind, 0.0, &[a, b]).unwrap();
            } else {
                let p = if kind.is_parameterized() { r.random_range(-PI..PI) } else { 0.0 };
                c.push(kind, p, &[r.random_range(0..n)]).unwrap();
            }
        }
        c
    }

    #[test]
    fn staging_preserves_per_qubit_order() {
        for seed in 0..200 {
            let c = random_circuit(seed);
            let s = stage_circuit(&c);
            let flat = s.flatten();
            assert_eq!(flat.len(), c.gates().len());
            for q in 0..c.num_qubits() {
                let original: Vec<usize> = (0..c.gates().len())
                    .filter(|&i| c.gates()[i].operands.contains(&q))
                    .collect();
                let replayed: Vec<usize> = flat
                    .iter()
                    .copied()
                    .filter(|&i| c.gates()[i].operands.contains(&q))
                    .collect();
                assert_eq!(original, replayed, "seed {seed} qubit {q}");
            }
            // Every slot holds exactly one occupant and every gate sits in the
            // slots of all its operands in a single stage.
            for (si, row) in s.rows().iter().enumerate() {
                assert_eq!(row.len(), c.num_qubits());
                for g in s.stage_gates(si) {
                    let i = s.circuit().gates().iter().position(|x| std::ptr::eq(x, g)).unwrap();
                    for &q in &g.operands {
                        assert_eq!(row[q], StageSlot::Gate(i));
                    }
                }
            }
            // ASAP stages agree with push-assigned steps.
            assert_eq!(s.num_stages(), c.depth());
        }
    }
}
