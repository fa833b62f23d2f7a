//! Dense statevector with the gate and noise kernels used by the simulator.
//! Basis index bit `q` holds qubit `q`.

use num_complex::Complex64;

use crate::circuit::GateKind;

pub(crate) type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);
const I: C = C::new(0.0, 1.0);

/// Single-qubit Pauli operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub(crate) fn from_index(i: usize) -> Pauli {
        [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][i & 3]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StateVector {
    pub(crate) n: usize,
    pub(crate) amps: Vec<C>,
}

/// 2x2 unitary of a single-qubit gate kind, rows then columns.
pub(crate) fn matrix(kind: GateKind, theta: f64) -> [[C; 2]; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    match kind {
        GateKind::I => [[ONE, ZERO], [ZERO, ONE]],
        GateKind::H => [[C::new(h, 0.0), C::new(h, 0.0)], [C::new(h, 0.0), C::new(-h, 0.0)]],
        GateKind::X => [[ZERO, ONE], [ONE, ZERO]],
        GateKind::Y => [[ZERO, -I], [I, ZERO]],
        GateKind::Z => [[ONE, ZERO], [ZERO, -ONE]],
        GateKind::SX => {
            let a = C::new(0.5, 0.5);
            let b = C::new(0.5, -0.5);
            [[a, b], [b, a]]
        }
        GateKind::Rx => [[C::new(c, 0.0), C::new(0.0, -s)], [C::new(0.0, -s), C::new(c, 0.0)]],
        GateKind::Ry => [[C::new(c, 0.0), C::new(-s, 0.0)], [C::new(s, 0.0), C::new(c, 0.0)]],
        GateKind::Rz => [[C::new(c, -s), ZERO], [ZERO, C::new(c, s)]],
        GateKind::CNOT | GateKind::CZ => unreachable!("two-qubit kind has no 2x2 matrix"),
    }
}

impl StateVector {
    pub(crate) fn zero(n: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n];
        amps[0] = ONE;
        StateVector { n, amps }
    }

    pub(crate) fn reset(&mut self) {
        self.amps.fill(ZERO);
        self.amps[0] = ONE;
    }

    pub(crate) fn apply_1q(&mut self, m: &[[C; 2]; 2], q: usize) {
        let bit = 1usize << q;
        let len = self.amps.len();
        let mut base = 0;
        while base < len {
            for i in base..base + bit {
                let a0 = self.amps[i];
                let a1 = self.amps[i | bit];
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i | bit] = m[1][0] * a0 + m[1][1] * a1;
            }
            base += bit << 1;
        }
    }

    pub(crate) fn apply_x(&mut self, q: usize) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                self.amps.swap(i, i | bit);
            }
        }
    }

    pub(crate) fn apply_z(&mut self, q: usize) {
        let bit = 1usize << q;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & bit != 0 {
                *a = -*a;
            }
        }
    }

    pub(crate) fn apply_y(&mut self, q: usize) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let a0 = self.amps[i];
                let a1 = self.amps[i | bit];
                self.amps[i] = -I * a1;
                self.amps[i | bit] = I * a0;
            }
        }
    }

    pub(crate) fn apply_pauli(&mut self, p: Pauli, q: usize) {
        match p {
            Pauli::I => {}
            Pauli::X => self.apply_x(q),
            Pauli::Y => self.apply_y(q),
            Pauli::Z => self.apply_z(q),
        }
    }

    pub(crate) fn apply_cnot(&mut self, control: usize, target: usize) {
        let (cb, tb) = (1usize << control, 1usize << target);
        for i in 0..self.amps.len() {
            if i & cb != 0 && i & tb == 0 {
                self.amps.swap(i, i | tb);
            }
        }
    }

    pub(crate) fn apply_cz(&mut self, a: usize, b: usize) {
        let mask = (1usize << a) | (1usize << b);
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if i & mask == mask {
                *amp = -*amp;
            }
        }
    }

    pub(crate) fn apply_gate(&mut self, kind: GateKind, theta: f64, operands: &[usize]) {
        match kind {
            GateKind::I => {}
            GateKind::X => self.apply_x(operands[0]),
            GateKind::Y => self.apply_y(operands[0]),
            GateKind::Z => self.apply_z(operands[0]),
            GateKind::CNOT => self.apply_cnot(operands[0], operands[1]),
            GateKind::CZ => self.apply_cz(operands[0], operands[1]),
            k => self.apply_1q(&matrix(k, theta), operands[0]),
        }
    }

    pub(crate) fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub(crate) fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for a in &mut self.amps {
            *a *= s;
        }
    }

    /// Applies `diag(1, sqrt(1 - p))` on `q` (no-jump damping Kraus operator),
    /// unnormalized.
    pub(crate) fn damp_no_jump(&mut self, q: usize, p: f64) {
        let bit = 1usize << q;
        let s = (1.0 - p).sqrt();
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & bit != 0 {
                *a *= s;
            }
        }
    }

    /// Applies `|0><1|` on `q` (decay), unnormalized.
    pub(crate) fn damp_jump(&mut self, q: usize) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                self.amps[i] = self.amps[i | bit];
                self.amps[i | bit] = ZERO;
            }
        }
    }

    /// Probability that qubit `q` reads 1.
    pub(crate) fn prob_one(&self, q: usize) -> f64 {
        let bit = 1usize << q;
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unitary_check(kind: GateKind, theta: f64) {
        let m = matrix(kind, theta);
        for r in 0..2 {
            for c in 0..2 {
                let dot: C = (0..2).map(|k| m[k][r].conj() * m[k][c]).sum();
                let want = if r == c { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot.re, want, epsilon = 1e-12);
                assert_abs_diff_eq!(dot.im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_qubit_matrices_are_unitary() {
        for kind in GateKind::ALL.iter().filter(|k| k.arity() == 1) {
            unitary_check(*kind, 0.7);
        }
    }

    #[test]
    fn sx_squared_is_x() {
        let mut s = StateVector::zero(1);
        let m = matrix(GateKind::SX, 0.0);
        s.apply_1q(&m, 0);
        s.apply_1q(&m, 0);
        assert_abs_diff_eq!(s.amps[1].norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn specialised_paulis_match_matrices() {
        let mut a = StateVector::zero(2);
        a.apply_1q(&matrix(GateKind::H, 0.0), 0);
        a.apply_1q(&matrix(GateKind::Ry, 0.4), 1);
        for kind in [GateKind::X, GateKind::Y, GateKind::Z] {
            for q in 0..2 {
                let mut fast = a.clone();
                fast.apply_gate(kind, 0.0, &[q]);
                let mut slow = a.clone();
                slow.apply_1q(&matrix(kind, 0.0), q);
                for (x, y) in fast.amps.iter().zip(&slow.amps) {
                    assert_abs_diff_eq!((x - y).norm(), 0.0, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn cnot_entangles() {
        let mut s = StateVector::zero(2);
        s.apply_gate(GateKind::H, 0.0, &[0]);
        s.apply_gate(GateKind::CNOT, 0.0, &[0, 1]);
        let p = s.probabilities();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[3], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn jump_moves_population_to_ground() {
        let mut s = StateVector::zero(1);
        s.apply_x(0);
        s.damp_jump(0);
        assert_abs_diff_eq!(s.amps[0].norm_sqr(), 1.0, epsilon = 1e-15);
        assert_eq!(s.prob_one(0), 0.0);
    }
}
