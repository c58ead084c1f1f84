//! Dense quantum state kernels.
//!
//! Conventions shared by the whole crate:
//! * qubit 0 is the most significant bit of an amplitude index;
//! * rotations are `R_P(θ) = exp(-i θ P / 2)`;
//! * equivalence of unitaries and states is only ever checked up to global phase.

mod channel;
mod density;
mod gate;
pub(crate) mod kernel;

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

pub use channel::{ChannelKind, KrausChannel};
pub use density::{DensityMatrix, MAX_DENSITY_QUBITS};
pub use gate::{
    compose_two_qubit, distance_up_to_phase, kron2, two_qubit_rotation_decomposed, Gate, GateMatrix, Pauli,
    RotationAxis,
};

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::rng::{rng_from_seed, SimRng};

/// A Pauli operator on every qubit of a register, e.g. `"ZIZ"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PauliString(Vec<Pauli>);

impl PauliString {
    pub fn new(paulis: Vec<Pauli>) -> Self {
        PauliString(paulis)
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| {
                Pauli::from_char(c)
                    .ok_or_else(|| Error::InvalidArgument(alloc::format!("invalid Pauli label {c:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(PauliString)
    }

    /// `p` on `qubit`, identity elsewhere.
    pub fn single(num_qubits: usize, qubit: usize, p: Pauli) -> Self {
        let mut v = vec![Pauli::I; num_qubits];
        v[qubit] = p;
        PauliString(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn paulis(&self) -> &[Pauli] {
        &self.0
    }

    /// (bit-flip mask, sign mask, number of Y factors) in amplitude-index space.
    pub(crate) fn masks(&self) -> (usize, usize, u32) {
        let n = self.0.len();
        let mut flip = 0;
        let mut sign = 0;
        let mut ny = 0;
        for (q, p) in self.0.iter().enumerate() {
            let bit = 1usize << (n - 1 - q);
            match p {
                Pauli::I => {}
                Pauli::X => flip |= bit,
                Pauli::Y => {
                    flip |= bit;
                    sign |= bit;
                    ny += 1;
                }
                Pauli::Z => sign |= bit,
            }
        }
        (flip, sign, ny)
    }
}

/// `i^k`
pub(crate) fn i_pow(k: u32) -> C64 {
    match k % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// |0…0⟩
    pub fn zero(num_qubits: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << num_qubits];
        amps[0] = C64::new(1.0, 0.0);
        StateVector { num_qubits, amps }
    }

    /// Computational basis state; `index` uses the qubit-0-is-MSB convention.
    pub fn basis(num_qubits: usize, index: usize) -> Result<Self> {
        if index >= 1 << num_qubits {
            return Err(Error::InvalidArgument(alloc::format!("basis index {index} out of range")));
        }
        let mut amps = vec![C64::new(0.0, 0.0); 1 << num_qubits];
        amps[index] = C64::new(1.0, 0.0);
        Ok(StateVector { num_qubits, amps })
    }

    pub fn from_amplitudes(num_qubits: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1 << num_qubits {
            return Err(Error::LengthMismatch {
                what: "amplitudes",
                expected: 1 << num_qubits,
                actual: amps.len(),
            });
        }
        Ok(StateVector { num_qubits, amps })
    }

    /// Tensor product of single-qubit states, qubit 0 first.
    pub fn product(qubits: &[[C64; 2]]) -> Self {
        let n = qubits.len();
        let mut amps = vec![C64::new(1.0, 0.0); 1 << n];
        for (x, a) in amps.iter_mut().enumerate() {
            for (q, st) in qubits.iter().enumerate() {
                *a *= st[(x >> (n - 1 - q)) & 1];
            }
        }
        StateVector { num_qubits: n, amps }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let n = sqrt(self.norm_sqr());
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amps.iter_mut().for_each(|a| *a *= inv);
        }
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    fn check_targets(&self, targets: &[usize]) -> Result<()> {
        for (k, &t) in targets.iter().enumerate() {
            if t >= self.num_qubits {
                return Err(Error::QubitOutOfRange { qubit: t, num_qubits: self.num_qubits });
            }
            if targets[..k].contains(&t) {
                return Err(Error::DuplicateTarget(t));
            }
        }
        Ok(())
    }

    /// Applies `gate` in place.
    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        self.check_targets(gate.targets())?;
        self.apply_unchecked(gate);
        Ok(())
    }

    pub(crate) fn apply_unchecked(&mut self, gate: &Gate) {
        let t = gate.targets();
        match gate.matrix() {
            GateMatrix::Single(m) => kernel::apply_single(&mut self.amps, self.num_qubits, t[0], m),
            GateMatrix::Double(m) => kernel::apply_double(&mut self.amps, self.num_qubits, t[0], t[1], m),
        }
    }

    /// Returns a new state with `gate` applied.
    pub fn applied(&self, gate: &Gate) -> Result<StateVector> {
        let mut out = self.clone();
        out.apply(gate)?;
        Ok(out)
    }

    /// Applies a Pauli string (no phase convention beyond the operator itself).
    pub fn apply_pauli(&mut self, p: &PauliString) -> Result<()> {
        if p.len() != self.num_qubits {
            return Err(Error::LengthMismatch { what: "pauli string", expected: self.num_qubits, actual: p.len() });
        }
        for (q, &pl) in p.paulis().iter().enumerate() {
            if pl != Pauli::I {
                kernel::apply_single(&mut self.amps, self.num_qubits, q, &pl.matrix());
            }
        }
        Ok(())
    }

    /// `⟨ψ|P|ψ⟩` for a Pauli string with one label per qubit.
    pub fn pauli_expectation(&self, p: &PauliString) -> Result<f64> {
        Ok(self.pauli_matrix_element(self, p)?.re)
    }

    /// `⟨bra|P|self⟩`
    pub fn pauli_matrix_element(&self, bra: &StateVector, p: &PauliString) -> Result<C64> {
        if p.len() != self.num_qubits {
            return Err(Error::LengthMismatch { what: "pauli string", expected: self.num_qubits, actual: p.len() });
        }
        let (flip, sign, ny) = p.masks();
        let mut acc = C64::new(0.0, 0.0);
        for (x, a) in self.amps.iter().enumerate() {
            let term = bra.amps[x ^ flip].conj() * a;
            if (x & sign).count_ones() % 2 == 1 {
                acc -= term;
            } else {
                acc += term;
            }
        }
        Ok(acc * i_pow(ny))
    }

    /// `Σ_i w_i ⟨ψ|h_i|ψ⟩`; `weights = None` means unit weights.
    pub fn weighted_expectation(&self, terms: &[PauliString], weights: Option<&[f64]>) -> Result<f64> {
        if let Some(w) = weights {
            if w.len() != terms.len() {
                return Err(Error::LengthMismatch { what: "weights", expected: terms.len(), actual: w.len() });
            }
        }
        let mut total = 0.0;
        for (k, t) in terms.iter().enumerate() {
            total += weights.map_or(1.0, |w| w[k]) * self.pauli_expectation(t)?;
        }
        Ok(total)
    }

    /// ⟨Z_q⟩ for every qubit in one sweep.
    pub fn z_expectations(&self) -> Vec<f64> {
        let n = self.num_qubits;
        let mut out = vec![0.0; n];
        for (x, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, o) in out.iter_mut().enumerate() {
                if (x >> (n - 1 - q)) & 1 == 0 {
                    *o += p;
                } else {
                    *o -= p;
                }
            }
        }
        out
    }
}

/// Haar-random single-qubit amplitudes drawn from `rng`.
pub fn haar_qubit_amplitudes(rng: &mut SimRng) -> [C64; 2] {
    let mut g = || -> f64 { rng.sample(StandardNormal) };
    let v = [C64::new(g(), g()), C64::new(g(), g())];
    let n = sqrt(v[0].norm_sqr() + v[1].norm_sqr());
    [v[0] / n, v[1] / n]
}

/// Haar-random single-qubit state, deterministic in `seed`.
pub fn haar_random_qubit(seed: u64) -> StateVector {
    let amps = haar_qubit_amplitudes(&mut rng_from_seed(seed));
    StateVector { num_qubits: 1, amps: amps.to_vec() }
}
