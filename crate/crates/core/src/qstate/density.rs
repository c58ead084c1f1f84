use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C64;

use super::{i_pow, kernel, Gate, GateMatrix, KrausChannel, PauliString, StateVector};
use crate::error::{Error, Result};

/// Density simulation costs 4^n memory; larger registers must use trajectories.
pub const MAX_DENSITY_QUBITS: usize = 10;

/// Row-major `2^n × 2^n` density matrix. Internally the matrix is handled as a
/// `2n`-qubit vector whose high `n` bits index rows, so `UρU†` is `U` on the row
/// qubits followed by `conj(U)` on the column qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    num_qubits: usize,
    entries: Vec<C64>,
}

impl DensityMatrix {
    pub fn from_pure(state: &StateVector) -> Result<Self> {
        let n = state.num_qubits();
        if n > MAX_DENSITY_QUBITS {
            return Err(Error::TooManyQubits { requested: n, max: MAX_DENSITY_QUBITS });
        }
        let a = state.amplitudes();
        let dim = a.len();
        let mut entries = vec![C64::new(0.0, 0.0); dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                entries[r * dim + c] = a[r] * a[c].conj();
            }
        }
        Ok(DensityMatrix { num_qubits: n, entries })
    }

    pub fn from_entries(num_qubits: usize, entries: Vec<C64>) -> Result<Self> {
        if num_qubits > MAX_DENSITY_QUBITS {
            return Err(Error::TooManyQubits { requested: num_qubits, max: MAX_DENSITY_QUBITS });
        }
        let dim = 1usize << num_qubits;
        if entries.len() != dim * dim {
            return Err(Error::LengthMismatch { what: "density entries", expected: dim * dim, actual: entries.len() });
        }
        Ok(DensityMatrix { num_qubits, entries })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.num_qubits
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[row * self.dim() + col]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim()).map(|k| self.get(k, k)).sum()
    }

    /// max |ρ − ρ†|
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in r..d {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    fn check_target(&self, q: usize) -> Result<()> {
        if q >= self.num_qubits {
            return Err(Error::QubitOutOfRange { qubit: q, num_qubits: self.num_qubits });
        }
        Ok(())
    }

    fn sandwich_single(&self, m: &[C64; 4], q: usize) -> Vec<C64> {
        let wide = 2 * self.num_qubits;
        let mut out = self.entries.clone();
        kernel::apply_single(&mut out, wide, q, m);
        kernel::apply_single(&mut out, wide, self.num_qubits + q, &m.map(|z| z.conj()));
        out
    }

    /// `U ρ U†`
    pub fn apply_gate(&self, gate: &Gate) -> Result<DensityMatrix> {
        let t = gate.targets();
        for (k, &q) in t.iter().enumerate() {
            self.check_target(q)?;
            if t[..k].contains(&q) {
                return Err(Error::DuplicateTarget(q));
            }
        }
        let wide = 2 * self.num_qubits;
        let n = self.num_qubits;
        let entries = match gate.matrix() {
            GateMatrix::Single(m) => self.sandwich_single(m, t[0]),
            GateMatrix::Double(m) => {
                let mut out = self.entries.clone();
                kernel::apply_double(&mut out, wide, t[0], t[1], m);
                kernel::apply_double(&mut out, wide, n + t[0], n + t[1], &m.map(|z| z.conj()));
                out
            }
        };
        Ok(DensityMatrix { num_qubits: n, entries })
    }

    /// `Σ_i K_i ρ K_i†` on `target`.
    pub fn apply_channel(&self, channel: &KrausChannel, target: usize) -> Result<DensityMatrix> {
        self.check_target(target)?;
        let mut acc = vec![C64::new(0.0, 0.0); self.entries.len()];
        for k in channel.operators() {
            let branch = self.sandwich_single(k, target);
            acc.iter_mut().zip(branch).for_each(|(a, b)| *a += b);
        }
        Ok(DensityMatrix { num_qubits: self.num_qubits, entries: acc })
    }

    /// `Tr(ρ P)`
    pub fn pauli_expectation(&self, p: &PauliString) -> Result<f64> {
        if p.len() != self.num_qubits {
            return Err(Error::LengthMismatch { what: "pauli string", expected: self.num_qubits, actual: p.len() });
        }
        let (flip, sign, ny) = p.masks();
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..self.dim() {
            let term = self.get(r, r ^ flip);
            if (r & sign).count_ones() % 2 == 1 {
                acc -= term;
            } else {
                acc += term;
            }
        }
        Ok((acc * i_pow(ny)).re)
    }
}
