use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::math::{cos, sin, sqrt};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Single-qubit Pauli label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> [C64; 4] {
        match self {
            Pauli::I => [ONE, ZERO, ZERO, ONE],
            Pauli::X => [ZERO, ONE, ONE, ZERO],
            Pauli::Y => [ZERO, -I, I, ZERO],
            Pauli::Z => [ONE, ZERO, ZERO, -ONE],
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }
}

/// Axis of a two-qubit Pauli rotation `exp(-i θ P⊗P / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationAxis {
    XX,
    YY,
    ZZ,
}

impl RotationAxis {
    pub fn pauli(self) -> Pauli {
        match self {
            RotationAxis::XX => Pauli::X,
            RotationAxis::YY => Pauli::Y,
            RotationAxis::ZZ => Pauli::Z,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateMatrix {
    /// Row-major 2×2.
    Single([C64; 4]),
    /// Row-major 4×4 in the basis |t0 t1⟩, first target most significant.
    Double([C64; 16]),
}

impl GateMatrix {
    pub fn dim(&self) -> usize {
        match self {
            GateMatrix::Single(_) => 2,
            GateMatrix::Double(_) => 4,
        }
    }

    pub fn entries(&self) -> &[C64] {
        match self {
            GateMatrix::Single(m) => m,
            GateMatrix::Double(m) => m,
        }
    }

    pub fn dagger(&self) -> GateMatrix {
        match self {
            GateMatrix::Single(m) => GateMatrix::Single(conj_transpose::<4, 2>(m)),
            GateMatrix::Double(m) => GateMatrix::Double(conj_transpose::<16, 4>(m)),
        }
    }

    pub fn conj(&self) -> GateMatrix {
        match self {
            GateMatrix::Single(m) => GateMatrix::Single(m.map(|z| z.conj())),
            GateMatrix::Double(m) => GateMatrix::Double(m.map(|z| z.conj())),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        self.entries()
            .iter()
            .enumerate()
            .all(|(k, z)| k / d == k % d || *z == ZERO)
    }

    /// max |(U†U − I)_{ij}|
    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim();
        let m = self.entries();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += m[k * d + r].conj() * m[k * d + c];
                }
                if r == c {
                    acc -= ONE;
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }
}

fn conj_transpose<const L: usize, const D: usize>(m: &[C64; L]) -> [C64; L] {
    let mut out = [ZERO; L];
    for r in 0..D {
        for c in 0..D {
            out[c * D + r] = m[r * D + c].conj();
        }
    }
    out
}

pub fn kron2(a: &[C64; 4], b: &[C64; 4]) -> [C64; 16] {
    let mut out = [ZERO; 16];
    for ar in 0..2 {
        for ac in 0..2 {
            for br in 0..2 {
                for bc in 0..2 {
                    out[(ar * 2 + br) * 4 + ac * 2 + bc] = a[ar * 2 + ac] * b[br * 2 + bc];
                }
            }
        }
    }
    out
}

pub fn matmul4(a: &[C64; 16], b: &[C64; 16]) -> [C64; 16] {
    let mut out = [ZERO; 16];
    for r in 0..4 {
        for c in 0..4 {
            let mut acc = ZERO;
            for k in 0..4 {
                acc += a[r * 4 + k] * b[k * 4 + c];
            }
            out[r * 4 + c] = acc;
        }
    }
    out
}

/// A one- or two-qubit operation. `generator` is set for rotations of the form
/// `exp(-i θ P / 2)` and is what the gradient routines differentiate through.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    matrix: GateMatrix,
    targets: [usize; 2],
    generator: Option<[Pauli; 2]>,
}

impl Gate {
    pub fn single(matrix: [C64; 4], target: usize) -> Self {
        Gate {
            matrix: GateMatrix::Single(matrix),
            targets: [target, usize::MAX],
            generator: None,
        }
    }

    pub fn double(matrix: [C64; 16], first: usize, second: usize) -> Self {
        Gate {
            matrix: GateMatrix::Double(matrix),
            targets: [first, second],
            generator: None,
        }
    }

    fn with_generator(mut self, paulis: [Pauli; 2]) -> Self {
        self.generator = Some(paulis);
        self
    }

    pub fn matrix(&self) -> &GateMatrix {
        &self.matrix
    }

    pub fn targets(&self) -> &[usize] {
        match self.matrix {
            GateMatrix::Single(_) => &self.targets[..1],
            GateMatrix::Double(_) => &self.targets[..2],
        }
    }

    /// Pauli generator over `targets()`, if the gate is a Pauli rotation.
    pub fn generator(&self) -> Option<&[Pauli]> {
        self.generator
            .as_ref()
            .map(|g| &g[..self.matrix.dim() / 2])
    }

    pub fn dagger(&self) -> Gate {
        Gate {
            matrix: self.matrix.dagger(),
            targets: self.targets,
            generator: self.generator,
        }
    }

    pub fn h(q: usize) -> Self {
        let s = 1.0 / sqrt(2.0);
        Gate::single([C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0)], q)
    }

    pub fn pauli(p: Pauli, q: usize) -> Self {
        Gate::single(p.matrix(), q)
    }

    pub fn s(q: usize) -> Self {
        Gate::single([ONE, ZERO, ZERO, I], q)
    }

    pub fn sdg(q: usize) -> Self {
        Gate::single([ONE, ZERO, ZERO, -I], q)
    }

    /// `exp(-i θ P / 2)` for a single-qubit Pauli.
    pub fn rotation(p: Pauli, theta: f64, q: usize) -> Self {
        let (c, s) = (cos(theta / 2.0), sin(theta / 2.0));
        let pm = p.matrix();
        let mut m = [ZERO; 4];
        for k in 0..4 {
            let id = if k == 0 || k == 3 { ONE } else { ZERO };
            m[k] = id * c - I * s * pm[k];
        }
        Gate::single(m, q).with_generator([p, Pauli::I])
    }

    pub fn rx(theta: f64, q: usize) -> Self {
        Gate::rotation(Pauli::X, theta, q)
    }

    pub fn ry(theta: f64, q: usize) -> Self {
        Gate::rotation(Pauli::Y, theta, q)
    }

    pub fn rz(theta: f64, q: usize) -> Self {
        Gate::rotation(Pauli::Z, theta, q)
    }

    /// `exp(-i θ P⊗P / 2)` built directly from the closed form `cos·I − i sin·P⊗P`.
    pub fn two_qubit_rotation(axis: RotationAxis, theta: f64, q0: usize, q1: usize) -> Self {
        let p = axis.pauli();
        let pp = kron2(&p.matrix(), &p.matrix());
        let (c, s) = (cos(theta / 2.0), sin(theta / 2.0));
        let mut m = [ZERO; 16];
        for k in 0..16 {
            let id = if k % 5 == 0 { ONE } else { ZERO };
            m[k] = id * c - I * s * pp[k];
        }
        Gate::double(m, q0, q1).with_generator([p, p])
    }

    pub fn rxx(theta: f64, q0: usize, q1: usize) -> Self {
        Gate::two_qubit_rotation(RotationAxis::XX, theta, q0, q1)
    }

    pub fn ryy(theta: f64, q0: usize, q1: usize) -> Self {
        Gate::two_qubit_rotation(RotationAxis::YY, theta, q0, q1)
    }

    pub fn rzz(theta: f64, q0: usize, q1: usize) -> Self {
        Gate::two_qubit_rotation(RotationAxis::ZZ, theta, q0, q1)
    }

    pub fn cz(q0: usize, q1: usize) -> Self {
        let mut m = [ZERO; 16];
        m[0] = ONE;
        m[5] = ONE;
        m[10] = ONE;
        m[15] = -ONE;
        Gate::double(m, q0, q1)
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        let mut m = [ZERO; 16];
        m[0] = ONE;
        m[5] = ONE;
        m[11] = ONE;
        m[14] = ONE;
        Gate::double(m, control, target)
    }
}

/// Elementary-gate realization of a two-qubit Pauli rotation: a CNOT pair around a
/// single-qubit RZ on the target, conjugated by local basis changes for XX and YY.
/// Gates are listed in application order.
pub fn two_qubit_rotation_decomposed(axis: RotationAxis, theta: f64, q0: usize, q1: usize) -> alloc::vec::Vec<Gate> {
    use alloc::vec;
    let core = [Gate::cnot(q0, q1), Gate::rz(theta, q1), Gate::cnot(q0, q1)];
    match axis {
        RotationAxis::ZZ => core.to_vec(),
        RotationAxis::XX => {
            let mut v = vec![Gate::h(q0), Gate::h(q1)];
            v.extend(core);
            v.extend([Gate::h(q0), Gate::h(q1)]);
            v
        }
        RotationAxis::YY => {
            // (S H) Z (S H)† = Y
            let mut v = vec![Gate::sdg(q0), Gate::sdg(q1), Gate::h(q0), Gate::h(q1)];
            v.extend(core);
            v.extend([Gate::h(q0), Gate::h(q1), Gate::s(q0), Gate::s(q1)]);
            v
        }
    }
}

/// Composes a gate list acting on qubits {q0, q1} into a 4×4 matrix (basis |q0 q1⟩).
pub fn compose_two_qubit(gates: &[Gate], q0: usize, q1: usize) -> [C64; 16] {
    let mut acc = [ZERO; 16];
    for k in 0..4 {
        acc[k * 5] = ONE;
    }
    let id = [ONE, ZERO, ZERO, ONE];
    for g in gates {
        let full = match g.matrix() {
            GateMatrix::Single(m) => {
                if g.targets()[0] == q0 {
                    kron2(m, &id)
                } else {
                    kron2(&id, m)
                }
            }
            GateMatrix::Double(m) => {
                if g.targets() == [q0, q1] {
                    *m
                } else {
                    // swap the qubit order of the matrix
                    let mut s = [ZERO; 16];
                    let sw = |k: usize| ((k & 1) << 1) | (k >> 1);
                    for r in 0..4 {
                        for c in 0..4 {
                            s[sw(r) * 4 + sw(c)] = m[r * 4 + c];
                        }
                    }
                    s
                }
            }
        };
        acc = matmul4(&full, &acc);
    }
    acc
}

/// Smallest `max |a − e^{iφ} b|` over global phases, aligning on the largest entry of `b`.
pub fn distance_up_to_phase(a: &[C64], b: &[C64]) -> f64 {
    let (k, _) = b
        .iter()
        .enumerate()
        .fold((0, -1.0), |best, (k, z)| if z.norm() > best.1 { (k, z.norm()) } else { best });
    let phase = if b[k].norm() == 0.0 || a[k].norm() == 0.0 {
        ONE
    } else {
        let r = a[k] / b[k];
        r / r.norm()
    };
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - phase * y).norm())
        .fold(0.0, f64::max)
}
