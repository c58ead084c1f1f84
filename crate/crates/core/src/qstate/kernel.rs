//! In-place matrix application on a dense amplitude buffer. Qubit 0 is the most
//! significant bit of the index. Matrices need not be unitary (Kraus operators
//! go through the same path).

use num_complex::Complex64 as C64;

#[inline]
fn stride(num_qubits: usize, q: usize) -> usize {
    1usize << (num_qubits - 1 - q)
}

pub fn apply_single(amps: &mut [C64], num_qubits: usize, q: usize, m: &[C64; 4]) {
    let s = stride(num_qubits, q);
    let dim = amps.len();
    let diagonal = m[1] == C64::new(0.0, 0.0) && m[2] == C64::new(0.0, 0.0);
    let mut base = 0;
    while base < dim {
        for i in base..base + s {
            let a = amps[i];
            let b = amps[i + s];
            if diagonal {
                amps[i] = m[0] * a;
                amps[i + s] = m[3] * b;
            } else {
                amps[i] = m[0] * a + m[1] * b;
                amps[i + s] = m[2] * a + m[3] * b;
            }
        }
        base += 2 * s;
    }
}

pub fn apply_double(amps: &mut [C64], num_qubits: usize, q0: usize, q1: usize, m: &[C64; 16]) {
    let s0 = stride(num_qubits, q0);
    let s1 = stride(num_qubits, q1);
    let mask = s0 | s1;
    let diagonal = (0..16).all(|k| k / 4 == k % 4 || m[k] == C64::new(0.0, 0.0));
    let idx = |i: usize| [i, i | s1, i | s0, i | s0 | s1];
    if diagonal {
        let d = [m[0], m[5], m[10], m[15]];
        for i in 0..amps.len() {
            if i & mask == 0 {
                for (k, j) in idx(i).into_iter().enumerate() {
                    amps[j] *= d[k];
                }
            }
        }
        return;
    }
    for i in 0..amps.len() {
        if i & mask != 0 {
            continue;
        }
        let ix = idx(i);
        let v = [amps[ix[0]], amps[ix[1]], amps[ix[2]], amps[ix[3]]];
        for r in 0..4 {
            amps[ix[r]] = m[r * 4] * v[0] + m[r * 4 + 1] * v[1] + m[r * 4 + 2] * v[2] + m[r * 4 + 3] * v[3];
        }
    }
}

/// Reduced 2×2 density matrix of qubit `q`, row-major.
pub fn reduced_single(amps: &[C64], num_qubits: usize, q: usize) -> [C64; 4] {
    let s = stride(num_qubits, q);
    let mut r = [C64::new(0.0, 0.0); 4];
    let mut base = 0;
    while base < amps.len() {
        for i in base..base + s {
            let a = amps[i];
            let b = amps[i + s];
            r[0] += a * a.conj();
            r[1] += a * b.conj();
            r[3] += b * b.conj();
        }
        base += 2 * s;
    }
    r[2] = r[1].conj();
    r
}
