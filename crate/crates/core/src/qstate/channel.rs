use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{kernel, Pauli, StateVector};
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Depolarizing,
    AmplitudeDamping,
    PhaseDamping,
}

/// Single-qubit CPTP map given by its Kraus operators.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausChannel {
    kind: ChannelKind,
    rate: f64,
    operators: Vec<[C64; 4]>,
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

impl KrausChannel {
    pub fn new(kind: ChannelKind, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidRate(rate));
        }
        let z = c(0.0);
        let operators = match kind {
            ChannelKind::Depolarizing => {
                let k0 = sqrt(1.0 - 3.0 * rate / 4.0);
                let k = sqrt(rate / 4.0);
                [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z]
                    .iter()
                    .zip([k0, k, k, k])
                    .map(|(p, s)| p.matrix().map(|e| e * s))
                    .collect()
            }
            ChannelKind::AmplitudeDamping => vec![
                [c(1.0), z, z, c(sqrt(1.0 - rate))],
                [z, c(sqrt(rate)), z, z],
            ],
            ChannelKind::PhaseDamping => vec![
                [c(1.0), z, z, c(sqrt(1.0 - rate))],
                [z, z, z, c(sqrt(rate))],
            ],
        };
        Ok(KrausChannel { kind, rate, operators })
    }

    pub fn depolarizing(rate: f64) -> Result<Self> {
        Self::new(ChannelKind::Depolarizing, rate)
    }

    pub fn amplitude_damping(p: f64) -> Result<Self> {
        Self::new(ChannelKind::AmplitudeDamping, p)
    }

    pub fn phase_damping(p: f64) -> Result<Self> {
        Self::new(ChannelKind::PhaseDamping, p)
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn operators(&self) -> &[[C64; 4]] {
        &self.operators
    }

    /// max |(Σ K†K − I)_{ij}|
    pub fn completeness_error(&self) -> f64 {
        let mut acc = [c(0.0); 4];
        for k in &self.operators {
            for r in 0..2 {
                for col in 0..2 {
                    acc[r * 2 + col] += k[r].conj() * k[col] + k[2 + r].conj() * k[2 + col];
                }
            }
        }
        acc[0] -= c(1.0);
        acc[3] -= c(1.0);
        acc.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Branch probabilities `⟨ψ|K_i†K_i|ψ⟩` on `target`.
    pub fn branch_probabilities(&self, state: &StateVector, target: usize) -> Result<Vec<f64>> {
        if target >= state.num_qubits() {
            return Err(Error::QubitOutOfRange { qubit: target, num_qubits: state.num_qubits() });
        }
        let rho = kernel::reduced_single(state.amplitudes(), state.num_qubits(), target);
        Ok(self.operators.iter().map(|k| branch_weight(k, &rho)).collect())
    }

    /// One Monte-Carlo trajectory step: picks Kraus branch `i` with probability
    /// `⟨K_i†K_i⟩`, applies it and renormalizes. Branches of zero weight are never chosen.
    pub fn sample_trajectory(&self, state: &mut StateVector, target: usize, rng: &mut SimRng) -> Result<usize> {
        let probs = self.branch_probabilities(state, target)?;
        let total: f64 = probs.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut cumulative = 0.0;
        let mut chosen = None;
        for (i, &p) in probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            cumulative += p;
            chosen = Some(i);
            if u < cumulative {
                break;
            }
        }
        let i = chosen.ok_or_else(|| Error::NonFinite(alloc::string::String::from("all Kraus branches have zero weight")))?;
        let n = state.num_qubits();
        kernel::apply_single(state.amplitudes_mut(), n, target, &self.operators[i]);
        state.normalize();
        Ok(i)
    }

    /// Non-mutating form of [`Self::sample_trajectory`].
    pub fn sampled(&self, state: &StateVector, target: usize, rng: &mut SimRng) -> Result<StateVector> {
        let mut out = state.clone();
        self.sample_trajectory(&mut out, target, rng)?;
        Ok(out)
    }
}

/// Tr(K ρ K†) for 2×2 row-major matrices.
fn branch_weight(k: &[C64; 4], rho: &[C64; 4]) -> f64 {
    let mut tr = 0.0;
    for r in 0..2 {
        // (K ρ K†)_{rr} = Σ_{a,b} K_{ra} ρ_{ab} conj(K_{rb})
        let mut s = c(0.0);
        for a in 0..2 {
            for b in 0..2 {
                s += k[r * 2 + a] * rho[a * 2 + b] * k[r * 2 + b].conj();
            }
        }
        tr += s.re;
    }
    tr.max(0.0)
}
