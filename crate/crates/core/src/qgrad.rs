//! Jacobians of circuit features with respect to the trainable angles.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::FRAC_PI_2;
use crate::par_map;
use crate::qcircuit::{Ansatz, Circuit, InputVector, Observable, Op, ParamVector};
use crate::qstate::{Gate, Pauli, PauliString, StateVector};
use crate::rng::derive_path;

/// Two-term shift rule for gates `exp(-iθP/2)` with `P² = I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftRule {
    pub shift: f64,
    pub coefficient: f64,
}

impl Default for ShiftRule {
    fn default() -> Self {
        ShiftRule { shift: FRAC_PI_2, coefficient: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientBackend {
    #[default]
    Adjoint,
    ParameterShift,
}

/// Row-major `features × params` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureJacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Full circuit executions spent building it.
    pub circuit_runs: usize,
}

impl FeatureJacobian {
    fn zeros(rows: usize, cols: usize) -> Self {
        FeatureJacobian { rows, cols, data: vec![0.0; rows * cols], circuit_runs: 0 }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// `gᵀ J`
    pub fn vjp(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.rows {
            return Err(Error::LengthMismatch { what: "feature cotangent", expected: self.rows, actual: g.len() });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &gr) in g.iter().enumerate() {
            for (o, &j) in out.iter_mut().zip(&self.data[r * self.cols..(r + 1) * self.cols]) {
                *o += gr * j;
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &FeatureJacobian) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn check_differentiable(circuit: &Circuit) -> Result<()> {
    for op in &circuit.ops {
        if let Op::Gate { gate, param: Some(k) } = op {
            if gate.generator().is_none() {
                return Err(Error::NotPauliGenerated(*k));
            }
        }
    }
    Ok(())
}

fn noise_seed_for(ansatz: &Ansatz, noise_seed: Option<u64>) -> Result<u64> {
    match (ansatz.is_noisy(), noise_seed) {
        (false, _) => Ok(0),
        (true, Some(s)) => Ok(s),
        (true, None) => Err(Error::InvalidArgument("noisy circuit needs a noise seed".into())),
    }
}

/// Parameter-shift jacobian: `2|θ|` circuit runs. Under noise every shifted
/// run draws its own trajectory from a seed derived from `noise_seed`.
pub fn psr_jacobian(
    ansatz: &Ansatz,
    z: &InputVector,
    theta: &ParamVector,
    obs: &Observable,
    noise_seed: Option<u64>,
) -> Result<FeatureJacobian> {
    check_differentiable(&ansatz.build(z, theta)?)?;
    let base = noise_seed_for(ansatz, noise_seed)?;
    let rule = ShiftRule::default();
    let p = theta.len();
    let columns = par_map(p, |k| -> Result<Vec<f64>> {
        let eval = |sign: f64, tag: u64| -> Result<Vec<f64>> {
            let mut shifted = theta.clone();
            shifted.0[k] += sign * rule.shift;
            ansatz.features(z, &shifted, obs, Some(derive_path(base, &[k as u64, tag])))
        };
        let plus = eval(1.0, 0)?;
        let minus = eval(-1.0, 1)?;
        Ok(plus.iter().zip(&minus).map(|(a, b)| rule.coefficient * (a - b)).collect())
    });
    let mut jac = FeatureJacobian::zeros(obs.len(), p);
    for (k, col) in columns.into_iter().enumerate() {
        for (r, v) in col?.into_iter().enumerate() {
            jac.data[r * p + k] = v;
        }
    }
    jac.circuit_runs = 2 * p;
    Ok(jac)
}

/// `gᵀ J` by parameter shift.
pub fn psr_vjp(
    ansatz: &Ansatz,
    z: &InputVector,
    theta: &ParamVector,
    obs: &Observable,
    g: &[f64],
    noise_seed: Option<u64>,
) -> Result<Vec<f64>> {
    psr_jacobian(ansatz, z, theta, obs, noise_seed)?.vjp(g)
}

/// `⟨bra| P_targets |ket⟩` for the generator of a rotation gate.
fn generator_element(bra: &StateVector, ket: &StateVector, gate: &Gate) -> C64 {
    let mut pk = ket.clone();
    let gen = gate.generator().expect("checked generator");
    for (&p, &q) in gen.iter().zip(gate.targets()) {
        if p != Pauli::I {
            pk.apply_unchecked(&Gate::pauli(p, q));
        }
    }
    bra.inner(&pk)
}

fn require_noiseless(ansatz: &Ansatz) -> Result<()> {
    if ansatz.is_noisy() {
        return Err(Error::Unsupported("adjoint differentiation needs a noiseless circuit; use parameter shift".into()));
    }
    Ok(())
}

/// One backward sweep for `d⟨ψ|A|ψ⟩/dθ` given `λ = A|ψ⟩` at the output.
fn adjoint_sweep(circuit: &Circuit, mut psi: StateVector, mut lambda: StateVector, num_params: usize) -> Vec<f64> {
    let mut grad = vec![0.0; num_params];
    for op in circuit.ops.iter().rev() {
        let Op::Gate { gate, param } = op else { continue };
        if let Some(k) = param {
            // dU/dθ = -i/2 P U, so d⟨A⟩/dθ = Im⟨λ|P|ψ⟩ at the gate output.
            grad[*k] += generator_element(&lambda, &psi, gate).im;
        }
        let inv = gate.dagger();
        psi.apply_unchecked(&inv);
        lambda.apply_unchecked(&inv);
    }
    grad
}

fn apply_operator(state: &StateVector, terms: &[(f64, &PauliString)]) -> Result<StateVector> {
    let n = state.num_qubits();
    let mut acc = vec![C64::new(0.0, 0.0); state.amplitudes().len()];
    for (c, p) in terms {
        if *c == 0.0 {
            continue;
        }
        let mut s = state.clone();
        s.apply_pauli(p)?;
        for (a, b) in acc.iter_mut().zip(s.amplitudes()) {
            *a += b * *c;
        }
    }
    // Not normalized: λ is an arbitrary vector, not a state.
    let mut out = StateVector::zero(n);
    out.amplitudes_mut().copy_from_slice(&acc);
    Ok(out)
}

/// Noiseless jacobian by reverse sweeps, one per observable term.
pub fn adjoint_jacobian(ansatz: &Ansatz, z: &InputVector, theta: &ParamVector, obs: &Observable) -> Result<FeatureJacobian> {
    require_noiseless(ansatz)?;
    circuit_adjoint_jacobian(&ansatz.build(z, theta)?, theta.len(), obs)
}

/// Adjoint jacobian of a bound noiseless circuit whose ops index into `num_params` angles.
pub fn circuit_adjoint_jacobian(circuit: &Circuit, num_params: usize, obs: &Observable) -> Result<FeatureJacobian> {
    if circuit.is_noisy() {
        return Err(Error::Unsupported("adjoint differentiation needs a noiseless circuit; use parameter shift".into()));
    }
    check_differentiable(circuit)?;
    let psi = circuit.run(None)?;
    let rows = par_map(obs.len(), |r| -> Result<Vec<f64>> {
        let lambda = apply_operator(&psi, &[(1.0, &obs.terms[r].1)])?;
        Ok(adjoint_sweep(circuit, psi.clone(), lambda, num_params))
    });
    let mut jac = FeatureJacobian::zeros(obs.len(), num_params);
    for (r, row) in rows.into_iter().enumerate() {
        jac.data[r * num_params..(r + 1) * num_params].copy_from_slice(&row?);
    }
    jac.circuit_runs = 1;
    Ok(jac)
}

/// `gᵀ J` with a single reverse sweep on `Σ g_i h_i`.
pub fn adjoint_vjp(ansatz: &Ansatz, z: &InputVector, theta: &ParamVector, obs: &Observable, g: &[f64]) -> Result<Vec<f64>> {
    require_noiseless(ansatz)?;
    if g.len() != obs.len() {
        return Err(Error::LengthMismatch { what: "feature cotangent", expected: obs.len(), actual: g.len() });
    }
    let circuit = ansatz.build(z, theta)?;
    check_differentiable(&circuit)?;
    let psi = circuit.run(None)?;
    let lambda = apply_operator(&psi, &obs.combine(g))?;
    Ok(adjoint_sweep(&circuit, psi, lambda, theta.len()))
}

/// Central differences with step `h`.
pub fn finite_diff_jacobian(
    ansatz: &Ansatz,
    z: &InputVector,
    theta: &ParamVector,
    obs: &Observable,
    h: f64,
) -> Result<FeatureJacobian> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let p = theta.len();
    let mut jac = FeatureJacobian::zeros(obs.len(), p);
    for k in 0..p {
        let mut tp = theta.clone();
        tp.0[k] += h;
        let mut tm = theta.clone();
        tm.0[k] -= h;
        let fp = ansatz.features(z, &tp, obs, Some(derive_path(0, &[k as u64, 0])))?;
        let fm = ansatz.features(z, &tm, obs, Some(derive_path(0, &[k as u64, 1])))?;
        for r in 0..obs.len() {
            jac.data[r * p + k] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac.circuit_runs = 2 * p;
    Ok(jac)
}
