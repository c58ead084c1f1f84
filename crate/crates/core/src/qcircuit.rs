//! Parameterized circuits: data encoders, variational layers and feature readout.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::TAU;
use crate::qstate::{haar_qubit_amplitudes, ChannelKind, DensityMatrix, Gate, KrausChannel, Pauli, PauliString, RotationAxis, StateVector};
use crate::rng::{rng_from_seed, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// `R_Y(z_i) R_Z(z_i)` re-uploaded between variational layers.
    AngleReupload,
    /// `U_Z(z) H U_Z(z) H |0⟩` before the variational layers.
    Iqp,
    /// Trotterized neighbour Heisenberg evolution on a Haar product state.
    Heisenberg,
}

impl Encoding {
    /// Expected input range.
    pub fn input_range(self) -> (f64, f64) {
        match self {
            Encoding::AngleReupload => (0.0, TAU),
            Encoding::Iqp | Encoding::Heisenberg => (0.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entangler {
    CzFixed,
    RzzParameterized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Linear,
    Circular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: ChannelKind,
    pub rate: f64,
}

fn default_trotter() -> usize {
    3
}

/// Shape of one patch circuit. `qubits` is the input length; the Heisenberg
/// encoder simulates one extra qubit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSpec {
    pub encoding: Encoding,
    pub qubits: usize,
    pub layers: usize,
    pub entangler: Entangler,
    pub topology: Topology,
    #[serde(default = "default_trotter")]
    pub trotter_steps: usize,
    /// Defaults to `qubits / 3` when absent.
    #[serde(default)]
    pub evolution_time: Option<f64>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

impl CircuitSpec {
    pub fn new(encoding: Encoding, qubits: usize, layers: usize) -> Self {
        CircuitSpec {
            encoding,
            qubits,
            layers,
            entangler: Entangler::CzFixed,
            topology: Topology::Linear,
            trotter_steps: 3,
            evolution_time: None,
            noise: None,
        }
    }

    pub fn with_entangler(mut self, e: Entangler) -> Self {
        self.entangler = e;
        self
    }

    pub fn with_topology(mut self, t: Topology) -> Self {
        self.topology = t;
        self
    }

    pub fn with_noise(mut self, noise: Option<NoiseSpec>) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits == 0 || self.layers == 0 {
            return Err(Error::InvalidArgument("circuit needs at least one qubit and one layer".into()));
        }
        if self.encoding == Encoding::Heisenberg && self.trotter_steps == 0 {
            return Err(Error::InvalidArgument("trotter_steps must be at least 1".into()));
        }
        if let Some(n) = self.noise {
            if !(0.0..=1.0).contains(&n.rate) {
                return Err(Error::InvalidRate(n.rate));
            }
        }
        Ok(())
    }

    /// Qubits actually simulated.
    pub fn width(&self) -> usize {
        match self.encoding {
            Encoding::Heisenberg => self.qubits + 1,
            _ => self.qubits,
        }
    }

    pub fn evolution_time(&self) -> f64 {
        self.evolution_time.unwrap_or(self.qubits as f64 / 3.0)
    }

    /// Entangling pairs of one variational layer. Circular wiring only adds the
    /// wrap-around pair when it is distinct from the chain, i.e. for three or more qubits.
    pub fn entangling_pairs(&self) -> Vec<(usize, usize)> {
        let w = self.width();
        let mut pairs: Vec<(usize, usize)> = (0..w.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        if self.topology == Topology::Circular && w >= 3 {
            pairs.push((w - 1, 0));
        }
        pairs
    }

    pub fn local_params_per_layer(&self) -> usize {
        3 * self.width()
    }

    pub fn entangling_params_per_layer(&self) -> usize {
        match self.entangler {
            Entangler::CzFixed => 0,
            Entangler::RzzParameterized => self.entangling_pairs().len(),
        }
    }

    pub fn params_per_layer(&self) -> usize {
        self.local_params_per_layer() + self.entangling_params_per_layer()
    }

    /// `|θ| = L·(3n + E)`
    pub fn num_params(&self) -> usize {
        self.layers * self.params_per_layer()
    }

    /// Index of the `axis` angle (0 = RX, 1 = RY, 2 = RZ) of `qubit` in `layer`.
    pub fn local_index(&self, layer: usize, qubit: usize, axis: usize) -> usize {
        layer * self.params_per_layer() + 3 * qubit + axis
    }

    /// Index of the `k`-th entangling angle of `layer`, if the entangler is parameterized.
    pub fn entangling_index(&self, layer: usize, k: usize) -> Option<usize> {
        (k < self.entangling_params_per_layer())
            .then(|| layer * self.params_per_layer() + self.local_params_per_layer() + k)
    }
}

/// Trainable circuit angles, stored unwrapped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(spec: &CircuitSpec) -> Self {
        ParamVector(vec![0.0; spec.num_params()])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_layout(&self, spec: &CircuitSpec) -> Result<()> {
        if self.0.len() != spec.num_params() {
            return Err(Error::LengthMismatch { what: "parameter vector", expected: spec.num_params(), actual: self.0.len() });
        }
        Ok(())
    }
}

/// `O = Σ_i w_i h_i`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub terms: Vec<(f64, PauliString)>,
    #[serde(default)]
    pub trainable_weights: bool,
}

impl Observable {
    /// One unit-weight `Z` per qubit.
    pub fn z_per_qubit(num_qubits: usize) -> Self {
        Self::z_on_first(num_qubits, num_qubits)
    }

    /// Unit-weight `Z` on qubits `0..count` of a `width`-qubit register.
    pub fn z_on_first(width: usize, count: usize) -> Self {
        Observable {
            terms: (0..count).map(|q| (1.0, PauliString::single(width, q, Pauli::Z))).collect(),
            trainable_weights: false,
        }
    }

    /// Default readout for a circuit: a `Z` on each of the `qubits` input wires.
    pub fn default_for(spec: &CircuitSpec) -> Self {
        Self::z_on_first(spec.width(), spec.qubits)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.0).collect()
    }

    /// Per-term expectations `h_i`, unweighted.
    pub fn expectations(&self, state: &StateVector) -> Result<Vec<f64>> {
        let all_single_z = self.terms.iter().all(|(_, p)| {
            p.len() == state.num_qubits() && p.paulis().iter().filter(|&&x| x != Pauli::I).count() == 1
                && p.paulis().iter().all(|&x| x == Pauli::I || x == Pauli::Z)
        });
        if all_single_z {
            let z = state.z_expectations();
            return Ok(self
                .terms
                .iter()
                .map(|(_, p)| z[p.paulis().iter().position(|&x| x == Pauli::Z).unwrap_or(0)])
                .collect());
        }
        self.terms.iter().map(|(_, p)| state.pauli_expectation(p)).collect()
    }

    /// `w_i h_i`
    pub fn weighted(&self, h: &[f64]) -> Vec<f64> {
        self.terms.iter().zip(h).map(|((w, _), x)| w * x).collect()
    }

    /// `Σ_i c_i h_i` as an operator, for adjoint differentiation.
    pub(crate) fn combine(&self, coefficients: &[f64]) -> Vec<(f64, &PauliString)> {
        self.terms.iter().zip(coefficients).map(|((_, p), &c)| (c, p)).collect()
    }

    fn bound(&self) -> f64 {
        self.terms.iter().map(|t| t.0.abs()).sum()
    }
}

/// The bucket patch fed into a circuit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputVector(pub Vec<f64>);

impl InputVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn check(&self, spec: &CircuitSpec) -> Result<()> {
        if self.0.len() != spec.qubits {
            return Err(Error::LengthMismatch { what: "input vector", expected: spec.qubits, actual: self.0.len() });
        }
        let (lo, hi) = spec.encoding.input_range();
        let slack = 1e-9;
        for (index, &value) in self.0.iter().enumerate() {
            if !(value >= lo - slack && value <= hi + slack) {
                return Err(Error::InputRange { index, value, min: lo, max: hi });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Gate {
        gate: Gate,
        /// Index into the parameter vector for trainable rotations.
        param: Option<usize>,
    },
    Noise {
        channel: KrausChannel,
        target: usize,
    },
}

/// A fully bound circuit: initial state plus an op list in application order.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub initial: StateVector,
    pub ops: Vec<Op>,
}

impl Circuit {
    pub fn num_qubits(&self) -> usize {
        self.initial.num_qubits()
    }

    pub fn is_noisy(&self) -> bool {
        self.ops.iter().any(|o| matches!(o, Op::Noise { .. }))
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.ops.iter().filter_map(|o| match o {
            Op::Gate { gate, .. } => Some(gate),
            Op::Noise { .. } => None,
        })
    }

    /// Final state. Noise ops need `rng`; each call draws one trajectory.
    pub fn run(&self, mut rng: Option<&mut SimRng>) -> Result<StateVector> {
        let mut state = self.initial.clone();
        for op in &self.ops {
            match op {
                Op::Gate { gate, .. } => state.apply(gate)?,
                Op::Noise { channel, target } => {
                    let r = rng
                        .as_deref_mut()
                        .ok_or_else(|| Error::InvalidArgument(String::from("noisy circuit needs a random generator")))?;
                    channel.sample_trajectory(&mut state, *target, r)?;
                }
            }
        }
        Ok(state)
    }

    /// Exact channel evolution in density-matrix mode.
    pub fn run_density(&self) -> Result<DensityMatrix> {
        let mut rho = DensityMatrix::from_pure(&self.initial)?;
        for op in &self.ops {
            rho = match op {
                Op::Gate { gate, .. } => rho.apply_gate(gate)?,
                Op::Noise { channel, target } => rho.apply_channel(channel, *target)?,
            };
        }
        Ok(rho)
    }
}

/// A circuit family bound to a spec, holding anything that is sampled once per
/// model (the fixed Haar product state of the Heisenberg encoder).
#[derive(Clone, Debug, PartialEq)]
pub struct Ansatz {
    spec: CircuitSpec,
    initial: StateVector,
    noise: Option<KrausChannel>,
}

impl Ansatz {
    /// `seed` fixes the Heisenberg Haar states; it is unused by the other encoders.
    pub fn new(spec: CircuitSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let width = spec.width();
        let initial = match spec.encoding {
            Encoding::Heisenberg => {
                let mut rng = rng_from_seed(seed);
                let qubits: Vec<[C64; 2]> = (0..width).map(|_| haar_qubit_amplitudes(&mut rng)).collect();
                StateVector::product(&qubits)
            }
            _ => StateVector::zero(width),
        };
        let noise = spec.noise.map(|n| KrausChannel::new(n.kind, n.rate)).transpose()?;
        Ok(Ansatz { spec, initial, noise })
    }

    pub fn spec(&self) -> &CircuitSpec {
        &self.spec
    }

    pub fn initial_state(&self) -> &StateVector {
        &self.initial
    }

    pub fn is_noisy(&self) -> bool {
        self.noise.is_some()
    }

    /// Same circuit family without the noise channels.
    pub fn noiseless(&self) -> Ansatz {
        let mut a = self.clone();
        a.noise = None;
        a.spec.noise = None;
        a
    }

    /// Binds `z` and `theta` into a circuit.
    pub fn build(&self, z: &InputVector, theta: &ParamVector) -> Result<Circuit> {
        z.check(&self.spec)?;
        theta.check_layout(&self.spec)?;
        let mut ops = Vec::new();
        let zv = z.values();
        match self.spec.encoding {
            Encoding::AngleReupload => {
                for layer in 0..self.spec.layers {
                    if layer > 0 {
                        angle_encoding(zv, &mut ops);
                    }
                    self.variational_layer(layer, theta, &mut ops);
                }
            }
            Encoding::Iqp => {
                for _ in 0..2 {
                    for q in 0..self.spec.qubits {
                        push(&mut ops, Gate::h(q));
                    }
                    for g in iqp_encoding_unitary(zv) {
                        push(&mut ops, g);
                    }
                }
                for layer in 0..self.spec.layers {
                    self.variational_layer(layer, theta, &mut ops);
                }
            }
            Encoding::Heisenberg => {
                self.heisenberg_encoding(zv, &mut ops);
                for layer in 0..self.spec.layers {
                    self.variational_layer(layer, theta, &mut ops);
                }
            }
        }
        Ok(Circuit { initial: self.initial.clone(), ops })
    }

    fn variational_layer(&self, layer: usize, theta: &ParamVector, ops: &mut Vec<Op>) {
        let t = theta.values();
        for q in 0..self.spec.width() {
            // R_X R_Y R_Z as an operator product: RZ acts first.
            for (axis, pauli) in [(2, Pauli::Z), (1, Pauli::Y), (0, Pauli::X)] {
                let k = self.spec.local_index(layer, q, axis);
                ops.push(Op::Gate { gate: Gate::rotation(pauli, t[k], q), param: Some(k) });
            }
        }
        for (k, (a, b)) in self.spec.entangling_pairs().into_iter().enumerate() {
            match self.spec.entangler {
                Entangler::CzFixed => push(ops, Gate::cz(a, b)),
                Entangler::RzzParameterized => {
                    let idx = self.spec.entangling_index(layer, k).expect("parameterized entangler");
                    ops.push(Op::Gate { gate: Gate::rzz(t[idx], a, b), param: Some(idx) });
                }
            }
            if let Some(ch) = &self.noise {
                for target in [a, b] {
                    ops.push(Op::Noise { channel: ch.clone(), target });
                }
            }
        }
    }

    fn heisenberg_encoding(&self, z: &[f64], ops: &mut Vec<Op>) {
        let steps = self.spec.trotter_steps;
        let dt = self.spec.evolution_time() / steps as f64;
        for _ in 0..steps {
            for (i, &zi) in z.iter().enumerate() {
                // exp(-i dt z (XX + YY + ZZ)); the three terms commute on a pair.
                let angle = 2.0 * dt * zi;
                for axis in [RotationAxis::XX, RotationAxis::YY, RotationAxis::ZZ] {
                    push(ops, Gate::two_qubit_rotation(axis, angle, i, i + 1));
                }
            }
        }
    }

    /// Per-term expectations `h` of `obs`. Noisy circuits draw one trajectory
    /// seeded by `noise_seed`; noiseless runs ignore it.
    pub fn features(&self, z: &InputVector, theta: &ParamVector, obs: &Observable, noise_seed: Option<u64>) -> Result<Vec<f64>> {
        let circuit = self.build(z, theta)?;
        let state = if circuit.is_noisy() {
            let seed = noise_seed
                .ok_or_else(|| Error::InvalidArgument(String::from("noisy circuit needs a noise seed")))?;
            circuit.run(Some(&mut rng_from_seed(seed)))?
        } else {
            circuit.run(None)?
        };
        obs.expectations(&state)
    }

    /// Largest possible |feature| for `obs`.
    pub fn feature_bound(obs: &Observable) -> f64 {
        obs.bound()
    }
}

fn push(ops: &mut Vec<Op>, gate: Gate) {
    ops.push(Op::Gate { gate, param: None });
}

/// `⊗_i R_Y(z_i) R_Z(z_i)`, RZ applied first.
fn angle_encoding(z: &[f64], ops: &mut Vec<Op>) {
    for (q, &x) in z.iter().enumerate() {
        push(ops, Gate::rz(x, q));
        push(ops, Gate::ry(x, q));
    }
}

/// Diagonal `exp(-i (Σ z_j Z_j + Σ_{i<i'} z_i z_{i'} Z_i Z_{i'}))` over all pairs.
pub fn iqp_encoding_unitary(z: &[f64]) -> Vec<Gate> {
    let mut gates = Vec::new();
    for (q, &x) in z.iter().enumerate() {
        gates.push(Gate::rz(2.0 * x, q));
    }
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            gates.push(Gate::rzz(2.0 * z[i] * z[j], i, j));
        }
    }
    gates
}
