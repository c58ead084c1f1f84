//! The hybrid reconstruction model, its physics-driven loss and the training loop.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{min_max_rescale, psnr, ssim, tv_gradient, tv_norm, BucketSignals, Image, PatternSet};
use crate::math::{ceil, sample_variance, FRAC_PI_2};
use crate::nn::{init_quantum_angles, uniform_angles, AdamConfig, AdamState, ClassicalParams, Decoder, DecoderConfig, ForwardCache};
use crate::par_map;
use crate::qcircuit::{Ansatz, CircuitSpec, Encoding, Entangler, InputVector, Observable, ParamVector};
use crate::qgrad::{adjoint_vjp, psr_vjp, GradientBackend};
use crate::rng::{derive_path, rng_from_seed};

/// Tags separating the seed streams derived from a model seed.
mod tag {
    pub const ANSATZ: u64 = 1;
    pub const THETA: u64 = 2;
    pub const DECODER: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const BP_TRIAL: u64 = 5;
}

/// Min-max map of the buckets onto the encoder's input range; constant input maps to zeros.
pub fn normalize_input(buckets: &[f64], encoding: Encoding) -> Result<Vec<f64>> {
    if buckets.is_empty() {
        return Err(Error::InvalidArgument("no bucket values".into()));
    }
    if buckets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("bucket value".into()));
    }
    let (_, hi) = encoding.input_range();
    Ok(min_max_rescale(buckets).into_iter().map(|v| v * hi).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// One circuit parameter set reused by every patch.
    SharedParams,
    /// Each patch owns its parameters.
    #[default]
    IndependentParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub qubits_per_patch: usize,
    pub num_patches: usize,
    pub padding: usize,
    pub sharing: Sharing,
}

impl PatchPlan {
    pub fn new(num_buckets: usize, qubits_per_patch: usize, sharing: Sharing) -> Result<Self> {
        if num_buckets == 0 || qubits_per_patch == 0 {
            return Err(Error::InvalidArgument("patch plan needs buckets and qubits".into()));
        }
        let num_patches = ceil(num_buckets as f64 / qubits_per_patch as f64) as usize;
        Ok(PatchPlan { qubits_per_patch, num_patches, padding: num_patches * qubits_per_patch - num_buckets, sharing })
    }

    pub fn num_buckets(&self) -> usize {
        self.num_patches * self.qubits_per_patch - self.padding
    }

    /// Parameter group used by patch `p`.
    pub fn group(&self, p: usize) -> usize {
        match self.sharing {
            Sharing::SharedParams => 0,
            Sharing::IndependentParams => p,
        }
    }

    pub fn num_groups(&self) -> usize {
        match self.sharing {
            Sharing::SharedParams => 1,
            Sharing::IndependentParams => self.num_patches,
        }
    }
}

/// Contiguous chunks of `n`, the last one zero-padded.
pub fn split_patches(z: &[f64], plan: &PatchPlan) -> Result<Vec<InputVector>> {
    if z.len() != plan.num_buckets() {
        return Err(Error::LengthMismatch { what: "normalized buckets", expected: plan.num_buckets(), actual: z.len() });
    }
    let n = plan.qubits_per_patch;
    Ok((0..plan.num_patches)
        .map(|j| {
            let mut chunk = vec![0.0; n];
            let end = ((j + 1) * n).min(z.len());
            chunk[..end - j * n].copy_from_slice(&z[j * n..end]);
            InputVector(chunk)
        })
        .collect())
}

fn default_init_scale() -> f64 {
    0.1
}

/// Everything needed to build a [`HybridModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Patch circuit (`qubits` = buckets per patch). `None` swaps the quantum
    /// stage for a trainable `M→M` linear layer: the classical baseline.
    pub circuit: Option<CircuitSpec>,
    #[serde(default)]
    pub sharing: Sharing,
    #[serde(default)]
    pub trainable_weights: bool,
    /// Output image side.
    pub side: usize,
    #[serde(default)]
    pub bottleneck: Option<usize>,
    /// Multiplier on the `N(0, N_Q)` initial angles.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Normalization layers in the decoder trunk.
    #[serde(default = "default_true")]
    pub decoder_norm: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn quantum(circuit: CircuitSpec, side: usize, seed: u64) -> Self {
        ModelConfig {
            circuit: Some(circuit),
            sharing: Sharing::IndependentParams,
            trainable_weights: false,
            side,
            bottleneck: None,
            init_scale: default_init_scale(),
            decoder_norm: true,
            seed,
        }
    }

    pub fn classical(side: usize, seed: u64) -> Self {
        ModelConfig { circuit: None, ..Self::quantum(CircuitSpec::new(Encoding::AngleReupload, 1, 1), side, seed) }
    }
}

/// Per-patch circuits feeding the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumStage {
    pub plan: PatchPlan,
    /// One per parameter group.
    pub ansatze: Vec<Ansatz>,
    pub thetas: Vec<ParamVector>,
    /// Observable weights per group.
    pub weights: Vec<Vec<f64>>,
    pub observable: Observable,
}

impl QuantumStage {
    fn terms(&self) -> usize {
        self.observable.len()
    }

    fn patch(&self, p: usize) -> (&Ansatz, &ParamVector, &[f64]) {
        let g = self.plan.group(p);
        (&self.ansatze[g], &self.thetas[g], &self.weights[g])
    }
}

/// `Φ = F_ν ∘ U_θ`
#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    config: ModelConfig,
    num_buckets: usize,
    pub quantum: Option<QuantumStage>,
    pub decoder: Decoder,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct HybridState {
    pub patches: Vec<InputVector>,
    /// Unweighted per-patch expectations.
    pub raw_features: Vec<Vec<f64>>,
    /// Decoder input.
    pub features: Vec<f64>,
    pub cache: ForwardCache,
    pub eval_seed: u64,
}

/// Gradients of the loss, shaped like the model's trainable blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub thetas: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub classical: ClassicalParams,
    /// Gradient with respect to the decoder input.
    pub features: Vec<f64>,
}

impl Gradients {
    pub fn norm_sq(&self, trainable_weights: bool) -> f64 {
        let q: f64 = self.thetas.iter().flatten().map(|x| x * x).sum();
        let w: f64 = if trainable_weights { self.weights.iter().flatten().map(|x| x * x).sum() } else { 0.0 };
        q + w + self.classical.norm_sq()
    }
}

impl HybridModel {
    pub fn new(config: ModelConfig, num_buckets: usize) -> Result<Self> {
        if num_buckets == 0 {
            return Err(Error::InvalidArgument("model needs at least one bucket".into()));
        }
        let dec_cfg = |feature_len: usize, front: bool| {
            let mut c = DecoderConfig::new(feature_len, config.side).with_front_linear(front).with_normalization(config.decoder_norm);
            if let Some(b) = config.bottleneck {
                c.bottleneck = b;
            }
            c
        };
        let mut dec_rng = rng_from_seed(derive_path(config.seed, &[tag::DECODER]));
        let (quantum, decoder) = match &config.circuit {
            None => (None, Decoder::init(dec_cfg(num_buckets, true), &mut dec_rng)?),
            Some(spec) => {
                spec.validate()?;
                let plan = PatchPlan::new(num_buckets, spec.qubits, config.sharing)?;
                let observable = Observable { trainable_weights: config.trainable_weights, ..Observable::default_for(spec) };
                let mut ansatze = Vec::new();
                let mut thetas = Vec::new();
                for g in 0..plan.num_groups() {
                    ansatze.push(Ansatz::new(spec.clone(), derive_path(config.seed, &[tag::ANSATZ, g as u64]))?);
                    let mut rng = rng_from_seed(derive_path(config.seed, &[tag::THETA, g as u64]));
                    thetas.push(ParamVector(init_quantum_angles(spec.num_params(), spec.qubits, config.init_scale, &mut rng)));
                }
                let weights = vec![observable.weights(); plan.num_groups()];
                let feature_len = plan.num_patches * observable.len();
                let stage = QuantumStage { plan, ansatze, thetas, weights, observable };
                (Some(stage), Decoder::init(dec_cfg(feature_len, false), &mut dec_rng)?)
            }
        };
        Ok(HybridModel { config, num_buckets, quantum, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    pub fn side(&self) -> usize {
        self.config.side
    }

    pub fn is_noisy(&self) -> bool {
        self.quantum.as_ref().is_some_and(|q| q.ansatze[0].is_noisy())
    }

    pub fn quantum_param_count(&self) -> usize {
        self.quantum.as_ref().map_or(0, |q| {
            q.thetas.iter().map(ParamVector::len).sum::<usize>()
                + if self.config.trainable_weights { q.weights.iter().map(Vec::len).sum() } else { 0 }
        })
    }

    pub fn classical_param_count(&self) -> usize {
        self.decoder.params().count()
    }

    fn encoding(&self) -> Encoding {
        self.quantum.as_ref().map_or(Encoding::AngleReupload, |q| q.ansatze[0].spec().encoding)
    }

    /// `Ŷ = F_ν(w ⊙ h)`. `eval_seed` drives trajectory noise; noiseless models ignore it.
    pub fn forward(&self, buckets: &[f64], eval_seed: u64) -> Result<(Vec<f64>, HybridState)> {
        if buckets.len() != self.num_buckets {
            return Err(Error::LengthMismatch { what: "buckets", expected: self.num_buckets, actual: buckets.len() });
        }
        let z = normalize_input(buckets, self.encoding())?;
        let (patches, raw_features, features) = match &self.quantum {
            None => (Vec::new(), Vec::new(), z),
            Some(q) => {
                let patches = split_patches(&z, &q.plan)?;
                let raw = par_map(patches.len(), |p| {
                    let (ansatz, theta, _) = q.patch(p);
                    ansatz.features(&patches[p], theta, &q.observable, Some(derive_path(eval_seed, &[tag::NOISE, p as u64])))
                });
                let raw: Vec<Vec<f64>> = raw.into_iter().collect::<Result<_>>()?;
                let mut features = Vec::with_capacity(patches.len() * q.terms());
                for (p, h) in raw.iter().enumerate() {
                    let (_, _, w) = q.patch(p);
                    features.extend(h.iter().zip(w).map(|(a, b)| a * b));
                }
                (patches, raw, features)
            }
        };
        let (image, cache) = self.decoder.forward(&features)?;
        Ok((image, HybridState { patches, raw_features, features, cache, eval_seed }))
    }

    /// Reverse pass given `∂L/∂Ŷ`.
    pub fn backward(&self, state: &HybridState, image_grad: &[f64], backend: GradientBackend) -> Result<Gradients> {
        let (feature_grad, classical) = self.decoder.backward(&state.cache, image_grad)?;
        let Some(q) = &self.quantum else {
            return Ok(Gradients { thetas: Vec::new(), weights: Vec::new(), classical, features: feature_grad });
        };
        if backend == GradientBackend::Adjoint && self.is_noisy() {
            return Err(Error::Unsupported("adjoint gradients are unavailable with quantum noise; use parameter_shift".into()));
        }
        let t = q.terms();
        let per_patch = par_map(q.plan.num_patches, |p| -> Result<Vec<f64>> {
            let (ansatz, theta, w) = q.patch(p);
            let g: Vec<f64> = feature_grad[p * t..(p + 1) * t].iter().zip(w).map(|(a, b)| a * b).collect();
            match backend {
                GradientBackend::Adjoint => adjoint_vjp(ansatz, &state.patches[p], theta, &q.observable, &g),
                GradientBackend::ParameterShift => psr_vjp(
                    ansatz,
                    &state.patches[p],
                    theta,
                    &q.observable,
                    &g,
                    Some(derive_path(state.eval_seed, &[tag::NOISE, p as u64, 1])),
                ),
            }
        });
        let mut thetas: Vec<Vec<f64>> = q.thetas.iter().map(|th| vec![0.0; th.len()]).collect();
        let mut weights: Vec<Vec<f64>> = q.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        for (p, grad) in per_patch.into_iter().enumerate() {
            let g = q.plan.group(p);
            thetas[g].iter_mut().zip(grad?).for_each(|(a, b)| *a += b);
            for (i, wg) in weights[g].iter_mut().enumerate() {
                *wg += feature_grad[p * t + i] * state.raw_features[p][i];
            }
        }
        Ok(Gradients { thetas, weights, classical, features: feature_grad })
    }

    /// Trainable blocks in a fixed order: thetas, [weights], decoder tensors.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let trainable_w = self.config.trainable_weights;
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(q) = &mut self.quantum {
            out.extend(q.thetas.iter_mut().map(|t| t.0.as_mut_slice()));
            if trainable_w {
                out.extend(q.weights.iter_mut().map(Vec::as_mut_slice));
            }
        }
        out.extend(self.decoder.params_mut().tensors.iter_mut().map(|t| t.data_mut()));
        out
    }

    fn block_sizes(&mut self) -> Vec<usize> {
        self.blocks_mut().iter().map(|b| b.len()).collect()
    }

    /// Gradient blocks matching [`HybridModel::blocks_mut`].
    pub fn gradient_blocks<'a>(&self, g: &'a Gradients) -> Vec<&'a [f64]> {
        let mut out: Vec<&[f64]> = g.thetas.iter().map(Vec::as_slice).collect();
        if self.config.trainable_weights {
            out.extend(g.weights.iter().map(Vec::as_slice));
        }
        out.extend(g.classical.tensors.iter().map(|t| t.data()));
        out
    }
}

/// One evaluation of `Σ(I − β I′)² + μ TV(Ŷ)` with `I′ = HŶ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub data: f64,
    pub tv: f64,
    /// Gain applied to `I′` (1 when calibration is off).
    pub gain: f64,
    pub estimate: Vec<f64>,
    /// `∂L/∂Ŷ` with the gain held fixed.
    pub image_grad: Vec<f64>,
}

/// Closed-form least-squares gain `β* = I·I′ / ‖I′‖²` (1 if `I′ = 0`).
pub fn optimal_gain(measured: &[f64], estimate: &[f64]) -> f64 {
    let den = crate::math::norm_sq(estimate);
    if den > 0.0 {
        crate::math::dot(measured, estimate) / den
    } else {
        1.0
    }
}

pub fn physics_loss(patterns: &PatternSet, buckets: &[f64], image: &[f64], mu: f64, gain_calibration: bool) -> Result<LossEval> {
    if buckets.len() != patterns.count() {
        return Err(Error::LengthMismatch { what: "buckets", expected: patterns.count(), actual: buckets.len() });
    }
    let estimate = patterns.apply(image)?;
    let gain = if gain_calibration { optimal_gain(buckets, &estimate) } else { 1.0 };
    let resid: Vec<f64> = buckets.iter().zip(&estimate).map(|(i, e)| i - gain * e).collect();
    let data = resid.iter().map(|r| r * r).sum::<f64>();
    let (h, w) = (patterns.height(), patterns.width());
    let tv = tv_norm(image, h, w);
    let mut image_grad = patterns.adjoint(&resid)?;
    image_grad.iter_mut().for_each(|g| *g *= -2.0 * gain);
    if mu != 0.0 {
        for (g, t) in image_grad.iter_mut().zip(tv_gradient(image, h, w)) {
            *g += mu * t;
        }
    }
    Ok(LossEval { value: data + mu * tv, data, tv, gain, estimate, image_grad })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Update budget `T`.
    pub max_iterations: usize,
    /// Stop when the mean squared bucket residual falls to this level.
    pub mse_threshold: f64,
    /// Stop when `‖∇L‖²` falls to this level.
    pub grad_threshold: f64,
    pub lr: f64,
    pub mu: f64,
    pub gain_calibration: bool,
    pub backend: GradientBackend,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iterations: 1000,
            mse_threshold: 0.0,
            grad_threshold: 0.0,
            lr: 0.05,
            mu: 1e-6,
            gain_calibration: true,
            backend: GradientBackend::Adjoint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.mse_threshold >= 0.0) || !(self.grad_threshold >= 0.0) || !(self.mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MseThreshold,
    GradThreshold,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// After min-max display normalization of the reconstruction.
    pub psnr: f64,
    pub ssim: f64,
    /// On the reconstruction as produced.
    pub psnr_raw: f64,
    pub ssim_raw: f64,
}

/// Metrics of `reconstruction` against `truth`.
pub fn evaluate(reconstruction: &Image, truth: &Image) -> Result<Metrics> {
    let shown = Image::new(reconstruction.height(), reconstruction.width(), min_max_rescale(reconstruction.values()))?;
    Ok(Metrics {
        psnr: psnr(&shown, truth)?,
        ssim: ssim(&shown, truth)?,
        psnr_raw: psnr(reconstruction, truth)?,
        ssim_raw: ssim(reconstruction, truth)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub data_terms: Vec<f64>,
    pub grad_norms_sq: Vec<f64>,
    pub stop_reason: StopReason,
    pub best_iteration: usize,
    pub best_loss: f64,
    pub image: Image,
    pub metrics: Option<Metrics>,
    /// Filled in by callers that own a clock.
    pub wall_time_secs: Option<f64>,
    pub model_seed: u64,
    pub config: TrainConfig,
    pub quantum_params: usize,
    pub classical_params: usize,
}

impl TrainReport {
    pub fn iterations(&self) -> usize {
        self.losses.len()
    }
}

/// Loss and gradients at the current parameters.
pub fn loss_gradients(
    model: &HybridModel,
    patterns: &PatternSet,
    buckets: &[f64],
    config: &TrainConfig,
    eval_seed: u64,
) -> Result<(LossEval, Gradients, Vec<f64>)> {
    let (image, state) = model.forward(buckets, eval_seed)?;
    let loss = physics_loss(patterns, buckets, &image, config.mu, config.gain_calibration)?;
    let grads = model.backward(&state, &loss.image_grad, config.backend)?;
    Ok((loss, grads, image))
}

fn check_geometry(model: &HybridModel, patterns: &PatternSet, buckets: &BucketSignals) -> Result<()> {
    if patterns.height() != model.side() || patterns.width() != model.side() {
        return Err(Error::ShapeMismatch(format!(
            "patterns are {}×{}, model output is {}×{}",
            patterns.height(),
            patterns.width(),
            model.side(),
            model.side()
        )));
    }
    if buckets.len() != patterns.count() || buckets.len() != model.num_buckets() {
        return Err(Error::LengthMismatch { what: "buckets", expected: model.num_buckets(), actual: buckets.len() });
    }
    Ok(())
}

/// Adam on `(θ, [w], ν)`. Leaves the model at its best-loss parameters.
pub fn train(
    model: &mut HybridModel,
    patterns: &PatternSet,
    buckets: &BucketSignals,
    config: &TrainConfig,
    truth: Option<&Image>,
) -> Result<TrainReport> {
    config.validate()?;
    check_geometry(model, patterns, buckets)?;
    let side = model.side();
    let sizes = model.block_sizes();
    let mut adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &sizes);
    let noise_root = derive_path(model.config.seed, &[tag::NOISE]);
    let mut losses = Vec::new();
    let mut data_terms = Vec::new();
    let mut grad_norms_sq = Vec::new();
    let mut best: Option<(usize, f64, Vec<f64>, HybridModel)> = None;
    let stop_reason;
    let mut t = 0usize;
    loop {
        let (loss, grads, image) = loss_gradients(model, patterns, &buckets.values, config, derive_seed_for(noise_root, t))?;
        if !loss.value.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {t}: {}", loss.value)));
        }
        let gn = grads.norm_sq(model.config.trainable_weights);
        losses.push(loss.value);
        data_terms.push(loss.data);
        grad_norms_sq.push(gn);
        if best.as_ref().is_none_or(|b| loss.value < b.1) {
            best = Some((t, loss.value, image, model.clone()));
        }
        if loss.data / buckets.len() as f64 <= config.mse_threshold {
            stop_reason = StopReason::MseThreshold;
            break;
        }
        if gn <= config.grad_threshold {
            stop_reason = StopReason::GradThreshold;
            break;
        }
        if t >= config.max_iterations {
            stop_reason = StopReason::MaxIterations;
            break;
        }
        if !gn.is_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {t}")));
        }
        let grad_blocks: Vec<Vec<f64>> = model.gradient_blocks(&grads).into_iter().map(<[f64]>::to_vec).collect();
        let refs: Vec<&[f64]> = grad_blocks.iter().map(Vec::as_slice).collect();
        adam.step(&mut model.blocks_mut(), &refs)?;
        t += 1;
    }
    let (best_iteration, best_loss, best_image, best_model) = best.expect("at least one evaluation");
    *model = best_model;
    let image = Image::clamped(side, side, best_image)?;
    let metrics = truth.map(|tr| evaluate(&image, tr)).transpose()?;
    Ok(TrainReport {
        losses,
        data_terms,
        grad_norms_sq,
        stop_reason,
        best_iteration,
        best_loss,
        image,
        metrics,
        wall_time_secs: None,
        model_seed: model.config.seed,
        config: *config,
        quantum_params: model.quantum_param_count(),
        classical_params: model.classical_param_count(),
    })
}

fn derive_seed_for(root: u64, t: usize) -> u64 {
    derive_path(root, &[t as u64])
}

/// Settings of the gradient-variance study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpConfig {
    pub qubits: Vec<usize>,
    pub layers: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub encoding: Encoding,
    pub entangler: Entangler,
    pub side: usize,
    pub mu: f64,
    pub gain_calibration: bool,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            qubits: vec![4, 8, 12],
            layers: vec![5, 20, 50],
            trials: 100,
            seed: 0,
            encoding: Encoding::AngleReupload,
            entangler: Entangler::RzzParameterized,
            side: 16,
            mu: 1e-6,
            gain_calibration: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpCell {
    pub qubits: usize,
    pub layers: usize,
    pub local_variance: f64,
    pub entangling_variance: Option<f64>,
    pub local_samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpTable {
    pub config: BpConfig,
    /// Row-major: layers × qubits.
    pub cells: Vec<BpCell>,
}

impl BpTable {
    pub fn cell(&self, qubits: usize, layers: usize) -> Option<&BpCell> {
        self.cells.iter().find(|c| c.qubits == qubits && c.layers == layers)
    }
}

/// Variance of `∂L/∂θ` for the first local angle (and the first entangling
/// angle, if parameterized) of layer one. Each trial draws fresh uniform angles
/// and a fresh decoder; the derivative is taken by parameter shift through the
/// full physics loss. `object` is imaged with its first `n` patterns from `patterns`.
pub fn bp_variance_experiment(config: &BpConfig, object: &Image, patterns: &PatternSet) -> Result<BpTable> {
    if config.trials == 0 || config.qubits.is_empty() || config.layers.is_empty() {
        return Err(Error::InvalidArgument("empty variance grid".into()));
    }
    if object.height() != config.side || object.width() != config.side {
        return Err(Error::ShapeMismatch("object side differs from the configured side".into()));
    }
    let mut cells = Vec::new();
    for &layers in &config.layers {
        for &n in &config.qubits {
            let pats = patterns.truncated(n)?;
            let buckets = crate::imaging::forward_buckets(&pats, object)?.values;
            let spec = CircuitSpec::new(config.encoding, n, layers).with_entangler(config.entangler);
            let ent_index = spec.entangling_index(0, 0);
            let samples = par_map(config.trials, |trial| -> Result<(f64, Option<f64>)> {
                let seed = derive_path(config.seed, &[tag::BP_TRIAL, n as u64, layers as u64, trial as u64]);
                let mut model = HybridModel::new(
                    ModelConfig { sharing: Sharing::SharedParams, ..ModelConfig::quantum(spec.clone(), config.side, seed) },
                    n,
                )?;
                let q = model.quantum.as_mut().expect("quantum model");
                q.thetas[0] = ParamVector(uniform_angles(spec.num_params(), &mut rng_from_seed(derive_path(seed, &[tag::THETA]))));
                let (image, state) = model.forward(&buckets, 0)?;
                let loss = physics_loss(&pats, &buckets, &image, config.mu, config.gain_calibration)?;
                let (g, _) = model.decoder.backward(&state.cache, &loss.image_grad)?;
                let q = model.quantum.as_ref().expect("quantum model");
                let shifted = |k: usize| -> Result<f64> {
                    let mut plus = q.thetas[0].clone();
                    plus.0[k] += FRAC_PI_2;
                    let mut minus = q.thetas[0].clone();
                    minus.0[k] -= FRAC_PI_2;
                    let hp = q.ansatze[0].features(&state.patches[0], &plus, &q.observable, Some(0))?;
                    let hm = q.ansatze[0].features(&state.patches[0], &minus, &q.observable, Some(0))?;
                    Ok((0..hp.len()).map(|i| g[i] * q.weights[0][i] * 0.5 * (hp[i] - hm[i])).sum())
                };
                Ok((shifted(spec.local_index(0, 0, 0))?, ent_index.map(shifted).transpose()?))
            });
            let samples: Vec<(f64, Option<f64>)> = samples.into_iter().collect::<Result<_>>()?;
            let local: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let ent: Option<Vec<f64>> = samples.iter().map(|s| s.1).collect();
            cells.push(BpCell {
                qubits: n,
                layers,
                local_variance: sample_variance(&local),
                entangling_variance: ent.map(|e| sample_variance(&e)),
                local_samples: local,
            });
        }
    }
    Ok(BpTable { config: config.clone(), cells })
}

/// Short human-readable label of a model kind.
pub fn method_label(config: &ModelConfig) -> String {
    match &config.circuit {
        None => String::from("cnn"),
        Some(_) => String::from("qcsgi"),
    }
}

#[cfg(test)]
mod tests;
