//! Experiment configuration files.

use std::fs;
use std::path::Path;

use ghostqc_core::imaging::TvCsConfig;
use ghostqc_core::qcircuit::{CircuitSpec, Encoding, Entangler, NoiseSpec, Topology};
use ghostqc_core::qcsgi::{ModelConfig, Sharing, TrainConfig};
use ghostqc_core::qgrad::GradientBackend;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Ground truth: `builtin:<name>[:<side>]`, a `.pgm` or a float `.csv`.
    #[serde(default)]
    pub object: Option<String>,
    /// Pre-recorded measurements; when absent they are simulated from `object`.
    #[serde(default)]
    pub data: Option<DataFiles>,
    pub patterns: PatternsSection,
    #[serde(default)]
    pub detection: Option<DetectionSection>,
    pub model: ModelSection,
    #[serde(default)]
    pub quantum_noise: Option<NoiseSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub tvcs: Option<TvCsConfig>,
    #[serde(default)]
    pub bp: Option<BpSection>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    pub patterns: String,
    pub buckets: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternsSection {
    /// Number of measurements `M`.
    pub count: usize,
    pub seed: u64,
}

/// Additive Gaussian detector noise, given as a target dSNR (dB) or directly as σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default)]
    pub dsnr: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    pub seed: u64,
}

fn default_init_scale() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub encoding: Encoding,
    pub qubits_per_patch: usize,
    pub layers: usize,
    #[serde(default = "default_entangler")]
    pub entangler: Entangler,
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default)]
    pub sharing: Sharing,
    #[serde(default)]
    pub trainable_weights: bool,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub trotter_steps: Option<usize>,
    #[serde(default)]
    pub evolution_time: Option<f64>,
    #[serde(default = "default_true")]
    pub decoder_norm: bool,
    pub seed: u64,
}

fn default_entangler() -> Entangler {
    Entangler::CzFixed
}

fn default_topology() -> Topology {
    Topology::Linear
}

fn default_bp_qubits() -> Vec<usize> {
    vec![4, 8, 12]
}

fn default_bp_layers() -> Vec<usize> {
    vec![5, 20, 50]
}

fn default_trials() -> usize {
    100
}

fn default_bp_side() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpSection {
    #[serde(default = "default_bp_qubits")]
    pub qubits: Vec<usize>,
    #[serde(default = "default_bp_layers")]
    pub layers: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_rzz")]
    pub entangler: Entangler,
    #[serde(default = "default_bp_side")]
    pub side: usize,
    pub seed: u64,
}

fn default_rzz() -> Entangler {
    Entangler::RzzParameterized
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.object.is_none() && self.data.is_none() {
            return Err(CliError::config("either `object` or `data` is required"));
        }
        if self.patterns.count == 0 {
            return Err(CliError::config("patterns.count must be positive"));
        }
        if let Some(d) = &self.detection {
            match (d.dsnr, d.sigma) {
                (Some(x), None) if x.is_finite() => {}
                (None, Some(s)) if s.is_finite() && s >= 0.0 => {}
                _ => return Err(CliError::config("detection needs exactly one of a finite `dsnr` or a non-negative `sigma`")),
            }
        }
        if let Some(n) = &self.quantum_noise {
            if !(0.0..=1.0).contains(&n.rate) {
                return Err(CliError::config(format!("quantum_noise.rate {} outside [0, 1]", n.rate)));
            }
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        self.circuit().validate()?;
        Ok(())
    }

    pub fn circuit(&self) -> CircuitSpec {
        let m = &self.model;
        let mut spec = CircuitSpec::new(m.encoding, m.qubits_per_patch, m.layers)
            .with_entangler(m.entangler)
            .with_topology(m.topology)
            .with_noise(self.quantum_noise);
        if let Some(t) = m.trotter_steps {
            spec.trotter_steps = t;
        }
        spec.evolution_time = m.evolution_time;
        spec
    }

    pub fn model_config(&self, side: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            sharing: m.sharing,
            trainable_weights: m.trainable_weights,
            init_scale: m.init_scale,
            decoder_norm: m.decoder_norm,
            ..ModelConfig::quantum(self.circuit(), side, m.seed)
        }
    }

    /// The classical baseline sharing the decoder settings and seed.
    pub fn baseline_config(&self, side: usize) -> ModelConfig {
        ModelConfig { decoder_norm: self.model.decoder_norm, ..ModelConfig::classical(side, self.model.seed) }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.unwrap_or_default()
    }

    /// Noisy circuits have no adjoint gradients; say so before any work is done.
    pub fn check_backend(&self) -> CliResult<()> {
        if self.quantum_noise.is_some_and(|n| n.rate > 0.0) && self.train_config().backend == GradientBackend::Adjoint {
            return Err(CliError::config(
                "quantum_noise requires train.backend = \"parameter_shift\"; adjoint gradients need a noiseless circuit",
            ));
        }
        Ok(())
    }
}
