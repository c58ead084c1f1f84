//! Command implementations. Each writes into its own output directory and
//! finishes with the manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ghostqc_core::imaging::{
    add_detection_noise, correlation_gi, correlation_gi_raw, dsnr_from_sigma, forward_buckets, psnr, sigma_from_dsnr, ssim,
    tvcs_reconstruct, BucketSignals, Image, PatternSet,
};
use ghostqc_core::qcircuit::NoiseSpec;
use ghostqc_core::qcsgi::{bp_variance_experiment, evaluate, train, BpConfig, BpTable, HybridModel, Metrics, TrainReport};
use ghostqc_core::qstate::ChannelKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DetectionSection, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::formats;
use crate::manifest::{OutputDir, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Qcsgi,
    Cnn,
    Dgi,
    Tvcs,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Qcsgi => "qcsgi",
            Method::Cnn => "cnn",
            Method::Dgi => "dgi",
            Method::Tvcs => "tvcs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Measurements,
    Dsnr,
    #[value(name = "quantum_noise", alias = "quantum-noise")]
    QuantumNoise,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Measurements => "measurements",
            SweepAxis::Dsnr => "dsnr",
            SweepAxis::QuantumNoise => "quantum_noise",
        })
    }
}

/// Measurements and optional ground truth for one run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub truth: Option<Image>,
    pub patterns: PatternSet,
    pub clean: Option<BucketSignals>,
    pub buckets: BucketSignals,
}

fn read_text(path: &str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{path}: {e}")))
}

/// Loads recorded data or simulates it from the object.
pub fn load_inputs(cfg: &ExperimentConfig) -> CliResult<Inputs> {
    let truth = cfg.object.as_deref().map(formats::load_image).transpose()?;
    match &cfg.data {
        Some(files) => {
            if cfg.detection.is_some() {
                return Err(CliError::config("`detection` applies to simulated data only; remove it or drop `data`"));
            }
            let dims = truth.as_ref().map(|t| (t.height(), t.width()));
            let patterns = formats::parse_patterns_csv(&read_text(&files.patterns)?, dims).map_err(|e| e.context(&files.patterns))?;
            let values = formats::parse_buckets_csv(&read_text(&files.buckets)?).map_err(|e| e.context(&files.buckets))?;
            if values.len() != patterns.count() {
                return Err(CliError::input(format!("{} buckets for {} patterns", values.len(), patterns.count())));
            }
            let m = cfg.patterns.count;
            if m > patterns.count() {
                return Err(CliError::input(format!("patterns.count {m} exceeds the {} recorded measurements", patterns.count())));
            }
            Ok(Inputs {
                truth,
                patterns: patterns.truncated(m)?,
                clean: None,
                buckets: BucketSignals::noiseless(values[..m].to_vec()),
            })
        }
        None => {
            let truth = truth.ok_or_else(|| CliError::config("simulation needs `object`"))?;
            let patterns = PatternSet::generate(cfg.patterns.count, truth.height(), truth.width(), cfg.patterns.seed)?;
            let clean = forward_buckets(&patterns, &truth)?;
            let buckets = match cfg.detection {
                None => clean.clone(),
                Some(DetectionSection { dsnr, sigma, seed }) => {
                    let sigma = match (dsnr, sigma) {
                        (Some(d), _) => sigma_from_dsnr(clean.mean(), d)?,
                        (None, Some(s)) => s,
                        (None, None) => unreachable!("validated"),
                    };
                    add_detection_noise(&clean, sigma, seed)?
                }
            };
            Ok(Inputs { truth: Some(truth), patterns, clean: Some(clean), buckets })
        }
    }
}

fn seeds_of(cfg: &ExperimentConfig) -> BTreeMap<String, u64> {
    let mut s = BTreeMap::new();
    s.insert("patterns".into(), cfg.patterns.seed);
    if let Some(d) = &cfg.detection {
        s.insert("detection".into(), d.seed);
    }
    s.insert("model".into(), cfg.model.seed);
    s
}

fn config_json(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn timings(start: Instant) -> BTreeMap<String, f64> {
    BTreeMap::from([("total_secs".to_string(), start.elapsed().as_secs_f64())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub measurements: usize,
    pub height: usize,
    pub width: usize,
    pub mean_bucket: f64,
    pub sigma: Option<f64>,
    pub target_dsnr: Option<f64>,
    /// dSNR implied by the realized residuals.
    pub realized_dsnr: Option<f64>,
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> CliResult<(RunManifest, SimulationSummary)> {
    let start = Instant::now();
    if cfg.data.is_some() {
        return Err(CliError::config("simulate generates data; remove the `data` section"));
    }
    let inputs = load_inputs(cfg)?;
    let truth = inputs.truth.as_ref().expect("simulated inputs carry the truth");
    let clean = inputs.clean.as_ref().expect("simulated inputs carry clean buckets");
    let realized = cfg.detection.map(|_| {
        let resid: Vec<f64> = inputs.buckets.values.iter().zip(&clean.values).map(|(a, b)| a - b).collect();
        let sd = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
        dsnr_from_sigma(clean.mean(), sd).ok()
    });
    let summary = SimulationSummary {
        measurements: inputs.patterns.count(),
        height: truth.height(),
        width: truth.width(),
        mean_bucket: clean.mean(),
        sigma: cfg.detection.map(|_| inputs.buckets.noise_sigma),
        target_dsnr: cfg.detection.and_then(|d| d.dsnr),
        realized_dsnr: realized.flatten(),
    };
    let mut dir = OutputDir::create(out)?;
    dir.write("patterns.csv", formats::patterns_csv(&inputs.patterns))?;
    dir.write("buckets.csv", formats::buckets_csv(&inputs.buckets))?;
    dir.write("truth.pgm", formats::pgm_bytes(truth))?;
    dir.write("truth.csv", formats::image_csv(truth))?;
    dir.write_json("simulation.json", &summary)?;
    let manifest = dir.finish("simulate", config_json(cfg), seeds_of(cfg), timings(start))?;
    Ok((manifest, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    /// Circuit angles (plus observable weights when trainable).
    pub quantum: usize,
    /// The `M→M` substitute layer of the classical baseline.
    pub substitute_linear: usize,
    pub projection: usize,
    pub trunk: usize,
    pub total: usize,
}

impl ParamCounts {
    fn of(model: &HybridModel) -> Self {
        let d = &model.decoder;
        let quantum = model.quantum_param_count();
        ParamCounts {
            quantum,
            substitute_linear: d.front_param_count(),
            projection: d.projection_param_count(),
            trunk: d.trunk_param_count(),
            total: quantum + model.classical_param_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub method: Method,
    pub measurements: usize,
    pub height: usize,
    pub width: usize,
    pub metrics: Option<Metrics>,
    pub parameters: Option<ParamCounts>,
    pub training: Option<TrainReport>,
}

/// Notes config sections the chosen method does not read.
fn warn_ignored(cfg: &ExperimentConfig, method: Method) {
    let mut ignored = Vec::new();
    if cfg.train.is_some() && matches!(method, Method::Dgi | Method::Tvcs) {
        ignored.push("train");
    }
    if cfg.tvcs.is_some() && method != Method::Tvcs {
        ignored.push("tvcs");
    }
    if cfg.quantum_noise.is_some() && method != Method::Qcsgi {
        ignored.push("quantum_noise");
    }
    for section in ignored {
        eprintln!("warning: method {method} ignores the `{section}` section");
    }
}

/// Runs one reconstruction without touching the filesystem.
pub fn run_method(cfg: &ExperimentConfig, method: Method, inputs: &Inputs) -> CliResult<(Image, ReconstructionReport, Option<HybridModel>)> {
    let (h, w) = (inputs.patterns.height(), inputs.patterns.width());
    let (image, params, training, model) = match method {
        Method::Dgi | Method::Tvcs => {
            let img = if method == Method::Dgi {
                correlation_gi(&inputs.patterns, &inputs.buckets)?
            } else {
                tvcs_reconstruct(&inputs.patterns, &inputs.buckets, &cfg.tvcs.unwrap_or_default())?
            };
            (img, None, None, None)
        }
        Method::Qcsgi | Method::Cnn => {
            if h != w {
                return Err(CliError::config(format!("the decoder produces square images; data is {h}×{w}")));
            }
            let mc = if method == Method::Qcsgi {
                cfg.check_backend()?;
                cfg.model_config(h)
            } else {
                cfg.baseline_config(h)
            };
            let mut model = HybridModel::new(mc, inputs.patterns.count())?;
            let counts = ParamCounts::of(&model);
            let report = train(&mut model, &inputs.patterns, &inputs.buckets, &cfg.train_config(), inputs.truth.as_ref())?;
            (report.image.clone(), Some(counts), Some(report), Some(model))
        }
    };
    let metrics = inputs.truth.as_ref().map(|t| evaluate(&image, t)).transpose()?;
    let report = ReconstructionReport {
        method,
        measurements: inputs.patterns.count(),
        height: h,
        width: w,
        metrics,
        parameters: params,
        training,
    };
    Ok((image, report, model))
}

fn write_reconstruction(dir: &mut OutputDir, image: &Image, report: &ReconstructionReport, model: Option<&HybridModel>) -> CliResult<()> {
    dir.write("reconstruction.pgm", formats::pgm_bytes(image))?;
    dir.write("reconstruction.csv", formats::image_csv(image))?;
    dir.write_json("report.json", report)?;
    if let Some(m) = &report.metrics {
        dir.write_json("metrics.json", m)?;
    }
    if let Some(model) = model {
        dir.write("checkpoint.bin", formats::checkpoint_bytes(model))?;
    }
    Ok(())
}

/// Single-pixel-fixture helper: the raw correlation estimate before rescaling.
pub fn raw_correlation(inputs: &Inputs) -> CliResult<Vec<f64>> {
    Ok(correlation_gi_raw(&inputs.patterns, &inputs.buckets)?)
}

pub fn reconstruct(cfg: &ExperimentConfig, method: Method, out: &Path) -> CliResult<(RunManifest, ReconstructionReport)> {
    let start = Instant::now();
    warn_ignored(cfg, method);
    let inputs = load_inputs(cfg)?;
    let (image, report, model) = run_method(cfg, method, &inputs)?;
    let mut dir = OutputDir::create(out)?;
    if method == Method::Dgi {
        let raw = raw_correlation(&inputs)?;
        dir.write("correlation_raw.csv", raw.iter().map(|v| formats::fmt_f64(*v) + "\n").collect::<String>())?;
    }
    write_reconstruction(&mut dir, &image, &report, model.as_ref())?;
    let manifest = dir.finish(&format!("reconstruct --method {method}"), config_json(cfg), seeds_of(cfg), timings(start))?;
    Ok((manifest, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub method: Method,
    pub measurements: usize,
    pub sigma: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub best_loss: Option<f64>,
    pub iterations: Option<usize>,
    pub directory: String,
}

fn cell_config(base: &ExperimentConfig, axis: SweepAxis, value: f64, seed: u64) -> CliResult<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.model.seed = seed;
    match axis {
        SweepAxis::Measurements => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(CliError::config(format!("measurement count {value} is not a positive integer")));
            }
            cfg.patterns.count = value as usize;
        }
        SweepAxis::Dsnr => {
            if cfg.data.is_some() {
                return Err(CliError::config("a dsnr sweep needs simulated data; drop the `data` section"));
            }
            let seed = base.detection.map_or(base.patterns.seed.wrapping_add(1), |d| d.seed);
            cfg.detection = Some(DetectionSection { dsnr: Some(value), sigma: None, seed });
        }
        SweepAxis::QuantumNoise => {
            let kind = base.quantum_noise.map_or(ChannelKind::Depolarizing, |n| n.kind);
            cfg.quantum_noise = Some(NoiseSpec { kind, rate: value });
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |x: Option<f64>| x.map(formats::fmt_f64).unwrap_or_default();
    let mut s = String::from("axis,value,seed,method,measurements,sigma,psnr,ssim,best_loss,iterations,directory\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.axis,
            formats::fmt_f64(r.value),
            r.seed,
            r.method,
            r.measurements,
            opt(r.sigma),
            opt(r.psnr),
            opt(r.ssim),
            opt(r.best_loss),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            r.directory
        ));
    }
    s
}

pub fn sweep(
    cfg: &ExperimentConfig,
    method: Method,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    out: &Path,
) -> CliResult<(RunManifest, Vec<SweepRow>)> {
    let start = Instant::now();
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    warn_ignored(cfg, method);
    let seeds = if seeds.is_empty() { vec![cfg.model.seed] } else { seeds.to_vec() };
    let mut cells = Vec::new();
    for &v in values {
        for &s in &seeds {
            let dir = format!("{axis}={v}/seed={s}");
            cells.push((v, s, cell_config(cfg, axis, v, s)?, dir));
        }
    }
    if method == Method::Qcsgi {
        for (_, _, c, _) in &cells {
            c.check_backend()?;
        }
    }
    let mut dir = OutputDir::create(out)?;
    let root = dir.root().to_path_buf();
    let results: Vec<CliResult<(SweepRow, OutputDir)>> = cells
        .par_iter()
        .map(|(v, s, c, rel)| {
            let inputs = load_inputs(c)?;
            let (image, report, model) = run_method(c, method, &inputs)?;
            let mut cell = OutputDir::create(root.join(rel))?;
            write_reconstruction(&mut cell, &image, &report, model.as_ref())?;
            let row = SweepRow {
                axis,
                value: *v,
                seed: *s,
                method,
                measurements: inputs.patterns.count(),
                sigma: c.detection.map(|_| inputs.buckets.noise_sigma),
                psnr: report.metrics.map(|m| m.psnr),
                ssim: report.metrics.map(|m| m.ssim),
                best_loss: report.training.as_ref().map(|t| t.best_loss),
                iterations: report.training.as_ref().map(TrainReport::iterations),
                directory: rel.clone(),
            };
            Ok((row, cell))
        })
        .collect();
    let mut rows = Vec::new();
    for (r, (_, _, c, _)) in results.into_iter().zip(&cells) {
        let (row, cell) = r?;
        dir.adopt(&cell)?;
        cell.finish(&format!("sweep cell {axis}={}", row.value), config_json(c), seeds_of(c), BTreeMap::new())?;
        rows.push(row);
    }
    dir.write("sweep.csv", sweep_csv(&rows))?;
    dir.write_json("sweep.json", &rows)?;
    let mut seeds_map = seeds_of(cfg);
    seeds_map.remove("model");
    for (i, s) in seeds.iter().enumerate() {
        seeds_map.insert(format!("model[{i}]"), *s);
    }
    let manifest = dir.finish(&format!("sweep --axis {axis} --method {method}"), config_json(cfg), seeds_map, timings(start))?;
    Ok((manifest, rows))
}

#[derive(Debug, Clone, Default)]
pub struct BpOverrides {
    pub qubits: Option<Vec<usize>>,
    pub layers: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
}

/// Variance grid as CSV: one row per layer count, one column per qubit count.
pub fn variance_csv(table: &BpTable, pick: impl Fn(&ghostqc_core::qcsgi::BpCell) -> Option<f64>) -> Option<String> {
    let c = &table.config;
    let mut s = String::from("layers\\qubits");
    for n in &c.qubits {
        s.push_str(&format!(",{n}"));
    }
    s.push('\n');
    for &l in &c.layers {
        s.push_str(&l.to_string());
        for &n in &c.qubits {
            let v = pick(table.cell(n, l)?)?;
            s.push(',');
            s.push_str(&formats::fmt_f64(v));
        }
        s.push('\n');
    }
    Some(s)
}

pub fn bp_variance(cfg: Option<&ExperimentConfig>, ov: &BpOverrides, out: &Path) -> CliResult<(RunManifest, BpTable)> {
    let start = Instant::now();
    let section = cfg.and_then(|c| c.bp.clone());
    let mut bp = BpConfig::default();
    if let Some(s) = &section {
        bp.qubits = s.qubits.clone();
        bp.layers = s.layers.clone();
        bp.trials = s.trials;
        bp.entangler = s.entangler;
        bp.side = s.side;
        bp.seed = s.seed;
    }
    if let Some(c) = cfg {
        bp.encoding = c.model.encoding;
        let t = c.train_config();
        bp.mu = t.mu;
        bp.gain_calibration = t.gain_calibration;
    }
    if let Some(q) = &ov.qubits {
        bp.qubits = q.clone();
    }
    if let Some(l) = &ov.layers {
        bp.layers = l.clone();
    }
    if let Some(t) = ov.trials {
        bp.trials = t;
    }
    if let Some(s) = ov.seed {
        bp.seed = s;
    }
    if bp.trials == 0 || bp.qubits.is_empty() || bp.layers.is_empty() || bp.qubits.contains(&0) || bp.layers.contains(&0) {
        return Err(CliError::config("bp-variance needs non-empty positive qubit and layer lists and trials ≥ 1"));
    }
    let object = match cfg.and_then(|c| c.object.as_deref()) {
        Some(spec) => formats::load_image(spec)?,
        None => formats::load_image(&format!("builtin:glyph:{}", bp.side))?,
    };
    if object.height() != object.width() {
        return Err(CliError::input("the variance study needs a square object"));
    }
    bp.side = object.height();
    let pattern_seed = cfg.map_or(bp.seed.wrapping_add(1), |c| c.patterns.seed);
    let max_n = *bp.qubits.iter().max().expect("non-empty");
    let patterns = PatternSet::generate(max_n, bp.side, bp.side, pattern_seed)?;
    let table = bp_variance_experiment(&bp, &object, &patterns)?;
    let mut dir = OutputDir::create(out)?;
    dir.write("local_variance.csv", variance_csv(&table, |c| Some(c.local_variance)).expect("complete grid"))?;
    if let Some(csv) = variance_csv(&table, |c| c.entangling_variance) {
        dir.write("entangling_variance.csv", csv)?;
    }
    dir.write_json("bp_table.json", &table)?;
    let seeds = BTreeMap::from([("bp".to_string(), bp.seed), ("patterns".to_string(), pattern_seed)]);
    let echo = serde_json::json!({ "experiment": cfg.map(config_json), "bp": bp });
    let manifest = dir.finish("bp-variance", echo, seeds, timings(start))?;
    Ok((manifest, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn metrics(a: &str, b: &str, out: Option<&Path>) -> CliResult<MetricPair> {
    let start = Instant::now();
    let (ia, ib) = (formats::load_image(a)?, formats::load_image(b)?);
    if (ia.height(), ia.width()) != (ib.height(), ib.width()) {
        return Err(CliError::input(format!(
            "image shapes differ: {}×{} vs {}×{}",
            ia.height(),
            ia.width(),
            ib.height(),
            ib.width()
        )));
    }
    let pair = MetricPair { psnr: psnr(&ia, &ib)?, ssim: ssim(&ia, &ib)? };
    if let Some(out) = out {
        let mut dir = OutputDir::create(out)?;
        dir.write_json("metrics.json", &pair)?;
        dir.finish("metrics", serde_json::json!({ "a": a, "b": b }), BTreeMap::new(), timings(start))?;
    }
    Ok(pair)
}
