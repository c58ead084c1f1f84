use super::*;
use crate::imaging::{forward_buckets, phantoms};
use crate::math::TAU;
use crate::qcircuit::NoiseSpec;
use crate::qstate::ChannelKind;
use std::vec::Vec;

fn instance(side: usize, m: usize, seed: u64) -> (Image, PatternSet, BucketSignals) {
    let truth = phantoms::glyph(side);
    let p = PatternSet::generate(m, side, side, seed).unwrap();
    let b = forward_buckets(&p, &truth).unwrap();
    (truth, p, b)
}

#[test]
fn normalization_examples() {
    let z = normalize_input(&[0.0, 5.0, 10.0], Encoding::AngleReupload).unwrap();
    assert!((z[0]).abs() < 1e-15 && (z[1] - TAU / 2.0).abs() < 1e-15 && (z[2] - TAU).abs() < 1e-15);
    assert_eq!(normalize_input(&[3.0; 4], Encoding::Iqp).unwrap(), vec![0.0; 4]);
    let z = normalize_input(&[2.0, -1.0, 7.0], Encoding::Heisenberg).unwrap();
    assert_eq!((z[1], z[2]), (0.0, 1.0));
    assert!(normalize_input(&[], Encoding::Iqp).is_err());
}

#[test]
fn patch_splitting() {
    let plan = PatchPlan::new(64, 16, Sharing::IndependentParams).unwrap();
    assert_eq!((plan.num_patches, plan.padding), (4, 0));
    let plan = PatchPlan::new(10, 16, Sharing::IndependentParams).unwrap();
    assert_eq!((plan.num_patches, plan.padding), (1, 6));
    let z: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let parts = split_patches(&z, &plan).unwrap();
    assert_eq!(parts[0].values()[..10], z[..]);
    assert!(parts[0].values()[10..].iter().all(|&v| v == 0.0));
    let plan = PatchPlan::new(20, 8, Sharing::SharedParams).unwrap();
    let z: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let parts = split_patches(&z, &plan).unwrap();
    for (j, p) in parts.iter().enumerate() {
        assert_eq!(p.values()[0], (j * 8) as f64);
    }
    let joined: Vec<f64> = parts.iter().flat_map(|p| p.values().to_vec()).take(20).collect();
    assert_eq!(joined, z);
    assert!(split_patches(&z[..19], &plan).is_err());
}

fn small_model(n: usize, layers: usize, m: usize, side: usize, seed: u64) -> HybridModel {
    HybridModel::new(ModelConfig::quantum(CircuitSpec::new(Encoding::AngleReupload, n, layers), side, seed), m).unwrap()
}

#[test]
fn forward_is_deterministic_and_bounded() {
    let (_, _, b) = instance(16, 24, 1);
    let model = small_model(8, 2, 24, 16, 3);
    let (y1, s1) = model.forward(&b.values, 0).unwrap();
    let (y2, _) = model.forward(&b.values, 99).unwrap();
    assert_eq!(y1, y2);
    assert_eq!(y1.len(), 256);
    assert!(y1.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(s1.features.len(), 24);
    assert!(model.forward(&b.values[1..], 0).is_err());
}

#[test]
fn identity_circuits_make_output_bucket_independent() {
    let mut model = small_model(4, 1, 8, 16, 5);
    for th in &mut model.quantum.as_mut().unwrap().thetas {
        th.0.iter_mut().for_each(|x| *x = 0.0);
    }
    let (y1, s) = model.forward(&[1.0, 4.0, 2.0, 8.0, 0.5, 3.0, 3.0, 1.0], 0).unwrap();
    assert!(s.raw_features.iter().flatten().all(|&h| (h - 1.0).abs() < 1e-12));
    let (y2, _) = model.forward(&[9.0, 0.0, 1.0, 2.0, 5.0, 5.0, 7.0, 6.0], 0).unwrap();
    for (a, b) in y1.iter().zip(&y2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn shared_single_patch_matches_direct_circuit() {
    let spec = CircuitSpec::new(Encoding::Iqp, 6, 2).with_entangler(Entangler::RzzParameterized);
    let model = HybridModel::new(ModelConfig { sharing: Sharing::SharedParams, ..ModelConfig::quantum(spec.clone(), 16, 8) }, 6).unwrap();
    let buckets = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
    let (_, state) = model.forward(&buckets, 0).unwrap();
    let q = model.quantum.as_ref().unwrap();
    let z = InputVector(normalize_input(&buckets, Encoding::Iqp).unwrap());
    let direct = q.ansatze[0].features(&z, &q.thetas[0], &Observable::default_for(&spec), None).unwrap();
    assert_eq!(state.raw_features[0], direct);
}

#[test]
fn loss_examples() {
    let (truth, p, b) = instance(16, 40, 2);
    let zero = vec![0.0; 256];
    let l = physics_loss(&p, &b.values, &zero, 1e-6, false).unwrap();
    assert!((l.value - b.values.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-9);
    let l = physics_loss(&p, &b.values, truth.values(), 1e-6, true).unwrap();
    assert!(l.data < 1e-20);
    assert!((l.value - 1e-6 * tv_norm(truth.values(), 16, 16)).abs() < 1e-15);
    let i = [1.0, 2.0, 3.0];
    let e: Vec<f64> = i.iter().map(|v| 2.0 * v).collect();
    assert!((optimal_gain(&i, &e) - 0.5).abs() < 1e-15);
}

#[test]
fn gradients_vanish_at_a_perfect_fit() {
    let (_, p, _) = instance(16, 16, 3);
    let model = small_model(4, 2, 16, 16, 4);
    let input: Vec<f64> = (0..16).map(|i| 1.0 + i as f64).collect();
    let (img, state) = model.forward(&input, 0).unwrap();
    // data generated by the model's own output
    let fitted = p.apply(&img).unwrap();
    let loss = physics_loss(&p, &fitted, &img, 0.0, false).unwrap();
    assert!(loss.data < 1e-24);
    let g = model.backward(&state, &loss.image_grad, GradientBackend::Adjoint).unwrap();
    assert!(g.norm_sq(true) < 1e-20);
}

/// Full loss as a function of the model parameters, gain recomputed at every point.
fn full_loss(model: &HybridModel, p: &PatternSet, b: &[f64], cfg: &TrainConfig) -> (f64, Vec<bool>) {
    let (img, state) = model.forward(b, 0).unwrap();
    (physics_loss(p, b, &img, cfg.mu, cfg.gain_calibration).unwrap().value, state.cache.activation_pattern())
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let (_, p, b) = instance(16, 8, 6);
    let model = small_model(2, 2, 8, 16, 7);
    let cfg = TrainConfig { mu: 1e-3, ..TrainConfig::default() };
    let (_, grads, _) = loss_gradients(&model, &p, &b.values, &cfg, 0).unwrap();
    let (_, base_pattern) = full_loss(&model, &p, &b.values, &cfg);
    let h = 1e-5;
    // relative error of the whole gradient vector; single near-zero entries sit
    // at the rounding floor of the difference quotient
    let rel = |fd: &[f64], an: &[f64]| {
        let num: f64 = fd.iter().zip(an).map(|(a, b)| (a - b) * (a - b)).sum();
        (num / an.iter().map(|b| b * b).sum::<f64>()).sqrt()
    };
    let q = model.quantum.as_ref().unwrap();
    let (mut fd, mut an) = (Vec::new(), Vec::new());
    for g in 0..q.thetas.len() {
        for k in 0..q.thetas[g].len() {
            let mut mp = model.clone();
            mp.quantum.as_mut().unwrap().thetas[g].0[k] += h;
            let mut mm = model.clone();
            mm.quantum.as_mut().unwrap().thetas[g].0[k] -= h;
            let (lp, pp) = full_loss(&mp, &p, &b.values, &cfg);
            let (lm, pm) = full_loss(&mm, &p, &b.values, &cfg);
            if pp != base_pattern || pm != base_pattern {
                continue;
            }
            fd.push((lp - lm) / (2.0 * h));
            an.push(grads.thetas[g][k]);
        }
    }
    assert!(fd.len() > 40);
    assert!(rel(&fd, &an) < 1e-4, "θ: {}", rel(&fd, &an));
    let (mut fd, mut an) = (Vec::new(), Vec::new());
    for ti in 0..model.decoder.params().tensors.len() {
        let len = model.decoder.params().tensors[ti].len();
        for k in [0, len / 2, len - 1] {
            let mut mp = model.clone();
            mp.decoder.params_mut().tensors[ti].data_mut()[k] += h;
            let mut mm = model.clone();
            mm.decoder.params_mut().tensors[ti].data_mut()[k] -= h;
            let (lp, pp) = full_loss(&mp, &p, &b.values, &cfg);
            let (lm, pm) = full_loss(&mm, &p, &b.values, &cfg);
            if pp != base_pattern || pm != base_pattern {
                continue;
            }
            fd.push((lp - lm) / (2.0 * h));
            an.push(grads.classical.tensors[ti].data()[k]);
        }
    }
    assert!(fd.len() > 50);
    assert!(rel(&fd, &an) < 1e-4, "ν: {}", rel(&fd, &an));
}

#[test]
fn tv_term_is_linear_in_mu() {
    let (_, p, b) = instance(16, 8, 9);
    let model = small_model(4, 1, 8, 16, 1);
    let grads = |mu: f64| loss_gradients(&model, &p, &b.values, &TrainConfig { mu, ..TrainConfig::default() }, 0).unwrap().1;
    let (g0, g1, g2) = (grads(0.0), grads(0.5), grads(1.0));
    for ((a, c), d) in g0.classical.tensors.iter().zip(&g1.classical.tensors).zip(&g2.classical.tensors) {
        for ((x0, x1), x2) in a.data().iter().zip(c.data()).zip(d.data()) {
            assert!(((x2 - x0) - 2.0 * (x1 - x0)).abs() < 1e-9 * (1.0 + x2.abs()));
        }
    }
}

#[test]
fn backends_agree_and_noise_needs_shift_rule() {
    let (_, p, b) = instance(16, 12, 10);
    let model = small_model(4, 2, 12, 16, 2);
    let cfg_a = TrainConfig::default();
    let cfg_p = TrainConfig { backend: GradientBackend::ParameterShift, ..cfg_a };
    let (_, ga, _) = loss_gradients(&model, &p, &b.values, &cfg_a, 0).unwrap();
    let (_, gp, _) = loss_gradients(&model, &p, &b.values, &cfg_p, 0).unwrap();
    for (x, y) in ga.thetas.iter().flatten().zip(gp.thetas.iter().flatten()) {
        assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
    }
    let noisy_spec = CircuitSpec::new(Encoding::AngleReupload, 4, 2)
        .with_noise(Some(NoiseSpec { kind: ChannelKind::Depolarizing, rate: 0.01 }));
    let noisy = HybridModel::new(ModelConfig::quantum(noisy_spec, 16, 2), 12).unwrap();
    assert!(matches!(loss_gradients(&noisy, &p, &b.values, &cfg_a, 0), Err(Error::Unsupported(_))));
    assert!(loss_gradients(&noisy, &p, &b.values, &cfg_p, 0).is_ok());
}

#[test]
fn train_stopping_rules() {
    let (truth, p, b) = instance(16, 16, 11);
    let mut model = small_model(8, 1, 16, 16, 3);
    let init = model.clone();
    let r = train(&mut model, &p, &b, &TrainConfig { max_iterations: 0, ..TrainConfig::default() }, Some(&truth)).unwrap();
    assert_eq!(r.stop_reason, StopReason::MaxIterations);
    assert_eq!(r.iterations(), 1);
    assert_eq!(model, init);
    assert_eq!(r.image.values(), &init.forward(&b.values, 0).unwrap().0[..]);
    assert!(r.metrics.is_some());
    let r = train(&mut model, &p, &b, &TrainConfig { mse_threshold: f64::INFINITY, ..TrainConfig::default() }, None).unwrap();
    assert_eq!((r.stop_reason, r.iterations()), (StopReason::MseThreshold, 1));
    let r = train(&mut model, &p, &b, &TrainConfig { grad_threshold: f64::INFINITY, ..TrainConfig::default() }, None).unwrap();
    assert_eq!(r.stop_reason, StopReason::GradThreshold);
    let r = train(&mut model, &p, &b, &TrainConfig { max_iterations: 3, ..TrainConfig::default() }, None).unwrap();
    assert_eq!((r.stop_reason, r.iterations()), (StopReason::MaxIterations, 4));
    assert!(train(&mut model, &p, &b, &TrainConfig { lr: 0.0, ..TrainConfig::default() }, None).is_err());
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["stop_reason"], "max_iterations");
}

#[test]
fn training_is_reproducible() {
    let (_, p, b) = instance(16, 16, 12);
    let cfg = TrainConfig { max_iterations: 5, ..TrainConfig::default() };
    let run = || {
        let mut m = small_model(8, 2, 16, 16, 9);
        train(&mut m, &p, &b, &cfg, None).unwrap().losses
    };
    let a = run();
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), run().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn training_smoke_reduces_loss() {
    let (_, p, b) = instance(16, 64, 13);
    let mut model = small_model(8, 3, 64, 16, 21);
    let r = train(&mut model, &p, &b, &TrainConfig { max_iterations: 300, ..TrainConfig::default() }, None).unwrap();
    assert!(r.best_loss < r.losses[0] / 10.0, "{} vs {}", r.best_loss, r.losses[0]);
}

#[test]
fn classical_baseline_shape() {
    let m = HybridModel::new(ModelConfig::classical(64, 0), 64).unwrap();
    assert_eq!(m.decoder.front_param_count(), 64 * 64 + 64);
    assert_eq!(m.quantum_param_count(), 0);
    let (_, p, b) = instance(16, 32, 1);
    let mut m = HybridModel::new(ModelConfig::classical(16, 0), 32).unwrap();
    let r = train(&mut m, &p, &b, &TrainConfig { max_iterations: 20, ..TrainConfig::default() }, None).unwrap();
    assert!(r.best_loss < r.losses[0]);
}

#[test]
fn variance_study_basics() {
    let (truth, p, _) = instance(16, 16, 14);
    let cfg = BpConfig { qubits: vec![2, 3], layers: vec![1, 2], trials: 6, ..BpConfig::default() };
    let t = bp_variance_experiment(&cfg, &truth, &p).unwrap();
    assert_eq!(t.cells.len(), 4);
    for c in &t.cells {
        assert!(c.local_variance.is_finite() && c.local_variance >= 0.0);
        assert!(c.entangling_variance.unwrap() >= 0.0);
    }
    assert_eq!(t, bp_variance_experiment(&cfg, &truth, &p).unwrap());
    let one = bp_variance_experiment(&BpConfig { trials: 1, ..cfg.clone() }, &truth, &p).unwrap();
    assert!(one.cells.iter().all(|c| c.local_variance == 0.0 && c.entangling_variance == Some(0.0)));
    let cz = bp_variance_experiment(&BpConfig { entangler: Entangler::CzFixed, ..cfg }, &truth, &p).unwrap();
    assert!(cz.cells.iter().all(|c| c.entangling_variance.is_none()));
}

#[test]
fn variance_study_matches_full_gradient() {
    // the shift-rule derivative used by the study equals the adjoint chain-rule gradient
    let (truth, p, _) = instance(16, 16, 15);
    let n = 3;
    let pats = p.truncated(n).unwrap();
    let buckets = forward_buckets(&pats, &truth).unwrap();
    let cfg = BpConfig { qubits: vec![n], layers: vec![2], trials: 1, ..BpConfig::default() };
    let t = bp_variance_experiment(&cfg, &truth, &p).unwrap();
    let spec = CircuitSpec::new(Encoding::AngleReupload, n, 2).with_entangler(Entangler::RzzParameterized);
    let seed = derive_path(cfg.seed, &[tag::BP_TRIAL, n as u64, 2, 0]);
    let mut model = HybridModel::new(ModelConfig { sharing: Sharing::SharedParams, ..ModelConfig::quantum(spec.clone(), 16, seed) }, n).unwrap();
    model.quantum.as_mut().unwrap().thetas[0] =
        ParamVector(uniform_angles(spec.num_params(), &mut rng_from_seed(derive_path(seed, &[tag::THETA]))));
    let (_, g, _) = loss_gradients(&model, &pats, &buckets.values, &TrainConfig::default(), 0).unwrap();
    let want = g.thetas[0][0];
    assert!((t.cells[0].local_samples[0] - want).abs() < 1e-9 * (1.0 + want.abs()));
}
