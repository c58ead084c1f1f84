use super::*;
use crate::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;
use std::vec::Vec;

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = rng_from_seed(seed);
    Image::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn image_validation() {
    assert!(Image::new(2, 2, vec![0.0, 0.5, 1.0, 1.5]).is_err());
    assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
    assert!(Image::new(0, 2, vec![]).is_err());
    assert_eq!(Image::clamped(1, 2, vec![-1.0, 2.0]).unwrap().values(), &[0.0, 1.0]);
}

#[test]
fn patterns_are_deterministic_binary_and_fair() {
    let a = PatternSet::generate(5, 4, 4, 7).unwrap();
    assert_eq!(a, PatternSet::generate(5, 4, 4, 7).unwrap());
    assert_ne!(a, PatternSet::generate(5, 4, 4, 8).unwrap());
    let one = PatternSet::generate(1, 2, 2, 0).unwrap();
    assert_eq!(one.row(0).len(), 4);
    assert!(one.row(0).iter().all(|&v| v <= 1));
    assert!(PatternSet::generate(0, 2, 2, 0).is_err());
    assert!(PatternSet::generate(1, 0, 2, 0).is_err());
    let big = PatternSet::generate(1000, 25, 40, 1).unwrap();
    let n = 1_000_000.0;
    let ones: f64 = (0..1000).map(|j| big.row(j).iter().map(|&v| v as f64).sum::<f64>()).sum();
    let mean = ones / n;
    let se = (0.25 / n).sqrt();
    assert!((mean - 0.5).abs() < 3.0 * se, "{mean}");
}

#[test]
fn bucket_forward_model() {
    let p = PatternSet::from_rows(1, 1, &[vec![1]]).unwrap();
    let t = Image::new(1, 1, vec![0.37]).unwrap();
    assert_eq!(forward_buckets(&p, &t).unwrap().values, vec![0.37]);
    let p = PatternSet::generate(9, 4, 4, 3).unwrap();
    let img = random_image(4, 4, 4);
    let b = forward_buckets(&p, &img).unwrap();
    for j in 0..9 {
        let mut acc = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                acc += p.row(j)[r * 4 + c] as f64 * img.get(r, c);
            }
        }
        assert!((b.values[j] - acc).abs() < 1e-12);
    }
    let half = Image::new(4, 4, img.values().iter().map(|v| v / 2.0).collect()).unwrap();
    let bh = forward_buckets(&p, &half).unwrap();
    for (x, y) in b.values.iter().zip(&bh.values) {
        assert!((x - 2.0 * y).abs() < 1e-12);
    }
    assert!(forward_buckets(&p, &random_image(3, 4, 0)).is_err());
    // adjoint: ⟨Hx, r⟩ = ⟨x, Hᵀr⟩
    let r: Vec<f64> = (0..9).map(|j| j as f64 - 3.5).collect();
    let lhs = crate::math::dot(&b.values, &r);
    let rhs = crate::math::dot(img.values(), &p.adjoint(&r).unwrap());
    assert!((lhs - rhs).abs() < 1e-10);
}

#[test]
fn dsnr_conversions() {
    assert!((sigma_from_dsnr(1.0, 20.0).unwrap() - 0.01).abs() < 1e-15);
    assert!((sigma_from_dsnr(3.5, 0.0).unwrap() - 3.5).abs() < 1e-15);
    let s: Vec<f64> = [12.0, 16.0, 20.0].iter().map(|&d| sigma_from_dsnr(10.0, d).unwrap()).collect();
    assert!(s[0] > s[1] && s[1] > s[2]);
    assert!(sigma_from_dsnr(0.0, 10.0).is_err());
    for d in [-3.0, 0.0, 7.5, 12.0, 20.0, 40.0] {
        let sigma = sigma_from_dsnr(42.0, d).unwrap();
        assert!((dsnr_from_sigma(42.0, sigma).unwrap() - d).abs() < 1e-12);
    }
}

#[test]
fn detection_noise() {
    let b = BucketSignals::noiseless(vec![5.0; 100_000]);
    assert_eq!(add_detection_noise(&b, 0.0, 1).unwrap().values, b.values);
    let n1 = add_detection_noise(&b, 0.3, 2).unwrap();
    assert_eq!(n1, add_detection_noise(&b, 0.3, 2).unwrap());
    let resid: Vec<f64> = n1.values.iter().map(|v| v - 5.0).collect();
    let var = crate::math::sample_variance(&resid);
    assert!((var / 0.09 - 1.0).abs() < 0.05);
    assert!(add_detection_noise(&b, -1.0, 0).is_err());
    assert!((n1.dsnr.unwrap() - 10.0 * (5.0f64 / 0.3).log10()).abs() < 1e-12);
}

#[test]
fn correlation_examples() {
    let p = PatternSet::from_rows(2, 2, &[vec![1, 0, 1, 0], vec![1, 0, 1, 0], vec![1, 0, 1, 0]]).unwrap();
    let b = BucketSignals::noiseless(vec![1.0, 2.0, 3.0]);
    assert!(correlation_gi_raw(&p, &b).unwrap().iter().all(|&v| v == 0.0));
    assert!(correlation_gi(&p, &b).unwrap().values().iter().all(|&v| v == 0.0));
    // one pixel, H = (1, 0): I = (t, 0), ⟨I⟩ = t/2, ⟨H⟩ = 1/2 ⇒ O = ½[(t/2)(1/2) + (−t/2)(−1/2)] = t/4
    let t = 0.8;
    let p = PatternSet::from_rows(1, 1, &[vec![1], vec![0]]).unwrap();
    let b = forward_buckets(&p, &Image::new(1, 1, vec![t]).unwrap()).unwrap();
    assert!((correlation_gi_raw(&p, &b).unwrap()[0] - t / 4.0).abs() < 1e-15);
    assert!(correlation_gi_raw(&p.truncated(1).unwrap(), &BucketSignals::noiseless(vec![1.0])).is_err());
}

fn sylvester(n: usize) -> Vec<Vec<i8>> {
    let mut h = vec![vec![1i8]];
    while h.len() < n {
        let k = h.len();
        let mut next = vec![vec![0i8; 2 * k]; 2 * k];
        for i in 0..k {
            for j in 0..k {
                next[i][j] = h[i][j];
                next[i][j + k] = h[i][j];
                next[i + k][j] = h[i][j];
                next[i + k][j + k] = -h[i][j];
            }
        }
        h = next;
    }
    h
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (crate::math::mean(a), crate::math::mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn hadamard_complete_correlation_recovers_object() {
    // complementary pairs (1 ± H_k)/2 so every pixel has variance over the ensemble
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for r in sylvester(16) {
        rows.push(r.iter().map(|&v| (v > 0) as u8).collect());
        rows.push(r.iter().map(|&v| (v < 0) as u8).collect());
    }
    let p = PatternSet::from_rows(4, 4, &rows).unwrap();
    let truth = random_image(4, 4, 21);
    let b = forward_buckets(&p, &truth).unwrap();
    let rec = correlation_gi(&p, &b).unwrap();
    assert!(pearson(rec.values(), truth.values()) > 0.99);
    // oracle: I − ⟨I⟩ = ±(H_k·T)/2 and H − ⟨H⟩ = ±H_k/2, so O = (1/32)·2·Σ_k (H_k·T) H_k / 4 = T/4
    let raw = correlation_gi_raw(&p, &b).unwrap();
    for (o, t) in raw.iter().zip(truth.values()) {
        assert!((o - t / 4.0).abs() < 1e-12);
    }
}

#[test]
fn tv_examples() {
    assert_eq!(tv_norm(&[0.3; 9], 3, 3), 0.0);
    assert_eq!(tv_norm(&[0.0, 1.0, 0.0, 1.0], 2, 2), 2.0);
    let img = random_image(5, 6, 2);
    let g = tv_gradient(img.values(), 5, 6);
    let h = 1e-7;
    for k in 0..30 {
        let mut p = img.values().to_vec();
        let mut m = p.clone();
        p[k] += h;
        m[k] -= h;
        let fd = (tv_norm(&p, 5, 6) - tv_norm(&m, 5, 6)) / (2.0 * h);
        assert!((fd - g[k]).abs() < 1e-6);
    }
    assert!(tv_gradient(&[0.5; 4], 2, 2).iter().all(|&v| v == 0.0));
}

#[test]
fn tvcs_exact_case() {
    let truth = random_image(4, 4, 5);
    let p = PatternSet::generate(16, 4, 4, 12).unwrap();
    let b = forward_buckets(&p, &truth).unwrap();
    let rec = tvcs_reconstruct(&p, &b, &TvCsConfig { mu: 0.0, iterations: 20_000, lr: None }).unwrap();
    let r = p.apply(rec.values()).unwrap();
    let resid: f64 = r.iter().zip(&b.values).map(|(a, c)| (a - c) * (a - c)).sum();
    assert!(resid < 1e-6, "{resid}");
}

#[test]
fn tvcs_huge_mu_is_flat() {
    let truth = phantoms::glyph(16);
    let p = PatternSet::generate(64, 16, 16, 3).unwrap();
    let b = forward_buckets(&p, &truth).unwrap();
    let rec = tvcs_reconstruct(&p, &b, &TvCsConfig { mu: 1e6, iterations: 200, lr: None }).unwrap();
    let v = rec.values();
    let spread = v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min);
    assert!(spread < 1e-3, "{spread}");
}

#[test]
fn tvcs_sparse_object_psnr() {
    let truth = phantoms::plane(16);
    let p = PatternSet::generate(128, 16, 16, 2024).unwrap();
    let b = forward_buckets(&p, &truth).unwrap();
    let rec = tvcs_reconstruct(&p, &b, &TvCsConfig { mu: 1e-6, iterations: 3000, lr: None }).unwrap();
    let q = psnr(&rec, &truth).unwrap();
    assert!(q >= 20.0, "psnr {q}");
}

#[test]
fn psnr_examples() {
    let a = random_image(16, 16, 1);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    let z = Image::constant(4, 4, 0.2).unwrap();
    let o = Image::constant(4, 4, 0.3).unwrap();
    assert!((psnr(&z, &o).unwrap() - 20.0).abs() < 1e-9);
    assert!(psnr(&z, &a).is_err());
}

/// SSIM evaluated window by window with a 2-D Gaussian built from scratch.
fn ssim_direct(a: &Image, b: &Image) -> f64 {
    let k = 11usize;
    let mut w2 = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            w2[i * k + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = w2.iter().sum();
    w2.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.0001, 0.0009);
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    mx += w2[i * k + j] * a.get(r + i, c + j);
                    my += w2[i * k + j] * b.get(r + i, c + j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let (x, y) = (a.get(r + i, c + j) - mx, b.get(r + i, c + j) - my);
                    vx += w2[i * k + j] * x * x;
                    vy += w2[i * k + j] * y * y;
                    cxy += w2[i * k + j] * x * y;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_direct_formula() {
    let a = random_image(16, 16, 31);
    let b = phantoms::glyph(16);
    let blurred = Image::new(16, 16, a.values().iter().zip(b.values()).map(|(x, y)| 0.3 * x + 0.7 * y).collect()).unwrap();
    for (x, y) in [(&a, &b), (&b, &blurred), (&a, &blurred)] {
        assert!((ssim(x, y).unwrap() - ssim_direct(x, y)).abs() < 1e-9);
    }
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(ssim(&random_image(8, 8, 0), &random_image(8, 8, 1)).is_err());
}

#[test]
fn phantoms_are_valid() {
    for name in ["glyph", "plane", "textured_block"] {
        for size in [16, 32, 64] {
            let img = phantoms::by_name(name, size).unwrap();
            assert_eq!(img.len(), size * size);
            let frac = crate::math::mean(img.values());
            assert!(frac > 0.05 && frac < 0.6, "{name} {size}: {frac}");
        }
    }
    let g = phantoms::glyph(32);
    assert!(g.values().iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(phantoms::by_name("nope", 8).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn buckets_are_linear(s1 in any::<u64>(), s2 in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let p = PatternSet::generate(7, 5, 5, s1 ^ s2).unwrap();
        let t1 = random_image(5, 5, s1);
        let t2 = random_image(5, 5, s2);
        let mix: Vec<f64> = t1.values().iter().zip(t2.values()).map(|(x, y)| a * x + b * y).collect();
        let lhs = p.apply(&mix).unwrap();
        let b1 = forward_buckets(&p, &t1).unwrap().values;
        let b2 = forward_buckets(&p, &t2).unwrap().values;
        for j in 0..7 {
            prop_assert!((lhs[j] - (a * b1[j] + b * b2[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_ignores_bucket_offset(seed in any::<u64>(), offset in -50.0f64..50.0) {
        let p = PatternSet::generate(20, 4, 4, seed).unwrap();
        let b = forward_buckets(&p, &random_image(4, 4, seed.wrapping_add(1))).unwrap();
        let shifted = BucketSignals::noiseless(b.values.iter().map(|v| v + offset).collect());
        let r1 = correlation_gi(&p, &b).unwrap();
        let r2 = correlation_gi(&p, &shifted).unwrap();
        for (x, y) in r1.values().iter().zip(r2.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn tv_nonnegative_and_zero_only_for_constants(seed in any::<u64>(), c in 0.0f64..1.0) {
        let img = random_image(4, 5, seed);
        prop_assert!(tv_norm(img.values(), 4, 5) > 0.0);
        prop_assert_eq!(tv_norm(&[c; 20], 4, 5), 0.0);
    }

    #[test]
    fn metrics_are_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = random_image(12, 13, s1);
        let b = random_image(12, 13, s2);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}
