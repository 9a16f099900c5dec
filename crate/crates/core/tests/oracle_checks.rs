//! Cross-checks of every dual-route computation against the independent
//! brute-force implementations in voxrca-oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxrca_core::concepts::{self, DiscretizationSpec};
use voxrca_core::evalx;
use voxrca_core::neuralnet::{Model, ModelSpec};
use voxrca_core::pipeline::Detection;
use voxrca_core::rcax;
use voxrca_core::volgrid::{Box3, Mask3, Modality, Patch, PatchFill, Volume3};
use voxrca_oracles::{netcheck, radiomics, stats};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * f64::max(1.0, f64::max(a.abs(), b.abs()))
}

fn random_masked_volume(seed: u64) -> (Volume3, Mask3) {
    let dims = [5, 5, 5];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f32> = (0..125).map(|_| rng.random_range(-3.0f32..9.0)).collect();
    // random mask with a guaranteed occupied voxel
    let mut bits: Vec<bool> = (0..125).map(|_| rng.random::<f64>() < 0.55).collect();
    if !bits.iter().any(|&b| b) {
        bits[62] = true;
    }
    (
        Volume3::new(dims, [1.0, 1.0, 1.0], Modality::Pet, values).unwrap(),
        Mask3::from_bits(dims, bits).unwrap(),
    )
}

#[test]
fn texture_features_match_bruteforce_enumeration() {
    let disc = DiscretizationSpec { bin_count: 6 };
    for seed in 0..20u64 {
        let (vol, mask) = random_masked_volume(seed);
        let labels = concepts::discretize(&vol, &mask, &disc).unwrap();
        let dims = labels.dims;

        let ours = concepts::texture::glcm_features(&labels);
        let oracle = radiomics::glcm(dims, &labels.labels, labels.bin_count);
        match (ours, oracle) {
            (Ok(a), Some(b)) => {
                assert!(rel_close(a.joint_average, b.joint_average, 1e-9), "seed {seed} JA");
                assert!(rel_close(a.sum_average, b.sum_average, 1e-9), "seed {seed} SA");
                assert!(rel_close(a.sum_entropy, b.sum_entropy, 1e-9), "seed {seed} SE");
                assert!(
                    rel_close(a.difference_average, b.difference_average, 1e-9),
                    "seed {seed} DA"
                );
                assert!(
                    rel_close(a.difference_entropy, b.difference_entropy, 1e-9),
                    "seed {seed} DE"
                );
                assert!(rel_close(a.mcc, b.mcc, 1e-9), "seed {seed} MCC {} {}", a.mcc, b.mcc);
            }
            (Err(_), None) => {}
            (a, b) => panic!("seed {seed}: disagreement on feasibility: {a:?} vs {b:?}"),
        }

        let ours = concepts::texture::glrlm_features(&labels).unwrap();
        let oracle = radiomics::glrlm(dims, &labels.labels).unwrap();
        assert!(rel_close(ours.run_entropy, oracle.run_entropy, 1e-9), "seed {seed} RE");
        assert!(
            rel_close(ours.run_length_non_uniformity_normalized, oracle.rlnn, 1e-9),
            "seed {seed} RLNN"
        );

        let ours = concepts::texture::glszm_features(&labels).unwrap();
        let oracle = radiomics::glszm(dims, &labels.labels).unwrap();
        assert!(rel_close(ours.size_zone_non_uniformity, oracle.szn, 1e-9), "seed {seed} SZN");
        assert!(
            rel_close(ours.size_zone_non_uniformity_normalized, oracle.sznn, 1e-9),
            "seed {seed} SZNN"
        );
        assert!(rel_close(ours.zone_entropy, oracle.zone_entropy, 1e-9), "seed {seed} ZE");

        let ours = concepts::texture::gldm_features(&labels).unwrap();
        let oracle = radiomics::gldm(dims, &labels.labels).unwrap();
        assert!(rel_close(ours.small_dependence_emphasis, oracle.sde, 1e-9), "seed {seed} SDE");
        assert!(
            rel_close(ours.dependence_entropy, oracle.dependence_entropy, 1e-9),
            "seed {seed} DEP-E"
        );

        let ours = concepts::firstorder::firstorder_features(&vol, &mask, &disc).unwrap();
        let masked_values: Vec<f64> = vol
            .values()
            .iter()
            .zip(mask.bits())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v as f64)
            .collect();
        let masked_bins: Vec<u32> = labels.labels.iter().cloned().filter(|&l| l > 0).collect();
        let oracle = radiomics::firstorder(&masked_values, &masked_bins);
        for (a, b, what) in [
            (ours.mean, oracle.mean, "mean"),
            (ours.median, oracle.median, "median"),
            (ours.maximum, oracle.maximum, "max"),
            (ours.minimum, oracle.minimum, "min"),
            (ours.range, oracle.range, "range"),
            (ours.entropy, oracle.entropy, "entropy"),
            (ours.mean_absolute_deviation, oracle.mad, "mad"),
            (ours.root_mean_squared, oracle.rms, "rms"),
            (ours.p10, oracle.p10, "p10"),
            (ours.p90, oracle.p90, "p90"),
        ] {
            assert!(rel_close(a, b, 1e-9), "seed {seed} firstorder {what}: {a} vs {b}");
        }

        let ours = concepts::shape::shape_features(&mask, [1.0, 1.5, 2.0]).unwrap();
        let (v, s) = radiomics::shape(dims, mask.bits(), [1.0, 1.5, 2.0]).unwrap();
        assert!(rel_close(ours.voxel_volume, v, 1e-9), "seed {seed} volume");
        assert!(rel_close(ours.sphericity, s, 1e-9), "seed {seed} sphericity");
    }
}

fn random_patch(size: usize, rng: &mut ChaCha8Rng) -> Patch {
    let n = size * size * size;
    Patch {
        size,
        pet: (0..n).map(|_| rng.random_range(0.0f32..8.0)).collect(),
        ct: (0..n).map(|_| rng.random_range(-1000.0f32..80.0)).collect(),
        center: [size / 2; 3],
        padded_fraction: 0.0,
        fill: PatchFill::default(),
    }
}

#[test]
fn forward_matches_naive_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let model = Model::init(ModelSpec::classifier(4, &[3, 5]), 7).unwrap();
    for _ in 0..5 {
        let patch = random_patch(4, &mut rng);
        let ours = model.logits(&patch).unwrap();
        let naive = netcheck::naive_logits(&model, &patch);
        for (a, b) in ours.iter().zip(naive.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn layer_gradients_match_finite_differences() {
    // the network is piecewise linear in its activations, so central
    // differences are exact wherever the probe segment stays inside one
    // linear region; probes that straddle a ReLU kink (detected by
    // disagreeing one-sided slopes) say nothing about the derivative and
    // are redrawn
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let model = Model::init(ModelSpec::classifier(6, &[4, 6, 8]), 9).unwrap();
    for layer in 0..3 {
        let mut valid = 0;
        let mut attempts = 0;
        while valid < 10 {
            attempts += 1;
            assert!(attempts < 200, "layer {layer}: too many kink-straddling probes");
            let patch = random_patch(6, &mut rng);
            let out_idx = attempts % 2;
            let Some(fd) = netcheck::fd_grad_wrt_layer_checked(&model, &patch, layer, out_idx, 1e-3)
            else {
                continue;
            };
            valid += 1;
            let analytic = model.grad_wrt_layer(&patch, layer, out_idx).unwrap();
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
            for (a, b) in analytic.iter().zip(fd.iter()) {
                let tol = 1e-3 * f64::max(scale, b.abs());
                assert!(
                    (a - b).abs() <= tol,
                    "layer {layer} probe {valid}: analytic {a} vs fd {b}"
                );
            }
        }
    }
}

#[test]
fn rcv_fit_matches_nalgebra_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for trial in 0..5 {
        let n = 20;
        let d = 4;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ours = rcax::fit_rcv(&a, &m, 1e-3, "c", 0).unwrap();
        let w = stats::ridge_fit(&a, &m, 1e-3).unwrap();
        let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((ours.slope_norm - norm).abs() < 1e-8, "trial {trial}");
        for (x, y) in ours.v.iter().zip(w.iter()) {
            assert!((x - y / norm).abs() < 1e-8, "trial {trial}: {x} vs {}", y / norm);
        }
    }
}

#[test]
fn planted_direction_recovery() {
    // n=50, d=8: noiseless recovery is near-exact, 10% noise stays aligned
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let n = 50;
    let d = 8;
    let a: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let planted: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pnorm: f64 = planted.iter().map(|x| x * x).sum::<f64>().sqrt();
    let clean: Vec<f64> = a
        .iter()
        .map(|row| row.iter().zip(planted.iter()).map(|(x, w)| x * w).sum())
        .collect();
    let fit = rcax::fit_rcv(&a, &clean, 1e-3, "c", 0).unwrap();
    let cos: f64 = fit
        .v
        .iter()
        .zip(planted.iter())
        .map(|(v, w)| v * w / pnorm)
        .sum();
    assert!(cos.abs() >= 0.999, "clean cos {cos}");
    assert!(fit.determination >= 0.999, "clean R2 {}", fit.determination);

    let signal_std = {
        let (_, s) = rcax::mean_and_population_std(&clean);
        s
    };
    let noisy: Vec<f64> = clean
        .iter()
        .map(|v| v + rng.random_range(-1.0..1.0) * 0.1 * signal_std * 3f64.sqrt())
        .collect();
    let fit = rcax::fit_rcv(&a, &noisy, 1e-3, "c", 0).unwrap();
    let cos: f64 = fit
        .v
        .iter()
        .zip(planted.iter())
        .map(|(v, w)| v * w / pnorm)
        .sum();
    assert!(cos.abs() >= 0.9, "noisy cos {cos}");
}

fn obox(b: &Box3) -> stats::OBox {
    stats::OBox { min: b.min, max: b.max }
}

#[test]
fn matching_agrees_with_independent_greedy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for trial in 0..50 {
        // up to 4 detections and 4 lesions in a small grid
        let n_d = rng.random_range(0..=4);
        let n_l = rng.random_range(0..=4);
        let rand_box = |rng: &mut ChaCha8Rng| {
            let min = [
                rng.random_range(0..6usize),
                rng.random_range(0..6usize),
                rng.random_range(0..6usize),
            ];
            let sz = rng.random_range(1..=4usize);
            Box3::new(min, [min[0] + sz, min[1] + sz, min[2] + sz]).unwrap()
        };
        let dets: Vec<Detection> = (0..n_d)
            .map(|_| Detection {
                bbox: rand_box(&mut rng),
                confidence: (rng.random_range(0..10) as f64) / 10.0,
                patch_center: [0, 0, 0],
                stage2_posterior: None,
            })
            .collect();
        let lesions: Vec<Box3> = (0..n_l).map(|_| rand_box(&mut rng)).collect();
        let ours = evalx::match_detections("t", &dets, &lesions, 0.1);
        let oracle_dets: Vec<(f64, stats::OBox)> =
            dets.iter().map(|d| (d.confidence, obox(&d.bbox))).collect();
        let oracle_lesions: Vec<stats::OBox> = lesions.iter().map(obox).collect();
        let (tp, fp, fn_idx) = stats::greedy_match(&oracle_dets, &oracle_lesions, 0.1);
        assert_eq!(ours.tp, tp, "trial {trial}");
        let mut our_fp = ours.fp.clone();
        let mut oracle_fp = fp;
        our_fp.sort();
        oracle_fp.sort();
        assert_eq!(our_fp, oracle_fp, "trial {trial}");
        assert_eq!(ours.fn_lesions, fn_idx, "trial {trial}");
        assert!(ours.tp_count() <= n_d.min(n_l));
    }
}

#[test]
fn froc_matches_threshold_sweep_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    // three patients with hand-scale random detections
    let mut cases = Vec::new();
    for _ in 0..3 {
        let n_d = rng.random_range(1..=5);
        let n_l = rng.random_range(1..=3);
        let rand_box = |rng: &mut ChaCha8Rng| {
            let min = [
                rng.random_range(0..8usize),
                rng.random_range(0..8usize),
                rng.random_range(0..8usize),
            ];
            let sz = rng.random_range(2..=4usize);
            Box3::new(min, [min[0] + sz, min[1] + sz, min[2] + sz]).unwrap()
        };
        let dets: Vec<Detection> = (0..n_d)
            .map(|_| Detection {
                bbox: rand_box(&mut rng),
                confidence: (rng.random_range(0..20) as f64) / 20.0,
                patch_center: [0, 0, 0],
                stage2_posterior: None,
            })
            .collect();
        let lesions: Vec<Box3> = (0..n_l).map(|_| rand_box(&mut rng)).collect();
        cases.push((dets, lesions));
    }
    let curve = evalx::froc(&cases, 0.1).unwrap();
    let oracle_cases: Vec<(Vec<(f64, stats::OBox)>, Vec<stats::OBox>)> = cases
        .iter()
        .map(|(d, l)| {
            (
                d.iter().map(|x| (x.confidence, obox(&x.bbox))).collect(),
                l.iter().map(obox).collect(),
            )
        })
        .collect();
    let oracle = stats::froc_sweep(&oracle_cases, 0.1);
    assert_eq!(curve.points.len(), oracle.len());
    for (p, (t, sens, fppp)) in curve.points.iter().zip(oracle.iter()) {
        assert_eq!(p.threshold, *t);
        assert!((p.sensitivity - sens).abs() < 1e-12);
        assert!((p.fp_per_patient - fppp).abs() < 1e-12);
    }
}

#[test]
fn auc_matches_mann_whitney() {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    for trial in 0..20 {
        let n = rng.random_range(4..12);
        // quantized scores force ties regularly
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..6) as f64) / 6.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let curve = evalx::roc_auc(&scores, &labels).unwrap();
        let mwu = stats::mann_whitney_auc(&scores, &labels).unwrap();
        assert!(
            (curve.auc - mwu).abs() < 1e-12,
            "trial {trial}: {} vs {mwu}",
            curve.auc
        );
    }

    // the six-sample fixed example
    let scores = [0.9, 0.8, 0.8, 0.4, 0.3, 0.1];
    let labels = [true, false, true, true, false, false];
    let curve = evalx::roc_auc(&scores, &labels).unwrap();
    let mwu = stats::mann_whitney_auc(&scores, &labels).unwrap();
    assert!((curve.auc - mwu).abs() < 1e-12);
}
