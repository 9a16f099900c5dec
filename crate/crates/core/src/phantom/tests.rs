use super::*;
use std::collections::HashSet;

fn quiet_spec() -> PhantomSpec {
    PhantomSpec {
        dims: [32, 32, 24],
        spacing: [2.0, 2.0, 2.0],
        lesion_count_range: (1, 3),
        lesion_radius_range_mm: (4.0, 6.0),
        lesion_peak_uptake_range: (6.0, 10.0),
        distractor_count_range: (0, 2),
        distractor_radius_range_mm: (4.0, 6.0),
        distractor_peak_range: (2.0, 4.0),
        ct_body: CtBodyParams {
            semi_axes_mm: [28.0, 28.0, 20.0],
            ..CtBodyParams::default()
        },
        noise_sigma_pet: 0.0,
        noise_sigma_ct: 0.0,
        ..PhantomSpec::default()
    }
}

#[test]
fn zero_lesion_range_yields_no_annotations() {
    let spec = PhantomSpec {
        lesion_count_range: (0, 0),
        distractor_count_range: (0, 0),
        ..quiet_spec()
    };
    let case = generate_case(&spec, "c", 7).unwrap();
    assert!(case.annotations.is_empty());
}

#[test]
fn generation_is_deterministic() {
    let spec = quiet_spec();
    let a = generate_case(&spec, "c", 1234).unwrap();
    let b = generate_case(&spec, "c", 1234).unwrap();
    assert_eq!(a.pet.values(), b.pet.values());
    assert_eq!(a.ct.values(), b.ct.values());
    assert_eq!(a.annotations.len(), b.annotations.len());
    for (x, y) in a.annotations.iter().zip(b.annotations.iter()) {
        assert_eq!(x.center, y.center);
        assert_eq!(x.mask.bits(), y.mask.bits());
    }
}

#[test]
fn noiseless_lesion_peak_and_mask_match_the_gaussian() {
    let spec = PhantomSpec {
        lesion_count_range: (1, 1),
        lesion_peak_uptake_range: (10.0, 10.0),
        lesion_radius_range_mm: (5.0, 5.0),
        distractor_count_range: (0, 0),
        ..quiet_spec()
    };
    let case = generate_case(&spec, "c", 99).unwrap();
    assert_eq!(case.annotations.len(), 1);
    let ann = &case.annotations[0];
    let c = ann.center;
    let peak = case.pet.get(c[0], c[1], c[2]);
    assert!((peak - 10.0).abs() < 1e-6, "peak {peak}");

    // oracle: evaluate the closed-form Gaussian on the grid; mask is its
    // super-level set at 0.4 * peak = 4.0
    let sigma = 5.0 / (2.0 * (1.0f64 / 0.40).ln()).sqrt();
    let center_mm = [
        (c[0] as f64 + 0.5) * 2.0,
        (c[1] as f64 + 0.5) * 2.0,
        (c[2] as f64 + 0.5) * 2.0,
    ];
    let dims = case.dims();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [
                    (x as f64 + 0.5) * 2.0,
                    (y as f64 + 0.5) * 2.0,
                    (z as f64 + 0.5) * 2.0,
                ];
                let d2: f64 = (0..3).map(|a| (p[a] - center_mm[a]).powi(2)).sum();
                let g = 10.0 * (-d2 / (2.0 * sigma * sigma)).exp();
                assert_eq!(
                    ann.mask.get(x, y, z),
                    g >= 4.0,
                    "voxel ({x},{y},{z}) gaussian {g}"
                );
            }
        }
    }
}

#[test]
fn masks_are_nonempty_and_inside_body() {
    let spec = quiet_spec();
    for seed in [1u64, 2, 3, 4, 5] {
        let case = generate_case(&spec, "c", seed).unwrap();
        let dims = case.dims();
        let grid_mm = [
            dims[0] as f64 * 2.0,
            dims[1] as f64 * 2.0,
            dims[2] as f64 * 2.0,
        ];
        for ann in &case.annotations {
            assert!(!ann.mask.is_empty());
            for v in ann.mask.set_voxels() {
                let p = [
                    (v[0] as f64 + 0.5) * 2.0,
                    (v[1] as f64 + 0.5) * 2.0,
                    (v[2] as f64 + 0.5) * 2.0,
                ];
                let e: f64 = (0..3)
                    .map(|a| ((p[a] - grid_mm[a] / 2.0) / spec.ct_body.semi_axes_mm[a]).powi(2))
                    .sum();
                assert!(e <= 1.0 + 1e-9, "mask voxel escapes the body: {e}");
            }
        }
    }
}

#[test]
fn lesion_centers_are_pairwise_separated() {
    let spec = PhantomSpec {
        lesion_count_range: (3, 5),
        ..quiet_spec()
    };
    for seed in 0..6u64 {
        let case = generate_case(&spec, "c", seed).unwrap();
        let centers: Vec<[f64; 3]> = case
            .annotations
            .iter()
            .map(|a| {
                [
                    (a.center[0] as f64 + 0.5) * 2.0,
                    (a.center[1] as f64 + 0.5) * 2.0,
                    (a.center[2] as f64 + 0.5) * 2.0,
                ]
            })
            .collect();
        // mask radius equals the drawn lesion radius by construction, so the
        // tight boxes give a lower bound on radii; use the min radius bound
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                let d: f64 = (0..3)
                    .map(|a| (centers[i][a] - centers[j][a]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    d >= 2.0 * spec.lesion_radius_range_mm.0 - 1e-9,
                    "centers too close: {d}"
                );
            }
        }
    }
}

#[test]
fn dataset_empty_and_default_counts() {
    let spec = quiet_spec();
    let empty = generate_dataset(&spec, 0, 0, 5).unwrap();
    assert!(empty.train.is_empty() && empty.test.is_empty());

    let split = generate_dataset(&spec, 70, 18, 5).unwrap();
    assert_eq!(split.train.len() + split.test.len(), 88);
    let ids: HashSet<&str> = split
        .train
        .iter()
        .chain(split.test.iter())
        .map(|c| c.id.as_str())
        .collect();
    assert_eq!(ids.len(), 88, "case ids must be unique");
}

#[test]
fn dataset_master_seed_controls_content() {
    let spec = quiet_spec();
    let a = generate_dataset(&spec, 2, 1, 42).unwrap();
    let b = generate_dataset(&spec, 2, 1, 42).unwrap();
    let c = generate_dataset(&spec, 2, 1, 43).unwrap();
    for (x, y) in a.train.iter().zip(b.train.iter()) {
        assert_eq!(x.pet.values(), y.pet.values());
    }
    assert_ne!(
        a.train[0].pet.values(),
        c.train[0].pet.values(),
        "different master seed must change the volumes"
    );
}

#[test]
fn grid_too_small_for_lesions_errors() {
    let spec = PhantomSpec {
        dims: [8, 8, 8],
        lesion_count_range: (5, 5),
        lesion_radius_range_mm: (6.0, 6.0),
        ct_body: CtBodyParams {
            semi_axes_mm: [7.0, 7.0, 7.0],
            ..CtBodyParams::default()
        },
        ..quiet_spec()
    };
    assert!(matches!(
        generate_case(&spec, "c", 1),
        Err(PhantomError::Placement { .. })
    ));
}

#[test]
fn dataset_roundtrip_through_disk() {
    let spec = quiet_spec();
    let split = generate_dataset(&spec, 2, 1, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    io::save_split(dir.path(), &split, "hash0").unwrap();
    let file = io::load_split_file(dir.path()).unwrap();
    assert_eq!(file.train.len(), 2);
    assert_eq!(file.test.len(), 1);
    assert_eq!(file.master_seed, 11);
    let train = io::load_cases(dir.path(), &file.train).unwrap();
    assert_eq!(train[0].pet.values(), split.train[0].pet.values());
    assert_eq!(train[0].annotations.len(), split.train[0].annotations.len());
    for (a, b) in train[0].annotations.iter().zip(split.train[0].annotations.iter()) {
        assert_eq!(a.mask.bits(), b.mask.bits());
        assert_eq!(a.bbox, b.bbox);
    }
}

#[test]
fn rle_roundtrip() {
    let bits = vec![false, false, true, true, true, false, true];
    let runs = io::rle_encode(&bits);
    assert_eq!(runs, vec![2, 3, 1, 1]);
    assert_eq!(io::rle_decode(&runs, 7).unwrap(), bits);
    // all-true starts with a zero-run
    let runs = io::rle_encode(&[true, true]);
    assert_eq!(runs, vec![0, 2]);
}
