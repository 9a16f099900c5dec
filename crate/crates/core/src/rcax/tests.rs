use super::*;
use crate::neuralnet::{Model, ModelSpec};
use crate::volgrid::{Patch, PatchFill};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn patch_of(size: usize, pet: f32, ct: f32) -> Patch {
    let n = size * size * size;
    Patch {
        size,
        pet: vec![pet; n],
        ct: vec![ct; n],
        center: [size / 2; 3],
        padded_fraction: 0.0,
        fill: PatchFill::default(),
    }
}

mod pearson_tests {
    use super::*;

    #[test]
    fn perfect_linear_relation() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let (rho, p) = pearson(&x, &y).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn constant_input_is_zero_variance() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [5.0; 4];
        assert!(matches!(pearson(&x, &y), Err(RcaxError::ZeroVariance(_))));
        assert!(matches!(pearson(&y, &x), Err(RcaxError::ZeroVariance(_))));
    }

    #[test]
    fn textbook_five_point_example() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 1.0, 4.0, 3.0, 5.0];
        let (rho, p) = pearson(&x, &y).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
        // frozen from the t-distribution with 3 dof
        assert!((p - 0.104088038661828).abs() < 1e-9, "p {p}");
    }

    #[test]
    fn negative_correlation_is_signed() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [4.0, 3.0, 2.0, 1.0];
        let (rho, _) = pearson(&x, &y).unwrap();
        assert!((rho + 1.0).abs() < 1e-12);
    }
}

mod rcv_tests {
    use super::*;

    fn random_activations(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn exact_linear_concept_is_recovered() {
        let a = random_activations(30, 5, 1);
        let w_true = [0.5, -1.0, 2.0, 0.0, 0.25];
        let m: Vec<f64> = a
            .iter()
            .map(|row| row.iter().zip(w_true.iter()).map(|(x, w)| x * w).sum())
            .collect();
        let r = fit_rcv(&a, &m, 0.0, "c", 0).unwrap();
        let norm: f64 = w_true.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos: f64 = r
            .v
            .iter()
            .zip(w_true.iter())
            .map(|(a, b)| a * b / norm)
            .sum();
        assert!(cos.abs() >= 1.0 - 1e-9, "cos {cos}");
        assert!(r.determination >= 1.0 - 1e-9);
        assert!((r.slope_norm - norm).abs() < 1e-9);
        let unit: f64 = r.v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((unit - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_concept_is_rejected() {
        let a = random_activations(10, 3, 2);
        let m = vec![4.2; 10];
        assert!(matches!(
            fit_rcv(&a, &m, 1e-3, "c", 0),
            Err(RcaxError::ZeroVariance(_))
        ));
    }

    #[test]
    fn affine_rescaling_preserves_direction_and_r2() {
        let a = random_activations(25, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m2: Vec<f64> = m.iter().map(|v| 3.5 * v + 10.0).collect();
        let r1 = fit_rcv(&a, &m, 1e-3, "c", 0).unwrap();
        let r2 = fit_rcv(&a, &m2, 1e-3, "c", 0).unwrap();
        let cos: f64 = r1.v.iter().zip(r2.v.iter()).map(|(a, b)| a * b).sum();
        assert!(cos >= 1.0 - 1e-12, "direction changed: cos {cos}");
        assert!((r1.determination - r2.determination).abs() < 1e-9);
        assert!((r2.slope_norm - 3.5 * r1.slope_norm).abs() < 1e-9);
    }

    #[test]
    fn singular_system_without_ridge_is_reported() {
        // rank-deficient activations: second column is a copy of the first
        let base = random_activations(12, 1, 5);
        let a: Vec<Vec<f64>> = base.iter().map(|r| vec![r[0], r[0]]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(matches!(
            fit_rcv(&a, &m, 0.0, "c", 0),
            Err(RcaxError::SingularSystem)
        ));
        // the ridge makes it solvable
        assert!(fit_rcv(&a, &m, 1e-3, "c", 0).is_ok());
    }
}

mod sensitivity_tests {
    use super::*;

    /// One-block model: the pooled activation of the last layer feeds the
    /// dense head directly, so the gradient is the weight row itself.
    fn linear_head_model() -> Model {
        let mut m = Model::init(ModelSpec::classifier(6, &[4]), 8).unwrap();
        m.params.dense_w = vec![
            0.5, -1.0, 2.0, 0.25, // class 0
            1.0, 0.5, -0.5, 2.0, // class 1
        ];
        m
    }

    #[test]
    fn linear_head_gives_identical_scores() {
        let model = linear_head_model();
        let v = vec![0.5, 0.5, 0.5, 0.5];
        let samples = vec![
            ("a".to_string(), patch_of(6, 1.0, 10.0)),
            ("b".to_string(), patch_of(6, 5.0, -100.0)),
            ("c".to_string(), patch_of(6, 0.0, 800.0)),
        ];
        let recs = sensitivity_scores(&model, 0, 1, &v, &samples, "c").unwrap();
        let w = &model.params.dense_w[4..8];
        let expect: f64 = w.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        for r in &recs {
            assert!((r.s - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_direction_scores_zero() {
        let model = linear_head_model();
        // v orthogonal to the class-1 row (1.0, 0.5, -0.5, 2.0)
        let w = [1.0f64, 0.5, -0.5, 2.0];
        let mut v = vec![0.5, -1.0, 0.0, 0.0];
        // Gram-Schmidt against w, then normalize
        let dot: f64 = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        let w2: f64 = w.iter().map(|x| x * x).sum();
        for i in 0..4 {
            v[i] -= dot / w2 * w[i];
        }
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        let samples = vec![("a".to_string(), patch_of(6, 2.0, 40.0))];
        let recs = sensitivity_scores(&model, 0, 1, &v, &samples, "c").unwrap();
        assert!(recs[0].s.abs() < 1e-12);
    }

    #[test]
    fn non_unit_direction_is_rejected() {
        let model = linear_head_model();
        let samples = vec![("a".to_string(), patch_of(6, 1.0, 1.0))];
        assert!(matches!(
            sensitivity_scores(&model, 0, 1, &[2.0, 0.0, 0.0, 0.0], &samples, "c"),
            Err(RcaxError::NotUnit)
        ));
    }
}

mod br_tests {
    use super::*;

    #[test]
    fn direct_formula() {
        // mean 2, population std 1
        let s = [1.0, 3.0];
        assert_eq!(bidirectional_relevance(1.0, &s), Some(2.0));
        assert_eq!(bidirectional_relevance(0.5, &s), Some(1.0));
    }

    #[test]
    fn constant_scores_are_undefined() {
        assert_eq!(bidirectional_relevance(1.0, &[2.0, 2.0, 2.0]), None);
        assert_eq!(bidirectional_relevance(1.0, &[2.0]), None);
    }

    #[test]
    fn negating_scores_negates_br() {
        let s = [0.5, 1.5, -0.25, 2.0];
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = bidirectional_relevance(0.7, &s).unwrap();
        let b = bidirectional_relevance(0.7, &neg).unwrap();
        assert!((a + b).abs() < 1e-12);
        // sign equals the sign of the mean
        let (mean, _) = mean_and_population_std(&s);
        assert_eq!(a.is_sign_positive(), mean.is_sign_positive());
    }
}

mod global_tests {
    use super::*;
    use crate::concepts::{ConceptMatrix, ConceptModality};

    fn varied_patches(n: usize, size: usize, seed: u64) -> Vec<(String, Patch)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut p = patch_of(size, 0.0, 40.0);
                for v in p.pet.iter_mut() {
                    *v = rng.random_range(0.0..8.0);
                }
                (format!("s{i}"), p)
            })
            .collect()
    }

    fn matrix(names: &[&str], cols: Vec<Vec<f64>>, target: Vec<f64>, ids: Vec<String>) -> ConceptMatrix {
        let n = target.len();
        let rows = (0..n)
            .map(|i| cols.iter().map(|c| Some(c[i])).collect())
            .collect();
        ConceptMatrix {
            names: names.iter().map(|s| s.to_string()).collect(),
            modalities: vec![ConceptModality::Pet; names.len()],
            sample_ids: ids,
            rows,
            target,
        }
    }

    #[test]
    fn target_clone_concept_ranks_first_by_rho() {
        let model = Model::init(ModelSpec::classifier(6, &[4, 8]), 15).unwrap();
        let samples = varied_patches(12, 6, 16);
        let patches: Vec<Patch> = samples.iter().map(|(_, p)| p.clone()).collect();
        let ids: Vec<String> = samples.iter().map(|(id, _)| id.clone()).collect();
        let target: Vec<f64> = patches
            .iter()
            .map(|p| model.predict_posterior(p).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = matrix(&["clone", "noise"], vec![target.clone(), noise], target, ids);
        let g = global_explain(&model, 1, 1, &m, &patches, 1e-3).unwrap();
        assert_eq!(g.rows.len(), 2);
        let first = &g.rows[g.rankings.by_abs_rho[0]];
        assert_eq!(first.name, "clone");
        assert!((first.rho - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_columns_get_identical_measures() {
        let model = Model::init(ModelSpec::classifier(6, &[4, 8]), 18).unwrap();
        let samples = varied_patches(10, 6, 19);
        let patches: Vec<Patch> = samples.iter().map(|(_, p)| p.clone()).collect();
        let ids: Vec<String> = samples.iter().map(|(id, _)| id.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let col: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..5.0)).collect();
        let target: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = matrix(&["a", "b"], vec![col.clone(), col], target, ids);
        let g = global_explain(&model, 0, 1, &m, &patches, 1e-3).unwrap();
        let (a, b) = (&g.rows[0], &g.rows[1]);
        assert_eq!(a.rho, b.rho);
        assert_eq!(a.determination, b.determination);
        assert_eq!(a.mean_s, b.mean_s);
        assert_eq!(a.br, b.br);
    }

    #[test]
    fn flagged_concepts_are_excluded_with_reasons() {
        let model = Model::init(ModelSpec::classifier(6, &[4]), 21).unwrap();
        let samples = varied_patches(8, 6, 22);
        let patches: Vec<Patch> = samples.iter().map(|(_, p)| p.clone()).collect();
        let ids: Vec<String> = samples.iter().map(|(id, _)| id.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let good: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..5.0)).collect();
        let target: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let constant = vec![3.0; 8];
        let mut m = matrix(
            &["good", "constant", "missing"],
            vec![good.clone(), constant, good],
            target,
            ids,
        );
        m.rows[4][2] = None;
        let g = global_explain(&model, 0, 1, &m, &patches, 1e-3).unwrap();
        assert_eq!(g.rows.len(), 1);
        assert_eq!(g.rows[0].name, "good");
        assert_eq!(g.diagnostics.len(), 2);
        let flagged: Vec<&str> = g.diagnostics.iter().map(|d| d.name.as_str()).collect();
        assert!(flagged.contains(&"constant") && flagged.contains(&"missing"));
        for ranking in [
            &g.rankings.by_abs_rho,
            &g.rankings.by_determination,
            &g.rankings.by_abs_mean_s,
            &g.rankings.by_abs_br,
        ] {
            assert_eq!(ranking.len(), 1, "rankings cover only non-flagged rows");
        }
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let model = Model::init(ModelSpec::classifier(6, &[4]), 25).unwrap();
        let samples = varied_patches(2, 6, 26);
        let patches: Vec<Patch> = samples.iter().map(|(_, p)| p.clone()).collect();
        let ids: Vec<String> = samples.iter().map(|(id, _)| id.clone()).collect();
        let m = matrix(&["a"], vec![vec![1.0, 2.0]], vec![0.1, 0.9], ids);
        assert!(matches!(
            global_explain(&model, 0, 1, &m, &patches, 1e-3),
            Err(RcaxError::TooFewSamples(2))
        ));
    }
}

mod local_tests {
    use super::*;
    use crate::concepts::ConceptModality;

    fn stats_for(model: &Model, v: Vec<f64>, mean: f64, std: f64) -> ClassStats {
        let _ = model;
        ClassStats {
            layer: 0,
            output_index: 1,
            rows: vec![ClassStatRow {
                name: "c".into(),
                modality: ConceptModality::Pet,
                rcv: v,
                mean_s: mean,
                std_s: std,
            }],
        }
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn class_mean_sample_has_maximal_similarity() {
        let model = Model::init(ModelSpec::classifier(6, &[4]), 30).unwrap();
        let patch = patch_of(6, 2.0, 50.0);
        let v = unit(&[1.0, 0.0, 1.0, 0.5]);
        let g = model.grad_wrt_layer(&patch, 0, 1).unwrap();
        let s: f64 = g.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        let stats = stats_for(&model, v, s, 1.0);
        let le = local_explain(&model, "x", &patch, &stats).unwrap();
        assert_eq!(le.rows[0].z, Some(0.0));
        assert_eq!(le.similarity, 0.0);
    }

    #[test]
    fn one_sigma_offset_gives_similarity_minus_one() {
        let model = Model::init(ModelSpec::classifier(6, &[4]), 31).unwrap();
        let patch = patch_of(6, 3.0, 60.0);
        let v = unit(&[0.5, 1.0, -0.5, 0.0]);
        let g = model.grad_wrt_layer(&patch, 0, 1).unwrap();
        let s: f64 = g.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        let std = 0.37;
        let stats = stats_for(&model, v, s - std, std);
        let le = local_explain(&model, "x", &patch, &stats).unwrap();
        assert!((le.rows[0].z.unwrap() - 1.0).abs() < 1e-9);
        assert!((le.similarity + 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_class_std_is_skipped_with_flag() {
        let model = Model::init(ModelSpec::classifier(6, &[4]), 32).unwrap();
        let patch = patch_of(6, 1.0, 10.0);
        let stats = stats_for(&model, unit(&[1.0, 1.0, 1.0, 1.0]), 0.0, 0.0);
        let le = local_explain(&model, "x", &patch, &stats).unwrap();
        assert_eq!(le.rows[0].z, None);
        assert_eq!(le.similarity, 0.0);
    }

    #[test]
    fn linear_head_makes_all_z_differences_zero() {
        // with a one-block model the gradient is sample-independent, so the
        // class std over any subset is 0 and every z is undefined/zero; the
        // degenerate case is the documented reason to explain a deeper layer
        let model = Model::init(ModelSpec::classifier(6, &[4]), 33).unwrap();
        let patches = [
            patch_of(6, 0.5, 10.0),
            patch_of(6, 5.0, 100.0),
            patch_of(6, 2.0, -50.0),
        ];
        let v = unit(&[1.0, 2.0, 3.0, 4.0]);
        let scores: Vec<f64> = patches
            .iter()
            .map(|p| {
                let g = model.grad_wrt_layer(p, 0, 1).unwrap();
                g.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
            })
            .collect();
        assert!((scores[0] - scores[1]).abs() < 1e-12);
        assert!((scores[0] - scores[2]).abs() < 1e-12);
        let (mean, std) = mean_and_population_std(&scores);
        assert!(std < 1e-12);
        let stats = stats_for(&model, v, mean, std);
        let le = local_explain(&model, "x", &patches[0], &stats).unwrap();
        assert_eq!(le.rows[0].z, None, "zero-spread class stats are flagged");
    }
}
