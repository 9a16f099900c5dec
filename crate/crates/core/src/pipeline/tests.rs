use super::*;
use crate::neuralnet::{ChannelNorm, Model, ModelSpec};
use crate::volgrid::{Modality, Volume3};

fn det(confidence: f64, min: [usize; 3], size: usize) -> Detection {
    Detection {
        bbox: Box3::new(min, [min[0] + size, min[1] + size, min[2] + size]).unwrap(),
        confidence,
        patch_center: [min[0] + size / 2, min[1] + size / 2, min[2] + size / 2],
        stage2_posterior: None,
    }
}

fn with_posterior(mut d: Detection, p: f64) -> Detection {
    d.stage2_posterior = Some(p);
    d
}

fn blob_case(center: [usize; 3], peak: f64) -> MultiModalCase {
    let dims = [16, 16, 16];
    let mut pet = vec![0f32; 4096];
    let sigma = 2.0;
    let mut i = 0;
    for z in 0..16 {
        for y in 0..16 {
            for x in 0..16 {
                let d2 = [x, y, z]
                    .iter()
                    .zip(center.iter())
                    .map(|(&a, &c)| (a as f64 - c as f64).powi(2))
                    .sum::<f64>();
                pet[i] = (peak * (-d2 / (2.0 * sigma * sigma)).exp()) as f32;
                i += 1;
            }
        }
    }
    MultiModalCase::new(
        "blob".into(),
        Volume3::constant(dims, [1.0; 3], Modality::Ct, 40.0),
        Volume3::new(dims, [1.0; 3], Modality::Pet, pet).unwrap(),
        vec![],
    )
    .unwrap()
}

fn lesion(min: [usize; 3], size: usize) -> Box3 {
    Box3::new(min, [min[0] + size, min[1] + size, min[2] + size]).unwrap()
}

mod nms_tests {
    use super::*;

    #[test]
    fn empty_in_empty_out() {
        assert!(nms(vec![], 0.5).is_empty());
    }

    #[test]
    fn disjoint_boxes_all_survive() {
        let dets = vec![
            det(0.9, [0, 0, 0], 3),
            det(0.8, [10, 0, 0], 3),
            det(0.7, [0, 10, 0], 3),
        ];
        assert_eq!(nms(dets, 0.25).len(), 3);
    }

    #[test]
    fn strong_overlap_keeps_the_confident_box() {
        // IoU = 900/1100 ~ 0.82 between the two boxes
        let dets = vec![det(0.9, [0, 0, 0], 10), det(0.7, [0, 0, 1], 10)];
        let kept = nms(dets, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
    }

    #[test]
    fn chain_keeps_ends() {
        // A overlaps B, B overlaps C, A and C disjoint; conf A > B > C
        let a = det(0.9, [0, 0, 0], 4);
        let b = det(0.7, [3, 0, 0], 4);
        let c = det(0.5, [6, 0, 0], 4);
        assert!(crate::volgrid::iou(&a.bbox, &b.bbox) > 0.1);
        assert!(crate::volgrid::iou(&b.bbox, &c.bbox) > 0.1);
        assert_eq!(crate::volgrid::iou(&a.bbox, &c.bbox), 0.0);
        let kept = nms(vec![a, b, c], 0.1);
        let confs: Vec<f64> = kept.iter().map(|d| d.confidence).collect();
        assert_eq!(confs, vec![0.9, 0.5]);
    }

    #[test]
    fn output_is_subset_with_pairwise_iou_below_threshold() {
        let dets: Vec<Detection> = (0..6)
            .map(|i| det(0.9 - 0.1 * i as f64, [i * 2, 0, 0], 5))
            .collect();
        let kept = nms(dets, 0.3);
        for i in 0..kept.len() {
            for j in (i + 1)..kept.len() {
                assert!(crate::volgrid::iou(&kept[i].bbox, &kept[j].bbox) < 0.3);
            }
        }
    }
}

mod detect_tests {
    use super::*;

    /// Hand-built scorer whose logit is 4 * (window mean of PET) - 5:
    /// one block, PET center tap, identity normalization. The gain keeps the
    /// sigmoid off saturation so lattice scores stay strictly ordered.
    fn ideal_scorer(window: usize) -> Model {
        let mut spec = ModelSpec::detector_scorer(window, &[1]);
        spec.blocks[0].stride = 1;
        spec.channel_norm = vec![
            ChannelNorm { offset: 0.0, scale: 1.0 },
            ChannelNorm { offset: 0.0, scale: 1.0 },
        ];
        let mut m = Model::init(spec, 0).unwrap();
        let conv = &mut m.params.conv[0];
        conv.weights.iter_mut().for_each(|w| *w = 0.0);
        // out channel 0 <- PET (in channel 0) center tap
        conv.weights[(((0 * 2 + 0) * 3 + 1) * 3 + 1) * 3 + 1] = 1.0;
        conv.bias[0] = 0.0;
        m.params.dense_w = vec![4.0];
        m.params.dense_b = vec![-5.0];
        m
    }

    #[test]
    fn cold_case_with_negative_bias_scorer_detects_nothing() {
        let case = blob_case([8, 8, 8], 0.0);
        let scorer = ideal_scorer(6);
        let params = DetectParams {
            window: 6,
            stride: 2,
            score_threshold: 0.2,
            ..DetectParams::default()
        };
        let dets = detect(&case, &scorer, &params).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn isolated_blob_yields_exactly_one_detection_containing_it() {
        let center = [7, 9, 8];
        let case = blob_case(center, 10.0);
        let scorer = ideal_scorer(6);
        let params = DetectParams {
            window: 6,
            stride: 2,
            score_threshold: 0.2,
            ..DetectParams::default()
        };
        let dets = detect(&case, &scorer, &params).unwrap();
        assert_eq!(dets.len(), 1, "got {dets:?}");
        assert!(dets[0].bbox.contains(center));
        assert!(dets[0].confidence > 0.9);
    }

    #[test]
    fn raising_the_threshold_never_adds_detections() {
        let case = blob_case([8, 8, 8], 6.0);
        let scorer = ideal_scorer(6);
        let mut counts = Vec::new();
        for thr in [0.05, 0.2, 0.5, 0.9, 0.999] {
            let params = DetectParams {
                window: 6,
                stride: 2,
                score_threshold: thr,
                ..DetectParams::default()
            };
            counts.push(detect(&case, &scorer, &params).unwrap().len());
        }
        for w in counts.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn window_mismatch_is_an_error() {
        let case = blob_case([8, 8, 8], 5.0);
        let scorer = ideal_scorer(6);
        let params = DetectParams {
            window: 8,
            ..DetectParams::default()
        };
        assert!(matches!(
            detect(&case, &scorer, &params),
            Err(PipelineError::WindowMismatch { .. })
        ));
    }
}

mod classify_tests {
    use super::*;

    #[test]
    fn empty_list_stays_empty() {
        let case = super::blob_case([8, 8, 8], 0.0);
        let classifier = Model::init(ModelSpec::classifier(6, &[4]), 5).unwrap();
        let out = classify_detections(&case, vec![], &classifier, 6, PatchFill::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn posteriors_annotated_in_order() {
        let case = super::blob_case([8, 8, 8], 5.0);
        let classifier = Model::init(ModelSpec::classifier(6, &[4]), 5).unwrap();
        let dets = vec![det(0.4, [2, 2, 2], 4), det(0.9, [8, 8, 8], 4)];
        let out = classify_detections(&case, dets.clone(), &classifier, 6, PatchFill::default())
            .unwrap();
        assert_eq!(out.len(), 2);
        // order preserved, not re-sorted by confidence
        assert_eq!(out[0].confidence, 0.4);
        assert_eq!(out[1].confidence, 0.9);
        assert!(out.iter().all(|d| d.stage2_posterior.is_some()));
    }
}

mod operating_point {
    use super::*;

    #[test]
    fn separated_scores_reach_full_sensitivity_with_zero_fp() {
        let cohort = vec![(
            vec![
                det(0.9, [0, 0, 0], 4),
                det(0.8, [6, 6, 6], 4),
                det(0.3, [12, 0, 0], 4),
            ],
            vec![lesion([0, 0, 0], 4), lesion([6, 6, 6], 4)],
        )];
        let op = threshold_at_sensitivity(&cohort, 0.1, 1.0, ScoreField::Confidence, Stage::Detector)
            .unwrap();
        assert!(op.reachable);
        assert_eq!(op.sensitivity, 1.0);
        assert_eq!(op.fp_per_patient, 0.0);
        assert_eq!(op.threshold, 0.8);
    }

    #[test]
    fn tp_below_every_fp_forces_keeping_all() {
        let cohort = vec![(
            vec![
                det(0.2, [0, 0, 0], 4), // the only TP, weakest score
                det(0.9, [10, 10, 10], 4),
                det(0.8, [20, 0, 0], 4),
            ],
            vec![lesion([0, 0, 0], 4)],
        )];
        let op = threshold_at_sensitivity(&cohort, 0.1, 1.0, ScoreField::Confidence, Stage::Detector)
            .unwrap();
        assert!(op.reachable);
        assert_eq!(op.threshold, 0.2);
        assert_eq!(op.sensitivity, 1.0);
        assert_eq!(op.fp_per_patient, 2.0);
    }

    #[test]
    fn posterior_threshold_removes_a_third_of_fps_keeping_tps() {
        // 24 TPs at posterior 0.7; 32 FPs above at 0.8; 16 FPs below at 0.3
        let mut dets = Vec::new();
        let mut lesions = Vec::new();
        for i in 0..24 {
            let min = [8 * i, 0, 0];
            dets.push(with_posterior(det(0.9, min, 4), 0.7));
            lesions.push(lesion(min, 4));
        }
        for i in 0..32 {
            dets.push(with_posterior(det(0.85, [8 * i, 20, 0], 4), 0.8));
        }
        for i in 0..16 {
            dets.push(with_posterior(det(0.85, [8 * i, 40, 0], 4), 0.3));
        }
        let cohort = vec![(dets, lesions)];
        let op = threshold_at_sensitivity(&cohort, 0.1, 1.0, ScoreField::Posterior, Stage::Classifier)
            .unwrap();
        assert!(op.reachable);
        assert_eq!(op.threshold, 0.7);
        assert_eq!(op.sensitivity, 1.0);
        // 32 of 48 FPs survive: a 33% reduction with all TPs kept
        assert_eq!(op.fp_per_patient, 32.0);
    }

    #[test]
    fn unreachable_target_reports_minimal_threshold() {
        let cohort = vec![(
            vec![det(0.9, [10, 10, 10], 4)], // pure FP
            vec![lesion([0, 0, 0], 4)],
        )];
        let op = threshold_at_sensitivity(&cohort, 0.1, 0.5, ScoreField::Confidence, Stage::Detector)
            .unwrap();
        assert!(!op.reachable);
        assert_eq!(op.threshold, 0.9);
        assert_eq!(op.sensitivity, 0.0);
    }

    #[test]
    fn missing_posterior_is_an_error() {
        let cohort = vec![(vec![det(0.9, [0, 0, 0], 4)], vec![lesion([0, 0, 0], 4)])];
        assert!(matches!(
            threshold_at_sensitivity(&cohort, 0.1, 1.0, ScoreField::Posterior, Stage::Classifier),
            Err(PipelineError::MissingPosterior)
        ));
    }

    #[test]
    fn no_lesions_is_an_error() {
        let cohort = vec![(vec![det(0.9, [0, 0, 0], 4)], vec![])];
        assert!(matches!(
            threshold_at_sensitivity(&cohort, 0.1, 1.0, ScoreField::Confidence, Stage::Detector),
            Err(PipelineError::NoLesions)
        ));
    }
}

mod sample_builders {
    use super::*;
    use crate::phantom::{generate_case, CtBodyParams, PhantomSpec};

    fn spec() -> PhantomSpec {
        PhantomSpec {
            dims: [32, 32, 24],
            spacing: [2.0, 2.0, 2.0],
            lesion_count_range: (2, 3),
            lesion_radius_range_mm: (4.0, 6.0),
            lesion_peak_uptake_range: (6.0, 10.0),
            distractor_count_range: (1, 2),
            ct_body: CtBodyParams {
                semi_axes_mm: [28.0, 28.0, 20.0],
                ..CtBodyParams::default()
            },
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn detector_samples_have_both_classes_and_cold_negatives() {
        let case = generate_case(&spec(), "c", 5).unwrap();
        let params = DetectorSampleParams {
            negatives_per_case: 8,
            ..DetectorSampleParams::default()
        };
        let samples = build_detector_samples(std::slice::from_ref(&case), &params).unwrap();
        let pos = samples.iter().filter(|s| s.label == 1).count();
        let neg = samples.iter().filter(|s| s.label == 0).count();
        assert_eq!(pos, case.annotations.len() * 3);
        assert_eq!(neg, 8);
        for s in samples.iter().filter(|s| s.label == 0) {
            let max_pet = s.patch.pet.iter().cloned().fold(f32::MIN, f32::max);
            assert!(max_pet < 1.5 + 0.5, "negative window too hot: {max_pet}");
        }
    }

    #[test]
    fn classifier_samples_label_by_matching() {
        let case = generate_case(&spec(), "c", 6).unwrap();
        let hit = case.annotations[0].bbox;
        let dets = vec![
            Detection {
                bbox: hit,
                confidence: 0.9,
                patch_center: case.annotations[0].center,
                stage2_posterior: None,
            },
            det(0.8, [0, 0, 0], 4), // far corner, outside the body
        ];
        let params = ClassifierSampleParams {
            patch_size: 8,
            iou_threshold: 0.1,
            fill: PatchFill::default(),
        };
        let samples =
            build_classifier_samples(std::slice::from_ref(&case), &[dets], &params).unwrap();
        // detection labels: 1 TP + 1 FP, plus one positive per annotation
        assert_eq!(samples.len(), 2 + case.annotations.len());
        assert_eq!(samples[0].label, 1);
        assert_eq!(samples[1].label, 0);
        assert!(samples[2..].iter().all(|s| s.label == 1));
    }
}
