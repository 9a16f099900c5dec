//! The five pipeline commands. Each validates its upstream inputs' config
//! hash, runs deterministically for a given config + seed, and emits stamped
//! artifacts under the output directory.

use crate::artifacts::{self, read_json, require, write_csv, write_json, write_svg};
use crate::config::{derive_seed, RunConfig};
use crate::CliError;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use voxrca_core::concepts::{
    extract_concepts, segment_adaptive, ConceptMatrix, ConceptVector, DiscretizationSpec,
};
use voxrca_core::evalx::{self, MatchResult};
use voxrca_core::neuralnet::io::{load_model, save_model, sidecar_path};
use voxrca_core::neuralnet::train::train;
use voxrca_core::neuralnet::{Model, ModelSpec};
use voxrca_core::phantom::{generate_dataset, io as dataset_io};
use voxrca_core::pipeline::{
    build_classifier_samples, build_detector_samples, classify_detections, detect, detection_patches,
    threshold_at_sensitivity, Detection, OperatingPoint, ScoreField, Stage,
};
use voxrca_core::plot;
use voxrca_core::rcax::{self, GlobalExplanation};
use voxrca_core::volgrid::{Box3, MultiModalCase, Patch};

#[derive(Debug, Serialize, Deserialize)]
pub struct CaseDetections {
    pub case_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OperatingPoints {
    pub stage1: OperatingPoint,
    pub stage2: OperatingPoint,
}

pub fn model_path(cfg: &RunConfig, stage: Stage) -> PathBuf {
    cfg.out_dir().join("models").join(match stage {
        Stage::Detector => "detector.bin",
        Stage::Classifier => "classifier.bin",
    })
}

pub fn detections_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("pipeline").join("detections")
}

pub fn operating_points_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("pipeline").join("operating_points.json")
}

pub fn explain_dir(cfg: &RunConfig, stage: Stage) -> PathBuf {
    cfg.out_dir().join("explain").join(stage.to_string())
}

pub fn eval_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("eval")
}

/// Generate and persist the phantom dataset.
pub fn cmd_phantom_gen(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.phantom_spec();
    spec.validate()?;
    let split = generate_dataset(&spec, cfg.dataset.n_train, cfg.dataset.n_test, cfg.seed)?;
    let root = cfg.dataset_root();
    dataset_io::save_split(&root, &split, &cfg.config_hash())?;
    println!(
        "phantom-gen: wrote {} train + {} test cases to {}",
        split.train.len(),
        split.test.len(),
        root.display()
    );
    Ok(())
}

fn load_split_checked(cfg: &RunConfig) -> Result<dataset_io::SplitFile, CliError> {
    let root = cfg.dataset_root();
    require(
        &root.join("split.json"),
        "run `voxrca phantom-gen` first",
    )?;
    let split = dataset_io::load_split_file(&root)?;
    if split.config_hash != cfg.config_hash() {
        return Err(CliError::MissingArtifact(format!(
            "dataset at {} was generated under config hash {}, current is {}; \
             rerun `voxrca phantom-gen`",
            root.display(),
            split.config_hash,
            cfg.config_hash()
        )));
    }
    Ok(split)
}

fn load_cases(cfg: &RunConfig, entries: &[dataset_io::SplitEntry]) -> Result<Vec<MultiModalCase>, CliError> {
    Ok(dataset_io::load_cases(&cfg.dataset_root(), entries)?)
}

fn load_model_checked(cfg: &RunConfig, stage: Stage) -> Result<Model, CliError> {
    let path = model_path(cfg, stage);
    require(&path, &format!("run `voxrca train --stage {stage}` first"))?;
    let side_text = artifacts::read_artifact_text(&sidecar_path(&path))?;
    let side: serde_json::Value = serde_json::from_str(&side_text)
        .map_err(|e| CliError::Numerical(format!("malformed model sidecar: {e}")))?;
    let recorded = side
        .get("provenance")
        .and_then(|p| p.get("config_hash"))
        .and_then(|h| h.as_str())
        .unwrap_or("");
    if recorded != cfg.config_hash() {
        return Err(CliError::MissingArtifact(format!(
            "{} was trained under config hash {recorded}, current is {}; retrain",
            path.display(),
            cfg.config_hash()
        )));
    }
    Ok(load_model(&path)?)
}

/// Case-level train/validation split: the trailing fraction of the training
/// cases becomes the validation set.
fn split_train_val(
    cases: Vec<MultiModalCase>,
    val_fraction: f64,
) -> (Vec<MultiModalCase>, Vec<MultiModalCase>) {
    let n = cases.len();
    if n < 2 || val_fraction <= 0.0 {
        return (cases, Vec::new());
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut train = cases;
    let val = train.split_off(n - n_val);
    (train, val)
}

/// Train the requested stage and persist the model with provenance.
pub fn cmd_train(cfg: &RunConfig, stage: Stage) -> Result<(), CliError> {
    let split = load_split_checked(cfg)?;
    let cases = load_cases(cfg, &split.train)?;
    let (train_cases, val_cases) = split_train_val(cases, cfg.train.val_fraction);

    let (spec, train_samples, val_samples, train_cfg) = match stage {
        Stage::Detector => {
            let spec = ModelSpec::detector_scorer(cfg.detector.window, &cfg.detector.widths);
            let mut params = cfg.detector_sample_params();
            let train_samples = build_detector_samples(&train_cases, &params)?;
            params.seed = derive_seed(cfg.seed, "detector-val-samples");
            let val_samples = build_detector_samples(&val_cases, &params)?;
            (spec, train_samples, val_samples, cfg.train_config("detector-train"))
        }
        Stage::Classifier => {
            let detector = load_model_checked(cfg, Stage::Detector)?;
            let dparams = cfg.detect_params();
            let mut detections = Vec::with_capacity(train_cases.len());
            for case in &train_cases {
                detections.push(detect(case, &detector, &dparams)?);
            }
            let mut val_detections = Vec::with_capacity(val_cases.len());
            for case in &val_cases {
                val_detections.push(detect(case, &detector, &dparams)?);
            }
            let cparams = cfg.classifier_sample_params();
            let spec = ModelSpec::classifier(cfg.classifier.patch_size, &cfg.classifier.widths);
            let train_samples = build_classifier_samples(&train_cases, &detections, &cparams)?;
            let val_samples = build_classifier_samples(&val_cases, &val_detections, &cparams)?;
            (spec, train_samples, val_samples, cfg.train_config("classifier-train"))
        }
    };

    if cfg.xai.layer >= spec.n_layers() {
        return Err(CliError::Config(format!(
            "xai.layer {} out of range for a {}-block {stage} model",
            cfg.xai.layer,
            spec.n_layers()
        )));
    }

    let (model, history) = train(&spec, &train_samples, &val_samples, &train_cfg)?;
    let provenance = serde_json::json!({
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "stage": stage.to_string(),
        "n_train_samples": train_samples.len(),
        "n_val_samples": val_samples.len(),
        "history": history,
    });
    let path = model_path(cfg, stage);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    save_model(&path, &model, provenance)?;
    let last = history.epochs.last();
    println!(
        "train {stage}: {} samples, {} epochs (best {}), final val loss {:?} -> {}",
        train_samples.len(),
        history.epochs.len(),
        history.best_epoch,
        last.and_then(|e| e.val_loss),
        path.display()
    );
    Ok(())
}

fn retained_stage1(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence >= threshold)
        .cloned()
        .collect()
}

fn retained_stage2(dets: &[Detection], t1: f64, t2: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence >= t1 && d.stage2_posterior.map_or(false, |p| p >= t2))
        .cloned()
        .collect()
}

/// Detect on the test cohort, pick both operating points and persist the
/// annotated detections.
pub fn cmd_run_pipeline(cfg: &RunConfig) -> Result<(), CliError> {
    let split = load_split_checked(cfg)?;
    let test_cases = load_cases(cfg, &split.test)?;
    let detector = load_model_checked(cfg, Stage::Detector)?;
    let classifier = load_model_checked(cfg, Stage::Classifier)?;
    let dparams = cfg.detect_params();

    let mut per_case: Vec<Vec<Detection>> = Vec::with_capacity(test_cases.len());
    for case in &test_cases {
        per_case.push(detect(case, &detector, &dparams)?);
    }
    let cohort: Vec<(Vec<Detection>, Vec<Box3>)> = per_case
        .iter()
        .zip(test_cases.iter())
        .map(|(d, c)| (d.clone(), c.lesion_boxes()))
        .collect();
    let stage1 = threshold_at_sensitivity(
        &cohort,
        cfg.xai.iou_threshold,
        cfg.xai.target_sensitivity,
        ScoreField::Confidence,
        Stage::Detector,
    )?;

    // classify the retained stage-1 detections and merge the posteriors back
    let mut classified_cohort: Vec<(Vec<Detection>, Vec<Box3>)> = Vec::new();
    for (case, dets) in test_cases.iter().zip(per_case.iter_mut()) {
        let keep_idx: Vec<usize> = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.confidence >= stage1.threshold)
            .map(|(i, _)| i)
            .collect();
        let kept: Vec<Detection> = keep_idx.iter().map(|&i| dets[i].clone()).collect();
        let kept = classify_detections(case, kept, &classifier, cfg.classifier.patch_size, cfg.patch_fill())?;
        for (slot, det) in keep_idx.iter().zip(kept.iter()) {
            dets[*slot] = det.clone();
        }
        classified_cohort.push((kept, case.lesion_boxes()));
    }
    // stage-2 threshold targets the achieved stage-1 sensitivity, so the
    // selected operating point cannot lose true positives
    let stage2 = threshold_at_sensitivity(
        &classified_cohort,
        cfg.xai.iou_threshold,
        stage1.sensitivity,
        ScoreField::Posterior,
        Stage::Classifier,
    )?;

    let hash = cfg.config_hash();
    for (case, dets) in test_cases.iter().zip(per_case.iter()) {
        let path = detections_dir(cfg).join(format!("{}.json", case.id));
        write_json(
            &path,
            &hash,
            cfg.seed,
            CaseDetections {
                case_id: case.id.clone(),
                detections: dets.clone(),
            },
        )?;
    }
    write_json(
        &operating_points_path(cfg),
        &hash,
        cfg.seed,
        OperatingPoints {
            stage1: stage1.clone(),
            stage2: stage2.clone(),
        },
    )?;
    println!(
        "run-pipeline: stage1 sens {:.3} @ {:.3} FP/patient (thr {:.4}); stage2 sens {:.3} @ {:.3} FP/patient (thr {:.4})",
        stage1.sensitivity,
        stage1.fp_per_patient,
        stage1.threshold,
        stage2.sensitivity,
        stage2.fp_per_patient,
        stage2.threshold
    );
    Ok(())
}

fn load_test_detections(
    cfg: &RunConfig,
    split: &dataset_io::SplitFile,
) -> Result<Vec<CaseDetections>, CliError> {
    let hash = cfg.config_hash();
    split
        .test
        .iter()
        .map(|e| {
            let path = detections_dir(cfg).join(format!("{}.json", e.id));
            require(&path, "run `voxrca run-pipeline` first")?;
            read_json::<CaseDetections>(&path, &hash)
        })
        .collect()
}

fn load_operating_points(cfg: &RunConfig) -> Result<OperatingPoints, CliError> {
    let path = operating_points_path(cfg);
    require(&path, "run `voxrca run-pipeline` first")?;
    read_json(&path, &cfg.config_hash())
}

/// Everything the explanation pass needs about one pipeline stage.
struct StageSamples {
    ids: Vec<String>,
    patches: Vec<Patch>,
    vectors: Vec<ConceptVector>,
    targets: Vec<f64>,
    is_tp: Vec<bool>,
}

fn build_stage_samples(
    cfg: &RunConfig,
    stage: Stage,
    cases: &[MultiModalCase],
    detections: &[CaseDetections],
    stage1_threshold: f64,
) -> Result<StageSamples, CliError> {
    let patch_size = match stage {
        Stage::Detector => cfg.detector.window,
        Stage::Classifier => cfg.classifier.patch_size,
    };
    let disc = DiscretizationSpec {
        bin_count: cfg.xai.bin_count,
    };
    let mut out = StageSamples {
        ids: Vec::new(),
        patches: Vec::new(),
        vectors: Vec::new(),
        targets: Vec::new(),
        is_tp: Vec::new(),
    };
    for (case, cd) in cases.iter().zip(detections.iter()) {
        let retained = retained_stage1(&cd.detections, stage1_threshold);
        let lesions = case.lesion_boxes();
        let m = evalx::match_detections(&case.id, &retained, &lesions, cfg.xai.iou_threshold);
        let mut tp_flags = vec![false; retained.len()];
        for &(di, _) in &m.tp {
            tp_flags[di] = true;
        }
        let patches = detection_patches(case, &retained, patch_size, cfg.patch_fill())?;
        for (i, det) in retained.iter().enumerate() {
            let id = format!("{}:{}", case.id, i);
            let mask = segment_adaptive(&case.pet, &det.bbox, cfg.xai.segment_fraction)?;
            let cv = extract_concepts(&case.pet, &case.ct, &mask, &disc, &id)?;
            let target = match stage {
                Stage::Detector => det.confidence,
                Stage::Classifier => det.stage2_posterior.ok_or_else(|| {
                    CliError::MissingArtifact(
                        "stored detections lack stage-2 posteriors; rerun `voxrca run-pipeline`"
                            .into(),
                    )
                })?,
            };
            out.ids.push(id);
            out.patches.push(patches[i].clone());
            out.vectors.push(cv);
            out.targets.push(target);
            out.is_tp.push(tp_flags[i]);
        }
    }
    Ok(out)
}

pub enum ExplainScope {
    Global,
    Local { sample: String },
}

fn global_pass(
    cfg: &RunConfig,
    stage: Stage,
    samples: &StageSamples,
) -> Result<(GlobalExplanation, Model), CliError> {
    let model = load_model_checked(cfg, stage)?;
    let output_index = match stage {
        Stage::Detector => 0,
        Stage::Classifier => 1,
    };
    let matrix = ConceptMatrix::from_vectors(&samples.vectors, &samples.targets);
    let global = rcax::global_explain(
        &model,
        cfg.xai.layer,
        output_index,
        &matrix,
        &samples.patches,
        cfg.xai.lambda,
    )?;
    Ok((global, model))
}

/// Emit explanation reports for one stage.
pub fn cmd_explain(cfg: &RunConfig, stage: Stage, scope: &ExplainScope) -> Result<(), CliError> {
    let split = load_split_checked(cfg)?;
    let cases = load_cases(cfg, &split.test)?;
    let detections = load_test_detections(cfg, &split)?;
    let ops = load_operating_points(cfg)?;
    let samples = build_stage_samples(cfg, stage, &cases, &detections, ops.stage1.threshold)?;
    if samples.ids.is_empty() {
        return Err(CliError::Numerical(
            "no retained detections to explain".into(),
        ));
    }
    let hash = cfg.config_hash();
    let dir = explain_dir(cfg, stage);

    let matrix = ConceptMatrix::from_vectors(&samples.vectors, &samples.targets);
    write_csv(&dir.join("concepts.csv"), &hash, cfg.seed, &matrix.to_csv())?;

    let (global, model) = global_pass(cfg, stage, &samples)?;
    match scope {
        ExplainScope::Global => {
            write_json(&dir.join("global_explanation.json"), &hash, cfg.seed, &global)?;
            write_csv(
                &dir.join("global_explanation.csv"),
                &hash,
                cfg.seed,
                &global.to_csv(),
            )?;
            let top = global.top_k_by_br(cfg.xai.top_k);
            let labels: Vec<String> = top.iter().map(|&i| global.rows[i].name.clone()).collect();
            let values: Vec<f64> = top
                .iter()
                .map(|&i| global.rows[i].br.unwrap_or(0.0))
                .collect();
            write_svg(
                &dir.join("br_top.svg"),
                &hash,
                cfg.seed,
                &plot::bar_chart(
                    &format!("top concepts by |bidirectional relevance| ({stage})"),
                    &labels,
                    &values,
                ),
            )?;
            println!(
                "explain {stage} global: {} samples, {} concepts explained, {} flagged -> {}",
                samples.ids.len(),
                global.rows.len(),
                global.diagnostics.len(),
                dir.display()
            );
        }
        ExplainScope::Local { sample } => {
            let idx = samples
                .ids
                .iter()
                .position(|id| id == sample)
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "sample {sample} not found; available ids look like {}",
                        samples.ids.first().cloned().unwrap_or_default()
                    ))
                })?;
            let reference: Vec<usize> = (0..samples.ids.len()).filter(|&i| samples.is_tp[i]).collect();
            if reference.len() < 2 {
                return Err(CliError::Numerical(
                    "fewer than two true-positive reference samples for class statistics".into(),
                ));
            }
            let stats = rcax::class_sensitivity_stats(&global, &reference, cfg.xai.top_k)?;
            let local = rcax::local_explain(&model, sample, &samples.patches[idx], &stats)?;
            let stem = sample.replace(':', "_");
            write_json(&dir.join(format!("local_{stem}.json")), &hash, cfg.seed, &local)?;
            let labels: Vec<String> = local.rows.iter().map(|r| r.name.clone()).collect();
            let values: Vec<f64> = local.rows.iter().map(|r| r.z.unwrap_or(0.0)).collect();
            write_svg(
                &dir.join(format!("local_{stem}.svg")),
                &hash,
                cfg.seed,
                &plot::bar_chart(
                    &format!("sensitivity z-profile vs reference class: {sample}"),
                    &labels,
                    &values,
                ),
            )?;
            println!(
                "explain {stage} local {sample}: similarity {:.4} over {} concepts",
                local.similarity,
                local.rows.len()
            );
        }
    }
    Ok(())
}

/// Shared context for evaluation commands.
struct EvalContext {
    cases: Vec<MultiModalCase>,
    detections: Vec<CaseDetections>,
    ops: OperatingPoints,
}

fn eval_context(cfg: &RunConfig) -> Result<EvalContext, CliError> {
    let split = load_split_checked(cfg)?;
    let cases = load_cases(cfg, &split.test)?;
    let detections = load_test_detections(cfg, &split)?;
    let ops = load_operating_points(cfg)?;
    Ok(EvalContext {
        cases,
        detections,
        ops,
    })
}

fn stage_matches(ctx: &EvalContext, iou: f64) -> (Vec<MatchResult>, Vec<MatchResult>) {
    let mut stage1 = Vec::new();
    let mut stage2 = Vec::new();
    for (case, cd) in ctx.cases.iter().zip(ctx.detections.iter()) {
        let lesions = case.lesion_boxes();
        let r1 = retained_stage1(&cd.detections, ctx.ops.stage1.threshold);
        let r2 = retained_stage2(
            &cd.detections,
            ctx.ops.stage1.threshold,
            ctx.ops.stage2.threshold,
        );
        stage1.push(evalx::match_detections(&case.id, &r1, &lesions, iou));
        stage2.push(evalx::match_detections(&case.id, &r2, &lesions, iou));
    }
    (stage1, stage2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    Froc,
    Roc,
    FpReduction,
    PosthocFn,
}

#[derive(Debug, Serialize)]
struct RocReport {
    auc: f64,
    n_scores: usize,
    points: Vec<voxrca_core::evalx::RocPoint>,
}

pub fn cmd_eval(cfg: &RunConfig, kind: EvalKind) -> Result<(), CliError> {
    let ctx = eval_context(cfg)?;
    let hash = cfg.config_hash();
    let dir = eval_dir(cfg);
    let iou = cfg.xai.iou_threshold;
    match kind {
        EvalKind::Froc => {
            let cohort: Vec<(Vec<Detection>, Vec<Box3>)> = ctx
                .detections
                .iter()
                .zip(ctx.cases.iter())
                .map(|(cd, c)| (cd.detections.clone(), c.lesion_boxes()))
                .collect();
            let curve = evalx::froc(&cohort, iou)?;
            write_csv(&dir.join("froc.csv"), &hash, cfg.seed, &curve.to_csv())?;
            let mut pts: Vec<(f64, f64)> = curve
                .points
                .iter()
                .map(|p| (p.fp_per_patient, p.sensitivity))
                .collect();
            pts.sort_by(|a, b| a.partial_cmp(b).expect("finite curve points"));
            write_svg(
                &dir.join("froc.svg"),
                &hash,
                cfg.seed,
                &plot::line_chart(
                    &format!("lesion FROC (IoU {iou})"),
                    "false positives per patient",
                    "sensitivity",
                    &pts,
                ),
            )?;
            println!(
                "eval froc: {} points over {} lesions / {} patients -> {}",
                curve.points.len(),
                curve.n_lesions,
                curve.n_patients,
                dir.join("froc.csv").display()
            );
        }
        EvalKind::Roc => {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (case, cd) in ctx.cases.iter().zip(ctx.detections.iter()) {
                let retained = retained_stage1(&cd.detections, ctx.ops.stage1.threshold);
                let lesions = case.lesion_boxes();
                let m = evalx::match_detections(&case.id, &retained, &lesions, iou);
                let mut tp_flags = vec![false; retained.len()];
                for &(di, _) in &m.tp {
                    tp_flags[di] = true;
                }
                for (i, det) in retained.iter().enumerate() {
                    let p = det.stage2_posterior.ok_or_else(|| {
                        CliError::MissingArtifact(
                            "stored detections lack stage-2 posteriors; rerun run-pipeline".into(),
                        )
                    })?;
                    scores.push(p);
                    labels.push(tp_flags[i]);
                }
            }
            let curve = evalx::roc_auc(&scores, &labels)?;
            write_csv(&dir.join("roc.csv"), &hash, cfg.seed, &curve.to_csv())?;
            write_json(
                &dir.join("roc.json"),
                &hash,
                cfg.seed,
                RocReport {
                    auc: curve.auc,
                    n_scores: scores.len(),
                    points: curve.points.clone(),
                },
            )?;
            let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
            write_svg(
                &dir.join("roc.svg"),
                &hash,
                cfg.seed,
                &plot::line_chart(
                    &format!("stage-2 ROC (AUC {:.3})", curve.auc),
                    "false positive rate",
                    "true positive rate",
                    &pts,
                ),
            )?;
            println!("eval roc: AUC {:.4} over {} detections", curve.auc, scores.len());
        }
        EvalKind::FpReduction => {
            let (stage1, stage2) = stage_matches(&ctx, iou);
            let report = evalx::fp_reduction_report(&stage1, &stage2);
            write_json(&dir.join("fp_reduction.json"), &hash, cfg.seed, &report)?;
            println!(
                "eval fp-reduction: {} -> {} FPs ({:.1}% removed), TPs preserved: {}, {:.2} FP/patient",
                report.fp_before,
                report.fp_after,
                report.percent,
                report.tp_preserved,
                report.fp_per_patient_after
            );
        }
        EvalKind::PosthocFn => {
            let classifier = load_model_checked(cfg, Stage::Classifier)?;
            let (stage1, _) = stage_matches(&ctx, iou);
            let records = evalx::posthoc_false_negatives(
                &ctx.cases,
                &stage1,
                &classifier,
                cfg.classifier.patch_size,
                cfg.patch_fill(),
            )?;
            let recovered = records.iter().filter(|r| r.classified_as_lesion).count();
            let total = records.len();
            #[derive(Serialize)]
            struct PosthocReport {
                n_false_negatives: usize,
                n_recovered_by_classifier: usize,
                records: Vec<voxrca_core::evalx::PosthocFnRecord>,
            }
            write_json(
                &dir.join("posthoc_fn.json"),
                &hash,
                cfg.seed,
                PosthocReport {
                    n_false_negatives: total,
                    n_recovered_by_classifier: recovered,
                    records,
                },
            )?;
            println!("eval posthoc-fn: {recovered} of {total} missed lesions classified as lesions");
        }
    }
    Ok(())
}

/// Local-explanation similarity of every retained detection against the
/// true-positive class statistics, with its match label. Used by the
/// integration suite and handy for batch analyses.
pub fn local_similarities(
    cfg: &RunConfig,
    stage: Stage,
) -> Result<Vec<(String, bool, f64)>, CliError> {
    let split = load_split_checked(cfg)?;
    let cases = load_cases(cfg, &split.test)?;
    let detections = load_test_detections(cfg, &split)?;
    let ops = load_operating_points(cfg)?;
    let samples = build_stage_samples(cfg, stage, &cases, &detections, ops.stage1.threshold)?;
    let (global, model) = global_pass(cfg, stage, &samples)?;
    let reference: Vec<usize> = (0..samples.ids.len())
        .filter(|&i| samples.is_tp[i])
        .collect();
    if reference.len() < 2 {
        return Err(CliError::Numerical(
            "fewer than two true-positive reference samples".into(),
        ));
    }
    let stats = rcax::class_sensitivity_stats(&global, &reference, cfg.xai.top_k)?;
    let mut out = Vec::with_capacity(samples.ids.len());
    for i in 0..samples.ids.len() {
        let le = rcax::local_explain(&model, &samples.ids[i], &samples.patches[i], &stats)?;
        out.push((samples.ids[i].clone(), samples.is_tp[i], le.similarity));
    }
    Ok(out)
}

/// One-call convenience used by tests: run the whole pipeline in order.
pub fn run_all(cfg: &RunConfig) -> Result<(), CliError> {
    cmd_phantom_gen(cfg)?;
    cmd_train(cfg, Stage::Detector)?;
    cmd_train(cfg, Stage::Classifier)?;
    cmd_run_pipeline(cfg)?;
    cmd_explain(cfg, Stage::Detector, &ExplainScope::Global)?;
    cmd_explain(cfg, Stage::Classifier, &ExplainScope::Global)?;
    cmd_eval(cfg, EvalKind::Froc)?;
    cmd_eval(cfg, EvalKind::Roc)?;
    cmd_eval(cfg, EvalKind::FpReduction)?;
    cmd_eval(cfg, EvalKind::PosthocFn)?;
    Ok(())
}
