//! Run configuration: one TOML file covering every stage, overridable by
//! command-line flags (flags win). The config hash covers everything except
//! the output location, so runs into different directories with the same
//! settings produce byte-identical reports.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use voxrca_core::neuralnet::augment::AugmentationSpec;
use voxrca_core::neuralnet::train::TrainConfig;
use voxrca_core::phantom::PhantomSpec;
use voxrca_core::pipeline::{ClassifierSampleParams, DetectParams, DetectorSampleParams};
use voxrca_core::volgrid::PatchFill;

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Resolved relative to the output directory unless absolute.
    pub root: String,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            root: "dataset".into(),
            n_train: 64,
            n_test: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub lesion_count_range: (u32, u32),
    pub lesion_radius_range_mm: (f64, f64),
    pub lesion_peak_uptake_range: (f64, f64),
    pub distractor_count_range: (u32, u32),
    pub distractor_radius_range_mm: (f64, f64),
    pub distractor_peak_range: (f64, f64),
    pub body_semi_axes_mm: [f64; 3],
    pub ct_tissue_value: f32,
    pub ct_tissue_jitter: f32,
    pub ct_air_value: f32,
    pub ct_lesion_contrast: f32,
    pub pet_background: f64,
    pub noise_sigma_pet: f64,
    pub noise_sigma_ct: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let spec = PhantomSpec::default();
        Self {
            dims: spec.dims,
            spacing: spec.spacing,
            lesion_count_range: spec.lesion_count_range,
            lesion_radius_range_mm: spec.lesion_radius_range_mm,
            lesion_peak_uptake_range: spec.lesion_peak_uptake_range,
            distractor_count_range: spec.distractor_count_range,
            distractor_radius_range_mm: spec.distractor_radius_range_mm,
            distractor_peak_range: spec.distractor_peak_range,
            body_semi_axes_mm: spec.ct_body.semi_axes_mm,
            ct_tissue_value: spec.ct_body.tissue_value,
            ct_tissue_jitter: spec.ct_body.tissue_jitter,
            ct_air_value: spec.ct_body.air_value,
            ct_lesion_contrast: spec.ct_body.lesion_contrast,
            pet_background: spec.pet_background,
            noise_sigma_pet: spec.noise_sigma_pet,
            noise_sigma_ct: spec.noise_sigma_ct,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub window: usize,
    pub stride: usize,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub widths: Vec<usize>,
    pub jitter: usize,
    pub jittered_per_lesion: usize,
    pub negatives_per_case: usize,
    pub neg_uptake_ceiling: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 8,
            stride: 3,
            score_threshold: 0.2,
            nms_iou: 0.25,
            widths: vec![8, 16, 32],
            jitter: 1,
            jittered_per_lesion: 2,
            negatives_per_case: 10,
            neg_uptake_ceiling: 1.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub patch_size: usize,
    pub widths: Vec<usize>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            patch_size: 12,
            widths: vec![8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub weighted_sampling: bool,
    /// Fraction of the training cases held out for validation.
    pub val_fraction: f64,
    pub augmentation: Option<AugmentationSpec>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            lr_decay: 0.1,
            lr_step_epochs: 5,
            max_epochs: 25,
            patience: 5,
            batch_size: 4,
            weighted_sampling: true,
            val_fraction: 0.15,
            augmentation: Some(AugmentationSpec {
                translate_voxels: 1.0,
                scale_range: (0.95, 1.05),
                rotate_deg: 10.0,
                ..AugmentationSpec::default()
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct XaiConfig {
    /// Block index whose pooled activations are explained.
    pub layer: usize,
    pub lambda: f64,
    pub top_k: usize,
    /// Stage-1 operating-point target sensitivity.
    pub target_sensitivity: f64,
    pub iou_threshold: f64,
    pub bin_count: u32,
    pub segment_fraction: f64,
}

impl Default for XaiConfig {
    fn default() -> Self {
        Self {
            layer: 1,
            lambda: 1e-3,
            top_k: 10,
            target_sensitivity: 0.95,
            iou_threshold: 0.1,
            bin_count: 32,
            segment_fraction: 0.40,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub phantom: PhantomConfig,
    pub detector: DetectorConfig,
    pub classifier: ClassifierConfig,
    pub train: TrainSection,
    pub xai: XaiConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            dataset: DatasetConfig::default(),
            phantom: PhantomConfig::default(),
            detector: DetectorConfig::default(),
            classifier: ClassifierConfig::default(),
            train: TrainSection::default(),
            xai: XaiConfig::default(),
            output: OutputConfig {
                dir: "runs/out".into(),
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Hash of the effective configuration, excluding the output location.
    pub fn config_hash(&self) -> String {
        let mut hashable = self.clone();
        hashable.output = OutputConfig::default();
        let canon = serde_json::to_string(&hashable).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.output.dir)
    }

    pub fn dataset_root(&self) -> PathBuf {
        let p = Path::new(&self.dataset.root);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir().join(p)
        }
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec {
            dims: self.phantom.dims,
            spacing: self.phantom.spacing,
            lesion_count_range: self.phantom.lesion_count_range,
            lesion_radius_range_mm: self.phantom.lesion_radius_range_mm,
            lesion_peak_uptake_range: self.phantom.lesion_peak_uptake_range,
            distractor_count_range: self.phantom.distractor_count_range,
            distractor_radius_range_mm: self.phantom.distractor_radius_range_mm,
            distractor_peak_range: self.phantom.distractor_peak_range,
            ct_body: voxrca_core::phantom::CtBodyParams {
                semi_axes_mm: self.phantom.body_semi_axes_mm,
                tissue_value: self.phantom.ct_tissue_value,
                tissue_jitter: self.phantom.ct_tissue_jitter,
                air_value: self.phantom.ct_air_value,
                lesion_contrast: self.phantom.ct_lesion_contrast,
            },
            pet_background: self.phantom.pet_background,
            noise_sigma_pet: self.phantom.noise_sigma_pet,
            noise_sigma_ct: self.phantom.noise_sigma_ct,
            seed: self.seed,
        }
    }

    pub fn patch_fill(&self) -> PatchFill {
        PatchFill {
            pet: 0.0,
            ct: self.phantom.ct_air_value,
        }
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            window: self.detector.window,
            stride: self.detector.stride,
            score_threshold: self.detector.score_threshold,
            nms_iou: self.detector.nms_iou,
            fill: self.patch_fill(),
        }
    }

    pub fn detector_sample_params(&self) -> DetectorSampleParams {
        DetectorSampleParams {
            window: self.detector.window,
            jitter: self.detector.jitter,
            jittered_per_lesion: self.detector.jittered_per_lesion,
            negatives_per_case: self.detector.negatives_per_case,
            neg_uptake_ceiling: self.detector.neg_uptake_ceiling,
            fill: self.patch_fill(),
            seed: derive_seed(self.seed, "detector-samples"),
        }
    }

    pub fn classifier_sample_params(&self) -> ClassifierSampleParams {
        ClassifierSampleParams {
            patch_size: self.classifier.patch_size,
            iou_threshold: self.xai.iou_threshold,
            fill: self.patch_fill(),
        }
    }

    pub fn train_config(&self, stage: &str) -> TrainConfig {
        TrainConfig {
            initial_lr: self.train.initial_lr,
            lr_decay: self.train.lr_decay,
            lr_step_epochs: self.train.lr_step_epochs,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            batch_size: self.train.batch_size,
            weighted_sampling: self.train.weighted_sampling,
            augmentation: self.train.augmentation.clone(),
            seed: derive_seed(self.seed, stage),
        }
    }
}

/// Named sub-seed derivation from the global seed.
pub fn derive_seed(master: u64, salt: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in salt.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut state = master ^ h;
    voxrca_core::phantom::splitmix64(&mut state)
}
