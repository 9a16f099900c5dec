//! Dataset directory layout:
//! `<root>/<case_id>/{ct.json, ct.raw, pet.json, pet.raw, annotations.json}`
//! plus `<root>/split.json` recording train/test ids and seeds.
//!
//! Masks are run-length encoded over the x-fastest flattened bit string as
//! alternating run lengths, starting with a zero-run.

use super::DatasetSplit;
use crate::volgrid::io::{read_volume, write_atomic, write_volume, VolumeIoError};
use crate::volgrid::{Box3, LesionAnnotation, Mask3, MultiModalCase};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error(transparent)]
    Volume(#[from] VolumeIoError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error(transparent)]
    Grid(#[from] crate::volgrid::GridError),
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetIoError {
    DatasetIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn rle_encode(bits: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[usize], total: usize) -> Result<Vec<bool>, String> {
    let mut bits = Vec::with_capacity(total);
    let mut value = false;
    for &r in runs {
        bits.extend(std::iter::repeat(value).take(r));
        value = !value;
    }
    if bits.len() != total {
        return Err(format!("rle decodes to {} bits, expected {}", bits.len(), total));
    }
    Ok(bits)
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    center: [usize; 3],
    bbox: Box3,
    mask_rle: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationsFile {
    config_hash: String,
    case_seed: u64,
    dims: [usize; 3],
    lesions: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEntry {
    pub id: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub config_hash: String,
    pub master_seed: u64,
    pub train: Vec<SplitEntry>,
    pub test: Vec<SplitEntry>,
}

pub fn save_case(
    root: &Path,
    case: &MultiModalCase,
    case_seed: u64,
    config_hash: &str,
) -> Result<(), DatasetIoError> {
    let dir = root.join(&case.id);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write_volume(&dir, "ct", &case.ct)?;
    write_volume(&dir, "pet", &case.pet)?;
    let ann = AnnotationsFile {
        config_hash: config_hash.to_string(),
        case_seed,
        dims: case.dims(),
        lesions: case
            .annotations
            .iter()
            .map(|a| AnnotationRecord {
                center: a.center,
                bbox: a.bbox,
                mask_rle: rle_encode(a.mask.bits()),
            })
            .collect(),
    };
    let path = dir.join("annotations.json");
    let text = serde_json::to_string_pretty(&ann).expect("annotations serialize");
    write_atomic(&path, text.as_bytes()).map_err(|e| io_err(&path, e))?;
    Ok(())
}

pub fn load_case(root: &Path, id: &str) -> Result<(MultiModalCase, u64, String), DatasetIoError> {
    let dir = root.join(id);
    let ct = read_volume(&dir, "ct")?;
    let pet = read_volume(&dir, "pet")?;
    let path = dir.join("annotations.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let ann: AnnotationsFile = serde_json::from_str(&text).map_err(|e| DatasetIoError::Malformed {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let total = ann.dims[0] * ann.dims[1] * ann.dims[2];
    let mut annotations = Vec::with_capacity(ann.lesions.len());
    for rec in &ann.lesions {
        let bits = rle_decode(&rec.mask_rle, total).map_err(|reason| DatasetIoError::Malformed {
            path: path.display().to_string(),
            reason,
        })?;
        let mask = Mask3::from_bits(ann.dims, bits)?;
        let lesion = LesionAnnotation::new(rec.center, mask)?;
        if lesion.bbox != rec.bbox {
            return Err(DatasetIoError::Malformed {
                path: path.display().to_string(),
                reason: "stored bbox is not the tight box of the stored mask".into(),
            });
        }
        annotations.push(lesion);
    }
    let case = MultiModalCase::new(id.to_string(), ct, pet, annotations)?;
    Ok((case, ann.case_seed, ann.config_hash))
}

pub fn save_split(root: &Path, split: &DatasetSplit, config_hash: &str) -> Result<(), DatasetIoError> {
    std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let seed_of = |id: &str| {
        split
            .provenance
            .iter()
            .find(|(pid, _)| pid == id)
            .map(|(_, s)| *s)
            .expect("provenance covers every case")
    };
    for case in split.train.iter().chain(split.test.iter()) {
        save_case(root, case, seed_of(&case.id), config_hash)?;
    }
    let file = SplitFile {
        config_hash: config_hash.to_string(),
        master_seed: split.master_seed,
        train: split
            .train
            .iter()
            .map(|c| SplitEntry {
                id: c.id.clone(),
                seed: seed_of(&c.id),
            })
            .collect(),
        test: split
            .test
            .iter()
            .map(|c| SplitEntry {
                id: c.id.clone(),
                seed: seed_of(&c.id),
            })
            .collect(),
    };
    let path = root.join("split.json");
    let text = serde_json::to_string_pretty(&file).expect("split serializes");
    write_atomic(&path, text.as_bytes()).map_err(|e| io_err(&path, e))?;
    Ok(())
}

pub fn load_split_file(root: &Path) -> Result<SplitFile, DatasetIoError> {
    let path = root.join("split.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetIoError::Malformed {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Load the cases named by `entries`, in order.
pub fn load_cases(root: &Path, entries: &[SplitEntry]) -> Result<Vec<MultiModalCase>, DatasetIoError> {
    entries
        .iter()
        .map(|e| load_case(root, &e.id).map(|(c, _, _)| c))
        .collect()
}
