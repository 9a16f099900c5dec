//! Deterministic synthetic multi-modal dataset generator.
//!
//! Each case is a registered PET/CT pair on one grid: the CT holds a body
//! ellipsoid over air plus a small soft-tissue contrast sphere per lesion;
//! the PET holds low background uptake inside the body, one isotropic
//! Gaussian uptake blob per lesion, and PET-hot but CT-neutral distractor
//! blobs that stand in for physiological false positives. Everything is a
//! pure function of (spec, seed).

pub mod io;

use crate::volgrid::{LesionAnnotation, Mask3, Modality, MultiModalCase, Volume3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of the blob peak that defines the annotation mask. Matches the
/// adaptive segmentation fraction used downstream.
pub const MASK_LEVEL_FRACTION: f64 = 0.40;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {kind} {index} disjointly after {attempts} attempts")]
    Placement {
        kind: &'static str,
        index: usize,
        attempts: usize,
    },
    #[error(transparent)]
    Grid(#[from] crate::volgrid::GridError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CtBodyParams {
    /// Ellipsoid semi-axes in mm, centered in the grid.
    pub semi_axes_mm: [f64; 3],
    pub tissue_value: f32,
    /// Per-case uniform jitter of the tissue value, mimicking anatomical
    /// and calibration variability across patients.
    pub tissue_jitter: f32,
    pub air_value: f32,
    /// Additive CT contrast inside each lesion sphere.
    pub lesion_contrast: f32,
}

impl Default for CtBodyParams {
    fn default() -> Self {
        Self {
            semi_axes_mm: [40.0, 40.0, 28.0],
            tissue_value: 40.0,
            tissue_jitter: 18.0,
            air_value: -1000.0,
            lesion_contrast: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Inclusive range; oligometastatic bound keeps this within 0..=5.
    pub lesion_count_range: (u32, u32),
    pub lesion_radius_range_mm: (f64, f64),
    pub lesion_peak_uptake_range: (f64, f64),
    pub distractor_count_range: (u32, u32),
    pub distractor_radius_range_mm: (f64, f64),
    pub distractor_peak_range: (f64, f64),
    pub ct_body: CtBodyParams,
    /// Background uptake inside the body.
    pub pet_background: f64,
    pub noise_sigma_pet: f64,
    pub noise_sigma_ct: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [48, 48, 32],
            spacing: [2.0, 2.0, 2.0],
            lesion_count_range: (1, 5),
            lesion_radius_range_mm: (4.0, 7.0),
            lesion_peak_uptake_range: (6.0, 12.0),
            distractor_count_range: (1, 3),
            distractor_radius_range_mm: (4.0, 8.0),
            distractor_peak_range: (2.0, 4.5),
            ct_body: CtBodyParams::default(),
            pet_background: 0.4,
            noise_sigma_pet: 0.05,
            noise_sigma_ct: 12.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(PhantomError::InvalidSpec("zero grid dim".into()));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(PhantomError::InvalidSpec("non-positive spacing".into()));
        }
        if self.lesion_count_range.0 > self.lesion_count_range.1 || self.lesion_count_range.1 > 5 {
            return Err(PhantomError::InvalidSpec(
                "lesion count range must lie within 0..=5".into(),
            ));
        }
        for (lo, hi, what) in [
            (self.lesion_radius_range_mm, "lesion radius"),
            (self.distractor_radius_range_mm, "distractor radius"),
        ]
        .map(|(r, w)| (r.0, r.1, w))
        {
            if !(lo > 0.0) || hi < lo {
                return Err(PhantomError::InvalidSpec(format!("bad {what} range")));
            }
        }
        if self.noise_sigma_pet < 0.0 || self.noise_sigma_ct < 0.0 {
            return Err(PhantomError::InvalidSpec("negative noise sigma".into()));
        }
        if self.distractor_count_range.0 > self.distractor_count_range.1 {
            return Err(PhantomError::InvalidSpec("bad distractor count range".into()));
        }
        Ok(())
    }
}

/// Reproducible split of generated cases with per-case seed provenance.
#[derive(Debug)]
pub struct DatasetSplit {
    pub train: Vec<MultiModalCase>,
    pub test: Vec<MultiModalCase>,
    /// (case id, case seed) in generation order, train then test.
    pub provenance: Vec<(String, u64)>,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    center_vox: [usize; 3],
    center_mm: [f64; 3],
    radius_mm: f64,
    peak: f64,
}

impl Blob {
    /// Gaussian sigma chosen so the 40% super-level set has the drawn radius.
    fn sigma(&self) -> f64 {
        self.radius_mm / (2.0 * (1.0 / MASK_LEVEL_FRACTION).ln()).sqrt()
    }

    fn value_at(&self, p: [f64; 3]) -> f64 {
        let d2 = (0..3).map(|a| (p[a] - self.center_mm[a]).powi(2)).sum::<f64>();
        let s2 = self.sigma() * self.sigma();
        self.peak * (-d2 / (2.0 * s2)).exp()
    }
}

struct BodyEllipsoid {
    center_mm: [f64; 3],
    semi_axes: [f64; 3],
}

impl BodyEllipsoid {
    fn norm2(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center_mm[a]) / self.semi_axes[a]).powi(2))
            .sum()
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        self.norm2(p) <= 1.0
    }
}

fn voxel_center(spacing: [f64; 3], idx: [usize; 3]) -> [f64; 3] {
    [
        (idx[0] as f64 + 0.5) * spacing[0],
        (idx[1] as f64 + 0.5) * spacing[1],
        (idx[2] as f64 + 0.5) * spacing[2],
    ]
}

fn draw_range_f(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

fn draw_count(rng: &mut ChaCha8Rng, range: (u32, u32)) -> u32 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

const PLACEMENT_ATTEMPTS: usize = 2000;

/// Rejection-sample a blob center such that the whole blob sits inside the
/// body and clears every already-placed blob by the sum of the radii.
fn place_blob(
    rng: &mut ChaCha8Rng,
    spec: &PhantomSpec,
    body: &BodyEllipsoid,
    radius_mm: f64,
    placed: &[Blob],
    kind: &'static str,
    index: usize,
) -> Result<([usize; 3], [f64; 3]), PhantomError> {
    for _ in 0..PLACEMENT_ATTEMPTS {
        let idx = [
            rng.random_range(0..spec.dims[0]),
            rng.random_range(0..spec.dims[1]),
            rng.random_range(0..spec.dims[2]),
        ];
        let p = voxel_center(spec.spacing, idx);
        // blob must fit inside the body: shrink the ellipsoid by the radius
        let shrunk = BodyEllipsoid {
            center_mm: body.center_mm,
            semi_axes: [
                (body.semi_axes[0] - radius_mm).max(1e-6),
                (body.semi_axes[1] - radius_mm).max(1e-6),
                (body.semi_axes[2] - radius_mm).max(1e-6),
            ],
        };
        if !shrunk.contains(p) {
            continue;
        }
        let clear = placed.iter().all(|b| {
            let d = (0..3)
                .map(|a| (p[a] - b.center_mm[a]).powi(2))
                .sum::<f64>()
                .sqrt();
            d >= b.radius_mm + radius_mm
        });
        if clear {
            return Ok((idx, p));
        }
    }
    Err(PhantomError::Placement {
        kind,
        index,
        attempts: PLACEMENT_ATTEMPTS,
    })
}

// Per-case RNG streams, all seeded from the case seed.
const STREAM_LESIONS: u64 = 0;
const STREAM_DISTRACTORS: u64 = 1;
const STREAM_CT_NOISE: u64 = 2;
const STREAM_PET_NOISE: u64 = 3;
const STREAM_TISSUE: u64 = 4;

fn case_stream(case_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    rng.set_stream(stream);
    rng
}

/// Generate one case. Deterministic given (spec, case_seed).
pub fn generate_case(
    spec: &PhantomSpec,
    id: &str,
    case_seed: u64,
) -> Result<MultiModalCase, PhantomError> {
    spec.validate()?;
    let dims = spec.dims;
    let n = dims[0] * dims[1] * dims[2];
    let grid_mm = [
        dims[0] as f64 * spec.spacing[0],
        dims[1] as f64 * spec.spacing[1],
        dims[2] as f64 * spec.spacing[2],
    ];
    let body = BodyEllipsoid {
        center_mm: [grid_mm[0] / 2.0, grid_mm[1] / 2.0, grid_mm[2] / 2.0],
        semi_axes: spec.ct_body.semi_axes_mm,
    };

    // lesions
    let mut rng = case_stream(case_seed, STREAM_LESIONS);
    let n_lesions = draw_count(&mut rng, spec.lesion_count_range) as usize;
    let mut blobs: Vec<Blob> = Vec::new();
    for i in 0..n_lesions {
        let radius = draw_range_f(&mut rng, spec.lesion_radius_range_mm);
        let peak = draw_range_f(&mut rng, spec.lesion_peak_uptake_range);
        let (center_vox, center_mm) =
            place_blob(&mut rng, spec, &body, radius, &blobs, "lesion", i)?;
        blobs.push(Blob {
            center_vox,
            center_mm,
            radius_mm: radius,
            peak,
        });
    }
    let lesions = blobs.clone();

    // distractors: PET-hot, CT-neutral
    let mut rng = case_stream(case_seed, STREAM_DISTRACTORS);
    let n_distractors = draw_count(&mut rng, spec.distractor_count_range) as usize;
    for i in 0..n_distractors {
        let radius = draw_range_f(&mut rng, spec.distractor_radius_range_mm);
        let peak = draw_range_f(&mut rng, spec.distractor_peak_range);
        let (center_vox, center_mm) =
            place_blob(&mut rng, spec, &body, radius, &blobs, "distractor", i)?;
        blobs.push(Blob {
            center_vox,
            center_mm,
            radius_mm: radius,
            peak,
        });
    }
    let distractors = &blobs[n_lesions..];

    // CT: body ellipsoid over air, lesion contrast spheres, noise; the
    // tissue level carries a per-case offset
    let tissue = {
        let mut rng = case_stream(case_seed, STREAM_TISSUE);
        let j = spec.ct_body.tissue_jitter as f64;
        spec.ct_body.tissue_value as f64 + if j > 0.0 { rng.random_range(-j..j) } else { 0.0 }
    };
    let mut ct = vec![0f32; n];
    let mut idx = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = voxel_center(spec.spacing, [x, y, z]);
                let mut v = if body.contains(p) {
                    tissue
                } else {
                    spec.ct_body.air_value as f64
                };
                for b in &lesions {
                    let d2 = (0..3).map(|a| (p[a] - b.center_mm[a]).powi(2)).sum::<f64>();
                    if d2 <= b.radius_mm * b.radius_mm {
                        v += spec.ct_body.lesion_contrast as f64;
                    }
                }
                ct[idx] = v as f32;
                idx += 1;
            }
        }
    }
    if spec.noise_sigma_ct > 0.0 {
        let mut rng = case_stream(case_seed, STREAM_CT_NOISE);
        let normal = Normal::new(0.0, spec.noise_sigma_ct).expect("sigma validated");
        for v in ct.iter_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }

    // PET noiseless: max of body background and every blob field, so the
    // value at a lesion center voxel equals the drawn peak exactly
    let mut pet = vec![0f32; n];
    let mut idx = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = voxel_center(spec.spacing, [x, y, z]);
                let mut v: f64 = if body.contains(p) { spec.pet_background } else { 0.0 };
                for b in &blobs {
                    v = v.max(b.value_at(p));
                }
                pet[idx] = v as f32;
                idx += 1;
            }
        }
    }

    // annotation masks from the noiseless per-lesion field
    let mut annotations = Vec::with_capacity(lesions.len());
    for b in &lesions {
        let mut mask = Mask3::empty(dims);
        let level = MASK_LEVEL_FRACTION * b.peak;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = voxel_center(spec.spacing, [x, y, z]);
                    if b.value_at(p) >= level {
                        mask.set(x, y, z, true);
                    }
                }
            }
        }
        annotations.push(LesionAnnotation::new(b.center_vox, mask)?);
    }
    let _ = distractors; // distractors leave no annotation by construction

    if spec.noise_sigma_pet > 0.0 {
        let mut rng = case_stream(case_seed, STREAM_PET_NOISE);
        let normal = Normal::new(0.0, spec.noise_sigma_pet).expect("sigma validated");
        for v in pet.iter_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }

    Ok(MultiModalCase::new(
        id.to_string(),
        Volume3::new(dims, spec.spacing, Modality::Ct, ct)?,
        Volume3::new(dims, spec.spacing, Modality::Pet, pet)?,
        annotations,
    )?)
}

/// SplitMix64 step; the documented master-seed -> case-seed derivation is
/// "take successive SplitMix64 outputs, train cases first, then test cases".
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Generate a reproducible train/test split.
pub fn generate_dataset(
    spec: &PhantomSpec,
    n_train: usize,
    n_test: usize,
    master_seed: u64,
) -> Result<DatasetSplit, PhantomError> {
    spec.validate()?;
    let mut state = master_seed;
    let mut provenance = Vec::with_capacity(n_train + n_test);
    let mut jobs: Vec<(String, u64)> = Vec::with_capacity(n_train + n_test);
    for i in 0..n_train {
        let seed = splitmix64(&mut state);
        jobs.push((format!("train_{i:04}"), seed));
    }
    for i in 0..n_test {
        let seed = splitmix64(&mut state);
        jobs.push((format!("test_{i:04}"), seed));
    }
    use rayon::prelude::*;
    let cases: Vec<MultiModalCase> = jobs
        .par_iter()
        .map(|(id, seed)| generate_case(spec, id, *seed))
        .collect::<Result<_, _>>()?;
    provenance.extend(jobs.iter().cloned());
    let mut cases = cases;
    let test = cases.split_off(n_train);
    Ok(DatasetSplit {
        train: cases,
        test,
        provenance,
        master_seed,
    })
}

#[cfg(test)]
mod tests;
