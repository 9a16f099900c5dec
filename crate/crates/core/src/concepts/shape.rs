//! Shape features of a voxelized mask.

use super::ConceptError;
use crate::volgrid::Mask3;

#[derive(Debug, Clone)]
pub struct ShapeFeatures {
    /// Voxel count times voxel volume, mm^3.
    pub voxel_volume: f64,
    /// pi^(1/3) * (6V)^(2/3) / A with A the exposed voxel-face surface area.
    pub sphericity: f64,
}

pub fn shape_features(mask: &Mask3, spacing: [f64; 3]) -> Result<ShapeFeatures, ConceptError> {
    if mask.is_empty() {
        return Err(ConceptError::EmptyMask);
    }
    let dims = mask.dims();
    let count = mask.count() as f64;
    let voxel_volume = count * spacing[0] * spacing[1] * spacing[2];

    // exposed-face surface area: a face counts when its neighbor across that
    // face is outside the mask (or outside the grid)
    let face_area = [
        spacing[1] * spacing[2],
        spacing[0] * spacing[2],
        spacing[0] * spacing[1],
    ];
    let mut area = 0.0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if !mask.get(x, y, z) {
                    continue;
                }
                let p = [x as i64, y as i64, z as i64];
                for axis in 0..3 {
                    for dir in [-1i64, 1] {
                        let mut q = p;
                        q[axis] += dir;
                        let outside = q[axis] < 0 || q[axis] >= dims[axis] as i64;
                        let exposed = outside
                            || !mask.get(q[0] as usize, q[1] as usize, q[2] as usize);
                        if exposed {
                            area += face_area[axis];
                        }
                    }
                }
            }
        }
    }

    let v = voxel_volume;
    let sphericity = std::f64::consts::PI.powf(1.0 / 3.0) * (6.0 * v).powf(2.0 / 3.0) / area;
    Ok(ShapeFeatures {
        voxel_volume,
        sphericity,
    })
}
