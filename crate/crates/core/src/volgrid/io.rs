//! Volume on-disk format: a `<name>.json` header plus a `<name>.raw` binary
//! payload of little-endian 32-bit floats in x-fastest order.

use super::{GridError, Modality, Volume3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const DTYPE: &str = "float32_le";
pub const ORDER: &str = "x-fastest";

#[derive(Debug, Error)]
pub enum VolumeIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad volume header {path}: {reason}")]
    Header { path: String, reason: String },
    #[error("raw payload {path} holds {got} bytes, header implies {want}")]
    PayloadSize { path: String, got: usize, want: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub modality: Modality,
    pub dtype: String,
    pub order: String,
}

fn io_err(path: &Path, source: std::io::Error) -> VolumeIoError {
    VolumeIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Atomically write `buf` to `path` via a temp file in the same directory.
pub(crate) fn write_atomic(path: &Path, buf: &[u8]) -> Result<(), std::io::Error> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Write `<dir>/<name>.json` + `<dir>/<name>.raw`.
pub fn write_volume(dir: &Path, name: &str, vol: &Volume3) -> Result<(), VolumeIoError> {
    let header = VolumeHeader {
        dims: vol.dims(),
        spacing: vol.spacing(),
        modality: vol.modality(),
        dtype: DTYPE.to_string(),
        order: ORDER.to_string(),
    };
    let hpath = dir.join(format!("{name}.json"));
    let htext = serde_json::to_string_pretty(&header).expect("header serializes");
    write_atomic(&hpath, htext.as_bytes()).map_err(|e| io_err(&hpath, e))?;

    let rpath = dir.join(format!("{name}.raw"));
    let mut buf = Vec::with_capacity(vol.voxel_count() * 4);
    for v in vol.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&rpath, &buf).map_err(|e| io_err(&rpath, e))?;
    Ok(())
}

/// Read a volume previously written by [`write_volume`].
pub fn read_volume(dir: &Path, name: &str) -> Result<Volume3, VolumeIoError> {
    let hpath = dir.join(format!("{name}.json"));
    let htext = fs::read_to_string(&hpath).map_err(|e| io_err(&hpath, e))?;
    let header: VolumeHeader =
        serde_json::from_str(&htext).map_err(|e| VolumeIoError::Header {
            path: hpath.display().to_string(),
            reason: e.to_string(),
        })?;
    if header.dtype != DTYPE || header.order != ORDER {
        return Err(VolumeIoError::Header {
            path: hpath.display().to_string(),
            reason: format!("unsupported dtype/order {}/{}", header.dtype, header.order),
        });
    }
    let rpath = dir.join(format!("{name}.raw"));
    let raw = fs::read(&rpath).map_err(|e| io_err(&rpath, e))?;
    let n = header.dims[0] * header.dims[1] * header.dims[2];
    if raw.len() != n * 4 {
        return Err(VolumeIoError::PayloadSize {
            path: rpath.display().to_string(),
            got: raw.len(),
            want: n * 4,
        });
    }
    let mut values = Vec::with_capacity(n);
    for chunk in raw.chunks_exact(4) {
        values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    Ok(Volume3::new(
        header.dims,
        header.spacing,
        header.modality,
        values,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<f32> = (0..24).map(|i| (i as f32) * 0.37 - 3.0).collect();
        let vol = Volume3::new([4, 3, 2], [1.5, 2.0, 3.0], Modality::Pet, vals).unwrap();
        write_volume(dir.path(), "pet", &vol).unwrap();
        let raw = std::fs::read(dir.path().join("pet.raw")).unwrap();
        assert_eq!(raw.len(), 24 * 4);
        let back = read_volume(dir.path(), "pet").unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn payload_size_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume3::constant([2, 2, 2], [1.0; 3], Modality::Ct, 1.0);
        write_volume(dir.path(), "ct", &vol).unwrap();
        std::fs::write(dir.path().join("ct.raw"), [0u8; 12]).unwrap();
        assert!(matches!(
            read_volume(dir.path(), "ct"),
            Err(VolumeIoError::PayloadSize { .. })
        ));
    }
}
