//! Volume fixture format: raw little-endian f32 voxels plus a text sidecar
//! (same basename, extension `.meta`) carrying shape and voxel spacing.

use super::Tensor;
use crate::error::{CoreError, Result};
use std::fs;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeMeta {
    /// (n, c, d, h, w)
    pub shape: [usize; 5],
    /// (z, y, x) millimetres per voxel
    pub spacing_mm: [f32; 3],
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("meta")
}

/// Write `volume` (shape [n, c, d, h, w]) as raw LE f32 plus sidecar.
pub fn write_volume(path: &Path, volume: &Tensor, spacing_mm: [f32; 3]) -> Result<()> {
    let shape = volume.shape();
    if shape.len() != 5 {
        return Err(CoreError::ShapeMismatch {
            op: "write_volume",
            detail: format!("expected [n, c, d, h, w], got {shape:?}"),
        });
    }
    let mut bytes = Vec::with_capacity(volume.len() * 4);
    for v in volume.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &bytes).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let meta = format!(
        "shape: {} {} {} {} {}\nspacing_mm: {} {} {}\n",
        shape[0], shape[1], shape[2], shape[3], shape[4], spacing_mm[0], spacing_mm[1], spacing_mm[2]
    );
    let mpath = meta_path(path);
    fs::write(&mpath, meta).map_err(|e| CoreError::io(mpath.display().to_string(), e))
}

/// Read a volume written by [`write_volume`].
pub fn read_volume(path: &Path) -> Result<(Tensor, VolumeMeta)> {
    let mpath = meta_path(path);
    let meta_text =
        fs::read_to_string(&mpath).map_err(|e| CoreError::io(mpath.display().to_string(), e))?;
    let mut shape = None;
    let mut spacing = None;
    for (lineno, line) in meta_text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("shape:") {
            let dims: Vec<usize> = rest
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CoreError::MalformedRecord {
                    path: mpath.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad shape: {e}"),
                })?;
            if dims.len() != 5 {
                return Err(CoreError::MalformedRecord {
                    path: mpath.display().to_string(),
                    line: lineno + 1,
                    msg: "shape needs 5 dims (n c d h w)".into(),
                });
            }
            shape = Some([dims[0], dims[1], dims[2], dims[3], dims[4]]);
        } else if let Some(rest) = line.strip_prefix("spacing_mm:") {
            let s: Vec<f32> = rest
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CoreError::MalformedRecord {
                    path: mpath.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad spacing: {e}"),
                })?;
            if s.len() != 3 {
                return Err(CoreError::MalformedRecord {
                    path: mpath.display().to_string(),
                    line: lineno + 1,
                    msg: "spacing needs 3 values (z y x)".into(),
                });
            }
            spacing = Some([s[0], s[1], s[2]]);
        }
    }
    let shape = shape.ok_or_else(|| CoreError::MalformedRecord {
        path: mpath.display().to_string(),
        line: 0,
        msg: "missing shape line".into(),
    })?;
    let spacing_mm = spacing.ok_or_else(|| CoreError::MalformedRecord {
        path: mpath.display().to_string(),
        line: 0,
        msg: "missing spacing_mm line".into(),
    })?;

    let bytes = fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let expected: usize = shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(CoreError::MalformedRecord {
            path: path.display().to_string(),
            line: 0,
            msg: format!("raw file has {} bytes, sidecar shape needs {expected}", bytes.len()),
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let tensor = Tensor::from_vec(&shape, data)?;
    Ok((tensor, VolumeMeta { shape, spacing_mm }))
}
