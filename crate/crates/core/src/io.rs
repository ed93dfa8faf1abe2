//! On-disk interchange formats.
//!
//! Every artifact is plain JSON or JSON-plus-raw so experiments stay
//! diffable and bit-reproducible:
//!
//! - **Volume**: a JSON header `{"dims", "spacing_mm", "dtype", "order"}`
//!   next to a raw little-endian payload; the raw file shares the header's
//!   stem with a `.raw` extension. `dtype` is `"f32le"` (scalar) or
//!   `"u16le"` (labels); `order` is always `"x-fastest"`.
//! - **Activation stack**: header `{"n_maps", "dims", "dtype":"f32le"}`
//!   plus concatenated raw maps in the same layout.
//! - **Keypoints**: CSV with header `index,x,y,z` or `index,x,y,z,weight`,
//!   coordinates normalized, indices contiguous from 0.
//! - **Transform**: the tagged JSON object produced by [`Transform`]'s
//!   serialization.
//!
//! All writers stage to a temporary file and atomically rename, so readers
//! never observe partial artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Transform;
use crate::geometry::{KeypointSet, Point3};
use crate::keypoints::ActivationStack;
use crate::volume::{Volume3D, VolumeData};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| format_err(path, format!("cannot read: {e}")))
}

/// Writes `bytes` to `path` atomically: the data lands in a sibling
/// temporary file first and is renamed into place, so a crash mid-write
/// never leaves a truncated artifact at `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| format_err(path, "path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let tmp = path.with_file_name(format!("{file_name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| format_err(&tmp, format!("cannot write: {e}")))?;
    std::fs::rename(&tmp, path).map_err(|e| format_err(path, format!("cannot rename into place: {e}")))
}

/// Path of the raw payload belonging to a JSON header: same stem, `.raw`
/// extension. Errors when the header path itself ends in `.raw`.
pub fn raw_sidecar(header_path: &Path) -> Result<PathBuf> {
    if header_path.extension().is_some_and(|e| e == "raw") {
        return Err(format_err(
            header_path,
            "header path must not use the .raw extension (reserved for the payload)",
        ));
    }
    Ok(header_path.with_extension("raw"))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    order: String,
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn header_json<T: Serialize>(header: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(header).expect("header serialization cannot fail");
    bytes.push(b'\n');
    bytes
}

/// Writes a volume as `path` (JSON header) plus the `.raw` payload.
pub fn write_volume(path: &Path, vol: &Volume3D) -> Result<()> {
    let raw_path = raw_sidecar(path)?;
    let (dtype, payload) = match vol.data() {
        VolumeData::Scalar(values) => ("f32le", f32_bytes(values)),
        VolumeData::Labels(values) => {
            let mut bytes = Vec::with_capacity(values.len() * 2);
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            ("u16le", bytes)
        }
    };
    let (x, y, z) = vol.dims();
    let header = VolumeHeader {
        dims: [x, y, z],
        spacing_mm: vol.spacing_mm(),
        dtype: dtype.to_string(),
        order: "x-fastest".to_string(),
    };
    atomic_write(path, &header_json(&header))?;
    atomic_write(&raw_path, &payload)
}

/// Reads a volume written by [`write_volume`].
pub fn read_volume(path: &Path) -> Result<Volume3D> {
    let header: VolumeHeader = serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| format_err(path, format!("invalid header: {e}")))?;
    if header.order != "x-fastest" {
        return Err(format_err(
            path,
            format!("unsupported voxel order {:?}", header.order),
        ));
    }
    let raw_path = raw_sidecar(path)?;
    let raw = read_bytes(&raw_path)?;
    let dims = (header.dims[0], header.dims[1], header.dims[2]);
    let voxels = header.dims.iter().product::<usize>();
    match header.dtype.as_str() {
        "f32le" => {
            if raw.len() != voxels * 4 {
                return Err(format_err(
                    &raw_path,
                    format!("expected {} bytes for f32le, got {}", voxels * 4, raw.len()),
                ));
            }
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Volume3D::scalar(dims, header.spacing_mm, data)
        }
        "u16le" => {
            if raw.len() != voxels * 2 {
                return Err(format_err(
                    &raw_path,
                    format!("expected {} bytes for u16le, got {}", voxels * 2, raw.len()),
                ));
            }
            let data = raw
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            Volume3D::labels(dims, header.spacing_mm, data)
        }
        other => Err(format_err(path, format!("unsupported dtype {other:?}"))),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StackHeader {
    n_maps: usize,
    dims: [usize; 3],
    dtype: String,
}

/// Writes an activation stack as `path` (JSON header) plus the `.raw`
/// payload of concatenated maps.
pub fn write_activation_stack(path: &Path, acts: &ActivationStack) -> Result<()> {
    let raw_path = raw_sidecar(path)?;
    let (x, y, z) = acts.dims();
    let header = StackHeader {
        n_maps: acts.n_maps(),
        dims: [x, y, z],
        dtype: "f32le".to_string(),
    };
    let mut payload = Vec::with_capacity(acts.n_maps() * x * y * z * 4);
    for map in acts.maps() {
        payload.extend_from_slice(&f32_bytes(map));
    }
    atomic_write(path, &header_json(&header))?;
    atomic_write(&raw_path, &payload)
}

/// Reads an activation stack written by [`write_activation_stack`].
pub fn read_activation_stack(path: &Path) -> Result<ActivationStack> {
    let header: StackHeader = serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| format_err(path, format!("invalid header: {e}")))?;
    if header.dtype != "f32le" {
        return Err(format_err(
            path,
            format!("unsupported dtype {:?}", header.dtype),
        ));
    }
    let raw_path = raw_sidecar(path)?;
    let raw = read_bytes(&raw_path)?;
    let voxels = header.dims.iter().product::<usize>();
    let expected = header
        .n_maps
        .checked_mul(voxels)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(path, "header sizes overflow"))?;
    if raw.len() != expected {
        return Err(format_err(
            &raw_path,
            format!("expected {expected} bytes, got {}", raw.len()),
        ));
    }
    let maps = raw
        .chunks_exact(voxels * 4)
        .map(|chunk| {
            chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        })
        .collect();
    ActivationStack::new((header.dims[0], header.dims[1], header.dims[2]), maps)
}

/// Writes keypoints (optionally with per-point weights) as CSV with header
/// `index,x,y,z[,weight]`.
pub fn write_keypoints_csv(
    path: &Path,
    keypoints: &KeypointSet,
    weights: Option<&[f64]>,
) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != keypoints.len() {
            return Err(Error::MismatchedLengths {
                left: keypoints.len(),
                right: w.len(),
                what: "keypoints vs weights",
            });
        }
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let write_err = |e: csv::Error| format_err(path, format!("csv encoding failed: {e}"));
    match weights {
        Some(w) => {
            writer
                .write_record(["index", "x", "y", "z", "weight"])
                .map_err(write_err)?;
            for (i, p) in keypoints.iter().enumerate() {
                writer
                    .serialize((i, p.x, p.y, p.z, w[i]))
                    .map_err(write_err)?;
            }
        }
        None => {
            writer
                .write_record(["index", "x", "y", "z"])
                .map_err(write_err)?;
            for (i, p) in keypoints.iter().enumerate() {
                writer.serialize((i, p.x, p.y, p.z)).map_err(write_err)?;
            }
        }
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| format_err(path, format!("csv encoding failed: {e}")))?;
    atomic_write(path, &bytes)
}

/// Reads a keypoint CSV, returning the points and the weight column when
/// present. Weights are returned raw (not normalized).
pub fn read_keypoints_csv(path: &Path) -> Result<(KeypointSet, Option<Vec<f64>>)> {
    let bytes = read_bytes(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| format_err(path, format!("invalid csv: {e}")))?
        .clone();
    let with_weights = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["index", "x", "y", "z"] => false,
        ["index", "x", "y", "z", "weight"] => true,
        other => {
            return Err(format_err(
                path,
                format!("unexpected csv header {other:?} (want index,x,y,z[,weight])"),
            ))
        }
    };
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, format!("invalid csv row {row}: {e}")))?;
        let field = |idx: usize| -> Result<f64> {
            record[idx]
                .trim()
                .parse::<f64>()
                .map_err(|e| format_err(path, format!("row {row} column {idx}: {e}")))
        };
        let index = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| format_err(path, format!("row {row} index: {e}")))?;
        if index != row {
            return Err(format_err(
                path,
                format!("row {row} carries index {index}; indices must be contiguous from 0"),
            ));
        }
        points.push(Point3::new(field(1)?, field(2)?, field(3)?));
        if with_weights {
            weights.push(field(4)?);
        }
    }
    let set = KeypointSet::new(points)?;
    Ok((set, with_weights.then_some(weights)))
}

/// Writes a transform as tagged JSON.
pub fn write_transform_json(path: &Path, transform: &Transform) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(transform)
        .map_err(|e| format_err(path, format!("cannot encode transform: {e}")))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Reads a transform written by [`write_transform_json`], revalidating its
/// invariants.
pub fn read_transform_json(path: &Path) -> Result<Transform> {
    serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| format_err(path, format!("invalid transform: {e}")))
}
