//! Binary label and point-cloud files, plus JSON document helpers.
//!
//! Label files hold one little-endian `u32` per point in the packed
//! `class * 1000 + instance` encoding. Point files hold four little-endian
//! `f32` per point: `x, y, z, intensity` in meters.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::ScanLabels;

pub const LABEL_SUFFIX: &str = ".panoptic.bin";

/// One LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

pub fn label_file_name(scan_token: &str) -> String {
    format!("{scan_token}{LABEL_SUFFIX}")
}

fn read_bytes(path: &Path, record: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % record != 0 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            len: bytes.len(),
            record,
        });
    }
    Ok(bytes)
}

pub fn decode_u32_le(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn encode_u32_le(values: &[u32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_packed_labels(path: &Path) -> Result<Vec<u32>> {
    Ok(decode_u32_le(&read_bytes(path, 4)?))
}

/// Load a label file without remapping.
pub fn read_labels(path: &Path) -> Result<ScanLabels> {
    Ok(ScanLabels::from_packed(&read_packed_labels(path)?))
}

pub fn write_labels(path: &Path, labels: &ScanLabels) -> Result<()> {
    let packed = labels.to_packed()?;
    write_atomic(path, &encode_u32_le(&packed))
}

pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    let bytes = read_bytes(path, 16)?;
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes([c[k], c[k + 1], c[k + 2], c[k + 3]]);
            Point {
                x: f(0),
                y: f(4),
                z: f(8),
                intensity: f(12),
            }
        })
        .collect())
}

pub fn write_points(path: &Path, points: &[Point]) -> Result<()> {
    let bytes: Vec<u8> = points
        .iter()
        .flat_map(|p| {
            [p.x, p.y, p.z, p.intensity]
                .into_iter()
                .flat_map(f32::to_le_bytes)
        })
        .collect();
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Write through a sibling temporary file so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    let mut file = fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(tmp, e))?;
    file.sync_all().map_err(|e| Error::io(tmp, e))?;
    drop(file);
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}
