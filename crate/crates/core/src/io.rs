//! Scan and cloud file formats: KITTI-style binary scans and ASCII PLY.
//!
//! KITTI scans are little-endian f32 records (x, y, z, intensity); the
//! intensity is ignored on read and written as zero. PLY output is ASCII
//! with double-precision vertex properties so decoded clouds survive a
//! write/read round trip exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::rangegrid::Point;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Reads a KITTI-style `.bin` scan: consecutive (x, y, z, intensity) f32.
pub fn read_kitti_bin(path: &Path) -> Result<Vec<Point>, IoError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(format_err(
            path,
            format!("length {} is not a multiple of 16 bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|rec| {
            let x = f32::from_le_bytes(rec[0..4].try_into().unwrap()) as f64;
            let y = f32::from_le_bytes(rec[4..8].try_into().unwrap()) as f64;
            let z = f32::from_le_bytes(rec[8..12].try_into().unwrap()) as f64;
            [x, y, z]
        })
        .collect())
}

/// Writes a KITTI-style `.bin` scan with zero intensities.
pub fn write_kitti_bin(path: &Path, points: &[Point]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for p in points {
        for d in 0..3 {
            w.write_all(&(p[d] as f32).to_le_bytes())
                .map_err(|e| io_err(path, e))?;
        }
        w.write_all(&0.0f32.to_le_bytes()).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes an ASCII PLY cloud with x y z vertex rows.
pub fn write_ply(path: &Path, points: &[Point]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    );
    w.write_all(header.as_bytes()).map_err(|e| io_err(path, e))?;
    for p in points {
        writeln!(w, "{} {} {}", p[0], p[1], p[2]).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads an ASCII PLY cloud written by `write_ply` (or any ascii PLY whose
/// first three vertex properties are x, y, z).
pub fn read_ply(path: &Path) -> Result<Vec<Point>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(format_err(path, "missing ply magic"));
    }
    let mut vertex_count: Option<usize> = None;
    let mut ascii = false;
    for line in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("format ") {
            ascii = rest.starts_with("ascii");
        } else if let Some(rest) = line.strip_prefix("element vertex ") {
            vertex_count = rest
                .trim()
                .parse()
                .ok()
                .or_else(|| None);
            if vertex_count.is_none() {
                return Err(format_err(path, "bad vertex count"));
            }
        }
    }
    if !ascii {
        return Err(format_err(path, "only ascii PLY is supported"));
    }
    let count = vertex_count.ok_or_else(|| format_err(path, "missing vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for line in lines.take(count) {
        let mut it = line.split_whitespace();
        let mut p = [0.0f64; 3];
        for v in p.iter_mut() {
            *v = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| format_err(path, "malformed vertex row"))?;
        }
        points.push(p);
    }
    if points.len() != count {
        return Err(format_err(
            path,
            format!("expected {} vertices, found {}", count, points.len()),
        ));
    }
    Ok(points)
}

/// Writes CSV rows with a header line.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", header).map_err(|e| io_err(path, e))?;
    for row in rows {
        writeln!(w, "{}", row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
