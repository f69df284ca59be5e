//! Point cloud files.
//!
//! Text (`.xyz`, `.txt`): one point per line, space-separated decimals, with
//! a fourth label column for labeled clouds. Binary (`.bin`): a little-endian
//! `u64` point count followed by `f32` triples (quadruples when labeled).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GeometryError, LabeledCloud, PointCloud, Result};

enum Format {
    Text,
    Binary,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("xyz") | Some("txt") => Ok(Format::Text),
        Some("bin") => Ok(Format::Binary),
        _ => Err(GeometryError::UnsupportedFormat(path.display().to_string())),
    }
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| GeometryError::Parse {
                    line: i + 1,
                    message: format!("expected a number, found `{t}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != width {
            return Err(GeometryError::Parse {
                line: i + 1,
                message: format!("expected {width} columns, found {}", vals.len()),
            });
        }
        rows.push(vals);
    }
    Ok(rows)
}

fn labels_from(values: impl Iterator<Item = f64>) -> Result<Vec<u8>> {
    values
        .map(|l| match l {
            l if l == 0.0 => Ok(0),
            l if l == 1.0 => Ok(1),
            other => Err(GeometryError::InvalidArgument(format!("label {other} not in {{0,1}}"))),
        })
        .collect()
}

pub fn read_cloud_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let rows = read_rows(path.as_ref(), 3)?;
    Ok(PointCloud::new(rows.into_iter().map(|r| [r[0], r[1], r[2]]).collect()))
}

pub fn read_labeled_xyz(path: impl AsRef<Path>) -> Result<LabeledCloud> {
    let rows = read_rows(path.as_ref(), 4)?;
    let labels = labels_from(rows.iter().map(|r| r[3]))?;
    let points = PointCloud::new(rows.into_iter().map(|r| [r[0], r[1], r[2]]).collect());
    LabeledCloud::new(points, labels)
}

pub fn write_cloud_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in cloud.iter() {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labeled_xyz(path: impl AsRef<Path>, cloud: &LabeledCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (p, l) in cloud.points.iter().zip(&cloud.labels) {
        writeln!(w, "{} {} {} {}", p[0], p[1], p[2], l)?;
    }
    w.flush()?;
    Ok(())
}

fn read_binary(path: &Path, width: usize) -> Result<Vec<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    let count = u64::from_le_bytes(header) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let expected = count * width * 4;
    if bytes.len() != expected {
        return Err(GeometryError::InvalidArgument(format!(
            "{}: header announces {count} points ({expected} bytes), payload has {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_binary(path: &Path, count: usize, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(count as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cloud_binary(path: impl AsRef<Path>) -> Result<PointCloud> {
    let vals = read_binary(path.as_ref(), 3)?;
    Ok(PointCloud::new(
        vals.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect(),
    ))
}

pub fn read_labeled_binary(path: impl AsRef<Path>) -> Result<LabeledCloud> {
    let vals = read_binary(path.as_ref(), 4)?;
    let labels = labels_from(vals.chunks_exact(4).map(|c| c[3] as f64))?;
    let points = vals.chunks_exact(4).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect();
    LabeledCloud::new(PointCloud::new(points), labels)
}

pub fn write_cloud_binary(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_binary(path.as_ref(), cloud.len(), cloud.iter().flatten().map(|&v| v as f32))
}

pub fn write_labeled_binary(path: impl AsRef<Path>, cloud: &LabeledCloud) -> Result<()> {
    let values = cloud
        .points
        .iter()
        .zip(&cloud.labels)
        .flat_map(|(p, &l)| [p[0] as f32, p[1] as f32, p[2] as f32, l as f32]);
    write_binary(path.as_ref(), cloud.len(), values)
}

/// Reads an unlabeled cloud, format chosen by extension.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Text => read_cloud_xyz(path),
        Format::Binary => read_cloud_binary(path),
    }
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Text => write_cloud_xyz(path, cloud),
        Format::Binary => write_cloud_binary(path, cloud),
    }
}

pub fn write_labeled(path: impl AsRef<Path>, cloud: &LabeledCloud) -> Result<()> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Text => write_labeled_xyz(path, cloud),
        Format::Binary => write_labeled_binary(path, cloud),
    }
}
