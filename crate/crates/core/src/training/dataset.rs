use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::geometry::{load_mesh, normalize, read_cloud, sample_surface, write_cloud, PointCloud};
use crate::seed::{self, stream};

/// Surface samples per shape.
pub const DATASET_POINTS: usize = 8192;

/// Slack allowed on the unit-ball bound of loaded clouds (binary files
/// store single precision).
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(TrainError::Dataset(format!("unknown split {other:?} (expected train or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub name: String,
    pub category: String,
    pub split: Split,
    /// Normalized surface samples.
    pub cloud: PointCloud,
}

/// One line of a `manifest.csv`; `path` is relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub category: String,
    pub split: Split,
}

fn is_mesh(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("off") | Some("obj")
    )
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_path(path)?;
    reader.deserialize().map(|r| r.map_err(TrainError::from)).collect()
}

fn stem(path: &str) -> String {
    Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or("shape").to_string()
}

/// Normalized mesh surface samples, as every dataset cloud is produced.
fn sample_mesh(path: &Path, n_points: usize, seed: u64) -> Result<PointCloud> {
    Ok(sample_surface(&normalize(&load_mesh(path)?)?, n_points, seed)?)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub shapes: Vec<Shape>,
}

impl Dataset {
    /// Indices of the shapes in `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.shapes.len()).filter(|&i| self.shapes[i].split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Reads a manifest. Meshes (`.off`, `.obj`) are normalized and
    /// sampled with a seed derived from `seed` and the row index; point
    /// cloud files are taken as already normalized.
    pub fn load(manifest: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let manifest = manifest.as_ref();
        let root = manifest.parent().unwrap_or(Path::new("."));
        let mut shapes = Vec::new();
        for (i, row) in read_manifest(manifest)?.into_iter().enumerate() {
            let path = root.join(&row.path);
            let cloud = if is_mesh(&path) {
                sample_mesh(&path, DATASET_POINTS, seed::derive_seed(seed, &[stream::SURFACE, i as u64]))?
            } else {
                read_cloud(&path)?
            };
            if cloud.is_empty() || !cloud.is_inscribed(NORM_TOLERANCE) {
                return Err(TrainError::Dataset(format!("{}: cloud is empty or not normalized", path.display())));
            }
            shapes.push(Shape { name: stem(&row.path), category: row.category, split: row.split, cloud });
        }
        if shapes.is_empty() {
            return Err(TrainError::Dataset(format!("{}: no shapes", manifest.display())));
        }
        Ok(Self { shapes })
    }

    /// Writes one binary cloud per shape plus `manifest.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = dir.join("manifest.csv");
        let mut w = csv::Writer::from_path(&manifest)?;
        for shape in &self.shapes {
            let file = format!("{}.bin", shape.name);
            write_cloud(dir.join(&file), &shape.cloud)?;
            w.serialize(ManifestRow { path: file, category: shape.category.clone(), split: shape.split })?;
        }
        w.flush()?;
        Ok(manifest)
    }
}

/// Shapes written by [`prepare_dataset`], per category and split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrepareSummary {
    pub counts: BTreeMap<String, (usize, usize)>,
    pub skipped: Vec<String>,
}

impl PrepareSummary {
    pub fn total(&self) -> usize {
        self.counts.values().map(|(a, b)| a + b).sum()
    }
}

/// Samples every mesh listed in `data_dir/manifest.csv` into a binary cloud
/// in `out_dir`, with a new manifest and a `summary.csv` of counts per
/// category. Unreadable meshes are skipped with a warning.
pub fn prepare_dataset(data_dir: &Path, out_dir: &Path, n_points: usize, seed: u64) -> Result<PrepareSummary> {
    let rows = read_manifest(&data_dir.join("manifest.csv"))?;
    fs::create_dir_all(out_dir)?;
    let mut summary = PrepareSummary::default();
    let mut manifest = csv::Writer::from_path(out_dir.join("manifest.csv"))?;
    for (i, row) in rows.iter().enumerate() {
        let cloud = match sample_mesh(
            &data_dir.join(&row.path),
            n_points,
            seed::derive_seed(seed, &[stream::SURFACE, i as u64]),
        ) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("skipping {}: {e}", row.path);
                summary.skipped.push(row.path.clone());
                continue;
            }
        };
        let file = format!("{i:05}_{}.bin", stem(&row.path));
        write_cloud(out_dir.join(&file), &cloud)?;
        manifest.serialize(ManifestRow { path: file, category: row.category.clone(), split: row.split })?;
        let entry = summary.counts.entry(row.category.clone()).or_default();
        match row.split {
            Split::Train => entry.0 += 1,
            Split::Test => entry.1 += 1,
        }
    }
    manifest.flush()?;
    if summary.total() == 0 {
        return Err(TrainError::Dataset(format!("{}: no usable meshes", data_dir.display())));
    }
    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    w.write_record(["category", "train", "test"])?;
    for (cat, (train, test)) in &summary.counts {
        w.write_record([cat.as_str(), &train.to_string(), &test.to_string()])?;
    }
    w.flush()?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";

    #[test]
    fn prepare_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        fs::create_dir_all(&data).unwrap();
        fs::write(data.join("a.off"), TETRA).unwrap();
        fs::write(data.join("b.off"), TETRA).unwrap();
        fs::write(data.join("broken.off"), "OFF\n5 1 0\n0 0 0\n").unwrap();
        fs::write(
            data.join("manifest.csv"),
            "path,category,split\na.off,tet,train\nb.off,tet,test\nbroken.off,tet,train\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let summary = prepare_dataset(&data, &out, 300, 1).unwrap();
        assert_eq!(summary.counts["tet"], (1, 1));
        assert_eq!(summary.skipped, vec!["broken.off".to_string()]);
        let ds = Dataset::load(out.join("manifest.csv"), 0).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.indices(Split::Test), vec![1]);
        assert!(ds.shapes.iter().all(|s| s.cloud.len() == 300 && s.cloud.is_inscribed(1e-6)));
        let summary_csv = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(summary_csv, "category,train,test\ntet,1,1\n");

        // meshes can also be listed directly
        let direct = Dataset::load(data.join("manifest.csv"), 0);
        assert!(direct.is_err(), "the broken mesh is an error when loading directly");
    }

    #[test]
    fn save_then_load_keeps_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let ds = super::super::generate_toy_dataset(3, 2);
        let manifest = ds.save(dir.path()).unwrap();
        let back = Dataset::load(&manifest, 0).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in ds.shapes.iter().zip(&back.shapes) {
            assert_eq!((&a.name, &a.category, a.split), (&b.name, &b.category, b.split));
            for (p, q) in a.cloud.iter().zip(b.cloud.iter()) {
                assert!((0..3).all(|k| (p[k] - q[k]).abs() < 1e-6));
            }
        }
    }

    #[test]
    fn unnormalized_clouds_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_cloud(dir.path().join("big.xyz"), &PointCloud::new(vec![[2.0, 0.0, 0.0]])).unwrap();
        fs::write(dir.path().join("manifest.csv"), "path,category,split\nbig.xyz,x,train\n").unwrap();
        assert!(Dataset::load(dir.path().join("manifest.csv"), 0).is_err());
    }
}
