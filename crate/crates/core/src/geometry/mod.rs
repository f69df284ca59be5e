//! Point sets, meshes and the sampling operations of the completion pipeline.

mod io;
mod mesh;
mod sampling;

pub use io::{
    read_cloud, read_cloud_binary, read_cloud_xyz, read_labeled_binary, read_labeled_xyz,
    write_cloud, write_cloud_binary, write_cloud_xyz, write_labeled, write_labeled_binary,
    write_labeled_xyz,
};
pub use mesh::{load_mesh, normalize, parse_obj, parse_off, sample_surface, TriangleMesh};
pub use sampling::{
    farthest_point_sample, farthest_point_sample_from, make_sample, make_sample_sized,
    merge_and_sample, merge_with_selection, minimum_density_sample, minimum_density_sample_from, sphere_split,
    MergedCloud, SampleSizes, SamplingMethod, MAX_SPLIT_ATTEMPTS,
};

use thiserror::Error;

pub type Point3 = [f64; 3];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("degenerate mesh: all vertices coincide")]
    DegenerateMesh,
    #[error("mesh has zero surface area")]
    ZeroArea,
    #[error("cannot select {requested} points from a set of {available}")]
    TooFewPoints { requested: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no sphere split with both sides non-empty after {attempts} attempts")]
    SplitFailed { attempts: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    dist2(a, b).sqrt()
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// An ordered set of 3D points in normalized shape space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|c| c.is_finite())
    }

    /// Mean of all points; the origin for an empty cloud.
    pub fn centroid(&self) -> Point3 {
        if self.points.is_empty() {
            return [0.0; 3];
        }
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = self.points.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }

    /// Points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    /// True when every coordinate is finite and no point leaves the unit ball.
    pub fn is_inscribed(&self, tol: f64) -> bool {
        self.is_finite() && self.max_norm() <= 1.0 + tol
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        Self::new(points)
    }
}

/// Points with a per-point origin label: 0 from the partial input, 1 from
/// the predicted missing part.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub points: PointCloud,
    pub labels: Vec<u8>,
}

impl LabeledCloud {
    pub fn new(points: PointCloud, labels: Vec<u8>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(GeometryError::InvalidArgument(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(GeometryError::InvalidArgument(format!("label {bad} not in {{0,1}}")));
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One training/evaluation example cut from a complete shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSample {
    pub complete: PointCloud,
    pub partial: PointCloud,
    pub missing: PointCloud,
    pub radius: f64,
    pub center: Point3,
}
