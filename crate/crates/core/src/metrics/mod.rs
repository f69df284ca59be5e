//! Completion metrics: directional squared-distance errors (Chamfer) and the
//! earth mover's distance as an exact oracle and as a linear-memory auction.

mod auction;
mod chamfer;
mod hungarian;
pub mod kdtree;

pub use auction::{emd_approx, ApproxEmd, AuctionParams};
pub use chamfer::{directional_errors, DirectionalErrors, REPORT_SCALE};
pub use hungarian::emd_exact;

use thiserror::Error;

use crate::geometry::{dist, PointCloud};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty point cloud")]
    Empty,
    #[error("point sets differ in size: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// A bijection between two equal-size point sets and its mean matched
/// Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `assignment[i]` is the index in the second set matched to point `i`.
    pub assignment: Vec<usize>,
    pub cost: f64,
}

impl Matching {
    /// Builds a matching and computes its cost, summing in index order.
    pub fn from_assignment(s1: &PointCloud, s2: &PointCloud, assignment: Vec<usize>) -> Result<Self> {
        if s1.len() != s2.len() {
            return Err(MetricsError::SizeMismatch(s1.len(), s2.len()));
        }
        if assignment.len() != s1.len() || !is_permutation(&assignment) {
            return Err(MetricsError::InvalidArgument("assignment is not a bijection".into()));
        }
        let cost = matched_cost(s1, s2, &assignment);
        Ok(Self { assignment, cost })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

pub(crate) fn matched_cost(s1: &PointCloud, s2: &PointCloud, assignment: &[usize]) -> f64 {
    if assignment.is_empty() {
        return 0.0;
    }
    let sum: f64 = s1
        .iter()
        .zip(assignment)
        .map(|(x, &j)| dist(x, &s2.points[j]))
        .sum();
    sum / assignment.len() as f64
}

pub fn is_permutation(assignment: &[usize]) -> bool {
    let mut seen = vec![false; assignment.len()];
    assignment.iter().all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
}

/// Gradient of the mean matched distance with respect to every point of
/// `s1`, holding the matching fixed. Coincident pairs get a zero gradient.
pub fn emd_gradient(s1: &PointCloud, s2: &PointCloud, matching: &Matching) -> Vec<[f64; 3]> {
    let n = matching.len().max(1) as f64;
    s1.iter()
        .zip(&matching.assignment)
        .map(|(x, &j)| {
            let y = &s2.points[j];
            let d = dist(x, y);
            if d < 1e-12 {
                [0.0; 3]
            } else {
                let s = 1.0 / (n * d);
                [(x[0] - y[0]) * s, (x[1] - y[1]) * s, (x[2] - y[2]) * s]
            }
        })
        .collect()
}
