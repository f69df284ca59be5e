use super::{Matching, MetricsError, Result};
use crate::geometry::{dist, PointCloud};

/// Optimal EMD matching by the Hungarian method (shortest augmenting paths
/// with potentials, O(n³) time, n×n cost matrix). Intended as an oracle.
pub fn emd_exact(s1: &PointCloud, s2: &PointCloud) -> Result<Matching> {
    if s1.len() != s2.len() {
        return Err(MetricsError::SizeMismatch(s1.len(), s2.len()));
    }
    let n = s1.len();
    if n == 0 {
        return Ok(Matching { assignment: Vec::new(), cost: 0.0 });
    }
    let cost: Vec<f64> = s1
        .iter()
        .flat_map(|x| s2.iter().map(move |y| dist(x, y)))
        .collect();
    let assignment = solve(n, &cost);
    Matching::from_assignment(s1, s2, assignment)
}

/// Minimum-cost perfect assignment for a square row-major cost matrix;
/// returns the column of every row.
fn solve(n: usize, cost: &[f64]) -> Vec<usize> {
    // 1-based rows/columns, index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    assignment
}
