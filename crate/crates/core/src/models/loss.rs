use crate::geometry::PointCloud;
use crate::metrics::{emd_approx, emd_exact, emd_gradient, AuctionParams, Matching};

use super::Result;

/// How the earth mover's distance is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmdMode {
    /// Auction approximation (training default).
    Approx(AuctionParams),
    /// Exact assignment; cubic, for small sets and oracles.
    Exact,
}

impl Default for EmdMode {
    fn default() -> Self {
        EmdMode::Approx(AuctionParams::default())
    }
}

impl EmdMode {
    /// Optimal (or near-optimal) matching between two equal-size sets.
    pub fn matching(&self, s1: &PointCloud, s2: &PointCloud) -> Result<(Matching, bool)> {
        Ok(match self {
            EmdMode::Approx(p) => {
                let r = emd_approx(s1, s2, p)?;
                (r.matching, r.converged)
            }
            EmdMode::Exact => (emd_exact(s1, s2)?, true),
        })
    }
}

/// Sum of the missing-region and refined-cloud distances with their
/// gradients on the predicted points.
#[derive(Debug, Clone)]
pub struct JointLoss {
    pub total: f64,
    pub missing: f64,
    pub refined: f64,
    pub grad_missing: Vec<[f64; 3]>,
    pub grad_refined: Vec<[f64; 3]>,
    /// False when an auction ran out of its bid budget.
    pub converged: bool,
}

pub fn joint_loss(
    missing_pred: &PointCloud,
    missing_gt: &PointCloud,
    refined: &PointCloud,
    complete_gt: &PointCloud,
    mode: &EmdMode,
) -> Result<JointLoss> {
    let (m1, c1) = mode.matching(missing_pred, missing_gt)?;
    let (m2, c2) = mode.matching(refined, complete_gt)?;
    Ok(JointLoss {
        total: m1.cost + m2.cost,
        missing: m1.cost,
        refined: m2.cost,
        grad_missing: emd_gradient(missing_pred, missing_gt, &m1),
        grad_refined: emd_gradient(refined, complete_gt, &m2),
        converged: c1 && c2,
    })
}
