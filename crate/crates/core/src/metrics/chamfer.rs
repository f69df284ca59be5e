use super::kdtree::KdTree;
use super::{MetricsError, Result};
use crate::geometry::PointCloud;

/// Factor applied to every reported metric value.
pub const REPORT_SCALE: f64 = 10_000.0;

/// Mean squared nearest-neighbour distances in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DirectionalErrors {
    pub pred_to_gt: f64,
    pub gt_to_pred: f64,
    /// Always `pred_to_gt + gt_to_pred`.
    pub chamfer: f64,
}

impl DirectionalErrors {
    pub fn new(pred_to_gt: f64, gt_to_pred: f64) -> Self {
        Self { pred_to_gt, gt_to_pred, chamfer: pred_to_gt + gt_to_pred }
    }

    /// Values multiplied by [`REPORT_SCALE`].
    pub fn scaled(&self) -> Self {
        Self::new(self.pred_to_gt * REPORT_SCALE, self.gt_to_pred * REPORT_SCALE)
    }

    /// Componentwise mean, summed in slice order.
    pub fn mean(values: &[DirectionalErrors]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let p: f64 = values.iter().map(|v| v.pred_to_gt).sum();
        let g: f64 = values.iter().map(|v| v.gt_to_pred).sum();
        Some(Self::new(p / n, g / n))
    }
}

fn mean_nn_sq(from: &PointCloud, to: &PointCloud) -> f64 {
    let tree = KdTree::new(&to.points);
    let sum: f64 = from
        .iter()
        .map(|p| tree.nearest(p).expect("non-empty target").1)
        .sum();
    sum / from.len() as f64
}

/// Pred→GT and GT→Pred mean squared nearest-neighbour distances (exact).
pub fn directional_errors(pred: &PointCloud, gt: &PointCloud) -> Result<DirectionalErrors> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(DirectionalErrors::new(mean_nn_sq(pred, gt), mean_nn_sq(gt, pred)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist2;
    use crate::seed;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn cloud(n: usize, s: u64) -> PointCloud {
        let mut rng = seed::rng(s);
        PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
    }

    fn brute(from: &PointCloud, to: &PointCloud) -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    }

    #[test]
    fn identical_clouds() {
        let a = cloud(100, 1);
        assert_eq!(directional_errors(&a, &a).unwrap(), DirectionalErrors::new(0.0, 0.0));
    }

    #[test]
    fn hand_case() {
        let pred = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
        let gt = PointCloud::new(vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let e = directional_errors(&pred, &gt).unwrap();
        assert_eq!(e.pred_to_gt, 1.0);
        assert_eq!(e.gt_to_pred, 2.5);
        assert_eq!(e.chamfer, 3.5);
        let s = e.scaled();
        assert_eq!((s.pred_to_gt, s.gt_to_pred, s.chamfer), (10_000.0, 25_000.0, 35_000.0));
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(directional_errors(&PointCloud::default(), &cloud(3, 0)), Err(MetricsError::Empty));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn exact_symmetric_and_order_invariant(s in any::<u64>(), n in 1usize..200, m in 1usize..200) {
            let a = cloud(n, s);
            let b = cloud(m, s ^ 0xff);
            let ab = directional_errors(&a, &b).unwrap();
            let ba = directional_errors(&b, &a).unwrap();
            prop_assert_eq!(ab.pred_to_gt, ba.gt_to_pred);
            prop_assert_eq!(ab.gt_to_pred, ba.pred_to_gt);
            prop_assert_eq!(ab.chamfer, ab.pred_to_gt + ab.gt_to_pred);
            prop_assert!((ab.pred_to_gt - brute(&a, &b)).abs() <= 1e-12);
            prop_assert!((ab.gt_to_pred - brute(&b, &a)).abs() <= 1e-12);
            let mut shuffled = b.clone();
            shuffled.points.shuffle(&mut seed::rng(s));
            let sh = directional_errors(&a, &shuffled).unwrap();
            prop_assert!((sh.pred_to_gt - ab.pred_to_gt).abs() <= 1e-12);
            prop_assert!((sh.gt_to_pred - ab.gt_to_pred).abs() <= 1e-12);
        }
    }
}
