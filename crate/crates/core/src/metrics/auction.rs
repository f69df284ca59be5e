//! Approximate EMD by a forward auction with ε-scaling.
//!
//! Distances are evaluated on the fly during each bid; the auxiliary state
//! (prices, assignment, a value buffer) is linear in the number of points.

use std::collections::VecDeque;

use super::{Matching, MetricsError, Result};
use crate::geometry::{dist, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuctionParams {
    /// ε of the first scale.
    pub eps_start: f64,
    /// ε of the last scale; `None` means `1e-4 / n`.
    pub eps_end: Option<f64>,
    /// Factor between successive ε values.
    pub eps_factor: f64,
    /// Bid budget per scale; `None` means `50 n`.
    pub max_bids_per_scale: Option<usize>,
}

impl Default for AuctionParams {
    fn default() -> Self {
        Self {
            eps_start: 1.0,
            eps_end: None,
            eps_factor: 0.25,
            max_bids_per_scale: None,
        }
    }
}

impl AuctionParams {
    pub fn eps_schedule(&self, n: usize) -> Vec<f64> {
        let end = self.eps_end.unwrap_or(1e-4 / n.max(1) as f64);
        let mut eps = self.eps_start.max(end);
        let mut out = Vec::new();
        while eps > end {
            out.push(eps);
            eps *= self.eps_factor;
        }
        out.push(end);
        out
    }
}

/// Result of [`emd_approx`]. The matching is always a complete bijection;
/// `converged` is false when a scale ran out of bids and the remaining
/// points were paired greedily.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxEmd {
    pub matching: Matching,
    pub converged: bool,
    pub bids: usize,
}

const UNASSIGNED: usize = usize::MAX;

/// Per-bid scan over all targets: the best target for a source, its value
/// and the second-best value (lowest index among equal best values).
trait Scan {
    fn best_two(&mut self, x: &[f64; 3]) -> (usize, f64, f64);
    fn raise_price(&mut self, j: usize, delta: f64);
}

/// Double-precision scan with target coordinates in structure-of-arrays
/// layout, running independent lanes so the loop vectorizes.
struct ScanF64 {
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Vec<f64>,
    prices: Vec<f64>,
    values: Vec<f64>,
}

impl ScanF64 {
    fn new(cloud: &PointCloud) -> Self {
        let n = cloud.len();
        Self {
            xs: cloud.iter().map(|p| p[0]).collect(),
            ys: cloud.iter().map(|p| p[1]).collect(),
            zs: cloud.iter().map(|p| p[2]).collect(),
            prices: vec![0.0; n],
            values: vec![0.0; 8],
        }
    }
}

impl Scan for ScanF64 {
    #[inline]
    fn best_two(&mut self, x: &[f64; 3]) -> (usize, f64, f64) {
        const LANES: usize = 8;
        let mut b1 = [f64::NEG_INFINITY; LANES];
        let mut b2 = [f64::NEG_INFINITY; LANES];
        let mut i1 = [usize::MAX; LANES];
        let full = self.xs.len() / LANES * LANES;
        for c in (0..full).step_by(LANES) {
            let (cx, cy, cz) = (&self.xs[c..c + LANES], &self.ys[c..c + LANES], &self.zs[c..c + LANES]);
            let cp = &self.prices[c..c + LANES];
            for l in 0..LANES {
                let (dx, dy, dz) = (cx[l] - x[0], cy[l] - x[1], cz[l] - x[2]);
                let v = -(dx * dx + dy * dy + dz * dz).sqrt() - cp[l];
                let better = v > b1[l];
                b2[l] = fmax(b2[l], fmin(b1[l], v));
                i1[l] = if better { c + l } else { i1[l] };
                b1[l] = if better { v } else { b1[l] };
            }
        }
        let n = self.xs.len();
        for (l, j) in (full..n).enumerate() {
            self.values[l] = {
                let (dx, dy, dz) = (self.xs[j] - x[0], self.ys[j] - x[1], self.zs[j] - x[2]);
                -(dx * dx + dy * dy + dz * dz).sqrt() - self.prices[j]
            };
        }
        merge_lanes(&mut b1, &mut b2, &mut i1, &self.values[..n - full], full)
    }

    fn raise_price(&mut self, j: usize, delta: f64) {
        self.prices[j] += delta;
    }
}

/// Single-precision scan, about three times faster. Prices accumulate in
/// double precision; the scan reads a rounded shadow copy. Only used when
/// every ε step is far above the rounding error (see [`scan_error_bound`]).
struct ScanF32 {
    xs: Vec<f32>,
    ys: Vec<f32>,
    zs: Vec<f32>,
    prices: Vec<f64>,
    shadow: Vec<f32>,
}

impl ScanF32 {
    fn new(cloud: &PointCloud) -> Self {
        let n = cloud.len();
        Self {
            xs: cloud.iter().map(|p| p[0] as f32).collect(),
            ys: cloud.iter().map(|p| p[1] as f32).collect(),
            zs: cloud.iter().map(|p| p[2] as f32).collect(),
            prices: vec![0.0; n],
            shadow: vec![0.0; n],
        }
    }
}

impl Scan for ScanF32 {
    #[inline]
    fn best_two(&mut self, x: &[f64; 3]) -> (usize, f64, f64) {
        const LANES: usize = 16;
        let x = x.map(|c| c as f32);
        let mut b1 = [f32::NEG_INFINITY; LANES];
        let mut b2 = [f32::NEG_INFINITY; LANES];
        let mut i1 = [u32::MAX; LANES];
        let full = self.xs.len() / LANES * LANES;
        for c in (0..full).step_by(LANES) {
            let (cx, cy, cz) = (&self.xs[c..c + LANES], &self.ys[c..c + LANES], &self.zs[c..c + LANES]);
            let cp = &self.shadow[c..c + LANES];
            for l in 0..LANES {
                let (dx, dy, dz) = (cx[l] - x[0], cy[l] - x[1], cz[l] - x[2]);
                let v = -(dx * dx + dy * dy + dz * dz).sqrt() - cp[l];
                let better = v > b1[l];
                let lo = if b1[l] < v { b1[l] } else { v };
                b2[l] = if b2[l] > lo { b2[l] } else { lo };
                i1[l] = if better { (c + l) as u32 } else { i1[l] };
                b1[l] = if better { v } else { b1[l] };
            }
        }
        // tail entries land in lanes holding only lower indices, so the
        // strict comparison keeps the lowest index on ties
        for (l, j) in (full..self.xs.len()).enumerate() {
            let (dx, dy, dz) = (self.xs[j] - x[0], self.ys[j] - x[1], self.zs[j] - x[2]);
            let v = -(dx * dx + dy * dy + dz * dz).sqrt() - self.shadow[j];
            b2[l] = b2[l].max(b1[l].min(v));
            if v > b1[l] {
                b1[l] = v;
                i1[l] = j as u32;
            }
        }
        let mut best = 0;
        for l in 1..LANES {
            if b1[l] > b1[best] || (b1[l] == b1[best] && i1[l] < i1[best]) {
                best = l;
            }
        }
        let mut second = b2[best];
        for l in (0..LANES).filter(|&l| l != best) {
            second = second.max(b1[l]);
        }
        let (best_i, best, second) = (i1[best] as usize, b1[best], second);
        (best_i, f64::from(best), f64::from(second))
    }

    fn raise_price(&mut self, j: usize, delta: f64) {
        self.prices[j] += delta;
        self.shadow[j] = self.prices[j] as f32;
    }
}

/// Upper bound on the value error of the single-precision scan when all
/// coordinates and prices are at most `scale` in magnitude.
pub(crate) fn scan_error_bound(scale: f64) -> f64 {
    // rounding of both points, the squared distance, the root and the price
    16.0 * f64::from(f32::EPSILON) * scale.max(1.0)
}

#[inline]
fn fmax(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

#[inline]
fn fmin(a: f64, b: f64) -> f64 {
    if a < b {
        a
    } else {
        b
    }
}

#[cfg(test)]
/// Index of the largest value (lowest index on ties), the largest value and
/// the second largest. Runs eight independent lanes so the loop vectorizes.
fn top_two(values: &[f64]) -> (usize, f64, f64) {
    const LANES: usize = 8;
    let mut b1 = [f64::NEG_INFINITY; LANES];
    let mut b2 = [f64::NEG_INFINITY; LANES];
    let mut i1 = [usize::MAX; LANES];
    let chunks = values.chunks_exact(LANES);
    let tail = chunks.remainder();
    for (c, chunk) in chunks.enumerate() {
        for l in 0..LANES {
            let v = chunk[l];
            let better = v > b1[l];
            b2[l] = fmax(b2[l], fmin(b1[l], v));
            i1[l] = if better { c * LANES + l } else { i1[l] };
            b1[l] = if better { v } else { b1[l] };
        }
    }
    merge_lanes(&mut b1, &mut b2, &mut i1, tail, values.len() - tail.len())
}

/// Folds `tail` (indices from `base`) into the lanes and reduces them.
/// Tail entries land in lanes holding only lower indices, so the strict
/// comparison keeps the lowest index on ties.
fn merge_lanes<const L: usize>(
    b1: &mut [f64; L],
    b2: &mut [f64; L],
    i1: &mut [usize; L],
    tail: &[f64],
    base: usize,
) -> (usize, f64, f64) {
    for (l, &v) in tail.iter().enumerate() {
        b2[l] = fmax(b2[l], fmin(b1[l], v));
        if v > b1[l] {
            b1[l] = v;
            i1[l] = base + l;
        }
    }
    let mut best = 0;
    for l in 1..L {
        if b1[l] > b1[best] || (b1[l] == b1[best] && i1[l] < i1[best]) {
            best = l;
        }
    }
    let mut second = b2[best];
    for l in (0..L).filter(|&l| l != best) {
        second = fmax(second, b1[l]);
    }
    (i1[best], b1[best], second)
}

/// Gauss-Seidel forward auction over the ε schedule. Prices carry over
/// between scales; assignments restart.
fn run_auction<S: Scan>(
    s1: &PointCloud,
    scan: &mut S,
    schedule: &[f64],
    params: &AuctionParams,
) -> (Vec<usize>, Vec<usize>, bool, usize) {
    let n = s1.len();
    let budget = params.max_bids_per_scale.unwrap_or(50 * n);
    let mut assigned = vec![UNASSIGNED; n];
    let mut owner = vec![UNASSIGNED; n];
    let mut converged = true;
    let mut total_bids = 0;
    for &eps in schedule {
        assigned.fill(UNASSIGNED);
        owner.fill(UNASSIGNED);
        let mut queue: VecDeque<usize> = (0..n).collect();
        let mut bids = 0;
        while let Some(i) = queue.pop_front() {
            if bids == budget {
                queue.push_front(i);
                converged = false;
                break;
            }
            bids += 1;
            let (j, v1, v2) = scan.best_two(&s1.points[i]);
            scan.raise_price(j, v1 - v2 + eps);
            let previous = std::mem::replace(&mut owner[j], i);
            if previous != UNASSIGNED {
                assigned[previous] = UNASSIGNED;
                queue.push_back(previous);
            }
            assigned[i] = j;
        }
        total_bids += bids;
        if !converged {
            break;
        }
    }
    (assigned, owner, converged, total_bids)
}

/// Near-optimal EMD matching. When the auction converges the mean matched
/// distance exceeds the optimum by at most the final ε; coarse final ε
/// values switch to a faster single-precision scan and the bound loosens to
/// 1.1 times the final ε.
pub fn emd_approx(s1: &PointCloud, s2: &PointCloud, params: &AuctionParams) -> Result<ApproxEmd> {
    if s1.len() != s2.len() {
        return Err(MetricsError::SizeMismatch(s1.len(), s2.len()));
    }
    if !(params.eps_start > 0.0) || params.eps_end.is_some_and(|e| !(e > 0.0)) {
        return Err(MetricsError::InvalidArgument("eps must be positive".into()));
    }
    if !(params.eps_factor > 0.0 && params.eps_factor < 1.0) {
        return Err(MetricsError::InvalidArgument("eps_factor must lie in (0, 1)".into()));
    }
    let n = s1.len();
    if n <= 1 {
        let matching = Matching::from_assignment(s1, s2, (0..n).collect())?;
        return Ok(ApproxEmd { matching, converged: true, bids: 0 });
    }

    let schedule = params.eps_schedule(n);
    let end = *schedule.last().expect("schedule is never empty");
    // coordinates, distances and prices all stay below this
    let scale = 3.0 * (s1.iter().chain(s2.iter()).flat_map(|p| p.iter()).fold(0.0f64, |m, c| m.max(c.abs())))
        + params.eps_start;
    let (mut assigned, mut owner, converged, total_bids) = if end >= 32.0 * scan_error_bound(scale) {
        run_auction(s1, &mut ScanF32::new(s2), &schedule, params)
    } else {
        run_auction(s1, &mut ScanF64::new(s2), &schedule, params)
    };
    if !converged {
        // pair the leftovers with the nearest free target
        for i in 0..n {
            if assigned[i] != UNASSIGNED {
                continue;
            }
            let x = &s1.points[i];
            let j = (0..n)
                .filter(|&j| owner[j] == UNASSIGNED)
                .min_by(|&a, &b| dist(x, &s2.points[a]).total_cmp(&dist(x, &s2.points[b])))
                .expect("a free target exists while a source is unassigned");
            owner[j] = i;
            assigned[i] = j;
        }
    }
    let matching = Matching::from_assignment(s1, s2, assigned)?;
    Ok(ApproxEmd { matching, converged, bids: total_bids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{emd_exact, is_permutation, matched_cost};
    use crate::seed;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn cloud(n: usize, s: u64) -> PointCloud {
        let mut rng = seed::rng(s);
        PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
    }

    #[test]
    fn top_two_matches_scan() {
        let mut rng = seed::rng(9);
        for n in [2usize, 3, 7, 8, 9, 16, 31, 100] {
            for _ in 0..50 {
                // coarse values force ties
                let v: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..5u8))).collect();
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let first = v.iter().position(|&x| x == max).unwrap();
                let second = v.iter().enumerate().filter(|&(i, _)| i != first).map(|(_, &x)| x).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(top_two(&v), (first, max, second), "{v:?}");
            }
        }
    }

    #[test]
    fn default_schedule() {
        let s = AuctionParams::default().eps_schedule(100);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.25);
        assert_eq!(*s.last().unwrap(), 1e-6);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn identical_sets() {
        let a = cloud(200, 1);
        let mut b = a.clone();
        b.points.shuffle(&mut seed::rng(2));
        let r = emd_approx(&a, &b, &AuctionParams::default()).unwrap();
        assert!(r.converged);
        assert!(r.matching.cost <= 1e-6, "cost {}", r.matching.cost);
    }

    #[test]
    fn within_one_percent_of_exact() {
        for s in 0..5 {
            let a = cloud(128, 10 + s);
            let b = cloud(128, 20 + s);
            let exact = emd_exact(&a, &b).unwrap().cost;
            let approx = emd_approx(&a, &b, &AuctionParams::default()).unwrap();
            assert!(approx.converged);
            assert!(approx.matching.cost >= exact - 1e-9);
            assert!(approx.matching.cost <= exact * 1.01, "{} vs {exact}", approx.matching.cost);
        }
    }

    #[test]
    fn cost_within_final_eps_of_exact() {
        for s in 0..3 {
            let a = cloud(150, 3 + s);
            let b = cloud(150, 40 + s);
            let exact = emd_exact(&a, &b).unwrap().cost;
            let r = emd_approx(&a, &b, &AuctionParams::default()).unwrap();
            assert!(r.converged);
            assert!(r.matching.cost <= exact + 1e-4 / 150.0 + 1e-12, "{} vs {exact}", r.matching.cost);
        }
    }

    #[test]
    fn single_precision_scan_within_bound() {
        for (n, s) in [(97usize, 1u64), (160, 2), (301, 3)] {
            let a = cloud(n, 60 + s);
            let b = cloud(n, 70 + s);
            let exact = emd_exact(&a, &b).unwrap().cost;
            let params = AuctionParams { eps_end: Some(1e-3), ..AuctionParams::default() };
            let r = emd_approx(&a, &b, &params).unwrap();
            assert!(r.converged);
            assert!(r.matching.cost >= exact - 1e-12);
            assert!(r.matching.cost <= exact + 1.1e-3, "{} vs {exact}", r.matching.cost);
        }
    }

    #[test]
    fn single_precision_scan_agrees_on_ties() {
        // integer grid: many equal distances
        let grid: Vec<[f64; 3]> = (0..40).map(|i| [f64::from(i % 4), f64::from(i / 4 % 5), f64::from(i / 20)]).collect();
        let a = PointCloud::new(grid.clone());
        let mut b = a.clone();
        b.points.shuffle(&mut seed::rng(5));
        let mut f32_scan = ScanF32::new(&b);
        let mut f64_scan = ScanF64::new(&b);
        for x in &grid {
            let (i, v1, v2) = f32_scan.best_two(x);
            assert_eq!((i, v1, v2), f64_scan.best_two(x));
        }
        let params = AuctionParams { eps_end: Some(1e-2), ..AuctionParams::default() };
        assert!(emd_approx(&a, &b, &params).unwrap().matching.cost <= 1.1e-2);
    }

    #[test]
    fn competing_points_recover_optimal_pairing() {
        // x0 and x1 both prefer y0; greedy nearest assignment costs more
        let s1 = PointCloud::new(vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [3.0, 0.0, 0.0], [3.5, 0.0, 0.0]]);
        let s2 = PointCloud::new(vec![[0.05, 0.0, 0.0], [-1.0, 0.0, 0.0], [3.2, 0.0, 0.0], [3.3, 0.0, 0.0]]);
        let brute = {
            let mut best = (f64::INFINITY, vec![]);
            let mut p = vec![0, 1, 2, 3];
            permute(&mut p, 0, &mut |q| {
                let c = matched_cost(&s1, &s2, q);
                if c < best.0 {
                    best = (c, q.to_vec());
                }
            });
            best
        };
        let r = emd_approx(&s1, &s2, &AuctionParams::default()).unwrap();
        assert_eq!(r.matching.assignment, brute.1);
        assert!((r.matching.cost - brute.0).abs() <= 1e-9);
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn exhausted_budget_still_returns_a_bijection() {
        let a = cloud(64, 5);
        let b = cloud(64, 6);
        let params = AuctionParams { max_bids_per_scale: Some(10), ..Default::default() };
        let r = emd_approx(&a, &b, &params).unwrap();
        assert!(!r.converged);
        assert!(is_permutation(&r.matching.assignment));
        assert!((r.matching.cost - matched_cost(&a, &b, &r.matching.assignment)).abs() <= 1e-12);
    }

    #[test]
    fn trivial_sizes_and_errors() {
        let p = AuctionParams::default();
        assert_eq!(emd_approx(&PointCloud::default(), &PointCloud::default(), &p).unwrap().matching.cost, 0.0);
        let one = emd_approx(&cloud(1, 1), &cloud(1, 2), &p).unwrap();
        assert_eq!(one.matching.assignment, vec![0]);
        assert!(emd_approx(&cloud(2, 1), &cloud(3, 1), &p).is_err());
        assert!(emd_approx(&cloud(2, 1), &cloud(2, 1), &AuctionParams { eps_start: 0.0, ..p }).is_err());
    }
}
