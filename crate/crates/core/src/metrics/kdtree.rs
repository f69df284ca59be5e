//! Exact nearest-neighbour queries over a static 3D point set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::{dist2, Point3};

/// Balanced k-d tree stored implicitly: the median of every index range is
/// the node, its halves are the children.
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Index and squared distance of the closest point (lowest index on ties).
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search_nearest(q, 0, self.order.len(), 0, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search_nearest(&self, q: &Point3, lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d = dist2(p, q);
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let axis = depth % 3;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search_nearest(q, near.0, near.1, depth + 1, best);
        if delta * delta <= best.1 {
            self.search_nearest(q, far.0, far.1, depth + 1, best);
        }
    }

    /// The `k` closest points as (index, squared distance), nearest first.
    pub fn k_nearest(&self, q: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search_k(q, k, 0, self.order.len(), 0, &mut heap);
        }
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|Candidate(d, i)| (i, d)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn search_k(&self, q: &Point3, k: usize, lo: usize, hi: usize, depth: usize, heap: &mut BinaryHeap<Candidate>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let c = Candidate(dist2(p, q), idx);
        if heap.len() < k {
            heap.push(c);
        } else if c < *heap.peek().expect("non-empty heap") {
            heap.pop();
            heap.push(c);
        }
        let axis = depth % 3;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search_k(q, k, near.0, near.1, depth + 1, heap);
        let worst = if heap.len() < k { f64::INFINITY } else { heap.peek().map_or(f64::INFINITY, |c| c.0) };
        if delta * delta <= worst {
            self.search_k(q, k, far.0, far.1, depth + 1, heap);
        }
    }
}

fn build(points: &[Point3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
