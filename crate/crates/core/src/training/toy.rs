//! Procedural shapes for desk-scale runs.
//!
//! Each shape is an analytic surface with random proportions, normalized in
//! closed form (center at the origin, farthest surface point at norm one)
//! and sampled uniformly by area. Sampling the exact surface instead of a
//! tessellation keeps sphere points on the unit sphere.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;

use super::dataset::{Dataset, Shape, Split, DATASET_POINTS};
use crate::geometry::{Point3, PointCloud};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    Sphere,
    Box,
    Cylinder,
    Torus,
}

impl ToyKind {
    pub const ALL: [ToyKind; 4] = [ToyKind::Sphere, ToyKind::Box, ToyKind::Cylinder, ToyKind::Torus];

    pub fn name(&self) -> &'static str {
        match self {
            ToyKind::Sphere => "sphere",
            ToyKind::Box => "box",
            ToyKind::Cylinder => "cylinder",
            ToyKind::Torus => "torus",
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Index of `weights` drawn proportionally to its entry.
fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

fn sphere<R: Rng>(rng: &mut R, n: usize) -> Vec<Point3> {
    // height uniform in [-1, 1] is area-uniform on the sphere
    (0..n)
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let t = rng.gen_range(0.0..2.0 * PI);
            let w = (1.0 - z * z).max(0.0).sqrt();
            [w * t.cos(), w * t.sin(), z]
        })
        .collect()
}

fn cuboid<R: Rng>(rng: &mut R, n: usize) -> Vec<Point3> {
    let h: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.3..1.0));
    let s = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    let h = h.map(|c| c / s);
    // faces normal to axis k have area 4 * h[(k+1)%3] * h[(k+2)%3]
    let areas = [h[1] * h[2], h[2] * h[0], h[0] * h[1]];
    (0..n)
        .map(|_| {
            let k = pick(rng, &areas);
            let mut p = [0.0; 3];
            p[k] = if rng.gen::<bool>() { h[k] } else { -h[k] };
            for a in [(k + 1) % 3, (k + 2) % 3] {
                p[a] = rng.gen_range(-h[a]..=h[a]);
            }
            p
        })
        .collect()
}

fn cylinder<R: Rng>(rng: &mut R, n: usize) -> Vec<Point3> {
    let (r, h) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..1.0));
    let s = f64::hypot(r, h);
    let (r, h) = (r / s, h / s);
    let areas = [4.0 * PI * r * h, PI * r * r, PI * r * r];
    (0..n)
        .map(|_| {
            let t = rng.gen_range(0.0..2.0 * PI);
            match pick(rng, &areas) {
                0 => [r * t.cos(), r * t.sin(), rng.gen_range(-h..=h)],
                side => {
                    let rho = r * rng.gen::<f64>().sqrt();
                    [rho * t.cos(), rho * t.sin(), if side == 1 { h } else { -h }]
                }
            }
        })
        .collect()
}

fn torus<R: Rng>(rng: &mut R, n: usize) -> Vec<Point3> {
    let big = rng.gen_range(0.5..1.0);
    let tube = big * rng.gen_range(0.15..0.5);
    let s = big + tube;
    let (big, tube) = (big / s, tube / s);
    (0..n)
        .map(|_| {
            let u = rng.gen_range(0.0..2.0 * PI);
            // the area element is proportional to big + tube * cos(v)
            let v = loop {
                let v = rng.gen_range(0.0..2.0 * PI);
                if rng.gen::<f64>() * (big + tube) <= big + tube * v.cos() {
                    break v;
                }
            };
            let w = big + tube * v.cos();
            [w * u.cos(), w * u.sin(), tube * v.sin()]
        })
        .collect()
}

/// `n` surface samples of one randomly proportioned shape.
pub fn toy_shape(kind: ToyKind, n: usize, seed: u64) -> PointCloud {
    let mut rng = seed::rng(seed);
    let points = match kind {
        ToyKind::Sphere => sphere(&mut rng, n),
        ToyKind::Box => cuboid(&mut rng, n),
        ToyKind::Cylinder => cylinder(&mut rng, n),
        ToyKind::Torus => torus(&mut rng, n),
    };
    PointCloud::new(points)
}

/// `n_shapes` shapes cycling through sphere, box, cylinder and torus. Every
/// fifth shape (index 4, 9, ...) is held out for testing.
pub fn generate_toy_dataset(n_shapes: usize, seed: u64) -> Dataset {
    let shapes = (0..n_shapes)
        .map(|i| {
            let kind = ToyKind::ALL[i % ToyKind::ALL.len()];
            Shape {
                name: format!("toy_{i:04}_{kind}"),
                category: kind.name().to_string(),
                split: if i % 5 == 4 { Split::Test } else { Split::Train },
                cloud: toy_shape(kind, DATASET_POINTS, seed::derive_seed(seed, &[stream::TOY, i as u64])),
            }
        })
        .collect();
    Dataset { shapes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;

    #[test]
    fn sphere_points_are_on_the_unit_sphere() {
        let c = toy_shape(ToyKind::Sphere, 2000, 3);
        assert!(c.iter().all(|p| (norm(p) - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn shapes_touch_but_never_leave_the_unit_ball() {
        for kind in ToyKind::ALL {
            for s in 0..5 {
                let c = toy_shape(kind, 4000, s);
                assert!(c.is_inscribed(1e-12), "{kind}");
                assert!(c.max_norm() > 0.9, "{kind}: {}", c.max_norm());
            }
        }
    }

    #[test]
    fn box_and_cylinder_points_lie_on_their_surfaces() {
        let c = toy_shape(ToyKind::Box, 500, 1);
        let h = [0, 1, 2].map(|k| c.iter().map(|p| p[k].abs()).fold(0.0, f64::max));
        for p in c.iter() {
            assert!((0..3).any(|k| (p[k].abs() - h[k]).abs() < 1e-12));
        }
        let c = toy_shape(ToyKind::Cylinder, 500, 2);
        let r = c.iter().map(|p| f64::hypot(p[0], p[1])).fold(0.0, f64::max);
        let h = c.iter().map(|p| p[2].abs()).fold(0.0, f64::max);
        for p in c.iter() {
            assert!((f64::hypot(p[0], p[1]) - r).abs() < 1e-9 || (p[2].abs() - h).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_is_deterministic_and_split_by_index() {
        let a = generate_toy_dataset(10, 5);
        assert_eq!(a, generate_toy_dataset(10, 5));
        assert_ne!(a.shapes[0].cloud, generate_toy_dataset(10, 6).shapes[0].cloud);
        let test: Vec<usize> = a.indices(Split::Test);
        assert_eq!(test, vec![4, 9]);
        assert_eq!(a.shapes[3].category, "torus");
        assert!(a.shapes.iter().all(|s| s.cloud.len() == DATASET_POINTS));
    }
}
