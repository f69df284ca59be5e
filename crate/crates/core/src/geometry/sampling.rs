use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use super::{dist, dist2, GeometryError, LabeledCloud, Point3, PointCloud, Result, ShapeSample};
use crate::seed;

/// Center draws allowed before a sample with an empty side is reported.
pub const MAX_SPLIT_ATTEMPTS: usize = 16;

/// Point counts of a [`ShapeSample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSizes {
    pub complete: usize,
    pub partial: usize,
    pub missing: usize,
}

impl Default for SampleSizes {
    fn default() -> Self {
        Self { complete: 2048, partial: 2048, missing: 1024 }
    }
}

/// Splits `cloud` by a sphere. Points at exactly `radius` go inside.
pub fn sphere_split(cloud: &PointCloud, center: &Point3, radius: f64) -> (PointCloud, PointCloud) {
    let (inside, outside): (Vec<Point3>, Vec<Point3>) =
        cloud.iter().partition(|p| dist(p, center) <= radius);
    (PointCloud::new(inside), PointCloud::new(outside))
}

/// `k` indices into a set of `n`: without replacement when possible.
fn resample_indices<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    if n >= k {
        index::sample(rng, n, k).into_vec()
    } else {
        (0..k).map(|_| rng.gen_range(0..n)).collect()
    }
}

/// Cuts a random sphere out of a normalized cloud.
pub fn make_sample(cloud: &PointCloud, radius: f64, seed: u64) -> Result<ShapeSample> {
    make_sample_sized(cloud, radius, SampleSizes::default(), seed)
}

pub fn make_sample_sized(
    cloud: &PointCloud,
    radius: f64,
    sizes: SampleSizes,
    seed: u64,
) -> Result<ShapeSample> {
    if !(radius > 0.0 && radius < 1.0) {
        return Err(GeometryError::InvalidArgument(format!("radius {radius} not in (0, 1)")));
    }
    if cloud.is_empty() {
        return Err(GeometryError::InvalidArgument("empty cloud".into()));
    }
    let mut rng = seed::rng(seed);
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        let center = cloud.points[rng.gen_range(0..cloud.len())];
        let (inside, outside) = sphere_split(cloud, &center, radius);
        if inside.is_empty() || outside.is_empty() {
            continue;
        }
        let complete = cloud.select(&resample_indices(&mut rng, cloud.len(), sizes.complete));
        let partial = outside.select(&resample_indices(&mut rng, outside.len(), sizes.partial));
        let missing = inside.select(&resample_indices(&mut rng, inside.len(), sizes.missing));
        return Ok(ShapeSample { complete, partial, missing, radius, center });
    }
    Err(GeometryError::SplitFailed { attempts: MAX_SPLIT_ATTEMPTS })
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(GeometryError::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(GeometryError::TooFewPoints { requested: k, available: n });
    }
    Ok(())
}

/// Iterative farthest point sampling with a seeded first pick.
pub fn farthest_point_sample(
    cloud: &PointCloud,
    k: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    check_k(k, cloud.len())?;
    let first = seed::rng(seed).gen_range(0..cloud.len());
    farthest_point_sample_from(cloud, k, first)
}

/// Farthest point sampling starting at index `first`. Each step takes the
/// point whose distance to the selected set is largest, lowest index on ties.
pub fn farthest_point_sample_from(
    cloud: &PointCloud,
    k: usize,
    first: usize,
) -> Result<(PointCloud, Vec<usize>)> {
    check_k(k, cloud.len())?;
    let pts = &cloud.points;
    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; pts.len()];
    let mut min_d2 = vec![f64::INFINITY; pts.len()];
    let mut current = first;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == k {
            break;
        }
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d = dist2(p, &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if !taken[i] && min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok((cloud.select(&selected), selected))
}

/// Greedy minimum density sampling under a Gaussian kernel of width `sigma`.
pub fn minimum_density_sample(
    cloud: &PointCloud,
    k: usize,
    sigma: f64,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    check_k(k, cloud.len())?;
    let first = seed::rng(seed).gen_range(0..cloud.len());
    minimum_density_sample_from(cloud, k, sigma, first)
}

/// Minimum density sampling starting at index `first`. Each step takes the
/// unselected point with the smallest summed kernel response to the selected
/// set, lowest index on ties.
pub fn minimum_density_sample_from(
    cloud: &PointCloud,
    k: usize,
    sigma: f64,
    first: usize,
) -> Result<(PointCloud, Vec<usize>)> {
    check_k(k, cloud.len())?;
    if !(sigma > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    let pts = &cloud.points;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut density = vec![0.0; pts.len()];
    let mut taken = vec![false; pts.len()];
    let mut selected = Vec::with_capacity(k);
    let mut current = first;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == k {
            break;
        }
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (i, p) in pts.iter().enumerate() {
            if taken[i] {
                continue;
            }
            density[i] += (-dist2(p, &c) * inv).exp();
            if density[i] < best_d {
                best_d = density[i];
                best = i;
            }
        }
        current = best;
    }
    Ok((cloud.select(&selected), selected))
}

/// Subsampling strategy applied to the merged cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingMethod {
    Ifps,
    Mds { sigma: f64 },
}

impl SamplingMethod {
    pub const DEFAULT_SIGMA: f64 = 0.05;

    pub fn sample(&self, cloud: &PointCloud, k: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
        match *self {
            SamplingMethod::Ifps => farthest_point_sample(cloud, k, seed),
            SamplingMethod::Mds { sigma } => minimum_density_sample(cloud, k, sigma, seed),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingMethod::Ifps => "ifps",
            SamplingMethod::Mds { .. } => "mds",
        }
    }
}

impl Default for SamplingMethod {
    fn default() -> Self {
        SamplingMethod::Ifps
    }
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplingMethod {
    type Err = GeometryError;

    /// `ifps`, `mds` (default sigma) or `mds:<sigma>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ifps" | "fps" => Ok(SamplingMethod::Ifps),
            "mds" => Ok(SamplingMethod::Mds { sigma: Self::DEFAULT_SIGMA }),
            other => match other.strip_prefix("mds:").map(str::parse::<f64>) {
                Some(Ok(sigma)) if sigma > 0.0 => Ok(SamplingMethod::Mds { sigma }),
                _ => Err(GeometryError::InvalidArgument(format!("unknown sampling method `{s}`"))),
            },
        }
    }
}

/// A merged and subsampled cloud together with the source index of every
/// kept point (indices `>= partial.len()` come from the prediction).
#[derive(Debug, Clone, PartialEq)]
pub struct MergedCloud {
    pub cloud: LabeledCloud,
    pub indices: Vec<usize>,
    pub partial_len: usize,
}

/// Concatenates partial input and predicted missing part, labels the origin
/// of every point and subsamples `n` of them.
pub fn merge_and_sample(
    partial: &PointCloud,
    predicted: &PointCloud,
    n: usize,
    method: SamplingMethod,
    seed: u64,
) -> Result<MergedCloud> {
    let total = partial.len() + predicted.len();
    if n > total {
        return Err(GeometryError::TooFewPoints { requested: n, available: total });
    }
    let mut points = Vec::with_capacity(total);
    points.extend_from_slice(&partial.points);
    points.extend_from_slice(&predicted.points);
    let merged = PointCloud::new(points);
    let (sampled, indices) = method.sample(&merged, n, seed)?;
    let labels = indices.iter().map(|&i| u8::from(i >= partial.len())).collect();
    Ok(MergedCloud {
        cloud: LabeledCloud::new(sampled, labels)?,
        indices,
        partial_len: partial.len(),
    })
}

/// Rebuilds a merged cloud from a fixed selection of indices into the
/// concatenation `[partial; predicted]`.
pub fn merge_with_selection(partial: &PointCloud, predicted: &PointCloud, indices: Vec<usize>) -> Result<MergedCloud> {
    let total = partial.len() + predicted.len();
    if let Some(&bad) = indices.iter().find(|&&i| i >= total) {
        return Err(GeometryError::InvalidArgument(format!("selection index {bad} out of {total} points")));
    }
    let points = indices
        .iter()
        .map(|&i| if i < partial.len() { partial.points[i] } else { predicted.points[i - partial.len()] })
        .collect();
    let labels = indices.iter().map(|&i| u8::from(i >= partial.len())).collect();
    Ok(MergedCloud {
        cloud: LabeledCloud::new(PointCloud::new(points), labels)?,
        indices,
        partial_len: partial.len(),
    })
}
