//! Evaluation passes over a frozen model. Every shape gets one sphere split
//! and one forward seed derived from the evaluation seed and its index, so
//! different passes see identical inputs.

use super::dataset::{Dataset, Split};
use super::{sample_sizes, Result, TrainError};
use crate::geometry::{make_sample_sized, SamplingMethod, ShapeSample};
use crate::metrics::{directional_errors, DirectionalErrors};
use crate::models::CompletionModel;
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEval {
    /// Index into the dataset.
    pub index: usize,
    pub name: String,
    pub category: String,
    /// Refined cloud against the complete ground truth (unscaled).
    pub errors: DirectionalErrors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub index: usize,
    pub name: String,
    pub category: String,
    pub refined: DirectionalErrors,
    /// Same input with the displacement scale forced to zero.
    pub unrefined: DirectionalErrors,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessRow {
    pub radius: f64,
    /// Mean over the shapes (unscaled).
    pub errors: DirectionalErrors,
}

fn eval_sample(model: &CompletionModel, dataset: &Dataset, i: usize, radius: f64, seed: u64) -> Result<ShapeSample> {
    let sizes = sample_sizes(model.config());
    let s = seed::derive_seed(seed, &[stream::SAMPLE, i as u64]);
    Ok(make_sample_sized(&dataset.shapes[i].cloud, radius, sizes, s)?)
}

fn split_indices(dataset: &Dataset, split: Split) -> Result<Vec<usize>> {
    let idx = dataset.indices(split);
    if idx.is_empty() {
        return Err(TrainError::Dataset(format!("no shapes in the {split} split")));
    }
    Ok(idx)
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius < 1.0 {
        Ok(())
    } else {
        Err(TrainError::Config(vec![format!("radius must lie in (0, 1), got {radius}")]))
    }
}

/// Chamfer errors of the refined completion of every shape in `split`, in
/// dataset order.
pub fn evaluate(
    model: &mut CompletionModel,
    dataset: &Dataset,
    split: Split,
    radius: f64,
    method: SamplingMethod,
    seed: u64,
) -> Result<Vec<ShapeEval>> {
    check_radius(radius)?;
    let mut out = Vec::new();
    for i in split_indices(dataset, split)? {
        let sample = eval_sample(model, dataset, i, radius, seed)?;
        let fwd = seed::derive_seed(seed, &[stream::STEP, i as u64]);
        let (_, _, refined) = model.complete(&sample.partial, method, fwd)?;
        let shape = &dataset.shapes[i];
        out.push(ShapeEval {
            index: i,
            name: shape.name.clone(),
            category: shape.category.clone(),
            errors: directional_errors(&refined, &sample.complete)?,
        });
    }
    Ok(out)
}

/// Refined against unrefined (`mu = 0`) completions on identical inputs.
pub fn ablate(
    model: &mut CompletionModel,
    dataset: &Dataset,
    split: Split,
    radius: f64,
    method: SamplingMethod,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let with = evaluate(model, dataset, split, radius, method, seed)?;
    let mu = model.mu();
    model.set_mu(0.0)?;
    let without = evaluate(model, dataset, split, radius, method, seed);
    model.set_mu(mu)?;
    Ok(with
        .into_iter()
        .zip(without?)
        .map(|(a, b)| AblationRow {
            index: a.index,
            name: a.name,
            category: a.category,
            refined: a.errors,
            unrefined: b.errors,
        })
        .collect())
}

/// Mean errors for every radius; radii must increase strictly.
pub fn robustness(
    model: &mut CompletionModel,
    dataset: &Dataset,
    split: Split,
    radii: &[f64],
    method: SamplingMethod,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    if radii.is_empty() || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(TrainError::Config(vec![format!("radii must be non-empty and increasing, got {radii:?}")]));
    }
    radii.iter().try_for_each(|&r| check_radius(r))?;
    radii
        .iter()
        .map(|&radius| {
            let evals = evaluate(model, dataset, split, radius, method, seed)?;
            let errors: Vec<_> = evals.iter().map(|e| e.errors).collect();
            Ok(RobustnessRow { radius, errors: DirectionalErrors::mean(&errors).expect("split is non-empty") })
        })
        .collect()
}
