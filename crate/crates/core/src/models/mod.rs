//! The completion networks and the end-to-end forward / backward pass.
//!
//! A partial cloud is encoded into a global feature, decoded into the
//! missing region, merged with the input and subsampled, then refined by a
//! displacement field scaled by `mu`.

pub mod checks;
mod decoder;
mod encoder;
mod loss;
mod refiner;

pub use decoder::{Decoder, MlpDecoder, MorphingDecoder};
pub use encoder::Encoder;
pub use loss::{joint_loss, EmdMode, JointLoss};
pub use refiner::PointRefiner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    merge_and_sample, merge_with_selection, GeometryError, LabeledCloud, MergedCloud, PointCloud, SamplingMethod,
};
use crate::metrics::MetricsError;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Module, NnError, Parameter, Real, StateMut, Tensor};
use crate::seed;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Mlp,
    /// Morphing-based decoder.
    Mbd,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Mlp => "mlp",
            DecoderKind::Mbd => "mbd",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(DecoderKind::Mlp),
            "mbd" | "morphing" => Ok(DecoderKind::Mbd),
            other => Err(ModelError::Config(format!("unknown decoder {other:?} (expected mlp or mbd)"))),
        }
    }
}

/// Architecture hyperparameters. Stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub decoder: DecoderKind,
    /// Points predicted for the missing region.
    pub missing_points: usize,
    /// Size of the merged cloud after subsampling.
    pub output_points: usize,
    /// Number of morphing networks.
    pub morph_networks: usize,
    pub encoder_widths: Vec<usize>,
    pub feature_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub morph_hidden: Vec<usize>,
    pub refiner_widths: Vec<usize>,
    pub refiner_head: Vec<usize>,
    /// Displacement scale.
    pub mu: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderKind::Mbd,
            missing_points: 1024,
            output_points: 2048,
            morph_networks: 16,
            encoder_widths: vec![64, 128, 1024],
            feature_dim: 1024,
            mlp_hidden: vec![1024, 1024],
            morph_hidden: vec![512, 256, 128],
            refiner_widths: vec![64, 128, 1024],
            refiner_head: vec![512, 256, 128],
            mu: 1.0,
        }
    }
}

impl ModelConfig {
    /// A narrow variant for gradient checks and fast tests.
    pub fn tiny(decoder: DecoderKind) -> Self {
        Self {
            decoder,
            missing_points: 8,
            output_points: 16,
            morph_networks: 2,
            encoder_widths: vec![6, 8, 10],
            feature_dim: 10,
            mlp_hidden: vec![12, 12],
            morph_hidden: vec![8, 6, 5],
            refiner_widths: vec![5, 7, 9],
            refiner_head: vec![8, 6, 5],
            mu: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.missing_points == 0 || self.output_points == 0 {
            return err("point counts must be positive".into());
        }
        if self.decoder == DecoderKind::Mbd
            && (self.morph_networks == 0 || self.missing_points % self.morph_networks != 0)
        {
            return err(format!(
                "missing_points {} is not divisible by morph_networks {}",
                self.missing_points, self.morph_networks
            ));
        }
        if self.encoder_widths.is_empty() || self.morph_hidden.is_empty() || self.refiner_head.is_empty() {
            return err("layer width lists must not be empty".into());
        }
        if self.refiner_widths.len() != 3 {
            return err(format!("refiner_widths needs 3 entries, got {}", self.refiner_widths.len()));
        }
        let widths = [&self.encoder_widths, &self.mlp_hidden, &self.morph_hidden, &self.refiner_widths, &self.refiner_head];
        if self.feature_dim == 0 || widths.iter().any(|w| w.contains(&0)) {
            return err("layer widths must be positive".into());
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return err(format!("mu must be finite and non-negative, got {}", self.mu));
        }
        Ok(())
    }
}

/// Batch of equal-size clouds as `[B, 3, N]`.
pub fn clouds_to_tensor(clouds: &[&PointCloud]) -> Result<Tensor> {
    let n = clouds.first().map_or(0, |c| c.len());
    if let Some(c) = clouds.iter().find(|c| c.len() != n) {
        return Err(ModelError::Config(format!("batch mixes clouds of {n} and {} points", c.len())));
    }
    let mut t = Tensor::zeros(&[clouds.len(), 3, n]);
    for (b, c) in clouds.iter().enumerate() {
        for (i, p) in c.iter().enumerate() {
            for k in 0..3 {
                t.data_mut()[(b * 3 + k) * n + i] = p[k] as Real;
            }
        }
    }
    Ok(t)
}

/// Batch of equal-size labeled clouds as `[B, 4, N]`.
pub fn labeled_to_tensor(clouds: &[&LabeledCloud]) -> Result<Tensor> {
    let n = clouds.first().map_or(0, |c| c.len());
    if let Some(c) = clouds.iter().find(|c| c.len() != n) {
        return Err(ModelError::Config(format!("batch mixes clouds of {n} and {} points", c.len())));
    }
    let mut t = Tensor::zeros(&[clouds.len(), 4, n]);
    for (b, c) in clouds.iter().enumerate() {
        for (i, (p, &l)) in c.points.iter().zip(&c.labels).enumerate() {
            for k in 0..3 {
                t.data_mut()[(b * 4 + k) * n + i] = p[k] as Real;
            }
            t.data_mut()[(b * 4 + 3) * n + i] = Real::from(l);
        }
    }
    Ok(t)
}

/// Cloud `b` of a `[B, 3, N]` tensor.
pub fn tensor_to_cloud(t: &Tensor, b: usize) -> Result<PointCloud> {
    let (_, c, n) = t.dims3()?;
    if c != 3 {
        return Err(NnError::Shape(format!("expected 3 channels, got {c}")).into());
    }
    let d = t.data();
    Ok(PointCloud::new(
        (0..n)
            .map(|i| [0, 1, 2].map(|k| d[(b * 3 + k) * n + i] as f64))
            .collect(),
    ))
}

fn points_to_grad(grads: &[Vec<[f64; 3]>], n: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[grads.len(), 3, n]);
    for (b, g) in grads.iter().enumerate() {
        if g.len() != n {
            return Err(NnError::Shape(format!("gradient for {} points, expected {n}", g.len())).into());
        }
        for (i, p) in g.iter().enumerate() {
            for k in 0..3 {
                t.data_mut()[(b * 3 + k) * n + i] = p[k] as Real;
            }
        }
    }
    Ok(t)
}

/// Outputs of one forward pass, one entry per batch element.
#[derive(Debug, Clone)]
pub struct Completion {
    pub missing: Vec<PointCloud>,
    pub merged: Vec<MergedCloud>,
    pub refined: Vec<PointCloud>,
}

struct ForwardCache {
    merged: Vec<MergedCloud>,
    missing_points: usize,
    output_points: usize,
}

/// Encoder, decoder and refiner with the glue between them.
pub struct CompletionModel {
    config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub refiner: PointRefiner,
    cache: Option<ForwardCache>,
}

impl CompletionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive_seed(seed, &[seed::stream::INIT]));
        let c = &config;
        let encoder = Encoder::new(&c.encoder_widths, c.feature_dim, &mut rng);
        let decoder = match c.decoder {
            DecoderKind::Mlp => Decoder::Mlp(MlpDecoder::new(c.feature_dim, &c.mlp_hidden, c.missing_points, &mut rng)),
            DecoderKind::Mbd => Decoder::Morphing(MorphingDecoder::new(
                c.feature_dim,
                &c.morph_hidden,
                c.missing_points,
                c.morph_networks,
                &mut rng,
            )?),
        };
        let refiner = PointRefiner::new(&c.refiner_widths, &c.refiner_head, &mut rng)?;
        Ok(Self { config, encoder, decoder, refiner, cache: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mu(&self) -> f64 {
        self.config.mu
    }

    /// Changes the displacement scale without touching any weights.
    pub fn set_mu(&mut self, mu: f64) -> Result<()> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(ModelError::Config(format!("mu must be finite and non-negative, got {mu}")));
        }
        self.config.mu = mu;
        Ok(())
    }

    pub fn set_training(&mut self, training: bool) {
        self.encoder.set_training(training);
        self.decoder.set_training(training);
        self.refiner.set_training(training);
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, StateMut<'a>)>) {
        self.encoder.collect_state("encoder.", out);
        self.decoder.collect_state("decoder.", out);
        self.refiner.collect_state("refiner.", out);
    }

    pub fn parameters(&mut self) -> Vec<&mut Parameter> {
        let mut state = Vec::new();
        self.collect_state(&mut state);
        state
            .into_iter()
            .filter_map(|(_, s)| match s {
                StateMut::Param(p) => Some(p),
                StateMut::Buffer(_) => None,
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&mut self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Writes the architecture into the metadata and all weights, optimizer
    /// moments and batch-norm statistics into the entries.
    pub fn export(&mut self, ckpt: &mut Checkpoint) -> Result<()> {
        let meta = serde_json::to_value(&self.config).map_err(|e| ModelError::Config(e.to_string()))?;
        ckpt.set_meta("model", meta);
        let mut state = Vec::new();
        self.collect_state(&mut state);
        ckpt.export_state(state)?;
        Ok(())
    }

    /// Architecture stored in a checkpoint.
    pub fn config_from_checkpoint(ckpt: &Checkpoint) -> Result<ModelConfig> {
        let meta = ckpt
            .meta
            .get("model")
            .ok_or_else(|| ModelError::Config("checkpoint has no model description".into()))?;
        let config: ModelConfig =
            serde_json::from_value(meta.clone()).map_err(|e| ModelError::Config(format!("model description: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Rebuilds a model from a checkpoint. The stored architecture is
    /// authoritative.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = Self::config_from_checkpoint(ckpt)?;
        let mut model = Self::new(config, 0)?;
        let mut state = Vec::new();
        model.collect_state(&mut state);
        ckpt.import_state(state)?;
        Ok(model)
    }

    /// Full pipeline on a batch of equal-size partial clouds. `seed` drives
    /// the morphing samples and the merge subsampling.
    pub fn forward(&mut self, partials: &[&PointCloud], method: SamplingMethod, seed: u64) -> Result<Completion> {
        let n_out = self.config.output_points;
        self.forward_impl(partials, seed, |b, partial, missing| {
            let s = seed::derive_seed(seed, &[seed::stream::MERGE, b as u64]);
            merge_and_sample(partial, missing, n_out, method, s)
        })
    }

    /// Like [`CompletionModel::forward`] but with the merge selection given
    /// explicitly for every batch element.
    pub fn forward_with_selection(
        &mut self,
        partials: &[&PointCloud],
        seed: u64,
        selections: &[Vec<usize>],
    ) -> Result<Completion> {
        if selections.len() != partials.len() {
            return Err(ModelError::Config(format!(
                "{} selections for a batch of {}",
                selections.len(),
                partials.len()
            )));
        }
        self.forward_impl(partials, seed, |b, partial, missing| {
            merge_with_selection(partial, missing, selections[b].clone())
        })
    }

    fn forward_impl(
        &mut self,
        partials: &[&PointCloud],
        seed: u64,
        mut merge: impl FnMut(usize, &PointCloud, &PointCloud) -> std::result::Result<MergedCloud, GeometryError>,
    ) -> Result<Completion> {
        if partials.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        let c = &self.config;
        let (m, n_out) = (c.missing_points, c.output_points);
        if partials[0].len() + m < n_out {
            return Err(GeometryError::TooFewPoints { requested: n_out, available: partials[0].len() + m }.into());
        }
        let x = clouds_to_tensor(partials)?;
        let feature = self.encoder.forward(&x)?;
        let decoder_seed = seed::derive_seed(seed, &[seed::stream::DECODER]);
        let missing_t = self.decoder.forward(&feature, decoder_seed)?;
        let missing: Vec<PointCloud> =
            (0..partials.len()).map(|b| tensor_to_cloud(&missing_t, b)).collect::<Result<_>>()?;

        let mut merged = Vec::with_capacity(partials.len());
        for (b, (partial, pred)) in partials.iter().zip(&missing).enumerate() {
            let mc = merge(b, partial, pred)?;
            if mc.cloud.len() != n_out {
                return Err(ModelError::Config(format!("merge produced {} points, expected {n_out}", mc.cloud.len())));
            }
            merged.push(mc);
        }
        let lab = labeled_to_tensor(&merged.iter().map(|mc| &mc.cloud).collect::<Vec<_>>())?;
        let delta = self.refiner.forward(&lab)?;
        let mu = self.config.mu;
        let refined = merged
            .iter()
            .enumerate()
            .map(|(b, mc)| {
                let d = tensor_to_cloud(&delta, b)?;
                Ok(PointCloud::new(
                    mc.cloud
                        .points
                        .iter()
                        .zip(d.iter())
                        .map(|(p, q)| [p[0] + mu * q[0], p[1] + mu * q[1], p[2] + mu * q[2]])
                        .collect(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        self.cache = Some(ForwardCache { merged: merged.clone(), missing_points: m, output_points: n_out });
        Ok(Completion { missing, merged, refined })
    }

    /// Accumulates parameter gradients for loss gradients on the predicted
    /// missing points and on the refined points of the last forward pass.
    ///
    /// The merge selection is held fixed: a refined point passes its
    /// gradient to the decoder output it was copied from, both directly and
    /// through the refiner's coordinate inputs. Points copied from the
    /// partial input pass nothing on.
    pub fn backward(&mut self, grad_missing: &[Vec<[f64; 3]>], grad_refined: &[Vec<[f64; 3]>]) -> Result<()> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache("completion model".into()))?;
        let (m, n) = (cache.missing_points, cache.output_points);
        let b = cache.merged.len();
        if grad_missing.len() != b || grad_refined.len() != b {
            return Err(ModelError::Config(format!("gradients for {} / {} clouds, batch of {b}", grad_missing.len(), grad_refined.len())));
        }
        let g_ref = points_to_grad(grad_refined, n)?;
        let mut g_delta = g_ref.clone();
        let mu = self.config.mu as Real;
        for v in g_delta.data_mut() {
            *v *= mu;
        }
        let g_lab = self.refiner.backward(&g_delta)?;

        let mut g_missing = points_to_grad(grad_missing, m)?;
        for (bi, mc) in cache.merged.iter().enumerate() {
            for (j, &idx) in mc.indices.iter().enumerate() {
                if idx < mc.partial_len {
                    continue;
                }
                let i = idx - mc.partial_len;
                for k in 0..3 {
                    let g = g_ref.data()[(bi * 3 + k) * n + j] + g_lab.data()[(bi * 4 + k) * n + j];
                    g_missing.data_mut()[(bi * 3 + k) * m + i] += g;
                }
            }
        }
        let g_feature = self.decoder.backward(&g_missing)?;
        self.encoder.backward(&g_feature)?;
        Ok(())
    }

    /// Single-cloud inference in evaluation mode.
    pub fn complete(
        &mut self,
        partial: &PointCloud,
        method: SamplingMethod,
        seed: u64,
    ) -> Result<(PointCloud, LabeledCloud, PointCloud)> {
        self.set_training(false);
        let mut out = self.forward(&[partial], method, seed)?;
        let merged = out.merged.pop().expect("batch of one");
        Ok((out.missing.pop().expect("batch of one"), merged.cloud, out.refined.pop().expect("batch of one")))
    }
}

