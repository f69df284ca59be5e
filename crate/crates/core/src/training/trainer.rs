use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde_json::json;

use super::dataset::{Dataset, Split};
use super::{sample_sizes, Result, TrainConfig, TrainError};
use crate::geometry::{make_sample_sized, PointCloud};
use crate::models::{joint_loss, CompletionModel};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{clip_grad_norm, Adam, Real};
use crate::seed::{self, stream};

/// Columns of the training log.
pub const LOG_HEADER: [&str; 5] = ["epoch", "loss_total", "loss_missing", "loss_refined", "seconds"];

/// Per-sample means over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// One-based.
    pub epoch: usize,
    pub total: f64,
    pub missing: f64,
    pub refined: f64,
    pub seconds: f64,
    /// False if any auction hit its bid budget.
    pub converged: bool,
}

impl EpochStats {
    /// Loss fields only, for bitwise comparisons.
    pub fn losses(&self) -> [u64; 3] {
        [self.total.to_bits(), self.missing.to_bits(), self.refined.to_bits()]
    }
}

/// Append-only CSV of [`EpochStats`].
pub struct TrainLog {
    writer: csv::Writer<File>,
}

impl TrainLog {
    /// Opens `path` for appending, writing the header into a new file.
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = csv::Writer::from_writer(file);
        if fresh {
            writer.write_record(LOG_HEADER)?;
            writer.flush()?;
        }
        Ok(Self { writer })
    }

    pub fn append(&mut self, s: &EpochStats) -> Result<()> {
        self.writer.write_record([
            s.epoch.to_string(),
            s.total.to_string(),
            s.missing.to_string(),
            s.refined.to_string(),
            format!("{:.3}", s.seconds),
        ])?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Model, optimizer and configuration of one training run.
pub struct Trainer {
    pub model: CompletionModel,
    pub optimizer: Adam,
    pub config: TrainConfig,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        crate::tune_allocator();
        let model = CompletionModel::new(config.model_config(), config.seed)?;
        Ok(Self { model, optimizer: Adam::new(config.lr as Real), config, epochs_done: 0 })
    }

    /// Completed epochs.
    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// One pass over the training split: a fresh sphere split per shape,
    /// shuffled batches (the last one may be short), and one ADAM step per
    /// batch on the batch-mean joint loss.
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochStats> {
        let start = Instant::now();
        let c = &self.config;
        let e = self.epochs_done as u64;
        let train = dataset.indices(Split::Train);
        if train.is_empty() {
            return Err(TrainError::Dataset("no training shapes".into()));
        }
        let sizes = sample_sizes(self.model.config());
        let samples = train
            .iter()
            .map(|&i| {
                let s = seed::derive_seed(c.seed, &[stream::SAMPLE, e, i as u64]);
                make_sample_sized(&dataset.shapes[i].cloud, c.radius, sizes, s)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive_seed(c.seed, &[stream::SHUFFLE, e])));

        let mode = c.emd_mode();
        self.model.set_training(true);
        let (mut total, mut missing, mut refined, mut converged) = (0.0, 0.0, 0.0, true);
        for (bi, batch) in order.chunks(c.batch_size).enumerate() {
            let partials: Vec<&PointCloud> = batch.iter().map(|&k| &samples[k].partial).collect();
            let step_seed = seed::derive_seed(c.seed, &[stream::STEP, e, bi as u64]);
            let out = self.model.forward(&partials, c.sampling_method, step_seed)?;
            let scale = 1.0 / batch.len() as f64;
            let (mut g_missing, mut g_refined) = (Vec::new(), Vec::new());
            for (j, &k) in batch.iter().enumerate() {
                let l = joint_loss(&out.missing[j], &samples[k].missing, &out.refined[j], &samples[k].complete, &mode)?;
                if !l.total.is_finite() {
                    return Err(TrainError::NonFinite { epoch: self.epochs_done + 1 });
                }
                total += l.total;
                missing += l.missing;
                refined += l.refined;
                converged &= l.converged;
                g_missing.push(l.grad_missing.into_iter().map(|g| g.map(|v| v * scale)).collect());
                g_refined.push(l.grad_refined.into_iter().map(|g| g.map(|v| v * scale)).collect());
            }
            self.model.zero_grad();
            self.model.backward(&g_missing, &g_refined)?;
            let mut params = self.model.parameters();
            if c.clip > 0.0 {
                clip_grad_norm(&mut params, c.clip as Real);
            }
            self.optimizer.step(params);
        }
        self.epochs_done += 1;
        if !converged {
            log::warn!("epoch {}: an auction ran out of bids; loss is approximate", self.epochs_done);
        }
        let n = samples.len() as f64;
        Ok(EpochStats {
            epoch: self.epochs_done,
            total: total / n,
            missing: missing / n,
            refined: refined / n,
            seconds: start.elapsed().as_secs_f64(),
            converged,
        })
    }

    /// Runs epochs until `config.epochs` are done. With an output directory,
    /// appends to `train_log.csv` and writes `checkpoint.ckpt` every
    /// `checkpoint_every` epochs and after the last one.
    pub fn fit(&mut self, dataset: &Dataset, out_dir: Option<&Path>) -> Result<Vec<EpochStats>> {
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(TrainLog::open(&dir.join("train_log.csv"))?)
            }
            None => None,
        };
        let mut history = Vec::new();
        while self.epochs_done < self.config.epochs {
            let stats = self.run_epoch(dataset)?;
            log::info!(
                "epoch {:>4}  loss {:.6} (missing {:.6}, refined {:.6})  {:.1}s",
                stats.epoch,
                stats.total,
                stats.missing,
                stats.refined,
                stats.seconds
            );
            if let Some(log) = log.as_mut() {
                log.append(&stats)?;
            }
            if let Some(dir) = out_dir {
                if stats.epoch % self.config.checkpoint_every == 0 || stats.epoch == self.config.epochs {
                    self.save(&Self::checkpoint_path(dir))?;
                }
            }
            history.push(stats);
        }
        Ok(history)
    }

    /// Where [`Trainer::fit`] keeps the latest checkpoint.
    pub fn checkpoint_path(dir: &Path) -> PathBuf {
        dir.join("checkpoint.ckpt")
    }

    pub fn to_checkpoint(&mut self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        self.model.export(&mut ckpt)?;
        let train = serde_json::to_value(&self.config).map_err(|e| TrainError::Dataset(e.to_string()))?;
        ckpt.set_meta("train", train);
        ckpt.set_meta("epoch", self.epochs_done as u64);
        let o = self.optimizer;
        ckpt.set_meta("adam", json!({ "lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps }));
        Ok(ckpt)
    }

    /// Writes through a temporary file so an interrupted save never leaves
    /// a truncated checkpoint behind.
    pub fn save(&mut self, path: &Path) -> Result<()> {
        let ckpt = self.to_checkpoint()?;
        let tmp = path.with_extension("tmp");
        ckpt.save(&tmp)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Restores a run. Architecture fields (`decoder`, `model`, `mu`) come
    /// from the checkpoint; a differing request is overridden with a
    /// warning. Other fields of `requested` (for example a larger `epochs`)
    /// apply to the continuation; without a request the stored configuration
    /// is used.
    pub fn from_checkpoint(ckpt: &Checkpoint, requested: Option<TrainConfig>) -> Result<Self> {
        let stored: TrainConfig = ckpt
            .meta
            .get("train")
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()
            .map_err(|e| TrainError::Dataset(format!("checkpoint training configuration: {e}")))?
            .ok_or_else(|| TrainError::Dataset("checkpoint has no training configuration".into()))?;
        let epochs_done = ckpt
            .meta
            .get("epoch")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| TrainError::Dataset("checkpoint has no epoch counter".into()))? as usize;
        let model = CompletionModel::from_checkpoint(ckpt)?;
        let mut config = requested.unwrap_or_else(|| stored.clone());
        if config.decoder != model.config().decoder {
            log::warn!(
                "checkpoint holds a {} decoder; ignoring the requested {}",
                model.config().decoder,
                config.decoder
            );
            config.decoder = model.config().decoder;
        }
        if config.model != stored.model {
            log::warn!("checkpoint holds a {} model; ignoring the requested {}", stored.model, config.model);
            config.model = stored.model;
        }
        if config.mu != model.mu() {
            log::warn!("checkpoint was trained with mu = {}; ignoring the requested {}", model.mu(), config.mu);
            config.mu = model.mu();
        }
        config.validate()?;
        crate::tune_allocator();
        let mut optimizer = Adam::new(config.lr as Real);
        if let Some(a) = ckpt.meta.get("adam") {
            let get = |k: &str, d: Real| a.get(k).and_then(|v| v.as_f64()).map_or(d, |v| v as Real);
            optimizer.beta1 = get("beta1", optimizer.beta1);
            optimizer.beta2 = get("beta2", optimizer.beta2);
            optimizer.eps = get("eps", optimizer.eps);
        }
        Ok(Self { model, optimizer, config, epochs_done })
    }

    pub fn load(path: &Path, requested: Option<TrainConfig>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, requested)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DecoderKind;
    use crate::training::{generate_toy_dataset, ModelSize};

    fn tiny(decoder: DecoderKind) -> TrainConfig {
        TrainConfig { model: ModelSize::Tiny, decoder, batch_size: 2, epochs: 3, seed: 11, ..TrainConfig::default() }
    }

    #[test]
    fn epochs_are_finite_and_reproducible() {
        let ds = generate_toy_dataset(5, 1);
        for decoder in [DecoderKind::Mlp, DecoderKind::Mbd] {
            let run = || {
                let mut t = Trainer::new(tiny(decoder)).unwrap();
                t.fit(&ds, None).unwrap()
            };
            let (a, b) = (run(), run());
            assert_eq!(a.len(), 3);
            for (x, y) in a.iter().zip(&b) {
                assert!(x.total.is_finite());
                assert_eq!(x.losses(), y.losses());
                assert!((x.total - (x.missing + x.refined)).abs() <= 1e-12 * x.total);
            }
        }
    }

    #[test]
    fn resume_continues_bitwise() {
        let ds = generate_toy_dataset(5, 2);
        let config = TrainConfig { epochs: 5, ..tiny(DecoderKind::Mbd) };
        let mut straight = Trainer::new(config.clone()).unwrap();
        let full = straight.fit(&ds, None).unwrap();

        let mut first = Trainer::new(TrainConfig { epochs: 2, ..config.clone() }).unwrap();
        first.fit(&ds, None).unwrap();
        let mut bytes = Vec::new();
        first.to_checkpoint().unwrap().write_to(&mut bytes).unwrap();
        let ckpt = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        let mut resumed = Trainer::from_checkpoint(&ckpt, Some(config)).unwrap();
        assert_eq!(resumed.epochs_done(), 2);
        let rest = resumed.fit(&ds, None).unwrap();
        assert_eq!(rest.len(), 3);
        for (a, b) in full[2..].iter().zip(&rest) {
            assert_eq!(a.epoch, b.epoch);
            assert_eq!(a.losses(), b.losses());
        }
        let pa: Vec<_> = straight.model.parameters().into_iter().map(|p| p.clone()).collect();
        let pb: Vec<_> = resumed.model.parameters().into_iter().map(|p| p.clone()).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn stored_architecture_wins_over_request() {
        let mut t = Trainer::new(tiny(DecoderKind::Mlp)).unwrap();
        let ckpt = t.to_checkpoint().unwrap();
        let r = Trainer::from_checkpoint(&ckpt, Some(TrainConfig { mu: 0.5, ..tiny(DecoderKind::Mbd) })).unwrap();
        assert_eq!(r.config.decoder, DecoderKind::Mlp);
        assert_eq!(r.model.config().decoder, DecoderKind::Mlp);
        assert_eq!(r.config.mu, 1.0);
    }

    #[test]
    fn samples_change_between_epochs() {
        let ds = generate_toy_dataset(1, 3);
        let c = tiny(DecoderKind::Mlp);
        let sizes = sample_sizes(&c.model_config());
        let centers: Vec<_> = (0..4u64)
            .map(|e| {
                let s = seed::derive_seed(c.seed, &[stream::SAMPLE, e, 0]);
                make_sample_sized(&ds.shapes[0].cloud, c.radius, sizes, s).unwrap().center
            })
            .collect();
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                assert_ne!(centers[i], centers[j]);
            }
        }
    }

    #[test]
    fn log_appends_with_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_toy_dataset(2, 4);
        let mut t = Trainer::new(TrainConfig { epochs: 2, checkpoint_every: 1, ..tiny(DecoderKind::Mlp) }).unwrap();
        t.fit(&ds, Some(dir.path())).unwrap();
        let mut resumed = Trainer::load(&Trainer::checkpoint_path(dir.path()), None).unwrap();
        resumed.config.epochs = 3;
        resumed.fit(&ds, Some(dir.path())).unwrap();
        let text = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], LOG_HEADER.join(","));
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("3,"));
    }

    #[test]
    fn empty_training_split_is_an_error() {
        let mut ds = generate_toy_dataset(1, 5);
        ds.shapes[0].split = Split::Test;
        let mut t = Trainer::new(tiny(DecoderKind::Mlp)).unwrap();
        assert!(t.run_epoch(&ds).is_err());
    }
}
