//! Mini-batch training loop.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::CropWindow;
use crate::checkpoint::save_checkpoint;
use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::imageio::load_image;
use crate::loss::{loss_with_grad, LossConfig, LossTerms};
use crate::model::{ModelConfig, SinetParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Real;
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub crop: usize,
    /// Full shuffled passes over the data. At least one of `epochs` and
    /// `max_steps` must be set; `max_steps` wins when both are.
    pub epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Random horizontal/vertical flips.
    pub flips: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 4,
            crop: 256,
            epochs: None,
            max_steps: None,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            flips: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::arg(m.to_string()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be a finite nonnegative number");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.crop == 0 {
            return bad("crop must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        match (self.epochs, self.max_steps) {
            (None, None) => bad("set epochs or max_steps"),
            (Some(0), None) | (_, Some(0)) => bad("epochs and max_steps must be positive"),
            _ => Ok(()),
        }
    }
}

/// One logged optimizer step. Loss values are batch means computed before
/// the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub lint: f64,
    pub ltext: f64,
    pub lssim: f64,
    pub seconds: f64,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {} loss {} lint {} ltext {} lssim {} seconds {:.3}",
            self.step, self.loss, self.lint, self.ltext, self.lssim, self.seconds
        )
    }
}

impl FromStr for LogEntry {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let tok: Vec<&str> = line.split_whitespace().collect();
        let keys = ["step", "loss", "lint", "ltext", "lssim", "seconds"];
        if tok.len() != 12 || tok.iter().step_by(2).zip(keys).any(|(a, b)| *a != b) {
            return Err(Error::arg(format!("not a training log line: `{line}`")));
        }
        let num = |i: usize| -> Result<f64> {
            tok[i]
                .parse()
                .map_err(|_| Error::arg(format!("bad number `{}` in log line", tok[i])))
        };
        Ok(Self {
            step: tok[1]
                .parse()
                .map_err(|_| Error::arg(format!("bad step `{}` in log line", tok[1])))?,
            loss: num(3)?,
            lint: num(5)?,
            ltext: num(7)?,
            lssim: num(9)?,
            seconds: num(11)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    /// One line per entry.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| format!("{e}\n")).collect()
    }
}

pub struct TrainOutcome<T> {
    /// Parameters after the final step.
    pub last: SinetParams<T>,
    /// Parameters that produced the lowest logged step loss.
    pub best: SinetParams<T>,
    pub best_loss: f64,
    pub log: TrainingLog,
}

/// Loss terms and parameter gradients for one image pair.
pub fn pair_gradient<T: Real>(
    params: &SinetParams<T>,
    source: &Tensor3<T>,
    truth: &Tensor3<T>,
    loss: &LossConfig,
) -> Result<(LossTerms<T>, SinetParams<T>)> {
    let pass = params.forward(source)?;
    let (terms, upstream) = loss_with_grad(&pass.enhanced, truth, loss)?;
    let grads = params.backward(source, &upstream, &pass)?;
    Ok((terms, grads))
}

/// Batch-mean loss terms and gradients; items run in parallel and reduce in
/// index order.
pub fn batch_gradient<T: Real>(
    params: &SinetParams<T>,
    batch: &[(Tensor3<T>, Tensor3<T>)],
    loss: &LossConfig,
) -> Result<(LossTerms<f64>, SinetParams<T>)> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let per_item = batch
        .par_iter()
        .map(|(s, t)| pair_gradient(params, s, t, loss))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = params.zeros_like();
    let mut sum = LossTerms::<f64>::default();
    for (terms, g) in &per_item {
        grads.add_assign(g)?;
        sum.total += terms.total.as_f64();
        sum.intensity += terms.intensity.as_f64();
        sum.texture += terms.texture.as_f64();
        sum.ssim += terms.ssim.as_f64();
    }
    let n = batch.len() as f64;
    grads.scale_in_place(T::lit(1.0 / n));
    Ok((
        LossTerms {
            total: sum.total / n,
            intensity: sum.intensity / n,
            texture: sum.texture / n,
            ssim: sum.ssim / n,
        },
        grads,
    ))
}

/// Trains `params` in memory on `pairs` of (source, truth).
///
/// `observer` sees every log entry as it is produced.
pub fn train_pairs<T: Real>(
    mut params: SinetParams<T>,
    pairs: &[(Tensor3<T>, Tensor3<T>)],
    cfg: &TrainConfig,
    loss: &LossConfig,
    mut observer: impl FnMut(&LogEntry),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    for (i, (s, t)) in pairs.iter().enumerate() {
        if !s.same_shape(t) {
            return Err(Error::Training(format!(
                "pair {i}: source {:?} and reference {:?} differ in shape",
                s.shape(),
                t.shape()
            )));
        }
        if s.height().min(s.width()) < cfg.crop {
            return Err(Error::Training(format!(
                "pair {i}: image {}x{} is smaller than crop {}",
                s.height(),
                s.width(),
                cfg.crop
            )));
        }
    }
    let batches_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total_steps = match (cfg.max_steps, cfg.epochs) {
        (Some(s), _) => s,
        (None, Some(e)) => e * batches_per_epoch,
        (None, None) => unreachable!("validated"),
    };
    let adam = cfg.adam();
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let mut log = TrainingLog::default();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let start = Instant::now();

    for step in 1..=total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        // Batches never straddle epochs; the last one of an epoch may be short.
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        for &idx in &order[cursor..end] {
            let (s, t) = &pairs[idx];
            let window = CropWindow::sample(s.height(), s.width(), cfg.crop, cfg.flips, &mut rng)?;
            batch.push((window.apply(s)?, window.apply(t)?));
        }
        cursor = end;

        let (terms, grads) = batch_gradient(&params, &batch, loss)?;
        if !terms.total.is_finite() {
            return Err(Error::Training(format!("loss became non-finite at step {step}")));
        }
        if terms.total < best_loss {
            best_loss = terms.total;
            best = params.clone();
        }
        adam_step(&mut params, &grads, &mut state, &adam)?;
        let entry = LogEntry {
            step,
            loss: terms.total,
            lint: terms.intensity,
            ltext: terms.texture,
            lssim: terms.ssim,
            seconds: start.elapsed().as_secs_f64(),
        };
        observer(&entry);
        log.entries.push(entry);
    }
    Ok(TrainOutcome {
        last: params,
        best,
        best_loss,
        log,
    })
}

/// `a/b/model.ckpt` → `a/b/model.best.ckpt`
pub fn best_checkpoint_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.best.{ext}"),
        None => format!("{stem}.best"),
    };
    path.with_file_name(name)
}

/// Loads every complete pair under `dataset_dir` (as 32-bit images).
pub fn load_pairs(dataset_dir: &Path) -> Result<Vec<(Tensor3<f32>, Tensor3<f32>)>> {
    let index = DatasetIndex::scan(dataset_dir)?;
    for src in index.unpaired_sources() {
        log::warn!("skipping {}: no reference image", src.display());
    }
    let pairs = index.complete_pairs();
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("no paired images under {}", dataset_dir.display())));
    }
    pairs
        .into_iter()
        .map(|(_, s, r)| Ok((load_image(s)?, load_image(r)?)))
        .collect()
}

/// Trains a fresh 32-bit model on a paired dataset directory, writing the
/// last parameters to `out_checkpoint` and the best ones next to it
/// (see [`best_checkpoint_path`]).
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    dataset_dir: &Path,
    out_checkpoint: &Path,
) -> Result<TrainingLog> {
    train_with_observer(model_cfg, train_cfg, loss_cfg, dataset_dir, out_checkpoint, |_| {})
}

pub fn train_with_observer(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    dataset_dir: &Path,
    out_checkpoint: &Path,
    observer: impl FnMut(&LogEntry),
) -> Result<TrainingLog> {
    train_cfg.validate()?;
    let pairs = load_pairs(dataset_dir)?;
    let params = SinetParams::<f32>::init(*model_cfg, train_cfg.seed)?;
    let outcome = train_pairs(params, &pairs, train_cfg, loss_cfg, observer)?;
    save_checkpoint(&outcome.last, out_checkpoint)?;
    save_checkpoint(&outcome.best, best_checkpoint_path(out_checkpoint))?;
    Ok(outcome.log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_line_round_trip() {
        let e = LogEntry {
            step: 3,
            loss: 1.25,
            lint: 0.5,
            ltext: 0.25,
            lssim: 0.125,
            seconds: 2.0,
        };
        let line = e.to_string();
        assert_eq!(line, "step 3 loss 1.25 lint 0.5 ltext 0.25 lssim 0.125 seconds 2.000");
        assert_eq!(line.parse::<LogEntry>().unwrap(), e);
        assert!("step x".parse::<LogEntry>().is_err());
    }

    #[test]
    fn config_needs_a_length() {
        assert!(TrainConfig::default().validate().is_err());
        let ok = TrainConfig {
            max_steps: Some(1),
            ..TrainConfig::default()
        };
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn best_path() {
        assert_eq!(best_checkpoint_path(Path::new("out/m.ckpt")), PathBuf::from("out/m.best.ckpt"));
        assert_eq!(best_checkpoint_path(Path::new("m")), PathBuf::from("m.best"));
    }

    #[test]
    fn rejects_small_images() {
        let p = SinetParams::<f64>::init(ModelConfig::new(2, 3, 1, crate::model::Variant::Full), 0).unwrap();
        let img = Tensor3::<f64>::zeros(8, 8, 3);
        let cfg = TrainConfig {
            crop: 16,
            max_steps: Some(1),
            ..TrainConfig::default()
        };
        let r = train_pairs(p, &[(img.clone(), img)], &cfg, &LossConfig::default(), |_| {});
        assert!(matches!(r, Err(Error::Training(_))));
    }
}
