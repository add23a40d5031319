//! Mini-batch training of [`TinyCnn`] with optional SCNP, convergence
//! logging and checkpoints.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{LossFn, LossKind};
use crate::metrics::evaluate_batch;
use crate::model::{LayerInfo, TinyCnn};
use crate::optim::Sgd;
use crate::rng;
use crate::scnp::{apply_mode, ScnpMode};
use crate::tensor::{normalize, Activation, Tensor4};

/// Images per forward pass when only predicting.
const EVAL_CHUNK: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossFn,
    pub scnp: ScnpMode,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
            loss: LossKind::CeDice.default_loss(),
            scnp: ScnpMode::Off,
            activation: Activation::Softmax,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Sgd::new(self.lr, self.momentum)?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
    pub val_betti0: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLog {
    pub rows: Vec<EpochRow>,
}

impl ConvergenceLog {
    pub const HEADER: &'static str = "epoch,train_loss,val_loss,val_dice,val_betti0";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.val_dice, r.val_betti0
            );
        }
        out
    }

    /// First epoch whose training loss is at or below `threshold`.
    pub fn epochs_to(&self, threshold: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.train_loss <= threshold).map(|r| r.epoch)
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: TinyCnn,
    pub log: ConvergenceLog,
    /// Optimization steps taken and the wall-clock seconds they took,
    /// validation excluded.
    pub steps: usize,
    pub step_seconds: f64,
}

/// Normalized predictions for every image of `data`.
pub fn predict(model: &TinyCnn, images: &Tensor4, activation: Activation) -> Result<Tensor4> {
    let n = images.shape().batch;
    let mut parts = Vec::new();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let logits = model.forward(&images.gather_batch(&idx)?)?;
        parts.push(normalize(&logits, activation)?);
    }
    Tensor4::stack(&parts.iter().collect::<Vec<_>>())
}

/// Plain loss, mean Dice and mean Betti-0 error over `data`.
fn validate(model: &TinyCnn, config: &TrainConfig, data: &Dataset) -> Result<(f64, f64, f64)> {
    let n = data.len();
    let (mut loss, mut dice, mut betti) = (0.0, 0.0, 0.0);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let logits = model.forward(&data.images(&idx)?)?;
        let y = data.targets(&idx, config.activation)?;
        loss += config.loss.evaluate(&logits, &y)?.value * idx.len() as f64;
        let yhat = normalize(&logits, config.activation)?;
        for m in evaluate_batch(&yhat, &y, None)? {
            dice += m.dice;
            betti += m.betti0_error;
        }
    }
    let n = n as f64;
    Ok((loss / n, dice / n, betti / n))
}

/// Trains a fresh model on `train`. Validation columns of the log are
/// computed on `val`, or on `train` when no validation set is given.
pub fn train(config: &TrainConfig, train: &Dataset, val: Option<&Dataset>) -> Result<Trained> {
    config.validate()?;
    let mut model = TinyCnn::new(
        1,
        train.output_channels(config.activation),
        &mut rng::stream(config.seed, "weights"),
    );
    let mut shuffle = rng::stream(config.seed, "shuffle");
    let mut opt = Sgd::new(config.lr, config.momentum)?;
    let mut log = ConvergenceLog::default();
    let val = val.unwrap_or(train);
    let mut steps = 0;
    let mut step_seconds = 0.0;
    for epoch in 1..=config.epochs {
        let order = train.shuffled(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let started = Instant::now();
            let x = train.images(idx)?;
            let y = train.targets(idx, config.activation)?;
            let (logits, cache) = model.forward_cached(&x)?;
            let res = apply_mode(config.scnp, &config.loss, &logits, &y)?;
            if !res.value.is_finite() || !res.grad_z.all_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch,
                    loss: config.loss.to_string(),
                    value: res.value,
                });
            }
            let grads = model.backward(&cache, &res.grad_z)?;
            opt.step(model.param_slices_mut(), &grads.slices());
            step_seconds += started.elapsed().as_secs_f64();
            steps += 1;
            total += res.value;
            batches += 1;
        }
        let (val_loss, val_dice, val_betti0) = validate(&model, config, val)?;
        log.rows.push(EpochRow {
            epoch,
            train_loss: total / batches as f64,
            val_loss,
            val_dice,
            val_betti0,
        });
    }
    Ok(Trained {
        model,
        log,
        steps,
        step_seconds,
    })
}

pub const CHECKPOINT_MANIFEST: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    pub layers: Vec<LayerInfo>,
    pub config: TrainConfig,
}

/// Writes `model.json` and the layer weights into `dir`.
pub fn save_checkpoint(dir: &Path, model: &TinyCnn, config: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.save_weights(dir)?;
    let manifest = CheckpointManifest {
        architecture: "tinycnn".to_string(),
        in_channels: model.in_channels(),
        out_channels: model.out_channels(),
        activation: config.activation,
        layers: model.describe(),
        config: config.clone(),
    };
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(TinyCnn, CheckpointManifest)> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    let model = TinyCnn::load_weights(dir)?;
    if model.describe() != manifest.layers {
        return Err(Error::format(path, "layer shapes disagree with the weight files"));
    }
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{write_dataset, GenParams};
    use crate::dataset::load_dataset;
    use crate::tensor::WindowSize;

    fn lines(n: usize, seed: u64) -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &GenParams::tubular(n, 24, 2.0, seed)).unwrap();
        let data = load_dataset(dir.path()).unwrap();
        (dir, data)
    }

    #[test]
    fn smoke_and_determinism() {
        let (_d, data) = lines(4, 1);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train(&config, &data, None).unwrap();
        assert!(a.log.rows[0].train_loss.is_finite());
        let b = train(&config, &data, None).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.model, b.model);
        assert!(a.log.to_csv().starts_with("epoch,train_loss,val_loss,val_dice,val_betti0\n1,"));
    }

    #[test]
    fn unit_window_matches_plain_training() {
        let (_d, data) = lines(4, 2);
        let off = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let on = TrainConfig {
            scnp: ScnpMode::ScnpOnly {
                w: WindowSize::IDENTITY,
            },
            ..off.clone()
        };
        assert_eq!(train(&off, &data, None).unwrap().model, train(&on, &data, None).unwrap().model);
    }

    #[test]
    fn loss_decreases_in_both_modes() {
        let (_d, data) = lines(16, 3);
        for scnp in [ScnpMode::Off, ScnpMode::ScnpOnly { w: WindowSize::DEFAULT }] {
            let config = TrainConfig {
                epochs: 20,
                scnp,
                ..TrainConfig::default()
            };
            let log = train(&config, &data, None).unwrap().log;
            assert!(log.rows[19].train_loss < log.rows[0].train_loss, "{scnp:?}: {}", log.to_csv());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (_d, data) = lines(2, 4);
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let trained = train(&config, &data, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &trained.model, &config).unwrap();
        let (model, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest.config, config);
        for (a, b) in model.layers().iter().zip(trained.model.layers()) {
            for (x, y) in a.kernel.data().iter().zip(b.kernel.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        let (_d, data) = lines(2, 5);
        let config = TrainConfig {
            epochs: 1,
            lr: 1e300,
            ..TrainConfig::default()
        };
        match train(&TrainConfig { epochs: 3, ..config }, &data, None) {
            Err(Error::NonFinite { epoch, loss, .. }) => {
                assert!(epoch >= 1);
                assert!(loss.starts_with("cedice"), "{loss}");
            }
            other => panic!("expected a non-finite abort, got {:?}", other.map(|t| t.log)),
        }
    }
}
