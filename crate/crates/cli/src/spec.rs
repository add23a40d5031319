//! Fully resolved run descriptions. Every command writes its own as
//! `runspec.json` into its output directory, and `scnp run --config` executes
//! one again.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use scnp_core::datagen::{GenParams, Structure};
use scnp_core::losses::{LossFn, LossKind};
use scnp_core::scnp::ScnpMode;
use scnp_core::tensor::{Activation, WindowSize};
use scnp_core::train::TrainConfig;

pub const RUNSPEC: &str = "runspec.json";

/// Test data of seed `s` is generated with seed `s + TEST_SEED_OFFSET`.
pub const TEST_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum RunSpec {
    Generate(GenerateSpec),
    Train(TrainSpec),
    Eval(EvalSpec),
    Gradcheck(GradcheckSpec),
    Sweep(SweepSpec),
    Benchmark(BenchmarkSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub params: GenParams,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub data: PathBuf,
    #[serde(default)]
    pub val: Option<PathBuf>,
    pub config: TrainConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub data: PathBuf,
    pub model: PathBuf,
    #[serde(default)]
    pub closing: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSpec {
    pub losses: Vec<LossFn>,
    pub modes: Vec<ScnpMode>,
    pub activation: Activation,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Data and training settings shared by every cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub n_train: usize,
    pub n_test: usize,
    pub size: usize,
    pub noise: f64,
    pub dropout: f64,
    pub dropout_len: [usize; 2],
    pub dropout_residual: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        let data = GenParams::tubular(200, 64, 2.0, 0);
        let train = TrainConfig::default();
        Protocol {
            n_train: 200,
            n_test: 50,
            size: data.size,
            noise: data.noise,
            dropout: data.dropout,
            dropout_len: data.dropout_len,
            dropout_residual: data.dropout_residual,
            epochs: 12,
            batch_size: train.batch_size,
            lr: train.lr,
            momentum: train.momentum,
        }
    }
}

impl Protocol {
    /// Generator parameters of the train and test sets for one seed.
    pub fn data(&self, thickness: f64, seed: u64) -> (GenParams, GenParams) {
        let train = GenParams {
            structure: Structure::Tubular { thickness },
            n_samples: self.n_train,
            size: self.size,
            noise: self.noise,
            dropout: self.dropout,
            dropout_len: self.dropout_len,
            dropout_residual: self.dropout_residual,
            seed,
        };
        let test = GenParams {
            n_samples: self.n_test,
            seed: seed.wrapping_add(TEST_SEED_OFFSET),
            ..train
        };
        (train, test)
    }

    pub fn train_config(&self, loss: LossFn, scnp: ScnpMode, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            seed,
            loss,
            scnp,
            activation: Activation::Softmax,
        }
    }

    pub fn validate(&self, thicknesses: &[f64]) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            bail!("train and test sets need at least one sample each");
        }
        for &t in thicknesses {
            let (train, _) = self.data(t, 0);
            train.validate()?;
        }
        self.train_config(LossKind::Ce.default_loss(), ScnpMode::Off, 0).validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub loss: LossFn,
    /// Optimize plain and penalized logits together instead of penalized
    /// logits alone.
    pub joint: bool,
    pub windows: Vec<WindowSize>,
    pub thicknesses: Vec<f64>,
    pub seeds: Vec<u64>,
    pub protocol: Protocol,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub suite: Suite,
    pub losses: Vec<LossFn>,
    pub w: WindowSize,
    pub thickness: f64,
    pub seeds: Vec<u64>,
    pub protocol: Protocol,
    pub out: PathBuf,
}

impl RunSpec {
    pub fn out(&self) -> Option<&Path> {
        match self {
            RunSpec::Generate(s) => Some(&s.out),
            RunSpec::Train(s) => Some(&s.out),
            RunSpec::Eval(s) => Some(&s.out),
            RunSpec::Gradcheck(s) => s.out.as_deref(),
            RunSpec::Sweep(s) => Some(&s.out),
            RunSpec::Benchmark(s) => Some(&s.out),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run spec serializes") + "\n"
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Creates the output directory and writes `runspec.json` into it.
    pub fn write(&self) -> Result<()> {
        if let Some(out) = self.out() {
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            write_file(&out.join(RUNSPEC), &self.to_json())?;
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
