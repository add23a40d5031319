use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scnp_core::datagen::{GenParams, Structure};
use scnp_core::losses::{LossFn, LossKind};
use scnp_core::scnp::ScnpMode;
use scnp_core::tensor::{Activation, WindowSize};
use scnp_core::train::TrainConfig;

use crate::spec::{
    BenchmarkSpec, EvalSpec, GenerateSpec, GradcheckSpec, Protocol, RunSpec, Suite, SweepSpec, TrainSpec,
};

#[derive(Debug, Parser)]
#[command(name = "scnp", version, about = "Same-class neighbor penalization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Tubular,
    Round,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScnpArg {
    Off,
    On,
    Joint,
}

impl ScnpArg {
    fn mode(self, w: usize) -> Result<ScnpMode> {
        Ok(match self {
            ScnpArg::Off => ScnpMode::Off,
            ScnpArg::On => ScnpMode::ScnpOnly { w: WindowSize::new(w)? },
            ScnpArg::Joint => ScnpMode::Joint { w: WindowSize::new(w)? },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Softmax,
    Sigmoid,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Softmax => Activation::Softmax,
            ActivationArg::Sigmoid => Activation::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Ablation,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Window size × structure thickness sweep.
    Sweep(SweepArgs),
    /// Every loss with plain and penalized logits.
    Benchmark(BenchmarkArgs),
    /// Repeat a run from its runspec.json.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Curve thickness in pixels (tubular).
    #[arg(long, default_value_t = 2.0)]
    pub thickness: f64,
    #[arg(long, default_value_t = 3.0)]
    pub radius_min: f64,
    #[arg(long, default_value_t = 6.0)]
    pub radius_max: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Image corruption of generated data.
#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = GenParams::tubular(1, 64, 1.0, 0).noise)]
    pub noise: f64,
    /// Chance that a curve loses part of its signal.
    #[arg(long, default_value_t = GenParams::tubular(1, 64, 1.0, 0).dropout)]
    pub dropout: f64,
    #[arg(long, default_value_t = GenParams::tubular(1, 64, 1.0, 0).dropout_len[0])]
    pub dropout_min: usize,
    #[arg(long, default_value_t = GenParams::tubular(1, 64, 1.0, 0).dropout_len[1])]
    pub dropout_max: usize,
    /// Fraction of the signal left inside a dropout stretch.
    #[arg(long, default_value_t = GenParams::tubular(1, 64, 1.0, 0).dropout_residual)]
    pub residual: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset for the validation columns of the log (default: the
    /// training data).
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Loss as `name[:key=value,...]`, e.g. `tversky:beta=0.7`.
    #[arg(long, default_value = "cedice")]
    pub loss: String,
    #[arg(long, value_enum, default_value_t = ScnpArg::Off)]
    pub scnp: ScnpArg,
    #[arg(long, default_value_t = 3)]
    pub w: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    pub momentum: f64,
    #[arg(long, value_enum, default_value_t = ActivationArg::Softmax)]
    pub activation: ActivationArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Close predicted masks with a k×k square until they stop changing.
    #[arg(long)]
    pub closing: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Losses to check (default: all).
    #[arg(long, value_delimiter = ',')]
    pub loss: Vec<String>,
    /// Modes to check (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub scnp: Vec<ScnpArg>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub w: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ActivationArg::Softmax)]
    pub activation: ActivationArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the reports and runspec.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Data and optimization settings of every experiment cell.
#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long, default_value_t = Protocol::default().n_train)]
    pub n_train: usize,
    #[arg(long, default_value_t = Protocol::default().n_test)]
    pub n_test: usize,
    #[arg(long, default_value_t = Protocol::default().size)]
    pub size: usize,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = Protocol::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = Protocol::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = Protocol::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = Protocol::default().momentum)]
    pub momentum: f64,
    /// Number of seeds, counted up from --first-seed.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
}

impl ProtocolArgs {
    fn protocol(&self) -> Protocol {
        Protocol {
            n_train: self.n_train,
            n_test: self.n_test,
            size: self.size,
            noise: self.noise.noise,
            dropout: self.noise.dropout,
            dropout_len: [self.noise.dropout_min, self.noise.dropout_max],
            dropout_residual: self.noise.residual,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
        }
    }

    fn seed_list(&self) -> Vec<u64> {
        (self.first_seed..self.first_seed + self.seeds).collect()
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Swept parameter; only the window size is supported.
    #[arg(long, default_value = "w")]
    pub param: String,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7")]
    pub values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub thicknesses: Vec<f64>,
    #[arg(long, default_value = "cedice")]
    pub loss: String,
    /// Optimize plain and penalized logits together.
    #[arg(long)]
    pub joint: bool,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::Ablation)]
    pub suite: SuiteArg,
    /// Restrict the suite to these losses (default: all eight).
    #[arg(long, value_delimiter = ';')]
    pub losses: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub w: usize,
    #[arg(long, default_value_t = 2.0)]
    pub thickness: f64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// A runspec.json written by an earlier run.
    #[arg(long)]
    pub config: PathBuf,
}

fn parse_loss(s: &str) -> Result<LossFn> {
    Ok(s.parse::<LossFn>()?)
}

fn gen_params(kind: Kind, n: usize, size: usize, thickness: f64, radius: [f64; 2], noise: &NoiseArgs, seed: u64) -> GenParams {
    let structure = match kind {
        Kind::Tubular => Structure::Tubular { thickness },
        Kind::Round => Structure::Round {
            radius_min: radius[0],
            radius_max: radius[1],
        },
    };
    GenParams {
        structure,
        n_samples: n,
        size,
        noise: noise.noise,
        dropout: noise.dropout,
        dropout_len: [noise.dropout_min, noise.dropout_max],
        dropout_residual: noise.residual,
        seed,
    }
}

impl Command {
    /// Resolves the flags into a validated run description.
    pub fn into_spec(self) -> Result<RunSpec> {
        Ok(match self {
            Command::Generate(a) => {
                let params = gen_params(
                    a.kind,
                    a.n,
                    a.size,
                    a.thickness,
                    [a.radius_min, a.radius_max],
                    &a.noise,
                    a.seed,
                );
                params.validate()?;
                RunSpec::Generate(GenerateSpec { params, out: a.out })
            }
            Command::Train(a) => {
                let config = TrainConfig {
                    epochs: a.epochs,
                    batch_size: a.batch_size,
                    lr: a.lr,
                    momentum: a.momentum,
                    seed: a.seed,
                    loss: parse_loss(&a.loss)?,
                    scnp: a.scnp.mode(a.w)?,
                    activation: a.activation.into(),
                };
                config.validate()?;
                RunSpec::Train(TrainSpec {
                    data: a.data,
                    val: a.val,
                    config,
                    out: a.out,
                })
            }
            Command::Eval(a) => {
                if let Some(k) = a.closing {
                    if k == 0 || k % 2 == 0 {
                        bail!("closing size must be odd and positive, got {k}");
                    }
                }
                RunSpec::Eval(EvalSpec {
                    data: a.data,
                    model: a.model,
                    closing: a.closing,
                    out: a.out,
                })
            }
            Command::Gradcheck(a) => {
                let losses = if a.loss.is_empty() {
                    LossKind::ALL.iter().map(|k| k.default_loss()).collect()
                } else {
                    a.loss.iter().map(|s| parse_loss(s)).collect::<Result<Vec<_>>>()?
                };
                let kinds = if a.scnp.is_empty() {
                    vec![ScnpArg::Off, ScnpArg::On, ScnpArg::Joint]
                } else {
                    a.scnp.clone()
                };
                let mut modes = Vec::new();
                for kind in kinds {
                    if kind == ScnpArg::Off {
                        modes.push(ScnpMode::Off);
                        continue;
                    }
                    for &w in &a.w {
                        modes.push(kind.mode(w)?);
                    }
                }
                RunSpec::Gradcheck(GradcheckSpec {
                    losses,
                    modes,
                    activation: a.activation.into(),
                    seed: a.seed,
                    out: a.out,
                })
            }
            Command::Sweep(a) => {
                if a.param != "w" {
                    bail!("only the window size can be swept (--param w), got {:?}", a.param);
                }
                let protocol = a.protocol.protocol();
                protocol.validate(&a.thicknesses)?;
                RunSpec::Sweep(SweepSpec {
                    loss: parse_loss(&a.loss)?,
                    joint: a.joint,
                    windows: a.values.iter().map(|&w| WindowSize::new(w)).collect::<Result<_, _>>()?,
                    thicknesses: a.thicknesses,
                    seeds: a.protocol.seed_list(),
                    protocol,
                    out: a.out,
                })
            }
            Command::Benchmark(a) => {
                let SuiteArg::Ablation = a.suite;
                let losses = if a.losses.is_empty() {
                    LossKind::ALL.iter().map(|k| k.default_loss()).collect()
                } else {
                    a.losses.iter().map(|s| parse_loss(s)).collect::<Result<Vec<_>>>()?
                };
                let protocol = a.protocol.protocol();
                protocol.validate(&[a.thickness])?;
                RunSpec::Benchmark(BenchmarkSpec {
                    suite: Suite::Ablation,
                    losses,
                    w: WindowSize::new(a.w)?,
                    thickness: a.thickness,
                    seeds: a.protocol.seed_list(),
                    protocol,
                    out: a.out,
                })
            }
            Command::Run(a) => RunSpec::read(&a.config)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(args: &[&str]) -> Result<RunSpec> {
        let mut full = vec!["scnp"];
        full.extend(args);
        Cli::try_parse_from(full)?.command.into_spec()
    }

    #[test]
    fn train_flags_resolve() {
        let s = spec(&["train", "--data", "d", "--loss", "tversky:beta=0.8", "--scnp", "joint", "--w", "5", "--out", "o"])
            .unwrap();
        let RunSpec::Train(t) = s else { panic!() };
        assert_eq!(t.config.scnp, ScnpMode::Joint { w: WindowSize::new(5).unwrap() });
        assert_eq!(t.config.loss.to_string(), "tversky:beta=0.8,eps=1e-5");
    }

    #[test]
    fn even_window_and_unknown_loss_are_rejected() {
        assert!(spec(&["train", "--data", "d", "--scnp", "on", "--w", "4", "--out", "o"]).is_err());
        let err = spec(&["train", "--data", "d", "--loss", "hinge", "--out", "o"]).unwrap_err().to_string();
        assert!(err.contains("cedice") && err.contains("rwloss"), "{err}");
    }

    #[test]
    fn gradcheck_expands_modes_per_window() {
        let RunSpec::Gradcheck(g) = spec(&["gradcheck", "--loss", "ce", "--w", "1,3"]).unwrap() else { panic!() };
        assert_eq!(g.modes.len(), 5);
        let RunSpec::Gradcheck(g) = spec(&["gradcheck"]).unwrap() else { panic!() };
        assert_eq!((g.losses.len(), g.modes.len()), (8, 7));
    }

    #[test]
    fn sweep_and_benchmark_defaults() {
        let RunSpec::Sweep(s) = spec(&["sweep", "--out", "o"]).unwrap() else { panic!() };
        assert_eq!(s.windows.len() * s.thicknesses.len() * s.seeds.len(), 4 * 3 * 5);
        assert!(spec(&["sweep", "--param", "lr", "--out", "o"]).is_err());
        let RunSpec::Benchmark(b) = spec(&["benchmark", "--suite", "ablation", "--seeds", "2", "--out", "o"]).unwrap()
        else {
            panic!()
        };
        assert_eq!(b.seeds, vec![0, 1]);
        assert_eq!(b.losses.len(), 8);
    }
}
