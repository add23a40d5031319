use std::fmt;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use scnp_core::datagen::write_dataset;
use scnp_core::dataset::load_dataset;
use scnp_core::gradcheck::{gradcheck, GradcheckReport};
use scnp_core::losses::LossFn;
use scnp_core::metrics::{evaluate_batch, MetricsReport};
use scnp_core::scnp::ScnpMode;
use scnp_core::tensor::Activation;
use scnp_core::train::{load_checkpoint, predict, save_checkpoint, train};

use crate::spec::{write_file, EvalSpec, GenerateSpec, GradcheckSpec, TrainSpec};

pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const GRADCHECK_JSON: &str = "gradcheck.json";

/// Raised when a gradient check exceeds its tolerance.
#[derive(Debug)]
pub struct GradcheckFailed {
    pub failures: usize,
    pub total: usize,
}

impl fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} gradient checks failed", self.failures, self.total)
    }
}

impl std::error::Error for GradcheckFailed {}

pub fn generate(spec: &GenerateSpec) -> Result<()> {
    let manifest = write_dataset(&spec.out, &spec.params)?;
    println!(
        "wrote {} {} samples to {}",
        manifest.samples.len(),
        manifest.kind,
        spec.out.display()
    );
    Ok(())
}

pub fn train_model(spec: &TrainSpec) -> Result<()> {
    spec.config.validate()?;
    let data = load_dataset(&spec.data)?;
    let val = spec.val.as_deref().map(load_dataset).transpose()?;
    let trained = train(&spec.config, &data, val.as_ref())?;
    save_checkpoint(&spec.out, &trained.model, &spec.config)?;
    write_file(&spec.out.join(CONVERGENCE_CSV), &trained.log.to_csv())?;
    if let Some(last) = trained.log.rows.last() {
        println!(
            "epoch {}: train_loss {:.6} val_dice {:.4} val_betti0 {:.4}",
            last.epoch, last.train_loss, last.val_dice, last.val_betti0
        );
    }
    Ok(())
}

pub fn eval(spec: &EvalSpec) -> Result<()> {
    let data = load_dataset(&spec.data)?;
    let (model, manifest) = load_checkpoint(&spec.model)?;
    let activation = manifest.activation;
    if model.out_channels() != data.output_channels(activation) {
        anyhow::bail!(
            "model predicts {} channels but the data needs {}",
            model.out_channels(),
            data.output_channels(activation)
        );
    }
    let yhat = predict(&model, &data.images, activation)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let y = data.targets(&all, activation)?;
    let report = MetricsReport::from_images(&evaluate_batch(&yhat, &y, spec.closing)?);
    write_file(&spec.out.join(METRICS_JSON), &(report.to_json() + "\n"))?;
    write_file(&spec.out.join(METRICS_CSV), &report.to_csv())?;
    println!(
        "dice {:.4}  betti0_error {:.4}  cldice {:.4}  roundness_error {:.4}",
        report.dice.mean, report.betti0_error.mean, report.cldice.mean, report.roundness_error.mean
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct GradcheckEntry {
    loss: LossFn,
    scnp: ScnpMode,
    activation: Activation,
    report: GradcheckReport,
}

pub fn gradcheck_all(spec: &GradcheckSpec) -> Result<()> {
    let cells: Vec<(LossFn, ScnpMode)> = spec
        .losses
        .iter()
        .flat_map(|&loss| spec.modes.iter().map(move |&mode| (loss, mode)))
        .collect();
    let entries = cells
        .par_iter()
        .map(|&(loss, scnp)| {
            let report = gradcheck(&loss, scnp, spec.activation, spec.seed)
                .with_context(|| format!("gradcheck {loss} {}", mode_name(scnp)))?;
            Ok(GradcheckEntry {
                loss,
                scnp,
                activation: spec.activation,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut failures = 0;
    for e in &entries {
        let ok = e.report.passed();
        failures += !ok as usize;
        println!(
            "{:<40} {:<8} max_rel_error {:.3e} (tol {:.0e}) at {:?}  {}",
            e.loss.to_string(),
            mode_name(e.scnp),
            e.report.max_rel_error,
            e.report.tolerance,
            e.report.coordinate,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = &spec.out {
        let text = serde_json::to_string_pretty(&entries)? + "\n";
        write_file(&out.join(GRADCHECK_JSON), &text)?;
    }
    if failures > 0 {
        return Err(GradcheckFailed {
            failures,
            total: entries.len(),
        }
        .into());
    }
    Ok(())
}

/// `off`, `on w=3`, `joint w=5`, ...
pub fn mode_name(mode: ScnpMode) -> String {
    match mode.window() {
        None => mode.label().to_string(),
        Some(w) => format!("{} w={w}", mode.label()),
    }
}
