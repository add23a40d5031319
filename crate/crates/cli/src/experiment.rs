//! Multi-cell experiments: the loss ablation benchmark and the window-size
//! sweep. Cells run in parallel; every output file is assembled afterwards
//! in cell order, so results do not depend on the worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde::Serialize;

use scnp_core::datagen::{build_dataset, median_thickness};
use scnp_core::dataset::Dataset;
use scnp_core::losses::{LossFn, LossKind};
use scnp_core::metrics::{evaluate_batch, BinaryMask, ImageMetrics, MetricSummary, MetricsReport};
use scnp_core::scnp::ScnpMode;
use scnp_core::tensor::WindowSize;
use scnp_core::train::{predict, train, ConvergenceLog, TrainConfig};

use crate::spec::{write_file, BenchmarkSpec, Protocol, SweepSpec};

pub const ROWS_CSV: &str = "rows.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_MD: &str = "summary.md";
pub const TIMING_JSON: &str = "timing.json";
pub const ARGMIN_CSV: &str = "argmin.csv";

/// Headline metrics of one trained model on its test set.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub metrics: ImageMetrics,
    pub log: ConvergenceLog,
    pub steps: usize,
    pub step_seconds: f64,
}

pub fn run_cell(config: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<CellOutcome> {
    let trained = train(config, train_set, Some(test_set))?;
    let yhat = predict(&trained.model, &test_set.images, config.activation)?;
    let all: Vec<usize> = (0..test_set.len()).collect();
    let y = test_set.targets(&all, config.activation)?;
    let report = MetricsReport::from_images(&evaluate_batch(&yhat, &y, None)?);
    Ok(CellOutcome {
        metrics: ImageMetrics {
            dice: report.dice.mean,
            betti0_error: report.betti0_error.mean,
            cldice: report.cldice.mean,
            roundness_error: report.roundness_error.mean,
        },
        log: trained.log,
        steps: trained.steps,
        step_seconds: trained.step_seconds,
    })
}

/// Train and test sets for every `(thickness, seed)` key, in key order.
fn datasets(protocol: &Protocol, keys: &[(f64, u64)]) -> Result<Vec<(Dataset, Dataset)>> {
    keys.par_iter()
        .map(|&(t, seed)| {
            let (tr, te) = protocol.data(t, seed);
            Ok((build_dataset(&tr)?, build_dataset(&te)?))
        })
        .collect()
}

fn metric_columns(m: &ImageMetrics) -> String {
    format!("{},{},{},{}", m.dice, m.betti0_error, m.cldice, m.roundness_error)
}

fn summaries(rows: &[&ImageMetrics]) -> [MetricSummary; 4] {
    let col = |f: fn(&ImageMetrics) -> f64| MetricSummary::from_values(rows.iter().map(|m| f(m)).collect());
    [
        col(|m| m.dice),
        col(|m| m.betti0_error),
        col(|m| m.cldice),
        col(|m| m.roundness_error),
    ]
}

fn pm(s: &MetricSummary) -> String {
    format!("{:.3} ± {:.3}", s.mean, s.std)
}

/// One benchmark configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub loss: LossFn,
    pub scnp: ScnpMode,
}

impl BenchConfig {
    fn window(&self) -> usize {
        self.scnp.window().map_or(1, WindowSize::get)
    }
}

/// Every loss with plain and penalized logits; CEDice also jointly.
pub fn ablation_configs(losses: &[LossFn], w: WindowSize) -> Vec<BenchConfig> {
    let mut configs = Vec::new();
    for &loss in losses {
        configs.push(BenchConfig {
            loss,
            scnp: ScnpMode::Off,
        });
        configs.push(BenchConfig {
            loss,
            scnp: ScnpMode::ScnpOnly { w },
        });
        if loss.kind() == LossKind::CeDice {
            configs.push(BenchConfig {
                loss,
                scnp: ScnpMode::Joint { w },
            });
        }
    }
    configs
}

#[derive(Debug, Serialize)]
struct TimingRow {
    loss: String,
    scnp: String,
    steps: usize,
    seconds_per_step: f64,
    /// Relative to the same loss with plain logits.
    overhead: f64,
}

/// First epoch at which the plain validation loss reaches `threshold`.
fn epochs_to(log: &ConvergenceLog, threshold: f64) -> Option<usize> {
    log.rows.iter().find(|r| r.val_loss <= threshold).map(|r| r.epoch)
}

pub fn benchmark(spec: &BenchmarkSpec) -> Result<()> {
    if spec.seeds.is_empty() || spec.losses.is_empty() {
        bail!("benchmark needs at least one seed and one loss");
    }
    spec.protocol.validate(&[spec.thickness])?;
    let configs = ablation_configs(&spec.losses, spec.w);
    let keys: Vec<(f64, u64)> = spec.seeds.iter().map(|&s| (spec.thickness, s)).collect();
    let data = datasets(&spec.protocol, &keys)?;
    let cells: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..spec.seeds.len()).map(move |s| (c, s)))
        .collect();
    let outcomes = cells
        .par_iter()
        .map(|&(c, s)| {
            let cfg = configs[c];
            let config = spec.protocol.train_config(cfg.loss, cfg.scnp, spec.seeds[s]);
            let out = run_cell(&config, &data[s].0, &data[s].1)?;
            eprintln!(
                "{} {} seed {}: betti0 {:.3} dice {:.4}",
                cfg.loss.kind().name(),
                cfg.scnp.label(),
                spec.seeds[s],
                out.metrics.betti0_error,
                out.metrics.dice
            );
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_config: Vec<&[CellOutcome]> = outcomes.chunks(spec.seeds.len()).collect();

    let mut rows = String::from("loss,scnp,w,seed,dice,betti0_error,cldice,roundness_error\n");
    for (cfg, outs) in configs.iter().zip(&per_config) {
        for (seed, o) in spec.seeds.iter().zip(outs.iter()) {
            let _ = writeln!(
                rows,
                "{},{},{},{seed},{}",
                cfg.loss.kind().name(),
                cfg.scnp.label(),
                cfg.window(),
                metric_columns(&o.metrics)
            );
        }
    }
    write_file(&spec.out.join(ROWS_CSV), &rows)?;
    for (cfg, outs) in configs.iter().zip(&per_config) {
        for (seed, o) in spec.seeds.iter().zip(outs.iter()) {
            let name = format!("logs/{}_{}_seed{seed}.csv", cfg.loss.kind().name(), cfg.scnp.label());
            write_file(&spec.out.join(name), &o.log.to_csv())?;
        }
    }

    let mut summary = String::from(
        "loss,scnp,w,seeds,dice_mean,dice_std,betti0_error_mean,betti0_error_std,\
         cldice_mean,cldice_std,roundness_error_mean,roundness_error_std\n",
    );
    let mut stats = Vec::new();
    for (cfg, outs) in configs.iter().zip(&per_config) {
        let s = summaries(&outs.iter().map(|o| &o.metrics).collect::<Vec<_>>());
        let _ = write!(summary, "{},{},{},{}", cfg.loss.kind().name(), cfg.scnp.label(), cfg.window(), outs.len());
        for m in &s {
            let _ = write!(summary, ",{},{}", m.mean, m.std);
        }
        summary.push('\n');
        stats.push(s);
    }
    write_file(&spec.out.join(SUMMARY_CSV), &summary)?;
    write_file(&spec.out.join(SUMMARY_MD), &benchmark_markdown(spec, &configs, &stats, &per_config))?;

    let mut timing = Vec::new();
    let mut base = BTreeMap::new();
    for (cfg, outs) in configs.iter().zip(&per_config) {
        let steps: usize = outs.iter().map(|o| o.steps).sum();
        let per_step = outs.iter().map(|o| o.step_seconds).sum::<f64>() / steps.max(1) as f64;
        if cfg.scnp == ScnpMode::Off {
            base.insert(cfg.loss.to_string(), per_step);
        }
        let overhead = base.get(&cfg.loss.to_string()).map_or(0.0, |b| per_step / b - 1.0);
        timing.push(TimingRow {
            loss: cfg.loss.to_string(),
            scnp: cfg.scnp.label().to_string(),
            steps,
            seconds_per_step: per_step,
            overhead,
        });
    }
    write_file(&spec.out.join(TIMING_JSON), &(serde_json::to_string_pretty(&timing)? + "\n"))?;
    print!("{}", std::fs::read_to_string(spec.out.join(SUMMARY_MD))?);
    Ok(())
}

fn benchmark_markdown(
    spec: &BenchmarkSpec,
    configs: &[BenchConfig],
    stats: &[[MetricSummary; 4]],
    per_config: &[&[CellOutcome]],
) -> String {
    let find = |loss: LossFn, label: &str| {
        configs
            .iter()
            .position(|c| c.loss == loss && c.scnp.label() == label)
    };
    let mut md = format!(
        "# Ablation\n\n{} seeds, w = {}, thickness {}, {} train / {} test images of {}×{}, {} epochs.\n\n",
        spec.seeds.len(),
        spec.w,
        spec.thickness,
        spec.protocol.n_train,
        spec.protocol.n_test,
        spec.protocol.size,
        spec.protocol.size,
        spec.protocol.epochs
    );
    md.push_str("| loss | mode | Dice | β0e | clDice | Δβ0e |\n|---|---|---|---|---|---|\n");
    let mut improved = 0;
    for &loss in &spec.losses {
        let Some(off) = find(loss, "off") else { continue };
        for label in ["off", "on", "joint"] {
            let Some(i) = find(loss, label) else { continue };
            let [dice, b0, cl, _] = &stats[i];
            let delta = if label == "off" {
                String::from("")
            } else {
                format!("{:+.3}", b0.mean - stats[off][1].mean)
            };
            let _ = writeln!(
                md,
                "| {} | {label} | {} | {} | {} | {delta} |",
                loss.kind().name(),
                pm(dice),
                pm(b0),
                pm(cl)
            );
        }
        if let Some(on) = find(loss, "on") {
            improved += (stats[on][1].mean < stats[off][1].mean) as usize;
        }
    }
    let _ = writeln!(
        md,
        "\nβ0e lower with penalized logits for {improved} of {} losses.\n",
        spec.losses.len()
    );

    md.push_str(
        "## Convergence\n\nEpochs until the plain validation loss first reaches 1.05× the best value of the \
         plain-logit run, averaged over the seeds where it does.\n\n| loss | mode | epochs | reached |\n|---|---|---|---|\n",
    );
    for &loss in &spec.losses {
        let Some(off) = find(loss, "off") else { continue };
        for label in ["off", "on", "joint"] {
            let Some(i) = find(loss, label) else { continue };
            let reached: Vec<usize> = per_config[i]
                .iter()
                .zip(per_config[off].iter())
                .filter_map(|(o, b)| {
                    let best = b.log.rows.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
                    epochs_to(&o.log, best * 1.05)
                })
                .collect();
            let mean = if reached.is_empty() {
                "n/a".to_string()
            } else {
                format!("{:.1}", reached.iter().sum::<usize>() as f64 / reached.len() as f64)
            };
            let _ = writeln!(
                md,
                "| {} | {label} | {mean} | {}/{} |",
                loss.kind().name(),
                reached.len(),
                per_config[i].len()
            );
        }
    }
    md
}

pub fn sweep(spec: &SweepSpec) -> Result<()> {
    if spec.seeds.is_empty() || spec.windows.is_empty() || spec.thicknesses.is_empty() {
        bail!("sweep needs at least one window, thickness and seed");
    }
    spec.protocol.validate(&spec.thicknesses)?;
    let keys: Vec<(f64, u64)> = spec
        .thicknesses
        .iter()
        .flat_map(|&t| spec.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let data = datasets(&spec.protocol, &keys)?;
    let cells: Vec<(usize, usize)> = (0..spec.windows.len())
        .flat_map(|w| (0..keys.len()).map(move |k| (w, k)))
        .collect();
    let outcomes = cells
        .par_iter()
        .map(|&(wi, k)| {
            let w = spec.windows[wi];
            let scnp = if spec.joint {
                ScnpMode::Joint { w }
            } else {
                ScnpMode::ScnpOnly { w }
            };
            let config = spec.protocol.train_config(spec.loss, scnp, keys[k].1);
            let out = run_cell(&config, &data[k].0, &data[k].1)?;
            eprintln!(
                "w={w} t={} seed {}: betti0 {:.3}",
                keys[k].0, keys[k].1, out.metrics.betti0_error
            );
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut runs = String::from("w,thickness,seed,dice,betti0_error,cldice,roundness_error\n");
    for (&(wi, k), o) in cells.iter().zip(&outcomes) {
        let _ = writeln!(
            runs,
            "{},{},{},{}",
            spec.windows[wi],
            keys[k].0,
            keys[k].1,
            metric_columns(&o.metrics)
        );
    }
    write_file(&spec.out.join("runs.csv"), &runs)?;

    // stats[w][t] over seeds
    let n_seeds = spec.seeds.len();
    let stats: Vec<Vec<[MetricSummary; 4]>> = (0..spec.windows.len())
        .map(|wi| {
            (0..spec.thicknesses.len())
                .map(|ti| {
                    let start = wi * keys.len() + ti * n_seeds;
                    summaries(&outcomes[start..start + n_seeds].iter().map(|o| &o.metrics).collect::<Vec<_>>())
                })
                .collect()
        })
        .collect();
    for (name, m) in [("betti0", 1), ("dice", 0), ("cldice", 2)] {
        let mut csv = String::from("w");
        for t in &spec.thicknesses {
            let _ = write!(csv, ",t{t}_mean,t{t}_std");
        }
        csv.push('\n');
        for (wi, w) in spec.windows.iter().enumerate() {
            let _ = write!(csv, "{w}");
            for s in &stats[wi] {
                let _ = write!(csv, ",{},{}", s[m].mean, s[m].std);
            }
            csv.push('\n');
        }
        write_file(&spec.out.join(format!("{name}.csv")), &csv)?;
    }

    let mut argmin = String::from("thickness,median_thickness,argmin_w,betti0_mean\n");
    let mut md = format!(
        "# Window-size sweep\n\nβ0e (mean ± std over {n_seeds} seeds), loss {}{}.\n\n| w |",
        spec.loss,
        if spec.joint { ", joint" } else { "" }
    );
    for t in &spec.thicknesses {
        let _ = write!(md, " t = {t} |");
    }
    md.push_str("\n|---|");
    md.push_str(&"---|".repeat(spec.thicknesses.len()));
    md.push('\n');
    for (wi, w) in spec.windows.iter().enumerate() {
        let _ = write!(md, "| {w} |");
        for s in &stats[wi] {
            let _ = write!(md, " {} |", pm(&s[1]));
        }
        md.push('\n');
    }
    md.push_str("\n| thickness | median measured thickness | argmin w |\n|---|---|---|\n");
    for (ti, &t) in spec.thicknesses.iter().enumerate() {
        // Lowest mean β0e; ties go to the smaller window.
        let best = (0..spec.windows.len())
            .min_by(|&a, &b| stats[a][ti][1].mean.total_cmp(&stats[b][ti][1].mean))
            .expect("at least one window");
        let measured = measured_thickness(&data[ti * n_seeds..(ti + 1) * n_seeds]);
        let _ = writeln!(
            argmin,
            "{t},{measured},{},{}",
            spec.windows[best],
            stats[best][ti][1].mean
        );
        let _ = writeln!(md, "| {t} | {measured:.2} | {} |", spec.windows[best]);
        println!("thickness {t}: argmin w = {}", spec.windows[best]);
    }
    write_file(&spec.out.join(ARGMIN_CSV), &argmin)?;
    write_file(&spec.out.join(SUMMARY_MD), &md)?;
    Ok(())
}

/// Mean over training masks of the per-mask median structure thickness.
fn measured_thickness(data: &[(Dataset, Dataset)]) -> f64 {
    let mut values = Vec::new();
    for (train_set, _) in data {
        let s = train_set.labels.shape();
        for b in 0..s.batch {
            let mask = BinaryMask::from_plane(s.height, s.width, train_set.labels.plane(b, 0), 0.5);
            values.extend(median_thickness(&mask));
        }
    }
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_has_seventeen_configs() {
        let losses: Vec<LossFn> = LossKind::ALL.iter().map(|k| k.default_loss()).collect();
        let configs = ablation_configs(&losses, WindowSize::DEFAULT);
        assert_eq!(configs.len(), 17);
        assert_eq!(configs.iter().filter(|c| c.scnp == ScnpMode::Off).count(), 8);
        assert_eq!(
            configs.iter().filter(|c| matches!(c.scnp, ScnpMode::Joint { .. })).count(),
            1
        );
    }
}
