//! Subcommand implementations. Each returns `Result<()>`; the binary maps
//! error categories onto exit codes.

use crate::config::ExperimentConfig;
use crate::gradcheck::{run_gradient_check, GradCheckSettings};
use cmgn_core::datasets::{self, LabeledDataset, PairList, SyntheticSpec};
use cmgn_core::evaluation::{classification_accuracy, modulation_curves, verification_report};
use cmgn_core::trainer::{forward_embed, save_checkpoint, train_run, Checkpoint, TrainTrace};
use cmgn_core::{Error, LossVariant, Result};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Caps worker threads for multi-run commands; `0` means serial.
pub const ENV_THREADS: &str = "CMGN_THREADS";

pub fn cmd_gen_data(spec_path: &Path, out_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec: SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("spec {}: {e}", spec_path.display())))?;
    let dataset = datasets::generate(&spec)?;
    datasets::save_csv(&dataset, out_path)?;
    println!(
        "wrote {} rows ({} train, {} holdout, {} classes, dim {}) to {}",
        dataset.num_rows(),
        dataset.train_indices().len(),
        dataset.holdout_indices().len(),
        dataset.num_classes(),
        dataset.input_dim(),
        out_path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TarRow {
    far_target: f64,
    tar: f64,
    threshold: f64,
}

#[derive(Debug, Serialize)]
struct VerificationSummary {
    best_accuracy: f64,
    best_threshold: f64,
    num_positive: usize,
    num_negative: usize,
    tar_at_far: Vec<TarRow>,
}

#[derive(Debug, Serialize)]
struct Metrics<'a> {
    label: &'a str,
    iterations: u64,
    final_loss: f64,
    final_t: f64,
    final_hard_fraction: f64,
    train_accuracy: f64,
    /// `null` when the dataset has no usable holdout pairs.
    verification: Option<VerificationSummary>,
}

struct ExperimentOutcome {
    checkpoint: Checkpoint,
    trace: TrainTrace,
    train_accuracy: f64,
}

fn run_experiment(config: &ExperimentConfig, dataset: &LabeledDataset) -> Result<ExperimentOutcome> {
    let (checkpoint, trace) = train_run(&config.train, dataset, None)?;
    let train_indices = dataset.train_indices();
    let (inputs, labels) = dataset.gather(&train_indices);
    let embeddings = forward_embed(&checkpoint.params, &inputs)?;
    let train_accuracy = classification_accuracy(&embeddings, &labels, &checkpoint.params.classifier)?;
    Ok(ExperimentOutcome {
        checkpoint,
        trace,
        train_accuracy,
    })
}

fn verification_on_pairs(
    checkpoint: &Checkpoint,
    dataset: &LabeledDataset,
    pairs: &PairList,
    far_targets: &[f64],
) -> Result<VerificationSummary> {
    let embeddings = forward_embed(&checkpoint.params, dataset.inputs())?;
    let report = verification_report(&embeddings, pairs, far_targets)?;
    Ok(VerificationSummary {
        best_accuracy: report.best_accuracy,
        best_threshold: report.best_threshold,
        num_positive: report.num_positive,
        num_negative: report.num_negative,
        tar_at_far: report
            .tar_at_far
            .iter()
            .map(|t| TarRow {
                far_target: t.far_target,
                tar: t.tar,
                threshold: t.threshold,
            })
            .collect(),
    })
}

pub fn cmd_train(config_path: &Path, data_path: &Path, out_dir: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let dataset = datasets::load_csv(data_path)?;
    std::fs::create_dir_all(out_dir)?;

    let outcome = run_experiment(&config, &dataset)?;
    outcome.trace.write_csv(&out_dir.join("trace.csv"))?;
    save_checkpoint(&outcome.checkpoint, &out_dir.join("checkpoint.bin"))?;

    let verification = match datasets::make_pairs(
        &dataset,
        config.evaluation.pairs_per_polarity,
        config.evaluation.pairs_seed,
    ) {
        Ok(pairs) => Some(verification_on_pairs(
            &outcome.checkpoint,
            &dataset,
            &pairs,
            &config.evaluation.far_targets,
        )?),
        Err(Error::DegenerateInput(_)) => None,
        Err(e) => return Err(e),
    };

    let last = *outcome.trace.last().expect("trace has at least one iteration");
    let metrics = Metrics {
        label: config.label(),
        iterations: last.k,
        final_loss: last.loss,
        final_t: last.t,
        final_hard_fraction: last.hard_fraction,
        train_accuracy: outcome.train_accuracy,
        verification,
    };
    let mut json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| Error::InvalidInput(format!("metrics serialization: {e}")))?;
    json.push('\n');
    std::fs::write(out_dir.join("metrics.json"), json)?;

    println!(
        "trained {}: {} iterations, final loss {:.6}, t {:.6}, hard fraction {:.3}",
        metrics.label, metrics.iterations, metrics.final_loss, metrics.final_t, metrics.final_hard_fraction
    );
    println!("train accuracy {:.4}", metrics.train_accuracy);
    match &metrics.verification {
        Some(v) => println!(
            "verification accuracy {:.4} at threshold {:.4} ({} pos / {} neg pairs)",
            v.best_accuracy, v.best_threshold, v.num_positive, v.num_negative
        ),
        None => println!("verification skipped: no usable holdout pairs"),
    }
    println!("wrote trace.csv, metrics.json, checkpoint.bin to {}", out_dir.display());
    Ok(())
}

pub const COMPARE_HEADER: &str =
    "label,variant,t_mode,statistic,final_t,final_loss,train_accuracy,verification_accuracy,best_threshold";

struct CompareRow {
    label: String,
    variant: &'static str,
    t_mode: String,
    statistic: &'static str,
    final_t: f64,
    final_loss: f64,
    train_accuracy: f64,
    verification_accuracy: f64,
    best_threshold: f64,
}

impl CompareRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.label,
            self.variant,
            self.t_mode,
            self.statistic,
            self.final_t,
            self.final_loss,
            self.train_accuracy,
            self.verification_accuracy,
            self.best_threshold
        )
    }
}

fn worker_count(jobs: usize) -> Result<usize> {
    let cap = match std::env::var(ENV_THREADS) {
        Ok(raw) => Some(raw.parse::<usize>().map_err(|_| {
            Error::InvalidInput(format!("{ENV_THREADS} must be a non-negative integer, got {raw:?}"))
        })?),
        Err(std::env::VarError::NotPresent) => None,
        Err(std::env::VarError::NotUnicode(_)) => {
            return Err(Error::InvalidInput(format!("{ENV_THREADS} is not valid unicode")))
        }
    };
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    Ok(match cap {
        Some(0) | Some(1) => 1,
        Some(n) => n.min(jobs).max(1),
        None => hw.min(jobs).max(1),
    })
}

/// Train every config on the same data and tabulate the results, scoring
/// verification on one shared pair list (sampled from the first config's
/// evaluation settings). Row order always follows config order.
pub fn cmd_compare(config_paths: &[PathBuf], data_path: &Path, out_path: &Path) -> Result<()> {
    if config_paths.is_empty() {
        return Err(Error::InvalidInput("compare needs at least one config".into()));
    }
    let configs: Vec<ExperimentConfig> = config_paths
        .iter()
        .map(|p| ExperimentConfig::load(p))
        .collect::<Result<_>>()?;
    let dataset = datasets::load_csv(data_path)?;
    let pairs = datasets::make_pairs(
        &dataset,
        configs[0].evaluation.pairs_per_polarity,
        configs[0].evaluation.pairs_seed,
    )?;

    let run_one = |config: &ExperimentConfig| -> Result<CompareRow> {
        let outcome = run_experiment(config, &dataset)?;
        let verification = verification_on_pairs(&outcome.checkpoint, &dataset, &pairs, &[])?;
        let last = outcome.trace.last().expect("trace has at least one iteration");
        Ok(CompareRow {
            label: config.label().to_string(),
            variant: config.train.variant.kind.name(),
            t_mode: config.t_mode(),
            statistic: config.train.statistic_kind.name(),
            final_t: last.t,
            final_loss: last.loss,
            train_accuracy: outcome.train_accuracy,
            verification_accuracy: verification.best_accuracy,
            best_threshold: verification.best_threshold,
        })
    };

    let workers = worker_count(configs.len())?;
    let mut slots: Vec<Option<Result<CompareRow>>> = Vec::new();
    slots.resize_with(configs.len(), || None);
    if workers <= 1 {
        for (i, config) in configs.iter().enumerate() {
            slots[i] = Some(run_one(config));
        }
    } else {
        let next = AtomicUsize::new(0);
        let slots_shared = Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= configs.len() {
                        break;
                    }
                    let row = run_one(&configs[i]);
                    slots_shared.lock().expect("result lock")[i] = Some(row);
                });
            }
        });
    }

    // Attribute every failed run to its config before bailing; a partial
    // table is never written.
    let mut rows = Vec::with_capacity(configs.len());
    let mut first_err = None;
    for (slot, config) in slots.into_iter().zip(&configs) {
        match slot.expect("every config produced a result") {
            Ok(row) => rows.push(row),
            Err(e) => {
                eprintln!("error: run {} failed: {e}", config.label());
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    let mut table = String::from(COMPARE_HEADER);
    table.push('\n');
    for row in rows {
        let _ = writeln!(table, "{}", row.to_csv());
    }
    std::fs::write(out_path, &table)?;
    print!("{table}");
    println!("wrote comparison table to {}", out_path.display());
    Ok(())
}

pub const CURVE_HEADER: &str = "t,cos_j,I,N";

/// Tabulate the hard-branch negative transform over a cosine grid for each
/// requested `t`.
pub fn cmd_trace(
    variant: &LossVariant,
    t_values: &[f64],
    grid_points: usize,
    out_path: &Path,
) -> Result<()> {
    let points = modulation_curves(variant, t_values, grid_points)?;
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in &points {
        let _ = writeln!(out, "{},{},{},{}", p.t, p.cos_j, p.i_coef, p.n_value);
    }
    std::fs::write(out_path, out)?;
    println!(
        "wrote {} curve points ({} t values x {} grid points) to {}",
        points.len(),
        t_values.len(),
        grid_points,
        out_path.display()
    );
    Ok(())
}

pub fn cmd_grad_check(settings: &GradCheckSettings) -> Result<()> {
    let report = run_gradient_check(settings)?;
    println!(
        "gradient check: {} over {} trials (B={}, n={}, d={}, scales {:?})",
        settings.variant.kind.name(),
        report.trials,
        settings.batch_size,
        settings.num_classes,
        settings.embed_dim,
        settings.scales
    );
    println!(
        "checked {} coordinates, skipped {} near branch flips, resampled {} batches",
        report.coords_checked, report.coords_skipped, report.batches_resampled
    );
    println!(
        "max relative error {:.3e} (tolerance {:.0e})",
        report.max_rel_error, settings.fd.tolerance_rel
    );
    if report.trials == 0 || report.coords_checked == 0 {
        println!("warning: no coordinates checked; this pass is vacuous");
        return Ok(());
    }
    if !report.passes(settings.fd.tolerance_rel) {
        let w = report.worst.expect("failing check has a worst coordinate");
        return Err(Error::NumericalFailure(format!(
            "gradient mismatch at trial {}, coordinate {}: analytic {:e} vs numeric {:e} (rel {:.3e})",
            w.trial, w.coordinate, w.analytic, w.numeric, w.rel_error
        )));
    }
    Ok(())
}
