//! Repeated seeded trials: train, evaluate, apply icing, evaluate again.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::icing::{apply_icing, evaluate_fast_path, IcingConfig};
use crate::network::checkpoint::save_checkpoint;
use crate::network::{evaluate, init_params, train, TrainConfig};

pub use config::{DatasetSource, ExperimentConfig};
pub use report::{
    cell, emit_report, mean_std, parse_trials_csv, trials_csv, ReportFormat, SummaryRow, SummaryTable, TrialReport,
    SUMMARY_HEADER, TRIALS_HEADER,
};

pub const CONFIG_FILE: &str = "config.cfg";
pub const TRIALS_FILE: &str = "trials.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub reports: Vec<TrialReport>,
    pub table: SummaryTable,
}

/// Row label in summary tables.
pub fn configuration_label(config: &ExperimentConfig) -> String {
    format!("{} {} {}", config.name, config.dataset.name(), config.arch)
}

pub fn checkpoint_path(out_dir: &Path, trial: usize, stage: &str) -> PathBuf {
    out_dir
        .join(CHECKPOINT_DIR)
        .join(format!("trial_{trial:02}_{stage}.ick"))
}

fn io_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Loads data per `config` and runs every trial.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (train_set, test_set) = config.load_data::<f32>()?;
    run_experiment_on(config, &train_set, &test_set, &mut |_| {})
}

/// Runs every trial on already-loaded data. `trials.csv` is rewritten after
/// each trial, so a failure keeps the rows of the trials before it.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    train_set: &Dataset<f32>,
    test_set: &Dataset<f32>,
    on_trial: &mut dyn FnMut(&TrialReport),
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let out = &config.out_dir;
    io_dir(&out.join(CHECKPOINT_DIR))?;
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, config.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let trials_path = out.join(TRIALS_FILE);
    let mut reports = Vec::with_capacity(config.trials);
    for i in 0..config.trials {
        let r = run_trial(config, i, train_set, test_set).map_err(|e| Error::Trial {
            trial: i,
            source: Box::new(e),
        })?;
        on_trial(&r);
        reports.push(r);
        std::fs::write(&trials_path, trials_csv(&reports)).map_err(|e| Error::io(&trials_path, e))?;
    }
    let table = SummaryTable {
        rows: vec![SummaryRow::from_trials(configuration_label(config), &reports)],
    };
    emit_report(&table, &reports, out)?;
    Ok(ExperimentOutcome { reports, table })
}

fn run_trial(
    config: &ExperimentConfig,
    i: usize,
    train_set: &Dataset<f32>,
    test_set: &Dataset<f32>,
) -> Result<TrialReport> {
    let seed = config.trial_seed(i);
    let net = config.arch.build(train_set.image_shape(), train_set.num_classes())?;
    let net = init_params(net, config.train.init, seed);
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let t = Instant::now();
    let (net, _) = train(net, train_set, &train_config)?;
    let train_s = t.elapsed().as_secs_f64();
    let before = evaluate(&net, test_set)?;
    save_checkpoint(&net, checkpoint_path(&config.out_dir, i, "before"))?;

    let icing_config = IcingConfig {
        seed,
        ..config.icing.clone()
    };
    let t = Instant::now();
    let iced = apply_icing(&net, train_set, &icing_config)?;
    let icing_s = t.elapsed().as_secs_f64();
    let swapped = evaluate(&iced.network, test_set)?;
    let fast = evaluate_fast_path(&net, iced.network.head(), test_set)?;
    if swapped.accuracy.to_bits() != fast.accuracy.to_bits() || swapped.loss.to_bits() != fast.loss.to_bits() {
        return Err(Error::EvaluationMismatch {
            fast: (fast.accuracy, fast.loss),
            swapped: (swapped.accuracy, swapped.loss),
        });
    }
    save_checkpoint(&iced.network, checkpoint_path(&config.out_dir, i, "after"))?;
    Ok(TrialReport {
        trial: i,
        seed,
        acc_before: before.accuracy,
        acc_after: swapped.accuracy,
        loss_before: before.loss,
        loss_after: swapped.loss,
        train_s,
        icing_s,
    })
}

/// Reads `config.cfg` and `trials.csv` back from a finished run directory.
pub fn load_run(dir: &Path) -> Result<(ExperimentConfig, Vec<TrialReport>)> {
    let config = ExperimentConfig::load(dir.join(CONFIG_FILE))?;
    let path = dir.join(TRIALS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok((config, parse_trials_csv(&text, &path)?))
}

/// Rebuilds the summary table from stored trial reports, one row per run.
pub fn summarize_runs(dirs: &[PathBuf]) -> Result<SummaryTable> {
    let mut table = SummaryTable::default();
    for dir in dirs {
        let (config, reports) = load_run(dir)?;
        table
            .rows
            .push(SummaryRow::from_trials(configuration_label(&config), &reports));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_idx_images;
    use crate::data::write_idx_labels;
    use crate::network::checkpoint::load_checkpoint;
    use crate::network::Network;
    use crate::rng;
    use rand::Rng;

    /// Tiny 10-class IDX set: a bright bar whose row encodes the label.
    fn write_toy_mnist(dir: &Path, n: usize, seed: u64) {
        let mut r = rng::seeded(seed);
        let mut px = Vec::new();
        let mut lb = Vec::new();
        for i in 0..n {
            let label = (i % 10) as u8;
            for y in 0..12 {
                for _ in 0..12 {
                    let bar = y == label as usize + 1;
                    px.push(if bar {
                        200 + r.random_range(0..50)
                    } else {
                        r.random_range(0..40)
                    });
                }
            }
            lb.push(label);
        }
        for (img, lab) in [
            ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        ] {
            write_idx_images(dir.join(img), 12, 12, &px).unwrap();
            write_idx_labels(dir.join(lab), &lb).unwrap();
        }
    }

    fn config(dir: &Path, extra: &str) -> ExperimentConfig {
        write_toy_mnist(dir, 60, 1);
        let text = format!("name = toy\ndataset = mnist\narch = cnn:2\nout_dir = out\ntrain.batch_size = 16\nicing.epochs = 2\n{extra}");
        ExperimentConfig::parse(&text, dir).unwrap()
    }

    #[test]
    fn three_trials_produce_expected_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "trials = 3\ntrain.epochs = 1");
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.reports.len(), 3);
        assert_eq!(out.table.rows.len(), 1);
        assert_eq!(out.reports.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
        let ck = std::fs::read_dir(cfg.out_dir.join(CHECKPOINT_DIR)).unwrap().count();
        assert_eq!(ck, 6);
        let csv = std::fs::read_to_string(cfg.out_dir.join(TRIALS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let after: Network<f32> = load_checkpoint(checkpoint_path(&cfg.out_dir, 1, "after")).unwrap();
        let (_, test) = cfg.load_data::<f32>().unwrap();
        assert_eq!(evaluate(&after, &test).unwrap().accuracy, out.reports[1].acc_after);
    }

    #[test]
    fn no_op_pipeline_keeps_accuracy() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            dir.path(),
            "trials = 1\ntrain.epochs = 0\nicing.epochs = 0\nicing.head_init = warm",
        );
        let r = &run_experiment(&cfg).unwrap().reports[0];
        assert_eq!(r.acc_before, r.acc_after);
        assert_eq!(r.loss_before, r.loss_after);
    }

    #[test]
    fn stored_reports_rebuild_the_same_table() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "trials = 2\ntrain.epochs = 1");
        let out = run_experiment(&cfg).unwrap();
        let again = summarize_runs(std::slice::from_ref(&cfg.out_dir)).unwrap();
        assert_eq!(again, out.table);
        let md = std::fs::read_to_string(cfg.out_dir.join("summary.md")).unwrap();
        assert_eq!(again.to_markdown(), md);
    }

    #[test]
    fn failing_trial_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path(), "trials = 2\ntrain.epochs = 1");
        // test images of the wrong size fail at the first evaluation
        cfg.arch = crate::network::Architecture::Mlp { hidden: vec![3] };
        let (train_set, _) = cfg.load_data::<f32>().unwrap();
        let bad_test = Dataset::new(
            crate::tensor::Tensor::zeros(&[2, 1, 5, 5]),
            vec![0, 1],
            10,
            "wrong size",
        )
        .unwrap();
        let err = run_experiment_on(&cfg, &train_set, &bad_test, &mut |_| {}).unwrap_err();
        assert!(matches!(err, Error::Trial { trial: 0, .. }), "{err}");
    }
}
