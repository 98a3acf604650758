//! `ick` command line: train, icing, evaluate, experiment, report.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ick::experiment::{
    checkpoint_path, run_experiment_on, summarize_runs, DatasetSource, ExperimentConfig, ReportFormat,
};
use ick::icing::{apply_icing, evaluate_fast_path};
use ick::network::checkpoint::{load_checkpoint, save_checkpoint};
use ick::network::{evaluate, init_params, train, Evaluation, Network, TrainConfig};
use ick::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "ick",
    version,
    about = "Retrain the final classifier of a trained network on its frozen features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// key = value experiment file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Dataset as `<mnist|cifar10|cifar100>:<dir>`, or a directory of MNIST files
    #[arg(long)]
    dataset: Option<String>,
    /// Output format: text, csv or markdown
    #[arg(long)]
    format: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one network and write `model.ick`
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Retrain the head of a checkpoint and report test numbers before and after
    Icing {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Test accuracy and mean loss of a checkpoint
    Evaluate {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every seeded trial of an experiment config
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild summary tables from finished run directories
    Report {
        /// Run directory; repeat to add rows
        #[arg(long = "out-dir", required = true)]
        out_dirs: Vec<PathBuf>,
        /// markdown or csv
        #[arg(long, default_value = "markdown")]
        format: String,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn dataset_arg(s: &str) -> Result<DatasetSource> {
    match s.split_once(':') {
        Some((kind @ ("mnist" | "cifar10" | "cifar100"), dir)) => DatasetSource::in_dir(kind, Path::new(dir)),
        _ => DatasetSource::in_dir("mnist", Path::new(s)),
    }
}

fn resolve_config(common: &Common, needs_config: bool) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = match (&common.config, &common.dataset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(d)) if !needs_config => ExperimentConfig::new(dataset_arg(d)?, PathBuf::from("runs")),
        _ => {
            return Err(Failure::Usage(if needs_config {
                "--config is required".into()
            } else {
                "one of --config or --dataset is required".into()
            }))
        }
    };
    if let Some(d) = &common.dataset {
        cfg.dataset = dataset_arg(d)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out_dir {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn format_of(common: &Common, default: &str) -> std::result::Result<String, Failure> {
    let f = common.format.as_deref().unwrap_or(default).to_ascii_lowercase();
    match f.as_str() {
        "text" | "csv" | "markdown" | "md" => Ok(f),
        _ => Err(Failure::Usage(format!("unknown --format {f:?}"))),
    }
}

fn print_eval(out: &mut dyn Write, format: &str, rows: &[(&str, Evaluation)]) -> std::io::Result<()> {
    match format {
        "csv" => {
            writeln!(out, "stage,accuracy,loss")?;
            for (stage, e) in rows {
                writeln!(out, "{stage},{},{}", e.accuracy, e.loss)?;
            }
        }
        "markdown" | "md" => {
            writeln!(out, "| Stage | Accuracy | Loss |\n| --- | --- | --- |")?;
            for (stage, e) in rows {
                writeln!(out, "| {stage} | {:.3} | {:.6} |", e.accuracy, e.loss)?;
            }
        }
        _ => {
            for (stage, e) in rows {
                let prefix = if rows.len() > 1 {
                    format!("{stage} ")
                } else {
                    String::new()
                };
                writeln!(out, "{prefix}accuracy {:.3}", e.accuracy)?;
                writeln!(out, "{prefix}loss {:.6}", e.loss)?;
            }
        }
    }
    Ok(())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn stdout_err(e: std::io::Error) -> Failure {
    Failure::Runtime(Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    match command {
        Command::Train { common } => {
            let cfg = resolve_config(&common, true)?;
            let format = format_of(&common, "text")?;
            let (train_set, test_set) = cfg.load_data::<f32>()?;
            let net = cfg.arch.build(train_set.image_shape(), train_set.num_classes())?;
            let net = init_params(net, cfg.train.init, cfg.seed);
            let tc = TrainConfig {
                seed: cfg.seed,
                ..cfg.train.clone()
            };
            let (net, log) = train(net, &train_set, &tc)?;
            for (i, e) in log.epochs.iter().enumerate() {
                writeln!(
                    err,
                    "epoch {} loss {:.6} train accuracy {:.4}",
                    i + 1,
                    e.mean_loss,
                    e.accuracy
                )
                .ok();
            }
            std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
            let path = cfg.out_dir.join("model.ick");
            save_checkpoint(&net, &path)?;
            print_eval(out, &format, &[("test", evaluate(&net, &test_set)?)]).map_err(stdout_err)?;
            writeln!(err, "wrote {}", path.display()).ok();
        }
        Command::Icing { checkpoint, common } => {
            let cfg = resolve_config(&common, false)?;
            let format = format_of(&common, "text")?;
            let net: Network<f32> = load_checkpoint(&checkpoint)?;
            let (train_set, test_set) = cfg.load_data::<f32>()?;
            let before = evaluate(&net, &test_set)?;
            let icing = ick::icing::IcingConfig {
                seed: cfg.seed,
                ..cfg.icing.clone()
            };
            let iced = apply_icing(&net, &train_set, &icing)?;
            let after = evaluate(&iced.network, &test_set)?;
            let fast = evaluate_fast_path(&net, iced.network.head(), &test_set)?;
            if fast != after {
                return Err(Error::EvaluationMismatch {
                    fast: (fast.accuracy, fast.loss),
                    swapped: (after.accuracy, after.loss),
                }
                .into());
            }
            std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
            let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            let path = cfg.out_dir.join(format!("{stem}_icing.ick"));
            save_checkpoint(&iced.network, &path)?;
            print_eval(out, &format, &[("before", before), ("after", after)]).map_err(stdout_err)?;
            writeln!(err, "wrote {}", path.display()).ok();
        }
        Command::Evaluate { checkpoint, common } => {
            let cfg = resolve_config(&common, false)?;
            let format = format_of(&common, "text")?;
            let net: Network<f32> = load_checkpoint(&checkpoint)?;
            let (_, test_set) = cfg.load_data::<f32>()?;
            print_eval(out, &format, &[("test", evaluate(&net, &test_set)?)]).map_err(stdout_err)?;
        }
        Command::Experiment { common } => {
            let cfg = resolve_config(&common, true)?;
            let format: ReportFormat = match format_of(&common, "markdown")?.as_str() {
                "text" => ReportFormat::Markdown,
                f => f.parse()?,
            };
            let (train_set, test_set) = cfg.load_data::<f32>()?;
            writeln!(
                err,
                "{}: {} train / {} test samples, {} trials",
                cfg.name,
                train_set.len(),
                test_set.len(),
                cfg.trials
            )
            .ok();
            let outcome = run_experiment_on(&cfg, &train_set, &test_set, &mut |r| {
                writeln!(
                    err,
                    "trial {} seed {}: {:.4} -> {:.4} (train {:.1}s, icing {:.1}s)",
                    r.trial, r.seed, r.acc_before, r.acc_after, r.train_s, r.icing_s
                )
                .ok();
            })?;
            write!(out, "{}", outcome.table.render(format)).map_err(stdout_err)?;
            writeln!(
                err,
                "checkpoints in {}",
                checkpoint_path(&cfg.out_dir, 0, "").parent().unwrap().display()
            )
            .ok();
        }
        Command::Report { out_dirs, format } => {
            let format: ReportFormat = format
                .parse()
                .map_err(|_| Failure::Usage(format!("unknown --format {format:?}")))?;
            let table = summarize_runs(&out_dirs)?;
            write!(out, "{}", table.render(format)).map_err(stdout_err)?;
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                write!(out, "{text}").ok();
            } else {
                write!(err, "{text}").ok();
            }
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            writeln!(err, "error: {msg}\n\nRun `ick --help` for usage.").ok();
            1
        }
        Err(Failure::Runtime(e)) => {
            writeln!(err, "error: {e}").ok();
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("ick").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn no_arguments_is_a_usage_error() {
        let (code, out, err) = run_capture(&[]);
        assert_eq!(code, 1);
        assert!(out.is_empty());
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn unknown_subcommand_and_flag() {
        assert_eq!(run_capture(&["fly"]).0, 1);
        assert_eq!(run_capture(&["evaluate", "x.ick", "--bogus"]).0, 1);
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("experiment"));
    }

    #[test]
    fn missing_dataset_is_usage_error() {
        assert_eq!(run_capture(&["evaluate", "x.ick"]).0, 1);
        assert_eq!(run_capture(&["experiment"]).0, 1);
        assert_eq!(
            run_capture(&["evaluate", "x.ick", "--dataset", "d", "--format", "xml"]).0,
            1
        );
    }

    #[test]
    fn missing_checkpoint_is_runtime_error() {
        let (code, _, err) = run_capture(&["evaluate", "/nonexistent/x.ick", "--dataset", "/nonexistent"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error:"), "{err}");
    }

    #[test]
    fn dataset_argument_forms() {
        match dataset_arg("cifar10:/d").unwrap() {
            DatasetSource::Cifar { test, .. } => assert_eq!(test, vec![PathBuf::from("/d/test_batch.bin")]),
            _ => panic!(),
        }
        assert!(matches!(dataset_arg("/some/dir").unwrap(), DatasetSource::Mnist(_)));
    }
}
