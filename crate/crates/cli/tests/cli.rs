//! Runs the `ick` binary end to end on a tiny synthetic IDX dataset.

use std::path::Path;
use std::process::{Command, Output};

use ick::data::{write_idx_images, write_idx_labels};
use ick::icing::Head;
use ick::network::checkpoint::save_checkpoint;
use ick::network::{Layer, Network};
use ick::Tensor;

fn ick(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ick")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8(bytes.to_vec()).unwrap()
}

/// 12×12 digits whose label `l` is a bright bar on row `l + 1`.
fn write_toy_mnist(dir: &Path, n: usize) {
    let mut px = Vec::new();
    let mut lb = Vec::new();
    for i in 0..n {
        let label = i % 10;
        for y in 0..12 {
            for x in 0..12 {
                px.push(if y == label + 1 {
                    230
                } else {
                    ((x * 7 + y * 3 + i) % 30) as u8
                });
            }
        }
        lb.push(label as u8);
    }
    for (img, lab) in [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ] {
        write_idx_images(dir.join(img), 12, 12, &px).unwrap();
        write_idx_labels(dir.join(lab), &lb).unwrap();
    }
}

/// Flatten followed by a head that sums the pixels of each label's row.
fn bar_reader() -> Network<f32> {
    let weight = Tensor::from_fn(&[144, 10], |i| if (i / 10) / 12 == i % 10 + 1 { 10.0 } else { 0.0 });
    let head = Head::new(weight, Tensor::zeros(&[10])).unwrap();
    Network::with_head(vec![Layer::Flatten], head).unwrap()
}

#[test]
fn no_arguments_exits_one() {
    let o = ick(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("Usage"));
}

#[test]
fn evaluate_known_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_mnist(dir.path(), 40);
    let ck = dir.path().join("reader.ick");
    save_checkpoint(&bar_reader(), &ck).unwrap();
    let data = dir.path().to_str().unwrap();
    let o = ick(&["evaluate", ck.to_str().unwrap(), "--dataset", data]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.starts_with("accuracy 1.000\nloss 0.000"), "{out}");

    let o = ick(&[
        "evaluate",
        ck.to_str().unwrap(),
        "--dataset",
        &format!("mnist:{data}"),
        "--format",
        "csv",
    ]);
    assert_eq!(text(&o.stdout).lines().next(), Some("stage,accuracy,loss"));
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_mnist(dir.path(), 10);
    let ck = dir.path().join("bad.ick");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let o = ick(&[
        "evaluate",
        ck.to_str().unwrap(),
        "--dataset",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).starts_with("error:"));
}

#[test]
fn train_then_icing() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_mnist(dir.path(), 60);
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(
        &cfg,
        "name = toy\ndataset = mnist\narch = cnn:2\ntrain.epochs = 1\ntrain.batch_size = 16\nicing.epochs = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let (cfg, out_dir) = (cfg.to_str().unwrap(), out_dir.to_str().unwrap());
    let o = ick(&["train", "--config", cfg, "--out-dir", out_dir]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    assert!(text(&o.stdout).starts_with("accuracy "));
    let model = Path::new(out_dir).join("model.ick");
    assert!(model.exists());

    let o = ick(&["icing", model.to_str().unwrap(), "--config", cfg, "--out-dir", out_dir]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(
        out.contains("before accuracy") && out.contains("after accuracy"),
        "{out}"
    );
    assert!(Path::new(out_dir).join("model_icing.ick").exists());
}

#[test]
fn experiment_then_report() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_mnist(dir.path(), 60);
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(
        &cfg,
        "name = toy\ndataset = mnist\narch = mlp:8\ntrials = 2\ntrain.epochs = 1\nicing.epochs = 1\nout_dir = run\n",
    )
    .unwrap();
    let o = ick(&["experiment", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let run = dir.path().join("run");
    let md = std::fs::read_to_string(run.join("summary.md")).unwrap();
    assert_eq!(text(&o.stdout), md);
    let trials = std::fs::read_to_string(run.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 3);
    assert!(trials.lines().nth(1).unwrap().starts_with("0,3,"));

    let o = ick(&["report", "--out-dir", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(text(&o.stdout), md);
    let o = ick(&["report", "--out-dir", run.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(
        text(&o.stdout),
        std::fs::read_to_string(run.join("summary.csv")).unwrap()
    );
}
