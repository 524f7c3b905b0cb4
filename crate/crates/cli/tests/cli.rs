use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gendistill_cli::manifest::RunManifest;

const BIN: &str = env!("CARGO_BIN_EXE_gendistill");

fn idx_images(n: usize, fill: impl Fn(usize, usize) -> u8) -> Vec<u8> {
    let mut v = vec![0, 0, 8, 3];
    for d in [n as u32, 28, 28] {
        v.extend(d.to_be_bytes());
    }
    for i in 0..n {
        v.extend((0..784).map(|p| fill(i, p)));
    }
    v
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = vec![0, 0, 8, 1];
    v.extend((labels.len() as u32).to_be_bytes());
    v.extend(labels);
    v
}

/// A tiny MNIST-shaped dataset where class k lights up row band k.
fn fake_mnist(root: &Path) {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    for (prefix, n) in [("train", 200), ("t10k", 50)] {
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let imgs = idx_images(n, |i, p| if (p / 28) / 3 == i % 10 { 200 + (p % 7) as u8 * 5 } else { (p % 13) as u8 });
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), imgs).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), idx_labels(&labels)).unwrap();
    }
}

fn gendistill(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(cwd).env_remove("GENDISTILL_DATA_DIR").env("RUST_LOG", "warn").args(args).output().unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = gendistill(cwd, args);
    assert_eq!(out.status.code(), Some(0), "{:?}\nstderr:\n{}", args, String::from_utf8_lossy(&out.stderr));
    out
}

fn smoke<'a>(data: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--budget", "smoke", "--data-dir", data, "--deterministic"];
    v.extend_from_slice(rest);
    v
}

#[test]
fn unknown_flag_and_subcommand_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gendistill(dir.path(), &["pretrain", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(gendistill(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(gendistill(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(gendistill(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn negative_omega_l_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gendistill(dir.path(), &["--omega-l", "-1", "--show-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("omega_l"));
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = gendistill(dir.path(), &["--data-dir", "missing", "pretrain", "--out", "p"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let out = gendistill(dir.path(), &["generate", "--ckpt", "nothing.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn show_config_with_no_inputs_prints_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--show-config"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let table: toml::Table = text.parse().unwrap();
    assert_eq!(table["omega_g"].as_float(), Some(0.01));
    assert_eq!(table["omega_l"].as_float(), Some(0.001));
    assert_eq!(table["pool"].as_str(), Some("convnet3,resnet10,resnet18"));
    assert_eq!(table["dataset"].as_str(), Some("mnist"));
}

#[test]
fn flag_beats_config_file_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "epochs = 5\n").unwrap();
    let out = ok(dir.path(), &["--config", "c.toml", "--epochs", "2", "--show-config"]);
    let table: toml::Table = String::from_utf8(out.stdout).unwrap().parse().unwrap();
    assert_eq!(table["epochs"].as_integer(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--epochs") && stderr.contains("overrides"), "{stderr}");

    fs::write(dir.path().join("bad.toml"), "epoch = 5\n").unwrap();
    assert_eq!(gendistill(dir.path(), &["--config", "bad.toml", "--show-config"]).status.code(), Some(2));
}

#[test]
fn smoke_pipeline_and_manifest_replay() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fake_mnist(&root.join("data"));
    let data = root.join("data").to_string_lossy().into_owned();

    ok(root, &smoke(&data, &["pretrain", "--out", "p"]));
    for f in ["p/generator.ckpt", "p/gan_loss.csv", "p/manifest.json"] {
        assert!(root.join(f).exists(), "{f}");
    }
    let pre = RunManifest::load(&root.join("p/manifest.json")).unwrap();
    assert!(pre.training_steps > 0);
    assert_eq!(pre.config.hash(), pre.config_hash);

    ok(root, &smoke(&data, &["distill", "--ckpt", "p", "--out", "d"]));
    let loss = fs::read_to_string(root.join("d/distill_loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,iter,arch,global,local,cgan,total"), "{loss}");
    // A distilled checkpoint is not a valid starting point for distillation.
    assert_eq!(gendistill(root, &smoke(&data, &["distill", "--ckpt", "d", "--out", "dd"])).status.code(), Some(2));

    ok(root, &smoke(&data, &["--ipc", "3", "generate", "--ckpt", "d", "--out", "g", "--format", "archive+grid"]));
    let gen = RunManifest::load(&root.join("g/manifest.json")).unwrap();
    assert_eq!(gen.training_steps, 0);
    assert_eq!(gen.notes["parameter_hash_before"], gen.notes["parameter_hash_after"]);
    assert!(root.join("g/distilled_ipc3_seed0.grid.png").exists());

    ok(root, &smoke(&data, &["--ipc", "1", "evaluate", "--ckpt", "d", "--out", "e"]));
    ok(root, &smoke(&data, &["grid", "--archive", "g/distilled_ipc3_seed0.gds", "--out", "grid.png"]));
    assert!(root.join("grid.manifest.json").exists());
    ok(root, &["tables", "--csv", "e/repeats.csv", "--out", "t.md"]);
    let md = fs::read_to_string(root.join("t.md")).unwrap();
    assert_eq!(md, fs::read_to_string(root.join("e/tables.md")).unwrap());
    assert!(md.contains("mnist IPC=1"));

    // Replaying a manifest in a fresh directory reproduces every output.
    for (stage, dir_name) in [("p", "p2"), ("d", "d2"), ("g", "g2"), ("e", "e2")] {
        let m = root.join(stage).join("manifest.json");
        ok(root, &["run", "--from-manifest", m.to_str().unwrap(), "--out", dir_name]);
        let a = RunManifest::load(&m).unwrap();
        let b = RunManifest::load(&root.join(dir_name).join("manifest.json")).unwrap();
        assert_eq!(a.output_hashes(), b.output_hashes(), "{stage}");
        assert_eq!(a.config_hash, b.config_hash);
    }
}
