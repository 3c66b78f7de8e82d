use std::path::Path;
use std::process::{Command, Output};

use robodet::data::DatasetIndex;
use robodet::detect::{parse_detections, AnchorSet};
use robodet::model::load_weights;
use robodet::train::TrainConfig;

fn robodet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robodet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn ops_prints_the_layer_table() {
    let o = robodet(&["ops", "--model", "robo", "--k", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("69648384"), "{}", stdout(&o));
}

#[test]
fn ops_compare_lists_the_reference() {
    let o = robodet(&["ops", "--compare"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("2782480896"), "{}", stdout(&o));
}

#[test]
fn missing_data_flag_is_a_usage_error() {
    let o = robodet(&["train", "--out", "x.bin"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("--data"), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");
}

#[test]
fn unknown_flag_is_a_one_line_usage_error() {
    let o = robodet(&["ops", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("--bogus"), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");
}

#[test]
fn invalid_values_exit_with_one() {
    assert_eq!(robodet(&["ops", "--model", "yolo"]).status.code(), Some(1));
    assert_eq!(robodet(&["ops", "--k", "0"]).status.code(), Some(1));
    assert_eq!(robodet(&["bench", "--k", "1", "--sparse", "maybe"]).status.code(), Some(1));
}

#[test]
fn missing_files_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = robodet(&["eval", "--data", p(&dir.path().join("nope")), "--weights", "w.bin"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn help_shows_config_defaults() {
    let o = robodet(&["train", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let help = stdout(&o);
    let d = TrainConfig::default();
    for expected in [
        format!("[default: {}]", d.epochs),
        format!("[default: {}]", d.batch),
        format!("[default: {}]", d.lr_max),
    ] {
        assert!(help.contains(&expected), "missing {expected} in\n{help}");
    }
}

#[test]
fn gen_data_then_anchors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    let o = robodet(&["--seed", "3", "gen-data", "--n", "20", "--out", p(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(DatasetIndex::read(&data).unwrap().entries.len(), 20);

    let o = robodet(&["anchors", "--data", p(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let set = AnchorSet::from_text(&std::fs::read_to_string(data.join("anchors.txt")).unwrap()).unwrap();
    assert!(set.0.iter().all(|&(w, h)| w > 0.0 && h > 0.0));
    assert_eq!(AnchorSet::from_text(&stdout(&o)).unwrap(), set);
}

#[test]
fn train_detect_eval_prune_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    let w = dir.path().join("w.bin");
    let pruned = dir.path().join("pruned.bin");
    assert_eq!(robodet(&["gen-data", "--n", "6", "--out", p(&data)]).status.code(), Some(0));

    let metrics = dir.path().join("m.csv");
    let o = robodet(&[
        "train", "--data", p(&data), "--k", "1", "--epochs", "1", "--batch", "3", "--out", p(&w),
        "--metrics", p(&metrics),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(load_weights(&w).unwrap().spec.k, 1);
    assert_eq!(std::fs::read_to_string(&metrics).unwrap().lines().count(), 2);

    let image = data.join("images/00000.ppm");
    let dets = dir.path().join("dets.txt");
    let overlay = dir.path().join("overlay.ppm");
    let o = robodet(&[
        "detect", "--weights", p(&w), "--image", p(&image), "--threshold", "0.0", "--out", p(&dets),
        "--overlay", p(&overlay),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let parsed = parse_detections(&std::fs::read_to_string(&dets).unwrap()).unwrap();
    assert!(!parsed.is_empty());
    assert!(overlay.exists());

    let o = robodet(&["eval", "--data", p(&data), "--weights", p(&w), "--criterion", "dist:16"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("dist@16px"), "{}", stdout(&o));

    let o = robodet(&["prune", "--weights", p(&w), "--threshold", "0.5", "--out", p(&pruned)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let net = load_weights(&pruned).unwrap();
    assert!(net.layers.iter().any(|l| l.mask.pruned() > 0));

    let o = robodet(&["bench", "--weights", p(&pruned), "--repeats", "3", "--sparse", "on"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("ms"), "{}", stdout(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "batch = 0\n").unwrap();
    let missing = dir.path().join("none");
    let base = ["--config", p(&cfg), "train", "--data", p(&missing), "--out", "x"];
    // The config alone fails validation.
    assert_eq!(robodet(&base).status.code(), Some(1));
    // The flag repairs it, so the run gets as far as the missing dataset.
    let mut args = base.to_vec();
    args.extend(["--batch", "2"]);
    let o = robodet(&args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
