use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fer_forge_core::data::{synthetic, write_fer_csv, EMOTIONS};
use fer_forge_core::facedetect::{CascadeModel, HaarRect, Stage, Stump};
use fer_forge_core::pnm::{write_pgm, GrayImage};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fer-forge"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dataset(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("data.csv");
    let mut buf = Vec::new();
    write_fer_csv(&synthetic::records(n, 5), &mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn face(dir: &Path, w: usize, h: usize) -> PathBuf {
    let path = dir.join("face.pgm");
    let img = GrayImage::new(w, h, (0..w * h).map(|i| (i * 7 % 251) as u8).collect()).unwrap();
    let mut buf = Vec::new();
    write_pgm(&img, &mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn accept_all(dir: &Path) -> PathBuf {
    let c = CascadeModel {
        width: 24,
        height: 24,
        stages: vec![Stage {
            threshold: -1e300,
            stumps: vec![Stump {
                rects: vec![
                    HaarRect { x: 0, y: 0, w: 24, h: 12, weight: -1.0 },
                    HaarRect { x: 0, y: 12, w: 24, h: 12, weight: 1.0 },
                ],
                threshold: 0.0,
                left: -1.0,
                right: 1.0,
            }],
        }],
    };
    let path = dir.join("cascade.json");
    fs::write(&path, c.to_json()).unwrap();
    path
}

fn metric(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {text}"))
        .parse()
        .unwrap()
}

#[test]
fn missing_dataset_is_usage_error_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = run(&["train", "--model", "tree", "--data", p(&tmp.path().join("nope.csv")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_inputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), 20);
    assert_eq!(run(&["train", "--model", "resnet", "--data", p(&data)]).status.code(), Some(2));
    assert_eq!(run(&["train", "--optimizer", "lbfgs", "--data", p(&data)]).status.code(), Some(2));
    assert_eq!(run(&["train", "--batch", "0", "--data", p(&data)]).status.code(), Some(2));
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "emotion,pixels,Usage\n9,1 2 3,Training\n").unwrap();
    assert_eq!(run(&["histogram", "--data", p(&bad)]).status.code(), Some(2));
    let cascade = tmp.path().join("c.json");
    fs::write(&cascade, "{").unwrap();
    let img = face(tmp.path(), 24, 24);
    assert_eq!(run(&["detect", "--cascade", p(&cascade), "--image", p(&img)]).status.code(), Some(2));
    let manifest = tmp.path().join("m.manifest");
    fs::write(&manifest, "colour = red\n").unwrap();
    assert_eq!(run(&["sweep", "--manifest", p(&manifest), "--data", p(&data)]).status.code(), Some(2));
}

#[test]
fn tree_train_eval_predict() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), 60);
    let out = tmp.path().join("tree");
    let o = run(&["train", "--model", "tree", "--data", p(&data), "--out", p(&out), "--min-samples-split", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc = metric(&stdout(&o), "test_accuracy");
    assert!((0.0..=1.0).contains(&acc));
    assert!(metric(&stdout(&o), "top2_accuracy") >= acc);
    let model = out.join("tree.txt");
    assert!(model.exists() && out.join("confusion.csv").exists());

    let e = run(&["eval", "--model", p(&model), "--data", p(&data)]);
    assert!(e.status.success());
    assert_eq!(metric(&stdout(&e), "test_accuracy"), acc);

    let img = face(tmp.path(), 48, 48);
    let pr = run(&["predict", "--model", p(&model), "--image", p(&img)]);
    assert!(pr.status.success());
    assert!(stdout(&pr).starts_with("emotion,probability\n"));
}

#[test]
fn neural_train_predict_detect() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), 40);
    let out = tmp.path().join("ffnn");
    let o = run(&[
        "train", "--model", "ffnn", "--data", p(&data), "--out", p(&out), "--optimizer", "sgd", "--batch", "8", "--epochs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let epochs = fs::read_to_string(out.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 3);
    let model = out.join("model.femo");

    let img = face(tmp.path(), 60, 52);
    let a = run(&["predict", "--model", p(&model), "--image", p(&img)]);
    let b = run(&["predict", "--model", p(&model), "--image", p(&img)]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let rows: Vec<(&str, f64)> = text
        .lines()
        .skip(1)
        .take(7)
        .map(|l| {
            let (e, v) = l.split_once(',').unwrap();
            (e, v.parse().unwrap())
        })
        .collect();
    let names: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.0).collect();
    assert_eq!(names, EMOTIONS.iter().copied().collect());
    assert!((rows.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(rows.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(text.contains(&format!("top1={}\n", rows[0].0)));
    assert!(text.contains(&format!("top2={},{}\n", rows[0].0, rows[1].0)));

    let cascade = accept_all(tmp.path());
    let img = face(tmp.path(), 24, 24);
    let d = run(&["detect", "--cascade", p(&cascade), "--image", p(&img), "--min-neighbors", "1", "--model", p(&model)]);
    assert!(d.status.success(), "{}", String::from_utf8_lossy(&d.stderr));
    let lines: Vec<String> = stdout(&d).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("x,y,w,h,neighbors,angry"));
    assert!(lines[1].starts_with("0,0,24,24,1,"));
}

#[test]
fn detect_accept_all_single_window() {
    let tmp = TempDir::new().unwrap();
    let cascade = accept_all(tmp.path());
    let img = face(tmp.path(), 24, 24);
    let csv = tmp.path().join("det.csv");
    let o = run(&["detect", "--cascade", p(&cascade), "--image", p(&img), "--min-neighbors", "1", "--out", p(&csv)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&csv).unwrap(), "x,y,w,h,neighbors\n0,0,24,24,1\n");
    let o = run(&["detect", "--cascade", p(&cascade), "--image", p(&img)]);
    assert_eq!(stdout(&o), "x,y,w,h,neighbors\n");
}

#[test]
fn single_cell_sweep_matches_train() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), 40);
    let manifest = tmp.path().join("grid.manifest");
    fs::write(&manifest, "model = ffnn\ncell = sgd 8 1\n").unwrap();
    let sweep_out = tmp.path().join("sweep");
    let s = run(&["sweep", "--manifest", p(&manifest), "--data", p(&data), "--out", p(&sweep_out)]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let train_out = tmp.path().join("train");
    let t = run(&[
        "train", "--model", "ffnn", "--data", p(&data), "--out", p(&train_out), "--optimizer", "sgd", "--batch", "8", "--epochs",
        "1",
    ]);
    assert!(t.status.success());

    let table = fs::read_to_string(sweep_out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&fields[..4], &["ffnn", "sgd", "8", "1"]);
    assert_eq!(fields[6].parse::<f64>().unwrap(), metric(&stdout(&t), "test_accuracy"));
    let cell_dir = fs::read_dir(&sweep_out).unwrap().filter_map(|e| e.ok()).find(|e| e.path().is_dir()).unwrap().path();
    assert_eq!(fs::read(cell_dir.join("model.femo")).unwrap(), fs::read(train_out.join("model.femo")).unwrap());
}

#[test]
fn empty_grid_writes_header_only() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), 20);
    let manifest = tmp.path().join("empty.manifest");
    fs::write(&manifest, "models = ffnn,tree\n").unwrap();
    let out = tmp.path().join("sweep");
    let o = run(&["sweep", "--manifest", p(&manifest), "--data", p(&data), "--out", p(&out)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 1);
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let ok = run(&["gradcheck", "--model", "ffnn"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("max_rel_error="));
    let bad = run(&["gradcheck", "--model", "ffnn", "--corrupt", "dense:1.01"]);
    assert_eq!(bad.status.code(), Some(1));
    let text = stdout(&bad);
    let worst = text.lines().find_map(|l| l.strip_prefix("worst=")).unwrap();
    assert!(worst.starts_with("dense"), "{worst}");
    assert_eq!(run(&["gradcheck", "--model", "tree"]).status.code(), Some(2));
}

#[test]
fn gradcheck_report_is_repeatable() {
    let a = run(&["gradcheck", "--model", "proposed_cnn", "--seed", "7"]);
    let b = run(&["gradcheck", "--model", "proposed_cnn", "--seed", "7"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn zero_epochs_saves_initial_model() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), 20);
    let out = tmp.path().join("o");
    let o = run(&["train", "--model", "simple_cnn", "--data", p(&data), "--out", p(&out), "--epochs", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("epochs_run=0\n"));
    assert!(out.join("model.femo").exists());
    assert_eq!(fs::read_to_string(out.join("epochs.csv")).unwrap().lines().count(), 1);
}

#[test]
fn histogram_counts_classes() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), 30);
    let o = run(&["histogram", "--data", p(&data)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let total: usize = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 30);
}
