//! End-to-end runs of the `uhdn` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uhdn::dataio;
use uhdn::net::{build, NetworkConfig, NetworkParams};
use uhdn::synthetic::crack_image;

fn uhdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uhdn")).args(args).output().expect("binary runs")
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

fn make_dataset(root: &Path, count: usize, h: usize, w: usize) {
    let items: Vec<_> = (0..count)
        .map(|i| {
            let (x, m) = crack_image(h, w, 3, 40 + i as u64);
            (format!("s{i:02}"), x, m)
        })
        .collect();
    dataio::write_dataset(root, &items).unwrap();
}

#[test]
fn config_echo_applies_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    fs::write(&file, "# test\nlearning_rate = 0.01\nwith_hf = false\nbatch_size = 2\n").unwrap();
    let o = uhdn(&["config", "--config", p(&file), "--set", "learning_rate=0.005", "--set", "batch_size=3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("learning_rate = 0.005\n"), "{out}");
    assert!(out.contains("with_hf = false\n"));
    assert!(out.contains("batch_size = 3\n"));
    assert!(out.contains("patience = 10\n"));

    let o = uhdn(&["config", "--set", "learning_rte=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key"));
}

#[test]
fn gradcheck_command() {
    let o = uhdn(&["gradcheck", "--ops", "conv2d", "--trials", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("conv2d") && stdout(&o).contains("PASS"));

    let o = uhdn(&["gradcheck", "--ops", "softmax"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("weighted_bce"), "{}", stderr(&o));

    let o = uhdn(&["gradcheck", "--ops", "all", "--trials", "1", "--seed", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).matches("PASS").count(), uhdn::gradcheck::OP_NAMES.len());
}

#[test]
fn train_with_missing_dataset_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("out.uhdn");
    let o = uhdn(&["train", "--dataset", p(&dir.path().join("absent")), "--out", p(&ckpt)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!ckpt.exists());
}

#[test]
fn train_predict_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_dataset(&data, 4, 30, 44);
    let ckpt = dir.path().join("model.uhdn");
    let args = [
        "train",
        "--dataset",
        p(&data),
        "--out",
        p(&ckpt),
        "--set",
        "base_channels=2",
        "--set",
        "max_epochs=2",
        "--set",
        "seed=5",
    ];
    let o = uhdn(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("epoch 2"));
    let log = fs::read_to_string(ckpt.with_extension("log.csv")).unwrap();
    assert!(log.starts_with("epoch,mean_loss,learning_rate\n"));
    assert_eq!(log.lines().count(), 3);

    // byte-identical rerun
    let first = fs::read(&ckpt).unwrap();
    assert!(uhdn(&args).status.success());
    assert_eq!(first, fs::read(&ckpt).unwrap());

    let preds = dir.path().join("pred");
    let o = uhdn(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&data.join("image")),
        "--out",
        p(&preds),
        "--save-prob",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mask = image::open(preds.join("s00.png")).unwrap();
    assert_eq!((mask.height(), mask.width()), (30, 44));
    let prob = dataio::load_probmap(&preds.join("s00.pfm")).unwrap();
    assert_eq!((prob.height(), prob.width()), (30, 44));

    let o = uhdn(&["eval", "--pred", p(&preds), "--gt", p(&data.join("groundtruth"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let json_end = out.find("\nimages,").unwrap();
    let report: serde_json::Value = serde_json::from_str(&out[..json_end]).unwrap();
    assert_eq!(report["per_image"].as_array().unwrap().len(), 4);
    for key in ["mean_f1", "ods", "ois"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    // config/checkpoint mismatch
    let o = uhdn(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&data.join("image")),
        "--out",
        p(&preds),
        "--set",
        "with_mdm=false",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing: bottleneck"), "{}", stderr(&o));
}

#[test]
fn zero_network_at_high_threshold_predicts_background() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetworkConfig {
        base_channels: 1,
        ..Default::default()
    };
    let zero: NetworkParams<f32> = build::<f32>(&cfg).unwrap().zeros_like();
    let ckpt = dir.path().join("zero.uhdn");
    dataio::save_checkpoint(&zero, &cfg, &ckpt).unwrap();
    let (x, _) = crack_image(20, 28, 3, 1);
    let img = dir.path().join("in.png");
    dataio::save_image_png(&x, &img).unwrap();
    let out = dir.path().join("out");
    for (threshold, expected) in [("0.999", 0u8), ("0.5", 255u8)] {
        let o = uhdn(&["predict", "--checkpoint", p(&ckpt), "--input", p(&img), "--out", p(&out), "--threshold", threshold]);
        assert!(o.status.success(), "{}", stderr(&o));
        let m = image::open(out.join("in.png")).unwrap().to_luma8();
        assert_eq!((m.height(), m.width()), (20, 28));
        assert!(m.pixels().all(|px| px.0[0] == expected), "threshold {threshold}");
    }
}

#[test]
fn eval_perfect_predictions_and_margin_monotonicity() {
    let dir = tempfile::tempdir().unwrap();
    let (gt_dir, pred_dir) = (dir.path().join("gt"), dir.path().join("pred"));
    for i in 0..3u64 {
        let (_, m) = crack_image(24, 32, 1, i);
        dataio::save_mask_png(&m, (0, 0), &gt_dir.join(format!("{i}.png"))).unwrap();
        let prob = uhdn::ProbMap::new(24, 32, m.data().iter().map(|&v| v as f32).collect()).unwrap();
        dataio::save_probmap(&prob, (0, 0), &pred_dir.join(format!("{i}.pfm"))).unwrap();
    }
    let o = uhdn(&["eval", "--pred", p(&pred_dir), "--gt", p(&gt_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let row = out.lines().last().unwrap();
    assert_eq!(row, "3,2,0.5,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000,0.001,1.000000,1.000000");

    // a shifted prediction: strict scores never beat margin-2 scores
    let (_, m) = crack_image(24, 32, 1, 0);
    let shifted: Vec<f32> = (0..24 * 32).map(|i| if i % 32 == 0 { 0.0 } else { m.data()[i - 1] as f32 }).collect();
    dataio::save_probmap(&uhdn::ProbMap::new(24, 32, shifted).unwrap(), (0, 0), &pred_dir.join("0.pfm")).unwrap();
    let f1_at = |margin: &str| -> Vec<f64> {
        let o = uhdn(&["eval", "--pred", p(&pred_dir), "--gt", p(&gt_dir), "--margin", margin]);
        let out = stdout(&o);
        let report: serde_json::Value = serde_json::from_str(&out[..out.find("\nimages,").unwrap()]).unwrap();
        report["per_image"].as_array().unwrap().iter().map(|r| r["f1"].as_f64().unwrap()).collect()
    };
    let (strict, loose) = (f1_at("0"), f1_at("2"));
    assert!(strict[0] < loose[0]);
    assert!(strict.iter().zip(&loose).all(|(s, l)| s <= l));

    fs::remove_file(gt_dir.join("1.png")).unwrap();
    let o = uhdn(&["eval", "--pred", p(&pred_dir), "--gt", p(&gt_dir)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("without ground truth: [1]"), "{}", stderr(&o));
}

#[test]
fn ablate_rejects_malformed_rates() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 2, 16, 16);
    let o = uhdn(&["ablate", "--dataset", p(dir.path()), "--rates", "1,2|4,x"]);
    assert_eq!(o.status.code(), Some(2));
}
