use std::path::Path;
use std::process::{Command, Output};

use freqct::geometry::io::{read_json, read_projections, read_volume, write_volume};
use freqct::geometry::Volume;
use freqct::Tensor;
use serde_json::Value;

fn freqct(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freqct")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = freqct(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const TINY: &str = r#"{"epochs": 2, "lr": 1e-3, "points_per_volume": 256, "seed": 3,
 "model": {"levels": 2, "channels": [4, 8], "modes1": 2, "modes2": 2, "patch": 8, "heads": 2,
  "fusion": "caff", "qkv_roles": "spatial_query", "enable_lhif": true, "enable_caff": true,
  "feature_width": 8, "input_pool": 4}}"#;

/// Two 24-voxel cases at 4 views plus the tiny config.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for seed in ["2", "3"] {
        ok(&["simulate", "--size", "24", "--views", "4", "--seed", seed, "--out", &format!("data/c{seed}")], dir.path());
    }
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

fn angles(case: &Path) -> Vec<f64> {
    read_projections::<f32>(&case.join("proj.raw")).unwrap().geometry.angles_deg
}

#[test]
fn simulate_spreads_views_over_half_a_turn() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--size", "16", "--views", "6", "--out", "six"], dir.path());
    ok(&["simulate", "--size", "16", "--views", "1", "--out", "one"], dir.path());
    assert_eq!(angles(&dir.path().join("six")), vec![0.0, 30.0, 60.0, 90.0, 120.0, 150.0]);
    assert_eq!(angles(&dir.path().join("one")), vec![0.0]);
    let p = read_projections::<f32>(&dir.path().join("six/proj.raw")).unwrap();
    assert_eq!(p.images.shape(), &[6, 64, 64]);
    let v = read_volume::<f32>(&dir.path().join("six/volume.raw")).unwrap();
    assert_eq!(v.dims(), [16; 3]);
    let run: Value = read_json(&dir.path().join("six/run.json")).unwrap();
    assert_eq!(run["command"], "simulate");
    assert_eq!(run["seed"], 0);
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b", "c"] {
        let seed = if out == "c" { "8" } else { "7" };
        ok(&["simulate", "--size", "16", "--views", "3", "--seed", seed, "--out", out], dir.path());
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/proj.raw"), read("b/proj.raw"));
    assert_eq!(read("a/volume.raw"), read("b/volume.raw"));
    assert_ne!(read("a/volume.raw"), read("c/volume.raw"));
}

#[test]
fn simulate_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&freqct(&["simulate", "--views", "0", "--out", "x"], dir.path())), 2);
    assert_eq!(code(&freqct(&["simulate", "--geometry", "missing.json", "--out", "x"], dir.path())), 2);
    assert_eq!(code(&freqct(&["simulate", "--phantom", "cube", "--out", "x"], dir.path())), 2);
}

#[test]
fn missing_config_key_is_a_usage_error_naming_it() {
    let dir = workspace();
    let mut cfg: Value = serde_json::from_str(TINY).unwrap();
    cfg["model"].as_object_mut().unwrap().remove("feature_width");
    std::fs::write(dir.path().join("bad.json"), cfg.to_string()).unwrap();
    let out = freqct(&["train", "--config", "bad.json", "--data", "data", "--out", "run"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature_width"));
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let dir = workspace();
    ok(&["train", "--config", "tiny.json", "--data", "data", "--epochs", "0", "--out", "run"], dir.path());
    let run = dir.path().join("run");
    assert!(run.join("model.json").is_file() && run.join("model.bin").is_file());
    assert!(!run.join("loss.csv").exists());
    let m: Value = read_json(&run.join("model.json")).unwrap();
    assert_eq!(m["step"], 0);
}

#[test]
fn end_to_end_tiny_run() {
    let dir = workspace();
    let p = dir.path();
    ok(&["train", "--config", "tiny.json", "--data", "data", "--out", "run"], p);
    let loss = std::fs::read_to_string(p.join("run/loss.csv")).unwrap();
    assert!(loss.starts_with("step,epoch,lr,loss\n"));
    assert_eq!(loss.lines().count(), 1 + 2 * 2);
    let run: Value = read_json(&p.join("run/run.json")).unwrap();
    assert_eq!(run["command"], "train");
    assert_eq!(run["config"]["model"]["feature_width"], 8);
    assert_eq!(run["config_hash"].as_str().unwrap().len(), 64);

    ok(&["reconstruct", "--ckpt", "run/model.json", "--proj", "data/c2/proj.raw", "--out", "rec.raw"], p);
    let rec = read_volume::<f32>(&p.join("rec.raw")).unwrap();
    assert_eq!(rec.dims(), [24; 3]);
    assert!(rec.data.data().iter().all(|v| v.is_finite()));
    assert!(p.join("rec.run.json").is_file());

    ok(&["evaluate", "--pred", "rec.raw", "--gt", "data/c2/volume.raw", "--out", "m.csv"], p);
    let m = std::fs::read_to_string(p.join("m.csv")).unwrap();
    assert!(m.starts_with("case_id,psnr_db,ssim_pct,w_psnr_db,w_ssim_pct\nrec,"));

    // the same seed retrains to the same bytes
    ok(&["train", "--config", "tiny.json", "--data", "data", "--out", "again"], p);
    let read = |f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read("run/model.bin"), read("again/model.bin"));
    assert_eq!(read("run/loss.csv"), read("again/loss.csv"));
}

#[test]
fn reconstruction_does_not_depend_on_chunk_size() {
    let dir = workspace();
    let p = dir.path();
    ok(&["train", "--config", "tiny.json", "--data", "data", "--epochs", "1", "--out", "run"], p);
    for (chunk, out) in [("1000", "a.raw"), ("8192", "b.raw"), ("7", "c.raw")] {
        ok(&["reconstruct", "--ckpt", "run/model.json", "--proj", "data/c3/proj.raw", "--chunk", chunk, "--out", out], p);
    }
    let read = |f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read("a.raw"), read("b.raw"));
    assert_eq!(read("a.raw"), read("c.raw"));
    let out = freqct(&["reconstruct", "--ckpt", "run/model.json", "--proj", "data/c3/proj.raw", "--chunk", "0", "--out", "z.raw"], p);
    assert_eq!(code(&out), 2);
}

#[test]
fn sart_of_zero_projections_is_zero() {
    let dir = workspace();
    let p = dir.path();
    let proj = read_projections::<f32>(&p.join("data/c2/proj.raw")).unwrap();
    let zero = freqct::geometry::ProjectionSet::<f32>::new(Tensor::zeros(proj.images.shape().to_vec()), proj.geometry).unwrap();
    freqct::geometry::io::write_projections(&p.join("zero.raw"), &zero).unwrap();
    ok(&["baseline-sart", "--proj", "zero.raw", "--iters", "5", "--out", "s.raw"], p);
    let s = read_volume::<f32>(&p.join("s.raw")).unwrap();
    assert!(s.data.data().iter().all(|&v| v == 0.0));
    assert_eq!(code(&freqct(&["baseline-sart", "--proj", "zero.raw", "--lambda", "2.5", "--out", "t.raw"], p)), 2);
}

#[test]
fn evaluate_identical_volumes_and_uniform_roi() {
    let dir = workspace();
    let p = dir.path();
    ok(&["evaluate", "--pred", "data/c2/volume.raw", "--gt", "data/c2/volume.raw", "--case-id", "same", "--out", "id.csv"], p);
    assert_eq!(std::fs::read_to_string(p.join("id.csv")).unwrap(), "case_id,psnr_db,ssim_pct,w_psnr_db,w_ssim_pct\nsame,inf,100.000000,inf,100.000000\n");

    let gt = read_volume::<f32>(&p.join("data/c2/volume.raw")).unwrap();
    let roi = Volume { data: Tensor::full(gt.data.shape().to_vec(), 0.5), ..gt.clone() };
    write_volume(&p.join("roi.raw"), &roi).unwrap();
    ok(&["evaluate", "--pred", "data/c3/volume.raw", "--gt", "data/c2/volume.raw", "--roi", "roi.raw", "--out", "u.csv"], p);
    let text = std::fs::read_to_string(p.join("u.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "volume");
    assert_eq!(row[1], row[3]);
    assert_eq!(row[2], row[4]);

    let zero = Volume { data: Tensor::zeros(gt.data.shape().to_vec()), ..gt };
    write_volume(&p.join("zero_roi.raw"), &zero).unwrap();
    let out = freqct(&["evaluate", "--pred", "data/c3/volume.raw", "--gt", "data/c2/volume.raw", "--roi", "zero_roi.raw", "--out", "z.csv"], p);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&freqct(&["evaluate", "--pred", "nope.raw", "--gt", "data/c2/volume.raw", "--out", "n.csv"], p)), 2);
}

#[test]
fn count_params_single_layer() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let stdout = ok(&["count-params", "--layer", "512,1024,16,16", "--out", "l.csv"], p);
    assert!(stdout.contains("5/1024") && stdout.contains("0.49%"), "{stdout}");
    let csv = std::fs::read_to_string(p.join("l.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "layer,512,1024,16,16,268435456,1310720,5/1024,0.49%");
    assert!(p.join("l.run.json").is_file());

    let stdout = ok(&["count-params", "--layer", "1,1,1,1", "--out", "one.csv"], p);
    assert!(stdout.contains("not beneficial"), "{stdout}");
    assert_eq!(std::fs::read_to_string(p.join("one.csv")).unwrap().lines().nth(1).unwrap(), "layer,1,1,1,1,2,4,2/1,200.00%");

    assert_eq!(code(&freqct(&["count-params", "--layer", "0,4,2,2", "--out", "z.csv"], p)), 2);
    assert_eq!(code(&freqct(&["count-params", "--layer", "4,4,2", "--out", "z.csv"], p)), 2);
}

#[test]
fn count_params_for_a_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("tiny.json"), TINY).unwrap();
    ok(&["count-params", "--config", "tiny.json", "--det-pixels", "64,64", "--out", "c.csv"], p);
    let csv = std::fs::read_to_string(p.join("c.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["freq.stage0.ghif", "freq.stage0.lhif", "freq.stage1.ghif", "freq.stage1.lhif", "spectral_total", "model_total"]);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn ablate_writes_one_row_per_value() {
    let dir = workspace();
    let p = dir.path();
    ok(&["ablate", "--config", "tiny.json", "--sweep", "lhif", "--data", "data", "--epochs", "1", "--out", "lhif.csv"], p);
    let rows = csv_rows(&p.join("lhif.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][1].as_str(), rows[1][1].as_str()), ("on", "off"));
    let params = |r: &Vec<String>| r[2].parse::<usize>().unwrap();
    assert!(params(&rows[1]) < params(&rows[0]));
    assert!(p.join("lhif.run.json").is_file());

    ok(&["ablate", "--config", "tiny.json", "--sweep", "fusion", "--values", "add,concat", "--data", "data", "--test", "data/c3", "--epochs", "1", "--out", "f.csv"], p);
    assert_eq!(csv_rows(&p.join("f.csv")).len(), 2);
    let out = freqct(&["ablate", "--config", "tiny.json", "--sweep", "fusion", "--values", "sum", "--data", "data", "--out", "g.csv"], p);
    assert_eq!(code(&out), 2);
    assert!(!p.join("g.csv").exists());
}

#[test]
fn plot_is_deterministic() {
    let dir = workspace();
    let p = dir.path();
    ok(&["train", "--config", "tiny.json", "--data", "data", "--out", "run"], p);
    ok(&["plot", "--metrics", "run/loss.csv", "--out", "a"], p);
    ok(&["plot", "--metrics", "run/loss.csv", "--out", "b"], p);
    let read = |f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read("a.png"), read("b.png"));
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(&read("a.png")[..8], b"\x89PNG\r\n\x1a\n");
    assert!(String::from_utf8(read("a.csv")).unwrap().starts_with("step,loss\n"));

    let rows: String = (0..1000).map(|i| format!("{i},{}\n", (i as f64 * 0.01).sin())).collect();
    std::fs::write(p.join("long.csv"), format!("step,loss\n{rows}")).unwrap();
    ok(&["plot", "--metrics", "long.csv", "--points", "50", "--out", "long"], p);
    assert_eq!(std::fs::read_to_string(p.join("long.csv")).unwrap().lines().count(), 51);
}

#[test]
fn plot_of_an_empty_table_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.csv"), "step,epoch,lr,loss\n").unwrap();
    assert_eq!(code(&freqct(&["plot", "--metrics", "e.csv", "--out", "e"], dir.path())), 2);
    assert_eq!(code(&freqct(&["plot", "--metrics", "missing.csv", "--out", "e"], dir.path())), 2);
}

#[test]
fn manifests_record_inputs_and_outputs() {
    let dir = workspace();
    let p = dir.path();
    ok(&["baseline-sart", "--proj", "data/c2/proj.raw", "--iters", "2", "--out", "s.raw"], p);
    let m: Value = read_json(&p.join("s.run.json")).unwrap();
    assert_eq!(m["command"], "baseline-sart");
    assert_eq!(m["inputs"][0], "data/c2/proj.raw");
    assert_eq!(m["outputs"][0], "s.raw");
    assert_eq!(m["config"]["iterations"], 2);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
}
