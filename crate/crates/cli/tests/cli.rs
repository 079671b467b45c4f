use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpn::io::{load_dataset, load_weights};
use quick_xml::events::Event;
use quick_xml::Reader;
use tempfile::TempDir;

fn dpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpn")).args(args).output().expect("spawn dpn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> Output {
    let out = dpn(args);
    assert_eq!(
        code(&out),
        0,
        "dpn {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn collect(dir: &Path, name: &str, episodes: usize, horizon: usize) -> PathBuf {
    let path = dir.join(name);
    ok(&[
        "collect", "--env", "pointmass", "--episodes", &episodes.to_string(), "--horizon", &horizon.to_string(),
        "--seed", "0", "--out", s(&path),
    ]);
    path
}

fn small_rl_config(dir: &Path) -> PathBuf {
    let path = dir.join("rl.json");
    std::fs::write(&path, r#"{"rl": {"episodes": 4, "warmup_steps": 20, "batch_size": 16, "hidden": 16, "eval_episodes": 3}}"#)
        .unwrap();
    path
}

#[test]
fn collect_writes_the_requested_episodes() {
    let dir = TempDir::new().unwrap();
    let path = collect(dir.path(), "d.dpnd", 3, 5);
    let ds = load_dataset(&path).unwrap();
    assert_eq!(ds.episodes.len(), 3);
    assert!((0..3).all(|e| ds.episode_len(e) == 5));
    assert!(dir.path().join("d.dpnd.run.json").exists());
}

#[test]
fn collect_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = collect(dir.path(), "a.dpnd", 3, 5);
    let b = collect(dir.path(), "b.dpnd", 3, 5);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn collect_rejects_zero_episodes() {
    let dir = TempDir::new().unwrap();
    let out = dpn(&["collect", "--episodes", "0", "--horizon", "5", "--out", s(&dir.path().join("d.dpnd"))]);
    assert_eq!(code(&out), 2);
    let out = dpn(&["collect", "--episodes", "2", "--horizon", "5", "--env", "cartpole", "--out", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn collect_into_missing_directory_is_io_error() {
    let dir = TempDir::new().unwrap();
    let out = dpn(&["collect", "--episodes", "1", "--horizon", "2", "--out", s(&dir.path().join("no/such/d.dpnd"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn train_writes_weights_and_one_loss_row_per_iteration() {
    let dir = TempDir::new().unwrap();
    let data = collect(dir.path(), "d.dpnd", 6, 6);
    for model in ["dpn", "vae", "inverse", "upn"] {
        let weights = dir.path().join(format!("{model}.dpnw"));
        ok(&["train", "--data", s(&data), "--model", model, "--iterations", "7", "--out", s(&weights)]);
        let csv = std::fs::read_to_string(dir.path().join(format!("{model}.loss.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 7, "{model}");
        let file = load_weights(&weights).unwrap();
        let again = dir.path().join("copy.dpnw");
        dpn::io::save_weights(&file, &again).unwrap();
        assert_eq!(std::fs::read(&weights).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn train_reports_shape_mismatch() {
    let dir = TempDir::new().unwrap();
    let data = collect(dir.path(), "d.dpnd", 2, 6);
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"render": {"height": 12, "width": 12}}"#).unwrap();
    let out = dpn(&["train", "--data", s(&data), "--config", s(&config), "--iterations", "1", "--out", s(&dir.path().join("m.dpnw"))]);
    assert_eq!(code(&out), 4);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[1, 16, 16]") && err.contains("[1, 12, 12]"), "{err}");
}

#[test]
fn train_rejects_bad_config() {
    let dir = TempDir::new().unwrap();
    let data = collect(dir.path(), "d.dpnd", 2, 6);
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"train": {"no_such_field": 1}}"#).unwrap();
    let out = dpn(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&dir.path().join("m.dpnw"))]);
    assert_eq!(code(&out), 2);
    let out = dpn(&["train", "--data", s(&dir.path().join("missing.dpnd")), "--out", s(&dir.path().join("m.dpnw"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn corrupted_files_are_malformed_input() {
    let dir = TempDir::new().unwrap();
    let data = collect(dir.path(), "d.dpnd", 3, 6);
    let weights = dir.path().join("m.dpnw");
    ok(&["train", "--data", s(&data), "--iterations", "2", "--out", s(&weights)]);

    for path in [&data, &weights] {
        let mut bytes = std::fs::read(path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(path, bytes).unwrap();
    }
    let out = dpn(&["train", "--data", s(&data), "--iterations", "1", "--out", s(&dir.path().join("n.dpnw"))]);
    assert_eq!(code(&out), 5);
    let out = dpn(&["eval", "--weights", s(&weights), "--pairs", "20", "--out-dir", s(&dir.path().join("ev"))]);
    assert_eq!(code(&out), 5);
}

#[test]
fn eval_pixel_needs_no_weights() {
    let dir = TempDir::new().unwrap();
    let ev = dir.path().join("ev");
    ok(&["eval", "--pairs", "30", "--out-dir", s(&ev)]);
    for name in ["pairs_pixel.csv", "pairs_true.csv", "trace_pixel.csv", "trace_true.csv", "correlation.csv", "run.json"] {
        assert!(ev.join(name).exists(), "{name}");
    }
}

#[test]
fn eval_writes_one_file_per_metric_and_valid_correlations() {
    let dir = TempDir::new().unwrap();
    let data = collect(dir.path(), "d.dpnd", 4, 6);
    let mut weights = Vec::new();
    for model in ["dpn", "vae", "inverse"] {
        let w = dir.path().join(format!("{model}.dpnw"));
        ok(&["train", "--data", s(&data), "--model", model, "--iterations", "3", "--out", s(&w)]);
        weights.push(w);
    }
    let ev = dir.path().join("ev");
    let mut args = vec!["eval", "--pairs", "40", "--out-dir", s(&ev), "--weights"];
    args.extend(weights.iter().map(|w| s(w)));
    ok(&args);
    for kind in ["dpn", "vae", "inverse", "pixel"] {
        assert!(ev.join(format!("pairs_{kind}.csv")).exists(), "{kind}");
        assert!(ev.join(format!("trace_{kind}.csv")).exists(), "{kind}");
    }
    let mut reader = csv::Reader::from_path(ev.join("correlation.csv")).unwrap();
    let mut kinds = Vec::new();
    for row in reader.records() {
        let row = row.unwrap();
        let rho: f64 = row[1].parse().unwrap();
        assert!((-1.0..=1.0).contains(&rho), "{rho}");
        kinds.push(row[0].to_string());
    }
    assert_eq!(kinds, ["dpn", "vae", "inverse", "pixel"]);
}

#[test]
fn eval_missing_weights_is_io_error() {
    let dir = TempDir::new().unwrap();
    let out = dpn(&["eval", "--weights", s(&dir.path().join("none.dpnw")), "--out-dir", s(&dir.path().join("ev"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn eval_rejects_model_for_another_environment() {
    let dir = TempDir::new().unwrap();
    let data = collect(dir.path(), "d.dpnd", 2, 6);
    let w = dir.path().join("m.dpnw");
    ok(&["train", "--data", s(&data), "--iterations", "1", "--out", s(&w)]);
    let out = dpn(&["eval", "--env", "reacher", "--weights", s(&w), "--pairs", "20", "--out-dir", s(&dir.path().join("ev"))]);
    assert_eq!(code(&out), 4);
}

#[test]
fn rl_is_deterministic_and_writes_one_row_per_evaluation() {
    let dir = TempDir::new().unwrap();
    let config = small_rl_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["rl", "--metric", "pixel", "--seed", "3", "--config", s(&config), "--out-dir", s(&out)]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for name in ["learning_curve.csv", "returns.csv", "final_distance.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let finals = std::fs::read_to_string(a.join("final_distance.csv")).unwrap();
    assert_eq!(finals.lines().count(), 1 + 3);
    let curve = std::fs::read_to_string(a.join("learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 4);
    assert!(a.join("run.json").exists());
}

#[test]
fn rl_oracle_reaches_the_goal() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("rl");
    ok(&["rl", "--metric", "oracle", "--env", "pointmass", "--out-dir", s(&out)]);
    let mut reader = csv::Reader::from_path(out.join("final_distance.csv")).unwrap();
    let mut d: Vec<f64> = reader.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    d.sort_by(f64::total_cmp);
    assert!(d[d.len() / 2] < 0.05, "{d:?}");
}

#[test]
fn rl_learned_metric_requires_weights() {
    let dir = TempDir::new().unwrap();
    let out = dpn(&["rl", "--metric", "dpn", "--out-dir", s(&dir.path().join("rl"))]);
    assert_eq!(code(&out), 2);
}

fn polylines(svg: &str) -> Vec<String> {
    let mut reader = Reader::from_str(svg);
    let mut found = Vec::new();
    loop {
        match reader.read_event().expect("well-formed XML") {
            Event::Eof => break,
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"polyline" => {
                let points = e.try_get_attribute("points").unwrap().expect("points attribute");
                found.push(String::from_utf8(points.value.to_vec()).unwrap());
            }
            _ => {}
        }
    }
    found
}

#[test]
fn plot_draws_one_polyline_per_series() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("curve.csv");
    std::fs::write(&input, "step,value\n0,1.0\n1,0.5\n").unwrap();
    let svg = dir.path().join("p.svg");
    ok(&["plot", "--in", s(&input), "--out", s(&svg), "--title", "a & <b>"]);
    let text = std::fs::read_to_string(&svg).unwrap();
    let lines = polylines(&text);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].split_whitespace().count(), 2);
    assert!(text.contains(">step<") && text.contains(">value<"));
}

#[test]
fn plot_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "episode,value,kind,seed\n0,1.0,dpn,0\n1,0.5,dpn,0\n2,0.2,dpn,0\n").unwrap();
    std::fs::write(&b, "episode,value,kind,seed\n0,1.5,pixel,0\n1,1.2,pixel,0\n2,1.0,pixel,0\n").unwrap();
    let render = |name: &str| {
        let out = dir.path().join(name);
        ok(&["plot", "--in", s(&a), s(&b), "--out", s(&out)]);
        std::fs::read(out).unwrap()
    };
    let first = render("1.svg");
    assert_eq!(first, render("2.svg"));
    assert_eq!(polylines(std::str::from_utf8(&first).unwrap()).len(), 2);
}

#[test]
fn plot_names_the_malformed_line() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "x,y\n0,1\n1,oops\n").unwrap();
    let out = dpn(&["plot", "--in", s(&input), "--out", s(&dir.path().join("p.svg"))]);
    assert_eq!(code(&out), 5);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv:3"), "{err}");
}
