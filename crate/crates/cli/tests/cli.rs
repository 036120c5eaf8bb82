//! End-to-end checks of the `beadnet` binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use beadnet::dataset::{Dataset, DatasetManifest, Split};
use beadnet::model::checkpoint::load_params;
use beadnet::evaluation::episode_predictions;

fn beadnet() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_beadnet"));
    c.env_remove("BEADNET_WORKERS");
    c
}

fn run(args: &[&str]) -> Output {
    beadnet().args(args).output().expect("spawn beadnet")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "beadnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn gen_small(out: &Path, episodes: usize, seed: u64) {
    ok(&[
        "gen", "--out", s(out), "--episodes", &episodes.to_string(), "--seed", &seed.to_string(),
        "--frames", "12", "--grid", "32",
    ]);
}

fn train_tiny(data: &Path, out: &Path, steps: u64) {
    ok(&[
        "train", "--data", s(data), "--out", s(out), "--steps", &steps.to_string(), "--seed", "3",
        "--h", "2", "--base-channels", "4", "--batch", "2", "--val-every", "0", "--val-stride", "4",
    ]);
}

#[test]
fn gen_twice_gives_identical_trees() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    gen_small(&a, 10, 7);
    gen_small(&b, 10, 7);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 10);
    assert_eq!(ta, tb);

    let c = d.path().join("c");
    gen_small(&c, 10, 8);
    assert_ne!(tree(&c), ta);
}

#[test]
fn gen_500_episodes_splits_350_50_100() {
    let d = tempfile::tempdir().unwrap();
    ok(&["gen", "--out", s(d.path()), "--episodes", "500", "--seed", "1", "--frames", "2", "--grid", "16"]);
    let m = DatasetManifest::read(d.path()).unwrap();
    let count = |k| m.split.values().filter(|&&v| v == k).count();
    assert_eq!(m.episodes.len(), 500);
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (350, 50, 100));
}

#[test]
fn missing_out_is_a_usage_error() {
    let out = run(&["gen", "--episodes", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn gen_refuses_non_empty_dir_without_force() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("keep.txt"), "x").unwrap();
    let out = run(&["gen", "--out", s(d.path()), "--episodes", "2", "--frames", "4", "--grid", "16"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.path().join("manifest.json").exists());

    ok(&["gen", "--out", s(d.path()), "--episodes", "2", "--frames", "4", "--grid", "16", "--force"]);
    assert!(d.path().join("manifest.json").exists());
    assert!(d.path().join("keep.txt").exists());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "[gen]\nepisodes = 3\nframes = 4\ngrid = 16\nseed = 5\n").unwrap();
    let data = d.path().join("data");
    ok(&["--config", s(&cfg), "gen", "--out", s(&data), "--episodes", "4"]);
    let m = DatasetManifest::read(&data).unwrap();
    assert_eq!(m.episodes.len(), 4);
    assert_eq!(m.geometry.grid, 16);
    let echo = fs::read_to_string(data.join("resolved_config.toml")).unwrap();
    assert!(echo.contains("episodes = 4"), "{echo}");
    assert!(echo.contains("seed = 5"), "{echo}");

    fs::write(&cfg, "[gen]\nepisodez = 3\n").unwrap();
    let out = run(&["--config", s(&cfg), "gen", "--out", s(&d.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_zero_steps_writes_initial_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    gen_small(&data, 4, 2);
    let run_dir = d.path().join("run");
    let out = ok(&[
        "train", "--data", s(&data), "--out", s(&run_dir), "--steps", "0", "--h", "2", "--base-channels", "4",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("params sha256"));
    for f in ["best.ckpt", "latest.ckpt", "train.log", "summary.json", "resolved_config.toml"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 0);
}

#[test]
fn train_is_deterministic_and_resumable() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    gen_small(&data, 4, 2);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    train_tiny(&data, &a, 6);
    train_tiny(&data, &b, 3);
    let mut resume = vec![
        "train", "--data", s(&data), "--out", s(&b), "--steps", "6", "--seed", "3", "--h", "2",
        "--base-channels", "4", "--batch", "2", "--val-every", "0", "--val-stride", "4",
    ];
    resume.push("--resume");
    ok(&resume);
    let hash = |p: &Path| {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(p.join("summary.json")).unwrap()).unwrap();
        v["params_sha256"].as_str().unwrap().to_string()
    };
    assert_eq!(hash(&a), hash(&b));
    assert_eq!(fs::read(a.join("latest.ckpt")).unwrap(), fs::read(b.join("latest.ckpt")).unwrap());
}

#[test]
fn exploding_training_exits_with_numerical_failure() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    gen_small(&data, 3, 4);
    let out = run(&[
        "train", "--data", s(&data), "--out", s(&d.path().join("run")), "--steps", "20", "--h", "2",
        "--base-channels", "4", "--batch", "2", "--lr", "1e30",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn zero_baseline_mae_is_mean_target_and_reports_are_stable() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    gen_small(&data, 10, 11);
    let (e1, e2) = (d.path().join("e1"), d.path().join("e2"));
    for e in [&e1, &e2] {
        ok(&["eval", "--data", s(&data), "--baseline", "zero", "--h", "3", "--out", s(e)]);
    }
    let r1 = fs::read(e1.join("report.json")).unwrap();
    assert_eq!(r1, fs::read(e2.join("report.json")).unwrap());
    assert_eq!(fs::read(e1.join("report.txt")).unwrap(), fs::read(e2.join("report.txt")).unwrap());
    assert!(e1.join("segment_heatmap.png").exists());

    let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    let cells = report["segment_mae"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    assert!(cells.iter().all(|row| row.as_array().unwrap().len() == 4));

    let ds = Dataset::load(&data).unwrap();
    let (mut sum, mut n) = (0.0f64, 0usize);
    for rec in ds.records_in(Split::Test) {
        for t in 2..rec.len() {
            sum += rec.pressure(t).iter().map(|&p| p.abs() as f64).sum::<f64>();
            n += rec.pressure(t).len();
        }
    }
    let mae = report["mae_kpa"].as_f64().unwrap();
    assert!((mae - sum / n as f64).abs() <= 1e-9 * (1.0 + mae), "{mae} vs {}", sum / n as f64);
}

#[test]
fn eval_requires_checkpoint_or_baseline() {
    let out = run(&["eval", "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infer_replay_matches_offline_predictions() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    gen_small(&data, 3, 5);
    let run_dir = d.path().join("run");
    train_tiny(&data, &run_dir, 2);
    let ckpt = run_dir.join("best.ckpt");

    let ds = Dataset::load(&data).unwrap();
    let rec = &ds.records()[0];
    let source = data.join("episodes").join(&rec.id);
    let inf = d.path().join("inf");
    ok(&["infer", "--checkpoint", s(&ckpt), "--source", s(&source), "--out", s(&inf)]);

    let params = load_params(&ckpt).unwrap();
    let h = params.config.h;
    let px = rec.pressure(0).len();
    let maps: Vec<f32> = fs::read(inf.join("maps.f32"))
        .unwrap()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(maps.len(), rec.len() * px);
    let offline = episode_predictions(&params, rec).unwrap();
    assert_eq!(offline.len(), rec.len() + 1 - h);
    for (t, map) in offline {
        assert_eq!(&maps[t * px..(t + 1) * px], map.data(), "frame {t}");
    }
    let series = fs::read_to_string(inf.join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), rec.len() + 1);
    assert!(inf.join("latency.csv").exists());
}

#[test]
fn infer_on_empty_stdin_writes_empty_outputs() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    gen_small(&data, 2, 5);
    let run_dir = d.path().join("run");
    train_tiny(&data, &run_dir, 0);
    let inf = d.path().join("inf");
    let mut child = beadnet()
        .args(["infer", "--checkpoint", s(&run_dir.join("best.ckpt")), "--source", "-", "--out", s(&inf)])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    drop(child.stdin.take());
    assert!(child.wait().unwrap().success());
    assert_eq!(fs::read(inf.join("maps.f32")).unwrap().len(), 0);
    assert_eq!(fs::read_to_string(inf.join("series.csv")).unwrap().lines().count(), 1);
}

#[test]
fn infer_streams_frames_from_stdin() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    gen_small(&data, 2, 5);
    let run_dir = d.path().join("run");
    train_tiny(&data, &run_dir, 0);
    let ds = Dataset::load(&data).unwrap();
    let rec = &ds.records()[0];
    let (ep_out, pipe_out) = (d.path().join("ep"), d.path().join("pipe"));
    let ckpt = run_dir.join("best.ckpt");
    ok(&["infer", "--checkpoint", s(&ckpt), "--source", s(&data.join("episodes").join(&rec.id)), "--out", s(&ep_out)]);

    let mut child = beadnet()
        .args(["infer", "--checkpoint", s(&ckpt), "--source", "-", "--out", s(&pipe_out)])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    for t in 0..rec.len() {
        stdin.write_all(rec.frame_bytes(t)).unwrap();
    }
    drop(stdin);
    assert!(child.wait().unwrap().success());
    assert_eq!(fs::read(ep_out.join("maps.f32")).unwrap(), fs::read(pipe_out.join("maps.f32")).unwrap());
}

#[test]
fn malformed_checkpoint_names_the_tensor() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    gen_small(&data, 2, 5);
    let run_dir = d.path().join("run");
    train_tiny(&data, &run_dir, 0);
    let good = fs::read(run_dir.join("best.ckpt")).unwrap();
    let mut bytes = good.clone();
    let json_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + json_len]).unwrap();
    let first = header["tensors"][0]["name"].as_str().unwrap().to_string();
    bytes[16 + json_len..20 + json_len].copy_from_slice(&f32::NAN.to_le_bytes());
    let bad = d.path().join("bad.ckpt");
    fs::write(&bad, &bytes).unwrap();

    let out = run(&["infer", "--checkpoint", s(&bad), "--source", "-", "--out", s(&d.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("`{first}`")), "{err}");

    fs::write(&bad, &good[..good.len() - 3]).unwrap();
    let out = run(&["eval", "--data", s(&data), "--checkpoint", s(&bad), "--out", s(&d.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("truncated"), "{err}");
}

#[test]
fn help_documents_every_flag_with_defaults() {
    let cases: &[(&str, &[&str])] = &[
        ("gen", &["--out", "--episodes", "[default: 500]", "--seed", "--frames", "[default: 192]",
            "--finger-radius-mm", "[default: 5]", "--peak-force-n", "[default: 20]", "--grid", "--noise-std", "--force"]),
        ("train", &["--data", "--out", "--steps", "--seed", "--lr", "--batch", "--h", "[default: 15]",
            "--base-channels", "--leaky-slope", "--output-scale", "--val-every", "--val-stride", "--resume"]),
        ("eval", &["--data", "--checkpoint", "--out", "--gate-n", "[default: 2]", "--split", "--baseline", "--samples"]),
        ("infer", &["--checkpoint", "--source", "--out", "--frame-hz"]),
    ];
    for (sub, flags) in cases {
        let out = ok(&[sub, "--help"]);
        let text = String::from_utf8_lossy(&out.stdout);
        for f in *flags {
            assert!(text.contains(f), "{sub} --help lacks {f}:\n{text}");
        }
        assert!(text.contains("--workers") && text.contains("--config"));
    }
}

#[test]
fn workers_env_is_validated() {
    let d = tempfile::tempdir().unwrap();
    let out = beadnet()
        .env("BEADNET_WORKERS", "lots")
        .args(["gen", "--out", s(&d.path().join("a")), "--episodes", "1", "--frames", "2", "--grid", "16"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = beadnet()
        .env("BEADNET_WORKERS", "2")
        .args(["gen", "--out", s(&d.path().join("b")), "--episodes", "1", "--frames", "2", "--grid", "16"])
        .output()
        .unwrap();
    assert!(out.status.success());
}
