use std::fs;
use std::path::Path;
use std::process::Command;

fn vfs(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vfs")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = vfs(args);
    assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
}

const SMALL: &str = r#"
seeds = [1]
[data]
corpus_clips = 6
eval_clips = 2
[data.eval]
num_frames = 6
[train]
batch_size = 4
steps = 2
"#;

#[test]
fn end_to_end_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let cfg = p("small.toml");
    fs::write(&cfg, SMALL).unwrap();

    ok(&["gen-data", "--seed", "3", "--out", &p("clip")]);
    assert!(Path::new(&p("clip")).join("clip.json").exists());
    ok(&["gen-data", "--seed", "3", "--count", "2", "--out", &p("many")]);
    assert!(Path::new(&p("many")).join("clip-0001").join("clip.json").exists());

    ok(&["train", "--config", &cfg, "--out", &p("run")]);
    let ckpt = p("run/ckpt/seed-1.vfsc");
    assert!(Path::new(&ckpt).exists());
    assert!(fs::read_to_string(p("run/metrics.csv")).unwrap().starts_with("seed,step,lr,loss"));

    ok(&["propagate", "--ckpt", &ckpt, "--clip", &p("clip"), "--config", &cfg, "--out", &p("prop")]);
    assert!(Path::new(&p("prop")).join("mask_0005.png").exists());
    let score: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("prop/metrics.json")).unwrap()).unwrap();
    assert!(score["j_mean"].as_f64().is_some());

    let clip: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("clip/clip.json")).unwrap()).unwrap();
    let b = &clip["boxes"][0][0];
    let init = format!("{},{},{},{}", b["x"], b["y"], b["w"], b["h"]);
    ok(&["track", "--ckpt", &ckpt, "--clip", &p("clip"), "--init-box", &init, "--out", &p("trk")]);
    let boxes = fs::read_to_string(p("trk/boxes.csv")).unwrap();
    assert_eq!(boxes.lines().count(), 1 + 40);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("trk/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["object"], 0);

    ok(&["report", &p("run"), "--out", &p("report.md")]);
    assert!(fs::read_to_string(p("report.md")).unwrap().contains("| run |"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[train]\nn_frames = 3\n").unwrap();
    let out = vfs(&["train", "--config", bad.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let hot = tmp.path().join("hot.toml");
    fs::write(&hot, format!("{}\n[train.sgd]\nbase_lr = 1e12\n", SMALL.replace("steps = 2", "steps = 40"))).unwrap();
    let out = vfs(&["train", "--config", hot.to_str().unwrap(), "--out", tmp.path().join("h").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = vfs(&["ablate", "--axis", "depth", "--out", tmp.path().join("a").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
