use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"
[synth]
slides = 2
viewfields_per_slide = 5
field_size = [60, 60]
bacilli_per_field = [1, 2]

[train]
harvest_stride = 4
threshold_1 = 0.1

[train.stage1]
epochs = 6

[train.stage2]
epochs = 2
"#;

fn tbscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbscan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tbscan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Every file under `root`, relative path and contents, sorted.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (ta, tb) = (tree(a), tree(b));
    let names = |t: &[(PathBuf, Vec<u8>)]| t.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    assert_eq!(names(&ta), names(&tb));
    for ((p, x), (_, y)) in ta.iter().zip(&tb) {
        assert!(x == y, "{} differs", p.display());
    }
}

struct Small {
    dir: TempDir,
}

impl Small {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("run.toml"), SMALL).unwrap();
        let s = Small { dir };
        ok(&["--config", &s.p("run.toml"), "synth", "--out", &s.p("corpus")]);
        s
    }

    fn p(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    fn train(&self, model: &str, extra: &[&str]) {
        let mut args = vec!["--config", "", "train", "--corpus", "", "--out", ""];
        let (cfg, corpus, out) = (self.p("run.toml"), self.p("corpus"), self.p(model));
        args[1] = &cfg;
        args[4] = &corpus;
        args[6] = &out;
        args.extend_from_slice(extra);
        ok(&args);
    }
}

#[test]
fn synth_default_layout_and_determinism() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let stats = stdout_json(&ok(&["synth", "--seed", "42", "--out", a.to_str().unwrap()]));
    ok(&["synth", "--seed", "42", "--out", b.to_str().unwrap()]);
    assert_same_tree(&a, &b);
    assert_eq!(stats["slides"], 4);
    assert_eq!(stats["fields"], 48);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",12")), "{manifest}");
    // the echo is a usable config
    ok(&[
        "--config",
        a.join("config.toml").to_str().unwrap(),
        "synth",
        "--out",
        dir.path().join("c").to_str().unwrap(),
    ]);
    assert_same_tree(&a, &dir.path().join("c"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(tbscan(&["synth"]).status.code(), Some(2));
    assert_eq!(tbscan(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tbscan(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(tbscan(&["eval", "--stage2", "maybe", "--model", "m"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nthreshold_1 = 2.0\n").unwrap();
    let out = tbscan(&["--config", cfg.to_str().unwrap(), "synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold_1"));
    let missing = tbscan(&["--config", "/nonexistent/run.toml", "synth", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn data_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.bcsc");
    fs::write(&junk, b"XXXXjunk").unwrap();
    let out = tbscan(&["inspect-model", junk.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = tbscan(&["train", "--corpus", "/nonexistent", "--out", junk.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus"));
}

#[test]
fn train_eval_detect_roundtrip() {
    let s = Small::new();
    s.train("full.bcsc", &["--export-patches", &s.p("train.bpat")]);
    s.train("again.bcsc", &[]);
    s.train("s1.bcsc", &["--stage2", "off"]);
    let full = fs::read(s.p("full.bcsc")).unwrap();
    assert_eq!(&full[..4], b"BCSC");
    assert_eq!(full, fs::read(s.p("again.bcsc")).unwrap(), "same seed, same bytes");
    assert_eq!(&fs::read(s.p("train.bpat")).unwrap()[..4], b"BPAT");

    // training log echoes the effective config
    let log = json_file(Path::new(&s.p("full.log.json")));
    assert_eq!(log["effective_config"]["command"], "train");
    assert_eq!(log["effective_config"]["architecture"].as_array().unwrap().len(), 5);
    assert_eq!(log["effective_config"]["config"]["train"]["stage1"]["epochs"], 6);
    assert!(log["training"]["stage1_losses"].as_array().unwrap().len() == 6);
    assert_eq!(log["training"]["stage2_pass_through"], false);

    let info = stdout_json(&ok(&["inspect-model", &s.p("full.bcsc")]));
    assert_eq!(info["kind"], "cascade");
    assert_eq!(info["stage1"]["layers"].as_array().unwrap().len(), 5);
    assert!(info["stage2"].is_object());
    let info = stdout_json(&ok(&["inspect-model", &s.p("s1.bcsc")]));
    assert_eq!(info["stage2"], "pass-through");

    // eval: identity of counts, subset of accepted windows
    let corpus = s.p("corpus");
    let mut reports = Vec::new();
    for (name, stage2) in [("full", "on"), ("stage1", "off")] {
        let out = s.p(&format!("{name}.json"));
        ok(&[
            "--config", &s.p("run.toml"), "--threads", "2", "eval", "--corpus", &corpus, "--model", &s.p("full.bcsc"),
            "--out", &out, "--records", "--stage2", stage2, "--overlays", &s.p(&format!("ov_{name}")),
        ]);
        reports.push(json_file(Path::new(&out)));
    }
    let accepted = |r: &Value| -> Vec<(String, u64, u64, u64)> {
        let mut v = Vec::new();
        for f in r["fields"].as_array().unwrap() {
            for w in f["windows"].as_array().unwrap() {
                if w["positive"] == true {
                    v.push((
                        f["slide_id"].as_str().unwrap().to_string(),
                        f["viewfield"].as_u64().unwrap(),
                        w["top"].as_u64().unwrap(),
                        w["left"].as_u64().unwrap(),
                    ));
                }
            }
        }
        v
    };
    let (full_acc, s1_acc) = (accepted(&reports[0]), accepted(&reports[1]));
    assert!(full_acc.iter().all(|w| s1_acc.contains(w)));
    for r in &reports {
        let c = &r["confusion"];
        let total: u64 = ["tp", "fp", "tn", "fn"].iter().map(|k| c[*k].as_u64().unwrap()).sum();
        assert_eq!(total, r["windows"].as_u64().unwrap());
        // 2 slides x 1 test field x 9 windows
        assert_eq!(total, 18);
        assert_eq!(r["effective_config"]["command"], "eval");
    }
    assert_eq!(reports[1]["settings"]["stage2_pass_through"], true);
    assert_eq!(fs::read_dir(s.p("ov_full")).unwrap().count(), 2);

    // without --records the per-window list is left out
    let out = s.p("plain.json");
    ok(&["eval", "--corpus", &corpus, "--model", &s.p("full.bcsc"), "--out", &out]);
    assert!(json_file(Path::new(&out)).get("fields").is_none());

    // detect on one image
    let image = fs::read_dir(Path::new(&corpus).join("images")).unwrap().next().unwrap().unwrap().path();
    let det = stdout_json(&ok(&[
        "detect", "--model", &s.p("full.bcsc"), "--image", image.to_str().unwrap(), "--stride", "10",
        "--overlay", &s.p("det.png"),
    ]));
    assert_eq!(det["windows"].as_array().unwrap().len(), 25);
    assert!(Path::new(&s.p("det.png")).exists());

    // a damaged model is a located format error
    let mut bad = full.clone();
    bad.truncate(bad.len() - 3);
    fs::write(s.p("bad.bcsc"), bad).unwrap();
    let out = tbscan(&["eval", "--corpus", &corpus, "--model", &s.p("bad.bcsc"), "--out", &s.p("x.json")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("offset"), "{err}");
}
