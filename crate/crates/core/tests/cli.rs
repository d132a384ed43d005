use std::path::Path;
use std::process::Command;

fn probshape() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_probshape"));
    c.env_remove("PROBSHAPE_OUT_DIR");
    c
}

const TINY: &str = "seed = 3
[data]
dims = [24, 24, 24]
count = 8
test_size = 3
[augment]
train_count = 16
val_count = 4
[training]
epochs = 2
[inference]
samples = 3
field_draws = 12
field_images = 1
";

#[test]
fn version_lists_formats() {
    let out = probshape().arg("--version").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for magic in ["PSVOL1", "PSPTS1", "PSPCA1", "PSNET1"] {
        assert!(text.contains(magic), "{text}");
    }
}

#[test]
fn zero_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = probshape()
        .args(["generate", "--count", "0", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("count"));
}

#[test]
fn malformed_config_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[training]\nepochz = 3\n").unwrap();
    let out = probshape().args(["generate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml") && err.contains("epochz"), "{err}");
}

#[test]
fn stage_without_upstream_reports_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = probshape().arg("train").env("PROBSHAPE_OUT_DIR", dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("probshape augment"));
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> String {
    let o = probshape().args(args).arg("--config").arg(cfg).arg("--out-dir").arg(out).arg("-q").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stderr).unwrap()
}

#[test]
fn stages_chain_resume_and_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    for stage in ["generate", "augment", "train", "infer", "evaluate", "report"] {
        assert!(run(&[stage], &cfg, &out).contains("done"));
    }
    let first = std::fs::read(out.join("report/summary.json")).unwrap();
    assert!(run(&["train"], &cfg, &out).contains("up to date"));
    assert!(run(&["train", "--force"], &cfg, &out).contains("done"));
    assert!(run(&["infer"], &cfg, &out).contains("up to date"));
    assert!(run(&["report", "--force"], &cfg, &out).contains("done"));
    assert_eq!(std::fs::read(out.join("report/summary.json")).unwrap(), first);
    assert!(out.join("config.toml").exists());
    assert!(!out.join(".lock").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&["generate"], &cfg, &a);
    run(&["generate", "--seed", "4"], &cfg, &b);
    let m = |d: &Path| std::fs::read_to_string(d.join("generate/manifest.json")).unwrap();
    assert_ne!(m(&a), m(&b));
    assert!(std::fs::read_to_string(b.join("config.toml")).unwrap().contains("seed = 4"));
}
