use std::path::Path;
use std::process::{Command, Output};

fn dysflux(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dysflux"))
        .args(args)
        .env("DYSFLUX_LOG", "info")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(root: &Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_succeeds() {
    assert!(dysflux(&["--help"]).status.success());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dysflux(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dysflux(&["align"]).status.code(), Some(1), "missing --out");
    assert_eq!(
        dysflux(&["align", "--out", p(tmp.path())]).status.code(),
        Some(1),
        "missing --manifest"
    );
    assert_eq!(
        dysflux(&["align", "--out", p(tmp.path()), "--workers", "lots"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn bad_manifest_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("manifest.json");
    std::fs::write(&m, "{ not json").unwrap();
    let out = dysflux(&["align", "--manifest", p(&m), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let missing = tmp.path().join("absent.json");
    let out = dysflux(&["detect", "--manifest", p(&missing), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_emission_exits_two_but_writes_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(dysflux(&["simulate", "--out", p(&data), "--count", "3", "--seed", "9"])
        .status
        .success());
    let first = std::fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .min()
        .unwrap();
    std::fs::write(first.join("emission.bin"), b"garbage").unwrap();
    let pred = tmp.path().join("pred");
    let out = dysflux(&["align", "--manifest", p(&data.join("manifest.json")), "--out", p(&pred)]);
    assert_eq!(out.status.code(), Some(2));
    let summary = std::fs::read_to_string(pred.join("summary.json")).unwrap();
    assert!(summary.contains("emission.bin"), "{summary}");
    let written = std::fs::read_dir(&pred)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(written, 2);
}

#[test]
fn simulate_align_detect_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = dysflux(&["simulate", "--out", p(&data), "--count", "6", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = data.join("manifest.json");
    assert!(String::from_utf8_lossy(&out.stdout).contains("manifest.json"));

    let pred = tmp.path().join("pred");
    let a = dysflux(&["align", "--manifest", p(&manifest), "--out", p(&pred), "--order", "2"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let d = dysflux(&["detect", "--manifest", p(&manifest), "--out", p(&pred)]);
    assert!(d.status.success(), "{}", String::from_utf8_lossy(&d.stderr));
    let e = dysflux(&[
        "evaluate",
        "--manifest",
        p(&manifest),
        "--out",
        p(&pred),
        "--order",
        "2",
    ]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let line = String::from_utf8_lossy(&e.stdout);
    assert!(line.starts_with("per "), "{line}");
    assert!(pred.join("report.json").is_file());
    let csv = std::fs::read_to_string(pred.join("ms_by_order.csv")).unwrap();
    assert!(csv.starts_with("order,ms_f1,tp,fp,fn\n"));
    assert_eq!(csv.lines().count(), 4, "orders 0..=2");
}

#[test]
fn run_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = dysflux(&["run", "--out", p(dir), "--count", "5", "--seed", "77", "--workers", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
}

#[test]
fn config_file_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"workers": 0}"#).unwrap();
    let out = dysflux(&[
        "simulate",
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("d")),
        "--count",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}
