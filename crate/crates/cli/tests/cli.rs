use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    root().join("fixtures/example_3x3").join(name)
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deadleaves"));
    c.env_remove("DEADLEAVES_THREADS");
    c
}

fn run_in(dir: Option<&Path>, args: &[&str]) -> Output {
    let mut c = bin();
    if let Some(d) = dir {
        c.current_dir(d);
    }
    c.args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    ok_in(None, args)
}

fn ok_in(dir: Option<&Path>, args: &[&str]) -> Value {
    let out = run_in(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(args: &[&str]) -> i32 {
    run_in(None, args).status.code().expect("exit code")
}

fn validate(schema: &str, instance: &Value) {
    let path = root().join("schemas").join(format!("{schema}.schema.json"));
    let schema: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = v.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{}: {errors:?}", path.display());
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn observe(out_dir: &Path, extra: &[&str]) -> Value {
    let conf = fixture("observe.conf");
    let mut args = vec!["observe", "--config", s(&conf), "--out-dir", s(out_dir)];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn bell_count_of_nine() {
    let v = ok(&["partitions", "--count", "9"]);
    assert_eq!(v["count"], 21147);
    validate("partitions", &v);
    let out = run_in(None, &["partitions", "--list", "3"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "111\n112\n121\n122\n123\n");
}

#[test]
fn prior_of_example_partition() {
    let v = ok(&["prior", "--grid", "3x3", "--rmin", "1", "--rmax", "2", "--partition", s(&fixture("partition.json"))]);
    validate("prior", &v);
    assert_eq!(v["partition"], "112133133");
    let ordered = v["ordered"]["value"].as_f64().unwrap();
    assert!((ordered / 7.4377e-4 - 1.0).abs() < 1e-3, "{ordered}");
    let ratios: Vec<f64> = v["layer_ratios"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(ratios.last(), Some(&1.0));
    let by_labels = ok(&["prior", "--grid", "3x3", "--rmin", "1", "--rmax", "2", "--labels", "223211211"]);
    assert_eq!(by_labels["ordered"], v["ordered"]);
}

#[test]
fn prior_tables_and_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("t.json");
    let v = ok(&["prior", "--grid", "2x2", "--all", "--tables", s(&tables)]);
    validate("prior-all", &v);
    assert_eq!(v["count"], 15);
    assert!((v["total"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(v["records"][0]["partition"], "1234");
    let t: Value = serde_json::from_str(&fs::read_to_string(&tables).unwrap()).unwrap();
    validate("prior-tables", &t);
    assert_eq!(t["masses"].as_object().unwrap().len(), 15);
}

#[test]
fn likelihood_of_example_partition() {
    let v = ok(&[
        "likelihood",
        "--image",
        s(&fixture("image.pfm")),
        "--partition",
        s(&fixture("partition.json")),
        "--color",
        "gaussian:0.6:0.1",
        "--texture",
        "gaussian:0.01",
    ]);
    validate("likelihood", &v);
    assert!((v["total"].as_f64().unwrap() - 61.0).abs() < 0.05, "{v}");
}

#[test]
fn observer_recovers_example_partition() {
    let dir = tempfile::tempdir().unwrap();
    let v = observe(dir.path(), &[]);
    validate("observe", &v);
    assert_eq!(v["map"]["partition"], "112133133");
    assert_eq!(v["tie"], false);
    assert_eq!(v["count"], 21147);
    assert_eq!(v["top"].as_array().unwrap().len(), 15);

    let text = fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    let mut lines = text.lines();
    validate("observe-header", &serde_json::from_str(lines.next().unwrap()).unwrap());
    let mut total = 0.0;
    let mut n = 0;
    for line in lines {
        let r: Value = serde_json::from_str(line).unwrap();
        if n < 50 {
            validate("observe-record", &r);
        }
        total += r["posterior"].as_f64().unwrap();
        n += 1;
    }
    assert_eq!(n, 21147);
    assert!((total - 1.0).abs() < 1e-9, "{total}");

    let csv = fs::read_to_string(dir.path().join("top.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows[0].starts_with("# config {"));
    assert_eq!(rows[1], "partition,log_prior,log_likelihood,posterior");
    assert!(rows[2].starts_with("112133133,"));
    assert_eq!(rows.len(), 17);
}

#[test]
fn streaming_matches_full_sweep() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full = observe(a.path(), &["--top", "5"]);
    let stream = observe(b.path(), &["--top", "5", "--stream", "--no-memo"]);
    assert_eq!(full["top"], stream["top"]);
    assert_eq!(full["log_evidence"], stream["log_evidence"]);
}

#[test]
fn uniform_likelihood_ranks_like_prior() {
    let dir = tempfile::tempdir().unwrap();
    let v = observe(dir.path(), &["--likelihood", "uniform:21", "--top", "21147"]);
    let prior = ok(&["prior", "--grid", "3x3", "--rmin", "1", "--rmax", "2", "--all"]);
    let a: Vec<&Value> = v["top"].as_array().unwrap().iter().map(|r| &r["partition"]).collect();
    let b: Vec<&Value> = prior["records"].as_array().unwrap().iter().map(|r| &r["partition"]).collect();
    assert_eq!(a.len(), 21147);
    assert_eq!(a, b);
}

#[test]
fn single_pixel_window() {
    let dir = tempfile::tempdir().unwrap();
    let v = observe(dir.path(), &["--window", "2,0,1,1"]);
    assert_eq!(v["count"], 1);
    assert_eq!(v["map"]["posterior"], 1.0);
    assert_eq!(v["map"]["partition"], "1");
}

#[test]
fn thread_count_does_not_change_output() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let img = fixture("image.pfm");
    let args = |threads: &'static str| {
        vec!["--threads", threads, "observe", "--image", s(&img), "--window", "0,0,3,3", "--top", "40", "--out-dir", "out"]
    };
    let one = run_in(Some(a.path()), &args("1"));
    let mut c = bin();
    let four = c.current_dir(b.path()).env("DEADLEAVES_THREADS", "4").args(&args("4")[2..]).output().unwrap();
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
    for f in ["records.jsonl", "top.csv"] {
        assert_eq!(fs::read(a.path().join("out").join(f)).unwrap(), fs::read(b.path().join("out").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["generate", "--size", "48", "--rmin", "2", "--rmax", "12", "--seed", "7", "--scene", "s.json", "--image", "i.pfm", "--preview", "p.ppm"];
    let va = ok_in(Some(a.path()), &args);
    let vb = ok_in(Some(b.path()), &args);
    validate("generate", &va);
    assert_eq!(va, vb);
    for f in ["s.json", "i.pfm", "p.ppm"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let scene: Value = serde_json::from_str(&fs::read_to_string(a.path().join("s.json")).unwrap()).unwrap();
    validate("scene", &scene);
    assert_eq!(scene["config"]["command"]["generate"]["seed"], 7);

    let other = ok_in(Some(b.path()), &["generate", "--size", "48", "--rmin", "2", "--rmax", "12", "--seed", "8", "--scene", "t.json", "--image", "j.pfm"]);
    assert_eq!(other["side"], 48);
    assert_ne!(fs::read(b.path().join("i.pfm")).unwrap(), fs::read(b.path().join("j.pfm")).unwrap());
}

#[test]
fn uniform_generation_and_likelihood() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok_in(Some(d), &["generate", "--size", "8", "--rmin", "1", "--rmax", "3", "--color", "uniform:11", "--texture", "uniform:0", "--channels", "1", "--seed", "2", "--scene", "s.json", "--image", "i.pfm"]);
    let v = ok_in(Some(d), &["likelihood", "--image", "i.pfm", "--pixels", "0,0;1,0", "--labels", "12", "--color", "uniform:11", "--texture", "uniform:0"]);
    assert_eq!(v["total"], 0.0);
}

#[test]
fn oracle_reports() {
    let v = ok(&["oracle", "mc-prior", "--grid", "2x2", "--labels", "1122", "--samples", "100000", "--seed", "4"]);
    validate("oracle", &v);
    assert!(v["z_score"].as_f64().unwrap().abs() < 4.0, "{v}");
    let v = ok(&["oracle", "mc-leaf", "--grid", "2x1", "--subset", "0,0;1,0", "--samples", "100000"]);
    validate("oracle", &v);
    assert_eq!(v["target"], "leaf 0x3");
    assert!(v["z_score"].as_f64().unwrap().abs() < 4.0, "{v}");
    let v = ok(&["oracle", "grid-leaf", "--grid", "2x1", "--subset", "0x1", "--resolution", "400"]);
    validate("oracle", &v);
    assert!(v["relative_error"].as_f64().unwrap().abs() < 1e-3, "{v}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["partitions"]), 2);
    assert_eq!(code(&["prior", "--grid", "3"]), 2);
    assert_eq!(code(&["prior", "--grid", "2x2", "--rmin", "3", "--rmax", "2", "--all"]), 2);
    assert_eq!(code(&["prior", "--grid", "2x2", "--labels", "12"]), 2);
    assert_eq!(code(&["observe", "--image", s(&fixture("image.pfm")), "--top", "0"]), 2);
    assert_eq!(code(&["observe", "--image", s(&fixture("image.pfm")), "--likelihood", "cauchy"]), 2);
    assert_eq!(code(&["generate", "--bogus"]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn oversized_window_is_refused_with_bell_count() {
    let out = run_in(None, &["prior", "--grid", "4x4", "--all"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("10480142147"), "{err}");
}

#[test]
fn file_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pfm");
    fs::write(&bad, b"PF\n3 3\n-1.0\n\x00\x00").unwrap();
    assert_eq!(code(&["observe", "--image", s(&bad)]), 1);
    assert_eq!(code(&["observe", "--image", s(&dir.path().join("missing.pfm"))]), 1);
    let broken = dir.path().join("p.json");
    fs::write(&broken, "{\"blocks\": [[[0, 0]]").unwrap();
    let out = run_in(None, &["prior", "--partition", s(&broken)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    let conf = fixture("observe.conf");
    let v = ok_in(Some(elsewhere.path()), &["observe", "--config", s(&conf), "--top", "4", "--out-dir", s(dir.path())]);
    let cmd = &v["config"]["command"]["observe"];
    assert_eq!(cmd["top"], 4);
    assert_eq!(cmd["rmax"], 2.0);
    assert_eq!(v["top"].as_array().unwrap().len(), 4);
    assert!(v["config"]["config_file"].as_str().unwrap().ends_with("observe.conf"));

    let local = dir.path().join("run.conf");
    fs::write(&local, format!("# local\nimage = {}\nwindow = 0,0,2,2\nstream = true\n", s(&fixture("image.pfm")))).unwrap();
    let v = ok(&["observe", "--config", s(&local), "--out-dir", s(dir.path())]);
    assert_eq!(v["count"], 15);
    assert_eq!(v["config"]["command"]["observe"]["stream"], true);
    fs::write(&local, "window 0,0,2,2\n").unwrap();
    assert_eq!(code(&["observe", "--config", s(&local)]), 2);
}
