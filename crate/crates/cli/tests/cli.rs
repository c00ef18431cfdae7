use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
samples = 8
length = 6
bits = [4, 8]
seed = 5

[space]
input_channels = 4
op_menu = [{ kernel = 3, expansion = 3 }, { kernel = 5, expansion = 3 }, { kernel = 3, expansion = 6 }]

[[space.blocks]]
layers = 2
channels = 6

[[space.blocks]]
layers = 1
channels = 8
"#;

fn qnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnas")).args(args).output().expect("spawn qnas")
}

fn ok(args: &[&str]) -> String {
    let out = qnas(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    qnas(args).status.code().expect("exit code")
}

fn setup(dir: &Path) -> String {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, CONFIG).unwrap();
    cfg.display().to_string()
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

#[test]
fn space_describe_default() {
    let text = ok(&["space", "describe"]);
    for n in ["216", "1296", "6 "] {
        assert!(text.contains(n), "{text}");
    }
    assert!(text.contains("18 tables"));
}

#[test]
fn build_prune_search_sweep_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let luts = dir.path().join("luts");
    let fronts = dir.path().join("fronts");
    ok(&["luts", "build", "--config", &cfg, "--out", &p(&luts)]);
    assert!(luts.join("lut_b0_w4.csv").is_file() && luts.join("lut_b1_w8.csv").is_file());
    assert!(luts.join("manifest.json").is_file());

    ok(&["luts", "prune", "--in", &p(&luts), "--metrics", "size", "--out", &p(&fronts)]);
    assert!(fronts.join("front_b0_w4.csv").is_file());

    let result = dir.path().join("result.json");
    ok(&["search", "--fronts", &p(&fronts), "--config", &cfg, "--out", &p(&result)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(json["choices"].as_array().unwrap().len(), 2);
    assert_eq!(json["provenance"].as_array().unwrap().len(), 2);
    let total = json["total_size_bits"].as_u64().unwrap();

    // a budget just below the unconstrained optimum forces a different answer
    let tight = dir.path().join("tight.json");
    ok(&["search", "--fronts", &p(&fronts), "--max-size-bits", &(total - 1).to_string(), "--out", &p(&tight)]);
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(&tight).unwrap()).unwrap();
    assert!(t["total_size_bits"].as_u64().unwrap() < total);
    assert!(t["objective_loss"].as_f64().unwrap() >= json["objective_loss"].as_f64().unwrap());

    let int8 = dir.path().join("int8.json");
    ok(&["search", "--fronts", &p(&fronts), "--bits", "8", "--out", &p(&int8)]);
    let i: serde_json::Value = serde_json::from_str(&fs::read_to_string(&int8).unwrap()).unwrap();
    assert!(i["choices"].as_array().unwrap().iter().all(|c| c["bitwidth"] == 8));

    let pareto = dir.path().join("pareto.csv");
    let grid = format!("0:{}:12", total);
    ok(&["sweep", "--fronts", &p(&fronts), "--size-grid", &grid, "--all", "--out", &p(&pareto)]);
    let csv = fs::read_to_string(&pareto).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("max_size_bits,max_latency_us,status,objective_loss,total_size_bits,total_latency_us,selection"));
    assert!(csv.contains("infeasible"));

    let report_dir = dir.path().join("report");
    let text = ok(&["report", &p(&result), &p(&tight), &p(&pareto), "--out", &p(&report_dir)]);
    assert!(text.contains("size budget"));
    let report = fs::read_to_string(report_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 2 + 12);
}

#[test]
fn run_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    let text = ok(&["run", "--config", &cfg, "--out", &p(&out)]);
    assert!(text.contains("unconstrained"));
    assert!(out.join("summary.txt").is_file());
    assert!(out.join("luts/manifest.json").is_file());
    assert!(out.join("fronts/manifest.json").is_file());

    let v = ok(&["verify", "--luts", &p(&out.join("luts")), "--trials", "6", "--seed", "3"]);
    assert!(v.contains("oracle equivalence: 6/6 PASS"), "{v}");
    assert!(v.contains("pruning safety:     6/6 PASS"), "{v}");
    let v = ok(&["verify", "--trials", "5"]);
    assert!(v.contains("5/5 PASS"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    ok(&["run", "--config", &cfg, "--out", &p(&out)]);
    let fronts = p(&out.join("fronts"));

    // infeasible budget
    assert_eq!(code(&["search", "--fronts", &fronts, "--max-size-bits", "1"]), 3);
    // latency query on size-only fronts
    assert_eq!(code(&["search", "--fronts", &fronts, "--max-latency-us", "100"]), 4);
    // fronts built for a different op menu
    let changed = dir.path().join("changed.toml");
    fs::write(&changed, CONFIG.replace(", { kernel = 3, expansion = 6 }", "")).unwrap();
    assert_eq!(code(&["search", "--fronts", &fronts, "--config", &p(&changed)]), 4);
    // not a front directory
    assert_eq!(code(&["search", "--fronts", &p(dir.path())]), 4);
    // validation
    assert_eq!(code(&["luts", "build", "--config", &cfg, "--bits", "8,4", "--out", &p(&dir.path().join("x"))]), 2);
    assert_eq!(code(&["sweep", "--fronts", &fronts, "--size-grid", "9:1:3", "--out", &p(&dir.path().join("s.csv"))]), 2);
    assert_eq!(code(&["search", "--bogus"]), 2);
    // I/O
    assert_eq!(code(&["space", "describe", "--config", &p(&dir.path().join("missing.toml"))]), 5);
}

#[test]
fn latency_fronts_at_eight_bits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let luts = dir.path().join("luts");
    ok(&["luts", "build", "--config", &cfg, "--out", &p(&luts)]);
    let fronts = dir.path().join("fronts8");
    // 4-bit entries carry no latency by default
    assert_eq!(code(&["luts", "prune", "--in", &p(&luts), "--metrics", "size,latency", "--out", &p(&fronts)]), 2);
    ok(&["luts", "prune", "--in", &p(&luts), "--metrics", "size,latency", "--bits", "8", "--out", &p(&fronts)]);
    let r = ok(&["search", "--fronts", &p(&fronts), "--max-latency-us", "1000", "--bits", "8"]);
    let v: serde_json::Value = serde_json::from_str(&r).unwrap();
    assert!(v["total_latency_us"].as_f64().unwrap() <= 1000.0);
}

#[test]
fn flags_override_config_and_runs_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["luts", "build", "--config", &cfg, "--out", &p(&a), "--workers", "1"]);
    ok(&["luts", "build", "--config", &cfg, "--out", &p(&b), "--workers", "2"]);
    for f in ["manifest.json", "lut_b0_w4.csv", "lut_b1_w8.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    ok(&["luts", "build", "--config", &cfg, "--out", &p(&c), "--seed", "9", "--bits", "8"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(c.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["teacher"], 9);
    assert_eq!(m["bitwidths"], serde_json::json!([8]));
    assert!(!c.join("lut_b0_w4.csv").exists());
}
