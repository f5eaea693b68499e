use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mflab"))
        .args(args)
        .env_remove("MFLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn run_config(dir: &Path, name: &str, toml: &str, extra: &[&str]) -> (Output, std::path::PathBuf) {
    let cfg = dir.join(format!("{name}.toml"));
    std::fs::write(&cfg, toml).unwrap();
    let out = dir.join(name);
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (mflab(&args), out)
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn check<'a>(s: &'a Value, name: &str) -> &'a Value {
    s["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no check {name}"))
}

const IDENTITIES: &str = r#"
[model]
name = "xy"
J = 1.5
M = 8

[experiment]
name = "audit-identities"
samples = 20

[numeric]
N = 3
seeds = [5]
"#;

#[test]
fn list_shows_every_experiment() {
    let o = mflab(&["list"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let names: Vec<&str> = text.lines().filter(|l| !l.starts_with(' ')).collect();
    assert_eq!(names.len(), 8);
    for n in ["chaos", "independent-projection", "phase-diagram", "limit-gap"] {
        assert!(names.contains(&n), "{n} missing");
    }
    assert!(text.contains("generation of chaos"));
    assert!(text.contains("independent projection"));
}

#[test]
fn identities_pass_on_xy() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run_config(tmp.path(), "id", IDENTITIES, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(s["passed"], true);
    for c in ["chain_rule", "approx_martingale", "dual_cumulant"] {
        assert_eq!(check(&s, c)["passed"], true);
    }
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"][0], 5);
    assert!(out.join("identities.csv").exists());
}

#[test]
fn hard_failure_sets_exit_status() {
    let tmp = TempDir::new().unwrap();
    let strict = format!("{IDENTITIES}\n[numeric.tolerances]\nidentity = 1e-300\n");
    let (o, out) = run_config(tmp.path(), "strict", &strict, &[]);
    assert_eq!(o.status.code(), Some(1));
    let s = summary(&out);
    assert_eq!(s["passed"], false);
    assert!(s["hard_failures"].as_u64().unwrap() > 0);
}

#[test]
fn empty_model_block_names_missing_field() {
    let tmp = TempDir::new().unwrap();
    let (o, _) = run_config(tmp.path(), "empty", "[model]\n[experiment]\nname = \"relax\"\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("`model.name`"), "{err}");
}

#[test]
fn missing_block_and_unknown_key_rejected() {
    let tmp = TempDir::new().unwrap();
    let (o, _) = run_config(tmp.path(), "noblock", "[experiment]\nname = \"relax\"\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("`model`"));

    let bad = IDENTITIES.replace("J = 1.5", "J = 1.5\ncoupling = 2.0");
    let (o, _) = run_config(tmp.path(), "unknown", &bad, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("coupling"));

    let neg = IDENTITIES.replace("J = 1.5", "J = -1.0");
    let (o, _) = run_config(tmp.path(), "neg", &neg, &[]);
    assert!(String::from_utf8(o.stderr).unwrap().contains("`model.J`"));
}

#[test]
fn manifest_rerun_is_bit_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = r#"
[model]
name = "xy"
J = 1.5
M = 32

[experiment]
name = "relax"
tilt = [1.0, 0.5]
particles = 200

[numeric]
dt = 1e-3
T = 0.2
seeds = [1, 2]

[output]
stride = 20
"#;
    let (o, out) = run_config(tmp.path(), "a", cfg, &["--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let again = tmp.path().join("b");
    let o = mflab(&[
        "run",
        "--config",
        out.join("manifest.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
        "--threads",
        "4",
    ]);
    assert!(o.status.success());
    for f in ["relax.csv", "ensemble.csv", "summary.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn phase_diagram_three_root_wedge() {
    let tmp = TempDir::new().unwrap();
    let cfg = r#"
[model]
name = "curie_weiss"
J = 1.0
M = 101

[experiment]
name = "phase-diagram"
resolution = [6, 5]
"#;
    let (o, out) = run_config(tmp.path(), "phase", cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(check(&s, "three_root_regime")["passed"], true);
    assert!(s["values"]["three_root_cells"].as_u64().unwrap() > 0);
}

#[test]
fn limit_gap_and_chaos_run() {
    let tmp = TempDir::new().unwrap();
    let gap = "[model]\nname = \"xy\"\nJ = 1.0\nM = 6\n[experiment]\nname = \"limit-gap\"\n[numeric]\nN = 4\n";
    let (o, out) = run_config(tmp.path(), "gap", gap, &[]);
    assert!(o.status.success());
    assert_eq!(check(&summary(&out), "free_energy_gap")["passed"], true);

    let chaos = r#"
[model]
name = "xy"
J = 1.0
M = 8
[experiment]
name = "chaos"
[numeric]
N = 3
dt = 0.01
T = 2.0
[output]
stride = 20
"#;
    let (o, out) = run_config(tmp.path(), "chaos", chaos, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(check(&s, "entropy_to_gibbs_nonincreasing")["passed"], true);
    assert!(out.join("chaos.csv").exists());
}
