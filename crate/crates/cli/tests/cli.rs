use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_lattice-chaos");

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("LATTICE_CHAOS_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

/// Small enough to finish in seconds; only the plumbing is under test.
const TINY_SWEEP: &str = r#"{
  "params": {"gamma": 3.3e-3, "omega_r": 1e-5, "delta": -0.01},
  "ensemble": {"n_traj": 6, "tau_max": 2000, "sample_interval": 50, "seed": 17},
  "chaos": {"n_traj": 3, "lyapunov": {"tau_max": 2000}},
  "sweep": {"p_min": 800, "p_max": 2000, "bins": 8,
            "window": {"transient": 100}}
}"#;

fn numbers(line: &str) -> Vec<f64> {
    line.split(',').map(|f| f.trim().parse().unwrap()).collect()
}

#[test]
fn analytic_table_matches_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"params":{"gamma":3.3e-3,"omega_r":1e-5,"delta":-0.01},"sweep":{"grid":[1000,1500,2000,3000,4000,5000,7000,10000]}}"#,
    );
    let out = dir.path().join("out");
    let o = run(&["analytic", "--lambda", "0.25"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("analytic.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('p'))
        .map(numbers)
        .collect();
    assert_eq!(rows.len(), 8);
    let (g, w, d) = (3.3e-3f64, 1e-5f64, -0.01f64);
    for r in &rows {
        let p = r[0];
        let ch = g / 12.0 + d * d / (8.0 * w * w * p * p);
        let reg = g / 12.0 + d * d / (8.0 * g * w * p * std::f64::consts::PI);
        assert!((r[1] / ch - 1.0).abs() < 1e-14, "{} vs {ch}", r[1]);
        assert!((r[2] / reg - 1.0).abs() < 1e-14, "{} vs {reg}", r[2]);
        assert!((r[4] / (0.75 * reg + 0.25 * ch) - 1.0).abs() < 1e-12);
    }
    assert!(text.contains("1.2527500000000000e-1"));
}

#[test]
fn conservative_simulation_has_no_jumps() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"params":{"gamma":3.3e-3,"omega_r":1e-5,"delta":-0.01},
            "ensemble":{"tau_max":3000,"sample_interval":100,"seed":4}}"#,
    );
    let out = dir.path().join("out");
    let o = run(&["simulate", "--conservative"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let jumps = fs::read_to_string(out.join("jumps.csv")).unwrap();
    assert!(jumps.lines().all(|l| l.starts_with('#') || l.starts_with("tau")), "{jumps}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["jumps"], 0);
    assert_eq!(summary["params"]["gamma"], 0.0);
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().filter(|l| !l.starts_with('#') && !l.starts_with("tau")).count(), 31);
}

#[test]
fn sweep_is_identical_across_thread_counts_and_checksummed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_SWEEP);
    let mut tables = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("out{threads}"));
        let o = run(&["sweep", "--threads", threads], &config, &out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        tables.push(fs::read(out.join("sweep.csv")).unwrap());

        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["threads"].as_u64().unwrap().to_string(), threads);
        assert_eq!(manifest["seed"], 17);
        assert_eq!(manifest["bins"].as_array().unwrap().len(), 8);
        let files = manifest["files"].as_array().unwrap();
        let names: Vec<&str> = files.iter().map(|f| f["name"].as_str().unwrap()).collect();
        assert_eq!(names, ["sweep.csv", "sweep_D.dat", "sweep_Lambda.dat"]);
        for f in files {
            let bytes = fs::read(out.join(f["name"].as_str().unwrap())).unwrap();
            assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
            assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        }
    }
    assert_eq!(tables[0], tables[1]);
    let text = String::from_utf8(tables[0].clone()).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 9);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"params":{"gamma":0.05,"omega_r":1e-5,"delta":-0.01},
            "ensemble":{"tau_max":500,"sample_interval":50,"seed":4}}"#,
    );
    let read = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate"];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let o = run(&args, &config, &out);
        assert!(o.status.success());
        fs::read(out.join("jumps.csv")).unwrap()
    };
    assert_eq!(read("a", None), read("b", Some("4")));
    assert_ne!(read("c", None), read("d", Some("5")));
}

#[test]
fn invalid_config_fails_with_the_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"params":{"gamma":3.3e-3,"omega_r":1e-5,"delta":-0.01},"ensemble":{"n_traj":1}}"#);
    let o = run(&["cloud"], &config, &dir.path().join("out"));
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("ensemble.n_traj"), "{err}");

    let o = run(&["analytic"], &dir.path().join("missing.json"), &dir.path().join("out"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
}

#[test]
fn lyapunov_and_cloud_commands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"params":{"gamma":3.3e-3,"omega_r":1e-5,"delta":-0.01},
            "ensemble":{"n_traj":4,"tau_max":1000,"sample_interval":50,"p0_mean":1200},
            "chaos":{"n_traj":2,"lyapunov":{"tau_max":1000}},
            "sweep":{"window":{"transient":100}}}"#,
    );
    let out = dir.path().join("lyap");
    let o = run(&["lyapunov", "--p", "1200"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("lyapunov.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("chaos_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["p"], 1200.0);

    let out = dir.path().join("cloud");
    let o = run(&["cloud"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("cloud.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 22);
}
