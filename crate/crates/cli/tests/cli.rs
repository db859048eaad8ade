use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn titan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_titan"))
        .args(args)
        .current_dir(dir)
        .env("TITAN_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn nmf_config(dir: &Path) -> serde_json::Value {
    json!({
        "app": "nmf",
        "data": {"synthesize": {"rows": 30, "cols": 20, "rank": 3, "noise": 0.01}},
        "variants": ["palm", "titan"],
        "rank": 3,
        "seeds": [4],
        "budget": {"max_iters": 30},
        "output_dir": dir.join("out").to_str().unwrap(),
    })
}

fn write_json(path: &Path, v: &serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

#[test]
fn check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = titan(&["check"], dir.path());
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}");
    assert!(out.contains("all 8 checks passed"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = titan(&["run-nmf", "--config", "no/such/file.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such/file.json"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--bogus"][..], &["run-nmf"][..], &["bench", "--config", "x.json", "--seeds", "many"][..], &[][..]] {
        let o = titan(args, dir.path());
        assert_eq!(code(&o), 1, "{args:?}");
        let text = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
        assert!(text.contains("Usage"), "{args:?}");
    }
    assert_eq!(code(&titan(&["--help"], dir.path())), 0);
}

#[test]
fn invalid_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let mut cfg = nmf_config(dir.path());
    cfg["seeds"] = json!([]);
    write_json(&path, &cfg);
    assert_eq!(code(&titan(&["run-nmf", "--config", "c.json"], dir.path())), 1);

    let mut cfg = nmf_config(dir.path());
    cfg["unknown_field"] = json!(1);
    write_json(&path, &cfg);
    assert_eq!(code(&titan(&["run-nmf", "--config", "c.json"], dir.path())), 1);

    write_json(&path, &nmf_config(dir.path()));
    let o = titan(&["run-mcp", "--config", "c.json"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn overflowing_data_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<String> = (0..6).map(|i| format!("{},1e300,2,3", i + 1)).collect();
    fs::write(dir.path().join("m.csv"), rows.join("\n")).unwrap();
    let mut cfg = nmf_config(dir.path());
    cfg["data"] = json!({"file": {"path": "m.csv", "format": "csv"}});
    cfg["rank"] = json!(2);
    write_json(&dir.path().join("c.json"), &cfg);
    let o = titan(&["run-nmf", "--config", "c.json"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn bench_summary_matches_recomputed_statistics() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("c.json"), &nmf_config(dir.path()));
    let o = titan(&["bench", "--config", "c.json", "--seeds", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for v in ["palm", "titan"] {
        for s in 0..3 {
            assert!(out.join(format!("nmf-{v}-seed{s}.csv")).exists());
        }
    }
    let (_, seeds) = parse_csv(&fs::read_to_string(out.join("seeds.csv")).unwrap());
    let (header, summary) = parse_csv(&fs::read_to_string(out.join("summary.csv")).unwrap());
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(summary.len(), 2);
    for row in &summary {
        let finals: Vec<(f64, f64)> = seeds
            .iter()
            .filter(|s| s[0] == row[0])
            .map(|s| (s[2].parse().unwrap(), s[3].parse().unwrap()))
            .collect();
        assert_eq!(finals.len(), 3);
        assert_eq!(row[col("n")], "3");
        for (k, name) in [(0, "objective"), (1, "metric")] {
            let xs: Vec<f64> = finals.iter().map(|p| if k == 0 { p.0 } else { p.1 }).collect();
            let mean = xs.iter().sum::<f64>() / 3.0;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
            let got_mean: f64 = row[col(&format!("{name}_mean"))].parse().unwrap();
            let got_std: f64 = row[col(&format!("{name}_std"))].parse().unwrap();
            assert!((got_mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
            assert!((got_std - std).abs() <= 1e-12 * std.abs().max(1.0));
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = nmf_config(dir.path());
    cfg["app"] = json!("mcp");
    cfg["variants"] = json!(["titan_extra", "titan_no", "palm"]);
    cfg["data"] = json!({"synthesize": {"rows": 30, "cols": 20, "rank": 3, "noise": 0.1, "density": 0.5, "seed": 9}});
    write_json(&dir.path().join("c.json"), &cfg);
    let objectives = |o: &Output| -> Vec<String> {
        assert_eq!(code(o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = fs::read_to_string(dir.path().join("out/mcp-titan_extra-seed4.csv")).unwrap();
        text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().to_string()).collect()
    };
    let a = objectives(&titan(&["run-mcp", "--config", "c.json"], dir.path()));
    let b = objectives(&titan(&["run-mcp", "--config", "c.json"], dir.path()));
    assert_eq!(a.len(), 30);
    assert_eq!(a, b);
}
