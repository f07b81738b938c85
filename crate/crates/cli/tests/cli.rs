use std::path::Path;
use std::process::{Command, Output};

fn chronoml(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chronoml"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("CHRONO_WORKERS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    ok(&chronoml(
        &["synth", "--kind", "panel_family", "--seed", "3", "--datasets", "2", "--length", "120", "--out", p(&dir.join("data"))],
        &[],
    ));
}

#[test]
fn fit_forecast_and_priors() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let data = dir.path().join("data");
    let mut runs = Vec::new();
    for k in 0..2 {
        let run = dir.path().join(format!("run{k}"));
        let stdout = ok(&chronoml(
            &[
                "fit",
                "--data",
                p(&data.join(format!("panel_family_3_{k}.csv"))),
                "--meta",
                p(&data.join(format!("panel_family_3_{k}.json"))),
                "--budget-s",
                "30",
                "--grace-s",
                "5",
                "--mode",
                "templates_only",
                "--max-trials",
                "5",
                "--out",
                p(&run),
            ],
            &[],
        ));
        let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
        assert_eq!(report["n_trials"], 5);
        runs.push(run);
    }

    let fc = ok(&chronoml(&["forecast", "--model", p(&runs[0].join("ensemble.json")), "--horizon", "4"], &[]));
    let lines: Vec<&str> = fc.lines().collect();
    assert_eq!(lines[0], "series_id,step,value");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("panel_family_3_0,1,"));

    let kb = dir.path().join("kb.json");
    ok(&chronoml(&["build-priors", "--runs", p(&runs[0]), p(&runs[1]), "--out", p(&kb)], &[]));
    let first = std::fs::read_to_string(&kb).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(parsed["entries"].as_array().unwrap().len(), 2);
    // Rebuilding into the same file merges idempotently.
    ok(&chronoml(&["build-priors", "--runs", p(&runs[0]), p(&runs[1]), "--out", p(&kb)], &[]));
    assert_eq!(std::fs::read_to_string(&kb).unwrap(), first);

    let ws = dir.path().join("ws");
    let stdout = ok(&chronoml(
        &[
            "fit",
            "--data",
            p(&data.join("panel_family_3_0.csv")),
            "--meta",
            p(&data.join("panel_family_3_0.json")),
            "--mode",
            "templates_ws",
            "--kb",
            p(&kb),
            "--max-trials",
            "4",
            "--budget-s",
            "30",
            "--grace-s",
            "5",
            "--out",
            p(&ws),
        ],
        &[],
    ));
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["prior_sources"][0]["name"], "panel_family_3_1");
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let data = dir.path().join("data");
    let conf = dir.path().join("run.toml");
    std::fs::write(&conf, "time_budget_s = 30.0\ngrace_period_s = 5.0\nmode = \"templates_only\"\nmax_trials = 3\nseed = 4\n").unwrap();
    let base = |out: &Path| {
        vec![
            "fit".to_string(),
            "--data".into(),
            p(&data.join("panel_family_3_0.csv")).into(),
            "--meta".into(),
            p(&data.join("panel_family_3_0.json")).into(),
            "--config".into(),
            p(&conf).into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    let args = base(&dir.path().join("a"));
    let report: serde_json::Value =
        serde_json::from_str(&ok(&chronoml(&args.iter().map(String::as_str).collect::<Vec<_>>(), &[]))).unwrap();
    assert_eq!(report["n_trials"], 3);
    assert_eq!(report["seed"], 4);

    let mut args = base(&dir.path().join("b"));
    args.extend(["--seed".into(), "8".into(), "--max-trials".into(), "2".into()]);
    let report: serde_json::Value = serde_json::from_str(&ok(&chronoml(
        &args.iter().map(String::as_str).collect::<Vec<_>>(),
        &[("CHRONO_WORKERS", "2")],
    )))
    .unwrap();
    assert_eq!(report["n_trials"], 2);
    assert_eq!(report["seed"], 8);

    let args = base(&dir.path().join("c"));
    let out = chronoml(&args.iter().map(String::as_str).collect::<Vec<_>>(), &[("CHRONO_WORKERS", "many")]);
    assert!(!out.status.success());

    std::fs::write(&conf, "time_budget_s = 10.0\ngrace_period_s = 50.0\n").unwrap();
    let out = chronoml(&base(&dir.path().join("d")).iter().map(String::as_str).collect::<Vec<_>>(), &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("grace"));
}

#[test]
fn warm_start_mode_requires_kb() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let data = dir.path().join("data");
    let out = chronoml(
        &[
            "fit",
            "--data",
            p(&data.join("panel_family_3_0.csv")),
            "--meta",
            p(&data.join("panel_family_3_0.json")),
            "--mode",
            "templates_ws",
            "--out",
            p(&dir.path().join("run")),
        ],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("knowledge base"));
}

#[test]
fn benchmark_suite() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let suite = dir.path().join("suite.json");
    std::fs::write(
        &suite,
        r#"{
  "datasets": [
    {"data": "data/panel_family_3_0.csv", "meta": "data/panel_family_3_0.json"},
    {"data": "data/panel_family_3_1.csv", "meta": "data/panel_family_3_1.json"}
  ],
  "modes": ["templates_only", "templates_mf"],
  "run": {"time_budget_s": 30.0, "grace_period_s": 5.0, "max_trials": 3}
}"#,
    )
    .unwrap();
    let out = dir.path().join("results");
    let stdout = ok(&chronoml(&["benchmark", "--suite", p(&suite), "--seeds", "2", "--out", p(&out)], &[]));
    assert_eq!(stdout.lines().count(), 2);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
    assert!(out.join("results.json").exists());
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        ok(&chronoml(&["synth", "--kind", "trend_season", "--seed", "0", "--out", p(&dir.path().join(sub))], &[]));
    }
    let a = std::fs::read(dir.path().join("a/trend_season_0.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/trend_season_0.csv")).unwrap();
    assert_eq!(a, b);
    assert!(!chronoml(&["synth", "--kind", "walk", "--out", p(dir.path())], &[]).status.success());
}
