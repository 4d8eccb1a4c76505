use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn panelshift(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panelshift")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = panelshift(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path) {
    ok(dir, &["simulate", "--out", "panel.csv", "--units", "20", "--times", "24", "--r2", "0.95", "--seed", "5", "--hetero-proportion", "0.15"]);
}

#[test]
fn simulate_writes_panel_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let csv = std::fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("unit,time,y,x1,x2,w,neighborhood"));
    assert_eq!(csv.lines().count(), 1 + 20 * 24);
    let truth = json(&dir.path().join("panel.truth.json"));
    assert_eq!(truth["heterogeneous_units"].as_array().unwrap().len(), 3);
    assert_eq!(truth["config"]["seed"], 5);
}

#[test]
fn simulate_reads_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("dgp.toml"), "n_units = 6\nn_times = 8\nrho = 0.3\n").unwrap();
    ok(dir.path(), &["simulate", "--config", "dgp.toml", "--out", "p.csv", "--truth", "t.json"]);
    assert_eq!(json(&dir.path().join("t.json"))["config"]["rho"], 0.3);
    assert_eq!(std::fs::read_to_string(dir.path().join("p.csv")).unwrap().lines().count(), 49);
}

#[test]
fn structural_report_reproduces_from_itself() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let first = ok(dir.path(), &["test-structural", "--data", "panel.csv", "-m", "20", "-B", "200", "--statistic", "median", "--seed", "11", "--report", "a.json"]);
    assert!(first.starts_with("structural: "));
    let second = ok(dir.path(), &["test-structural", "--data", "panel.csv", "--from-report", "a.json", "--report", "b.json"]);
    assert_eq!(first.lines().next(), second.lines().next());
    let (a, b) = (json(&dir.path().join("a.json")), json(&dir.path().join("b.json")));
    assert_eq!(a["outcomes"], b["outcomes"]);
    assert_eq!(a["seed"], 11);
    assert_eq!(a["settings"]["sieve"]["replicates"], 20);
    assert_eq!(a["settings"]["bootstrap"]["statistic"], "median");
    assert_eq!(a["outcomes"][0]["n_statistics_checked"], 400);
}

#[test]
fn spatial_accepts_infinite_tau_and_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    ok(dir.path(), &["test-spatial", "--data", "panel.csv", "--tau", "inf", "-B", "200", "--report", "r.json", "--trace-out", "t.json"]);
    let report = json(&dir.path().join("r.json"));
    assert_eq!(report["settings"]["search"]["tau"], "inf");
    assert_eq!(report["outcomes"][0]["provenance"]["searches_stopped"], 0);
    let traces = json(&dir.path().join("t.json"));
    assert_eq!(traces.as_array().unwrap().len(), 24);
    assert!(traces.as_array().unwrap().iter().all(|t| t["stop_step"].is_null()));
}

#[test]
fn joint_reports_both_components() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out = ok(dir.path(), &["test-joint", "--data", "panel.csv", "-m", "10", "-B", "100", "--max-iter", "2", "--report", "j.json"]);
    assert!(out.contains("structural: ") && out.contains("spatial: "));
    let report = json(&dir.path().join("j.json"));
    assert_eq!(report["outcomes"].as_array().unwrap().len(), 2);
    assert_eq!(report["settings"]["max_iter"], 2);
}

#[test]
fn custom_column_names_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let csv = std::fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    let renamed = csv.replacen("unit,time,y,x1,x2,w,neighborhood", "id,period,price,a,b,crime,hood", 1);
    std::fs::write(dir.path().join("renamed.csv"), renamed).unwrap();
    let common = ["--seed", "2", "-B", "100"];
    let plain = ok(dir.path(), &[&["test-spatial", "--data", "panel.csv"][..], &common].concat());
    let mapped = ok(
        dir.path(),
        &[
            &["test-spatial", "--data", "renamed.csv", "--unit-col", "id", "--time-col", "period", "--y-col", "price"][..],
            &["--x-col", "a,b", "--w-col", "crime", "--neighborhood-col", "hood"],
            &common,
        ]
        .concat(),
    );
    assert_eq!(plain, mapped);
}

#[test]
fn errors_and_usage_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = panelshift(dir.path(), &["test-structural", "--data", "absent.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.csv"));

    std::fs::write(dir.path().join("bad.csv"), "unit,time,y,x1,w\n1,1,2,3,0\n1,2,oops,3,0\n").unwrap();
    let bad = panelshift(dir.path(), &["test-spatial", "--data", "bad.csv"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("row 2"));

    let usage = panelshift(dir.path(), &["test-structural", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("Usage"));
    assert_eq!(panelshift(dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn experiment_writes_table_csv_summary_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("grid.toml"),
        "test = \"spatial\"\nn_units = [16]\nn_times = [12]\nr2 = [0.95]\nreplications = 3\nseed = 4\nprofile = \"quick\"\n\
         [[scenarios]]\nkind = \"null\"\n\
         [[scenarios]]\nkind = \"heterogeneity\"\ndelta_prime = 1.25\nproportion = 0.15\nneighborhoods = 4\n",
    )
    .unwrap();
    let args = ["experiment", "--grid", "grid.toml", "--out-dir", "out", "--workers", "2"];
    let first = ok(dir.path(), &args);
    assert!(first.contains("No spatial heterogeneity"));
    for name in ["table.txt", "results.csv", "summary.json"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    let summary = json(&dir.path().join("out/summary.json"));
    assert_eq!(summary["report"]["cells"].as_array().unwrap().len(), 2);
    let second = ok(dir.path(), &args);
    assert!(second.contains("resumed 6 replications"));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("out/table.txt")).unwrap(),
        first.lines().take_while(|l| !l.starts_with("results in")).map(|l| format!("{l}\n")).collect::<String>()
    );
}
