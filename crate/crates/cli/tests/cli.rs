use std::path::Path;
use std::process::{Command, Output};

use cmg_core::domains;
use cmg_core::exploitability::{exploitability_with, per_state_exploitability_with, ExploitabilityConfig};
use cmg_experiments::{EpsilonFile, PolicyFile, Problem, Summary};

fn cmg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmg")).args(args).output().expect("run cmg")
}

fn ok(args: &[&str]) -> String {
    let out = cmg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn oracle() -> ExploitabilityConfig {
    ExploitabilityConfig::with_tol(cmg_experiments::ORACLE_TOL)
}

#[test]
fn list_domains_is_sorted_and_stable() {
    let first = ok(&["list-domains"]);
    assert_eq!(first, ok(&["list-domains"]));
    let rows: Vec<Vec<&str>> = first.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    let names: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(names, domains::DOMAIN_NAMES);
    let ipd = rows.iter().find(|r| r[0] == "ipd").unwrap();
    // name players states actions gamma lr anneal iters
    assert_eq!(&ipd[1..8], &["2", "4", "2x2", "0.99", "0.1", "1", "8000"]);
    let warehouse = rows.iter().find(|r| r[0] == "warehouse").unwrap();
    assert_eq!(&warehouse[5..7], &["0.01", "2"]);
}

#[test]
fn solve_ipd_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["solve", "--domain", "ipd", "--seed", "0", "--out", out]);
    for f in ["trace.csv", "policy.json", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let summary: Summary = read_json(&dir.path().join("summary.json"));
    assert!(summary.epsilon <= 1e-2, "{}", summary.epsilon);
    assert_eq!(summary.seed, 0);
    assert_eq!((summary.config.iters, summary.config.lr, summary.config.anneal), (8000, 0.1, 1));

    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iter,tau,loss,bound,epsilon,wallclock_ms");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8000usize.div_ceil(10) + 1);
    for row in &rows {
        for (k, field) in row.iter().enumerate() {
            if k == 4 && field.is_empty() {
                continue;
            }
            assert!(field.parse::<f64>().unwrap().is_finite(), "{row:?}");
        }
    }
    let last_eps: f64 = rows.last().unwrap()[4].parse().unwrap();
    assert_eq!(last_eps, summary.epsilon);

    // the exploitability command recomputes the same value from policy.json
    let policy = dir.path().join("policy.json");
    let eval_dir = dir.path().join("eval");
    ok(&["exploitability", "--domain", "ipd", "--policy", policy.to_str().unwrap(), "--out", eval_dir.to_str().unwrap()]);
    let report: EpsilonFile = read_json(&eval_dir.join("epsilon.json"));
    assert!((report.epsilon - summary.epsilon).abs() <= 1e-9);
    assert_eq!(report.per_state_epsilon, summary.per_state_epsilon);

    let file: PolicyFile = read_json(&policy);
    let problem = Problem::domain("ipd").unwrap();
    let profile = file.to_profile(&problem.spec).unwrap();
    for i in 0..2 {
        let argmax: Vec<usize> = file.players[i].states.iter().map(|s| s.argmax).collect();
        assert_eq!(argmax, profile.argmax(i));
    }
}

#[test]
fn warehouse_safe_fast_frequency() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["solve", "--domain", "warehouse-safe", "--out", dir.path().to_str().unwrap()]);
    let summary: Summary = read_json(&dir.path().join("summary.json"));
    for f in summary.fast_at_pickup.unwrap() {
        assert!((f - 0.42).abs() <= 0.05, "{f}");
    }
}

#[test]
fn zero_iterations_write_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (domain, seed) in [("ipd", 0u64), ("bach-stravinsky", 7)] {
        let seed_arg = seed.to_string();
        ok(&["solve", "--domain", domain, "--iters", "0", "--seed", &seed_arg, "--out", out]);
        let file: PolicyFile = read_json(&dir.path().join("policy.json"));
        let problem = Problem::domain(domain).unwrap();
        let init = problem.initial_logits(seed).to_policy().unwrap();
        assert_eq!(file.to_profile(&problem.spec).unwrap(), init);
    }
}

#[test]
fn seeds_run_in_parallel_into_separate_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&[
        "solve", "--domain", "bach-stravinsky-fair", "--seed", "1,2,3", "--jobs", "3", "--iters", "200", "--out", out,
    ]);
    let serial = tempfile::tempdir().unwrap();
    ok(&["solve", "--domain", "bach-stravinsky-fair", "--seed", "2", "--iters", "200", "--out", serial.path().to_str().unwrap()]);
    for seed in 1..=3 {
        assert!(dir.path().join(format!("seed-{seed}/summary.json")).exists());
    }
    let read = |p: &Path| std::fs::read_to_string(p).unwrap();
    assert_eq!(read(&dir.path().join("seed-2/policy.json")), read(&serial.path().join("policy.json")));
}

#[test]
fn baselines_run_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    for algo in ["sim", "rr"] {
        let out = dir.path().join(algo);
        ok(&["solve", "--domain", "ipd", "--algo", algo, "--iters", "300", "--stride", "50", "--out", out.to_str().unwrap()]);
        let summary: Summary = read_json(&out.join("summary.json"));
        assert_eq!(summary.config.algo.to_string(), algo);
        assert_eq!(summary.trace_rows, 7);
    }
}

#[test]
fn human_profile_per_state_exploitability_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let problem = Problem::domain("ipd").unwrap();
    let human = domains::human_ipd_profile();
    let policy = dir.path().join("human.json");
    std::fs::write(&policy, serde_json::to_string(&PolicyFile::from_profile(&human)).unwrap()).unwrap();
    let stdout = ok(&["exploitability", "--domain", "ipd", "--policy", policy.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(stdout.contains("max per-state epsilon"));
    let report: EpsilonFile = read_json(&dir.path().join("epsilon.json"));
    let expected = per_state_exploitability_with(&problem.spec, &problem.utilities, &human, &oracle()).unwrap();
    assert_eq!(report.per_state_epsilon, expected.per_state);
    assert_eq!(report.max_per_state_epsilon, expected.max);
    assert!(report.certified);
}

#[test]
fn solved_synthetic_profile_is_unexploitable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["solve", "--domain", "synthetic-safety", "--out", out]);
    let policy = dir.path().join("policy.json");
    ok(&["exploitability", "--domain", "synthetic-safety", "--policy", policy.to_str().unwrap(), "--out", out]);
    let report: EpsilonFile = read_json(&dir.path().join("epsilon.json"));
    assert!(report.epsilon <= 1e-6, "{}", report.epsilon);
}

#[test]
fn config_documents_solve_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let zero = dir.path().join("zero.json");
    std::fs::write(
        &zero,
        r#"{"players": 2, "states": 2, "actions": [2, 3], "gamma": 0.9, "mu0": [0.5, 0.5],
            "transition": [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
                           0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
            "utilities": [[], []]}"#,
    )
    .unwrap();
    ok(&["exploitability", "--config", zero.to_str().unwrap(), "--policy", "uniform", "--out", dir.path().to_str().unwrap()]);
    let report: EpsilonFile = read_json(&dir.path().join("epsilon.json"));
    assert_eq!(report.epsilon, 0.0);

    let shipped = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/ipd.json");
    let out = dir.path().join("ipd");
    ok(&["solve", "--config", shipped, "--iters", "500", "--out", out.to_str().unwrap()]);
    let summary: Summary = read_json(&out.join("summary.json"));
    let problem = Problem::domain("ipd").unwrap();
    let file: PolicyFile = read_json(&out.join("policy.json"));
    let eps = exploitability_with(&problem.spec, &problem.utilities, &file.to_profile(&problem.spec).unwrap(), &oracle())
        .unwrap()
        .epsilon;
    assert_eq!(summary.epsilon, eps);
}

#[test]
fn invalid_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = |args: &[&str]| cmg(args).status.code();
    assert_eq!(code(&["solve", "--domain", "chess", "--out", out]), Some(1));
    assert_eq!(code(&["solve", "--out", out]), Some(1));
    assert_eq!(code(&["solve", "--domain", "ipd", "--config", "x.json", "--out", out]), Some(1));
    assert_eq!(code(&["solve", "--domain", "ipd", "--anneal", "4", "--out", out]), Some(1));
    assert_eq!(code(&["solve", "--domain", "ipd", "--eps-cadence", "sometimes", "--out", out]), Some(1));
    assert_eq!(code(&["solve", "--domain", "ipd", "--lr", "-0.1", "--out", out]), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"players\": 1,\n  \"wat\": true\n}").unwrap();
    let result = cmg(&["solve", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("line 3"));

    // a warehouse-shaped policy on the 8-state public goods game
    let policy = dir.path().join("policy.json");
    let wh = Problem::domain("warehouse").unwrap();
    let uniform = cmg_core::game::PolicyProfile::uniform(&wh.spec);
    std::fs::write(&policy, serde_json::to_string(&PolicyFile::from_profile(&uniform)).unwrap()).unwrap();
    let result = cmg(&["exploitability", "--domain", "ipgg", "--policy", policy.to_str().unwrap(), "--out", out]);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("players"));
}

#[test]
fn numeric_abort_exits_with_two_and_keeps_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let result = cmg(&["solve", "--domain", "ipd", "--lr", "1e300", "--iters", "50", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    assert!(!dir.path().join("summary.json").exists());
}
