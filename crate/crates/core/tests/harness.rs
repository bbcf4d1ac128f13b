//! Scenario runs, loop verdicts and run directories.

use std::fs;
use std::path::{Path, PathBuf};

use antifragile::harness::output::{read_run, render, write_loop, write_run, ReportFormat};
use antifragile::harness::{run_antifragile_loop, run_scenario, Mode, Outcome, ScenarioConfig, Verdict};

fn scenario(name: &str) -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    ScenarioConfig::load(&path).unwrap()
}

const WORKERS: &str = r#"
seed = 11
cycles = 2

[root]
strategy = { max_restarts = 1000, window = 1000 }

[[types]]
name = "worker"
versions = [{}]

[[actors]]
name = "sup"

[[actors]]
name = "w"
parent = "sup"
type = "worker"

[[workload]]
to = "sup/w"
messages = 40
"#;

#[test]
fn stress_free_run_is_fully_available() {
    let config = ScenarioConfig::from_toml(WORKERS).unwrap();
    let run = run_scenario(&config).unwrap();
    assert_eq!(run.metrics.failures, 0);
    assert_eq!(run.metrics.injected, 0);
    assert_eq!(run.metrics.availability, 1.0);
}

#[test]
fn dropping_everything_leaves_nothing_available() {
    let text = format!(
        "{WORKERS}\n[stress]\npolicy = {{ policy = \"exhaustive\" }}\n\n[[stress.faults]]\nkind = \"drop-delivery\"\nprobability = 1.0\n"
    );
    let run = run_scenario(&ScenarioConfig::from_toml(&text).unwrap()).unwrap();
    assert_eq!(run.metrics.availability, 0.0);
    assert!(run.metrics.injected >= 40);
}

#[test]
fn quiet_loop_is_resilient() {
    let config = ScenarioConfig::from_toml(WORKERS).unwrap();
    let outcome = run_antifragile_loop(&config).unwrap();
    assert_eq!(outcome.cycles.len(), 2);
    for cycle in &outcome.cycles {
        assert!(cycle.report.as_ref().is_none_or(|r| r.fragilities.is_empty()));
        assert!(cycle.attempts.is_empty());
    }
    assert_eq!(outcome.gain.verdict, Verdict::Resilient);
}

#[test]
fn same_seed_same_run() {
    let config = scenario("poison.toml");
    assert_eq!(run_scenario(&config).unwrap().trace.hash(), run_scenario(&config).unwrap().trace.hash());
}

#[test]
fn different_seeds_differ() {
    let mut config = scenario("poison.toml");
    let a = run_scenario(&config).unwrap().trace.hash();
    config.seed += 1;
    assert_ne!(a, run_scenario(&config).unwrap().trace.hash());
}

#[test]
fn quarantine_makes_the_poison_loop_antifragile() {
    let outcome = run_antifragile_loop(&scenario("poison.toml")).unwrap();
    let failures: Vec<u64> = outcome.metrics().iter().map(|m| m.failures).collect();
    assert!(failures[0] > 0);
    assert_eq!(*failures.last().unwrap(), 0);
    assert!(outcome.cycles[0].attempts.iter().any(|a| a.outcome.applied()));
    assert_eq!(outcome.gain.verdict, Verdict::Antifragile);
}

#[test]
fn baseline_stays_flat() {
    let mut config = scenario("poison.toml");
    config.mode = Mode::Baseline;
    let outcome = run_antifragile_loop(&config).unwrap();
    let failures: Vec<u64> = outcome.metrics().iter().map(|m| m.failures).collect();
    assert!(failures.iter().all(|&f| f == failures[0] && f > 0), "{failures:?}");
    assert!(outcome.cycles.iter().all(|c| c.attempts.is_empty()));
    assert_eq!(outcome.gain.verdict, Verdict::Resilient);
}

#[test]
fn failed_rollout_keeps_the_old_version() {
    let outcome = run_antifragile_loop(&scenario("rollout.toml")).unwrap();
    let first = &outcome.cycles[0];
    assert!(first.attempts.iter().any(|a| matches!(a.outcome, Outcome::RolledBack { .. })));
    assert_eq!(first.active_versions, outcome.cycles[1].active_versions);
    assert!(outcome.overlay.activations.is_empty());
}

#[test]
fn sound_upgrade_is_promoted() {
    let text = r#"
seed = 3
cycles = 2

[root]
strategy = { max_restarts = 1000, window = 1000 }

[[types]]
name = "worker"
versions = [{ crash_on = ["poison"] }, {}]

[[actors]]
name = "sup"
strategy = { max_restarts = 1000, window = 1000 }

[[actors]]
name = "w1"
parent = "sup"
type = "worker"

[[actors]]
name = "w2"
parent = "sup"
type = "worker"

[[workload]]
to = "sup/w1"
messages = 50
poison = "poison"
poison_fraction = 0.2

[[workload]]
to = "sup/w2"
messages = 50

[builder.catalog]
deterministic-payload-crash = [{ remedy = "upgrade-version" }]
"#;
    let outcome = run_antifragile_loop(&ScenarioConfig::from_toml(text).unwrap()).unwrap();
    assert!(outcome.cycles[0].attempts.iter().any(|a| a.outcome == Outcome::Promoted));
    assert_eq!(outcome.cycles[1].active_versions["worker"], 2);
    assert_eq!(outcome.cycles[1].metrics.failures, 0);
    assert_eq!(outcome.gain.verdict, Verdict::Antifragile);
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (path.strip_prefix(dir).unwrap().to_path_buf(), bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_directories_are_reproducible() {
    let config = scenario("poison.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_loop(a.path(), &run_antifragile_loop(&config).unwrap()).unwrap();
    write_loop(b.path(), &run_antifragile_loop(&config).unwrap()).unwrap();
    let files = snapshot(a.path());
    let names: Vec<_> = files.iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    for expected in ["metrics.csv", "gain.json", "trace-0.jsonl", "errors-0.json", "fragility-report-0.json"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected} in {names:?}");
    }
    assert_eq!(files, snapshot(b.path()));
}

#[test]
fn report_reads_back_what_was_written() {
    let config = scenario("poison.toml");
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_antifragile_loop(&config).unwrap();
    write_loop(dir.path(), &outcome).unwrap();
    let summary = read_run(dir.path()).unwrap();
    assert_eq!(summary.metrics, outcome.metrics());
    assert_eq!(summary.gain.as_ref(), Some(&outcome.gain));
    let table = render(&summary, ReportFormat::Table).unwrap();
    assert_eq!(table.lines().count(), 1 + outcome.cycles.len() + 1);
    assert!(table.ends_with("verdict: Antifragile\n"), "{table}");

    let single = tempfile::tempdir().unwrap();
    write_run(single.path(), &run_scenario(&config).unwrap()).unwrap();
    let summary = read_run(single.path()).unwrap();
    assert_eq!(summary.metrics.len(), 1);
    assert!(summary.gain.is_none());
}

#[test]
fn config_errors_point_at_the_field() {
    let err = ScenarioConfig::from_toml(&WORKERS.replace("type = \"worker\"", "type = \"nope\"")).unwrap_err();
    assert!(err.location.contains("actors[1]"), "{err}");
    let err = ScenarioConfig::from_toml("seed = 1\nbogus = 2\n").unwrap_err();
    assert!(err.location.contains("line"), "{err}");
}
