use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qkdnet::fixtures::{BundledSource, FixtureSource};
use qkdnet::keymgmt::{best_pairing, pairing_objectives, PairingMatrix};
use qkdnet::simkit::{Scenario, Timeline};

fn qkdnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkdnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A three-day copy of the bundled campaign; the network comes from the
/// bundled fixtures because no network file sits beside it.
fn short_scenario(dir: &Path) -> String {
    let text = BundledSource.read("hcw-scenario.json").unwrap();
    let mut sc = Scenario::from_json(&text).unwrap();
    sc.duration_s = 3.0 * 86400.0;
    sc.events.retain(|e| e.at_s < sc.duration_s);
    sc.sessions.retain(|s| s.start_s < sc.duration_s);
    fs::write(dir.join("short.json"), sc.to_json()).unwrap();
    "short.json".into()
}

fn assert_failure(o: &Output, kind: &str) -> String {
    assert!(!o.status.success());
    let err = stderr(o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{kind}]: ")), "{err}");
    err
}

#[test]
fn run_writes_every_export() {
    let dir = tempfile::tempdir().unwrap();
    let file = short_scenario(dir.path());
    let o = qkdnet(dir.path(), &["run", "--scenario", &file, "--out", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["timeline.csv", "timeline.json", "events.csv", "summary.json", "summary.txt"] {
        assert!(dir.path().join("o").join(name).is_file(), "{name}");
    }
    let report = stdout(&o);
    for link in ["T5->R5", "T6->R6", "T7->R7", "T3->R4"] {
        assert!(report.contains(link), "{link} missing from\n{report}");
    }
    assert!(report.contains("state transitions, 0 logged events"), "{report}");
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let file = short_scenario(dir.path());
    for out in ["a", "b", "c"] {
        let seed = if out == "c" { "8" } else { "7" };
        let o = qkdnet(dir.path(), &["run", "--scenario", &file, "--seed", seed, "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    for f in ["timeline.csv", "timeline.json", "events.csv"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    assert_ne!(read("a", "timeline.csv"), read("c", "timeline.csv"));
}

#[test]
fn missing_scenario_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkdnet(dir.path(), &["run", "--scenario", "nowhere/campaign.json"]);
    let err = assert_failure(&o, "not_found");
    assert!(err.contains("nowhere/campaign.json"), "{err}");
}

#[test]
fn broken_scenario_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\n  \"schema_version\": 1,\n  \"name\": \n}").unwrap();
    let err = assert_failure(&qkdnet(dir.path(), &["run", "--scenario", "bad.json"]), "parse");
    assert!(err.contains("bad.json") && err.contains("line 4"), "{err}");
}

#[test]
fn pair_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkdnet(dir.path(), &["pair", "--matrix", "symmetry.csv", "--threshold", "1.2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = PairingMatrix::from_csv(BundledSource.read("symmetry.csv").unwrap().as_bytes()).unwrap();
    let obj = pairing_objectives().create("min_sum", &serde_json::Value::Null).unwrap();
    let expected = best_pairing(&m, obj.as_ref()).unwrap().to_string();
    let out = stdout(&o);
    assert!(out.starts_with(&expected), "{out}");
    assert!(out.contains("every entry below 1.20%"));
}

#[test]
fn pair_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("one.csv"), "QBER,R9\nT9,0.5%\n").unwrap();
    let o = qkdnet(dir.path(), &["pair", "--matrix", "one.csv", "--objective", "min_max"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("T9 -> R9  0.50%"));

    fs::write(dir.path().join("bad.csv"), "QBER,R1,R2\nT1,1%,2%\nT2,oops,1%\n").unwrap();
    let err = assert_failure(&qkdnet(dir.path(), &["pair", "--matrix", "bad.csv"]), "matrix");
    assert!(err.contains("line 3"), "{err}");

    let err = assert_failure(
        &qkdnet(dir.path(), &["pair", "--matrix", "one.csv", "--objective", "fastest"]),
        "usage",
    );
    assert!(err.contains("min_max, min_sum"), "{err}");
}

fn hefei_transitions(dir: &Path, out: &str) -> Vec<(f64, String)> {
    let text = fs::read_to_string(dir.join(out).join("timeline.json")).unwrap();
    Timeline::from_json(&text)
        .unwrap()
        .transitions
        .into_iter()
        .filter(|t| t.domain == "hefei")
        .map(|t| (t.t_s, t.state))
        .collect()
}

#[test]
fn pinned_state_holds_until_auto() {
    let dir = tempfile::tempdir().unwrap();
    let file = short_scenario(dir.path());
    let o = qkdnet(dir.path(), &["state", "--pin", "III"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(qkdnet(dir.path(), &["run", "--scenario", &file, "--out", "pinned"]).status.success());
    assert_eq!(hefei_transitions(dir.path(), "pinned"), [(0.0, "III".to_string())]);

    assert!(qkdnet(dir.path(), &["state", "--auto"]).status.success());
    assert!(qkdnet(dir.path(), &["run", "--scenario", &file, "--out", "auto"]).status.success());
    let auto = hefei_transitions(dir.path(), "auto");
    assert_eq!(auto.len(), 3 * 48);
    assert_eq!(auto[..3].iter().map(|t| t.1.as_str()).collect::<Vec<_>>(), ["I", "II", "III"]);

    // a one-off pin on the command line leaves the control file alone
    assert!(qkdnet(dir.path(), &["run", "--scenario", &file, "--pin", "II", "--out", "once"]).status.success());
    assert_eq!(hefei_transitions(dir.path(), "once"), [(0.0, "II".to_string())]);
}

#[test]
fn unknown_state_lists_the_known_ones() {
    let dir = tempfile::tempdir().unwrap();
    let err = assert_failure(&qkdnet(dir.path(), &["state", "--pin", "IV"]), "state");
    assert!(err.contains("I, II, III, A, B"), "{err}");
    assert!(!dir.path().join("qkdnet-control.json").exists());
}

#[test]
fn state_needs_exactly_one_mode() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkdnet(dir.path(), &["state"]);
    assert_eq!(o.status.code(), Some(2));
    assert_failure(&o, "usage");
    assert_failure(&qkdnet(dir.path(), &["state", "--pin", "I", "--auto"]), "usage");
}

#[test]
fn report_regenerates_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let file = short_scenario(dir.path());
    assert!(qkdnet(dir.path(), &["run", "--scenario", &file, "--out", "o"]).status.success());
    let o = qkdnet(dir.path(), &["report", "--timeline", "o/timeline.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), fs::read_to_string(dir.path().join("o/summary.txt")).unwrap());

    let o = qkdnet(dir.path(), &["report", "--timeline", "o/timeline.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("T5->R5"));

    fs::write(dir.path().join("x.csv"), "time,link\n1,T1->R1\n").unwrap();
    assert_failure(&qkdnet(dir.path(), &["report", "--timeline", "x.csv"]), "scenario");
}
