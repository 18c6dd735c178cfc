use std::fs;
use std::path::Path;

use ifdid::harness::experiment::RecordLine;
use ifdid::harness::sweep::{compute_sweep, sweep_csv};
use ifdid::harness::{run_experiment, run_sweep, ExperimentConfig, Workspace};

/// A corpus on which greedy decoding loops `a b c a b c ...`.
const LOOP_CORPUS: &str = "a b c a b c a b c a b c a b c a b c\n";

fn write_config(dir: &Path, strategies: &str, seeds: &str, extra: &str) -> ExperimentConfig {
    fs::write(dir.join("train.txt"), LOOP_CORPUS).unwrap();
    fs::write(dir.join("prompts.tsv"), "a\tb c\nb\nc\ta b\n").unwrap();
    let json = format!(
        r#"{{"version": 1, "name": "t", "train": "train.txt", "prompts": "prompts.tsv",
            "lm": {{"order": 2}}, "strategies": {strategies}, "max_length": 20,
            "seeds": {seeds}, "output_dir": "out"{extra}}}"#
    );
    let path = dir.join("cfg.json");
    fs::write(&path, json).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

fn records(path: &Path) -> Vec<RecordLine> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn three_prompts_one_seed_gives_three_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"[{"decoder": {"kind": "greedy"}}]"#, "[0]", "");
    let outcome = run_experiment(&cfg).unwrap();
    let recs = records(&dir.path().join("out/t/greedy/records.jsonl"));
    assert_eq!(recs.len(), 3);
    assert_eq!(recs.iter().map(|r| r.prompt_id).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(recs.iter().all(|r| r.tokens.len() == r.per_step.len()));
    for f in ["greedy/metrics.json", "report.txt", "report.json"] {
        assert!(dir.path().join("out/t").join(f).is_file(), "{f}");
    }
    assert_eq!(outcome.report.table.rows.len(), 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let strategies = r#"[{"decoder": {"kind": "top_k", "k": 3}}, {"decoder": {"kind": "ifdid"}}]"#;
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), strategies, "[1, 2]", "");
        run_experiment(&cfg).unwrap();
        let read = |f: &str| fs::read(dir.path().join("out/t").join(f)).unwrap();
        outputs.push((
            read("top_k/records.jsonl"),
            read("ifdid/records.jsonl"),
            read("ifdid/metrics.json"),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn greedy_ignores_the_seed_and_sampling_does_not() {
    let strategies = r#"[{"decoder": {"kind": "greedy"}}, {"decoder": {"kind": "temperature", "t": 2.0}}]"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), strategies, "[0, 1, 2, 3]", "");
    run_experiment(&cfg).unwrap();
    let greedy = records(&dir.path().join("out/t/greedy/records.jsonl"));
    let sampled = records(&dir.path().join("out/t/temperature/records.jsonl"));
    for g in &greedy {
        let first = greedy.iter().find(|r| r.prompt_id == g.prompt_id).unwrap();
        assert_eq!(g.tokens, first.tokens);
    }
    let distinct: std::collections::BTreeSet<_> = sampled.iter().map(|r| r.tokens.clone()).collect();
    assert!(distinct.len() > 1);
}

#[test]
fn invalid_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), r#"[{"decoder": {"kind": "greedy"}}]"#, "[0]", "");
    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(dir.path().join("cfg.json"))
        .unwrap()
        .replace("\"seeds\"", "\"sedes\"");
    fs::write(&bad, text).unwrap();
    assert!(ExperimentConfig::load(&bad).is_err());
    let empty = fs::read_to_string(dir.path().join("cfg.json"))
        .unwrap()
        .replace("[0]", "[]");
    fs::write(&bad, empty).unwrap();
    assert!(ExperimentConfig::load(&bad).is_err());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn sweep_of_looping_greedy_matches_hand_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"[{"decoder": {"kind": "greedy"}}]"#,
        "[0]",
        r#", "sweep": {"grid": [10, 20]}"#,
    );
    let (rows, path) = run_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    // a b c a b c ...: 3 distinct bigrams out of 9 and out of 19
    let (r10, r20) = (1.0 - 3.0 / 9.0, 1.0 - 3.0 / 19.0);
    assert!((rows[0].mean - r10).abs() < 1e-12, "{}", rows[0].mean);
    assert!((rows[1].mean - r20).abs() < 1e-12, "{}", rows[1].mean);
    assert_eq!(rows[0].count, 3);
    assert!(rows[0].gradient.is_none());
    assert!((rows[1].gradient.unwrap() - (r20 - r10) / 10.0).abs() < 1e-12);
    let csv = fs::read_to_string(path).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "strategy,max_length,mean_rep2,std_rep2,gradient"
    );
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn one_point_grid_has_empty_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"[{"decoder": {"kind": "greedy"}}]"#,
        "[0]",
        r#", "sweep": {"grid": [12]}"#,
    );
    let ws = Workspace::prepare(&cfg).unwrap();
    let rows = compute_sweep(&cfg, &ws).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(sweep_csv(&rows).lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn looping_greedy_repetition_never_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let grid: Vec<String> = (2..=40).step_by(2).map(|n| n.to_string()).collect();
    let extra = format!(r#", "sweep": {{"grid": [{}]}}"#, grid.join(", "));
    let mut cfg = write_config(dir.path(), r#"[{"decoder": {"kind": "greedy"}}]"#, "[0]", &extra);
    cfg.max_length = 40;
    let ws = Workspace::prepare(&cfg).unwrap();
    let rows = compute_sweep(&cfg, &ws).unwrap();
    assert!(rows.windows(2).all(|w| w[1].mean >= w[0].mean));
    assert!(rows.iter().skip(1).all(|r| r.gradient.unwrap() >= 0.0));
}

#[test]
fn beam_is_rerun_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"[{"decoder": {"kind": "beam", "beam_size": 3, "no_repeat_ngram": 3}}]"#,
        "[0]",
        r#", "sweep": {"grid": [4, 8]}"#,
    );
    let ws = Workspace::prepare(&cfg).unwrap();
    let rows = compute_sweep(&cfg, &ws).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.mean.is_finite() && r.count == 3));
}
