use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prefsel::data::save_dataset;
use prefsel::seed::derive_named;
use prefsel::{Dataset, Modality, PreferenceSample, RewardModel64};
use rand::{Rng, SeedableRng};
use serde_json::Value;

fn prefsel(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_prefsel"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

/// A small generated suite in `dir/suite`.
fn small_suite(dir: &Path, extra: &str) {
    let cfg = write(dir, "gen.toml", &format!("candidate_sets = 50\nheldout_count = 100\n{extra}"));
    let o = prefsel(&["generate", "--seed", "7"], Some(&cfg), &dir.join("suite"));
    assert!(o.status.success(), "{}", stderr(&o));
}

const SUITE: &str = "text_path = \"suite/text.jsonl\"\ncaption_path = \"suite/caption.jsonl\"\nvisual_path = \"suite/visual.jsonl\"\n";

#[test]
fn missing_dataset_is_a_validation_error_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "text_path = \"nope.jsonl\"\n");
    let out = dir.path().join("out");
    let o = prefsel(&["select"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("text_path"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bad_config_fields_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for (text, field) in [
        ("block_size = 0\n", "block_size"),
        ("visual_fraction = 1.5\n", "visual_fraction"),
        ("unknown_key = 1\n", "unknown_key"),
        ("phase_order = [1, 2]\n", "phase_order"),
    ] {
        let cfg = write(dir.path(), "c.toml", text);
        let o = prefsel(&["train"], Some(&cfg), &out);
        assert_eq!(o.status.code(), Some(1), "{text}");
        assert!(stderr(&o).contains(field), "{text}: {}", stderr(&o));
    }
    let o = prefsel(&["train", "--jobs", "lots"], None, &out);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn budget_larger_than_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small_suite(dir.path(), "");
    let cfg = write(dir.path(), "c.toml", &format!("{SUITE}text_budget = 201\n"));
    let o = prefsel(&["select"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("text_budget"));
}

#[test]
fn malformed_candidates_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let model = RewardModel64::new(2, 2, 3, 0);
    model.save_checkpoint(dir.path().join("m.json")).unwrap();
    write(
        dir.path(),
        "cands.jsonl",
        "{\"id\":\"a\",\"prompt\":[0,0],\"candidates\":[[1,0],[0,1]]}\n{\"id\":\"b\",\"prompt\":[0,0],\"candidates\":[[1,0],\n",
    );
    let cfg = write(dir.path(), "c.toml", "checkpoint_path = \"m.json\"\ncandidates_path = \"cands.jsonl\"\n");
    let o = prefsel(&["rerank"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cands.jsonl:2"), "{}", stderr(&o));
}

#[test]
fn full_budget_selects_everything() {
    let dir = tempfile::tempdir().unwrap();
    small_suite(dir.path(), "text_count = 40\ncaption_count = 40\n");
    let cfg = write(dir.path(), "c.toml", &format!("{SUITE}caption_budget = 40\ntext_budget = 40\n"));
    let out = dir.path().join("out");
    let o = prefsel(&["select", "--jobs", "2"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&out);
    assert_eq!(s["metrics"]["caption_selected"], 40);
    assert_eq!(s["metrics"]["text_selected"], 40);
    let lines = std::fs::read_to_string(out.join("text_report.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 41);
    assert!(lines.lines().last().unwrap().contains("quantiles"));
}

#[test]
fn zero_epochs_leave_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    small_suite(dir.path(), "");
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("{SUITE}seed = 5\nphase1_epochs = 0\nphase2_epochs = 0\nphase3_epochs = 0\n"),
    );
    let out = dir.path().join("out");
    let o = prefsel(&["train"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let init = RewardModel64::new(6, 8, 16, derive_named(5, "model/init"));
    init.save_checkpoint(dir.path().join("init.json")).unwrap();
    let expected = std::fs::read(dir.path().join("init.json")).unwrap();
    for name in ["phase1.json", "phase3.json", "model.json"] {
        assert_eq!(std::fs::read(out.join(name)).unwrap(), expected, "{name}");
    }
}

#[test]
fn reversed_phase_order_runs_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    small_suite(dir.path(), "");
    let cfg = write(dir.path(), "c.toml", &format!("{SUITE}phase_order = [3, 2, 1]\nphase1_epochs = 1\nphase2_epochs = 1\nphase3_epochs = 1\n"));
    let out = dir.path().join("out");
    let o = prefsel(&["train"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let run: Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert!(run["warnings"][0].as_str().unwrap().contains("phase order violation"));
    assert_eq!(run["phases"][0]["phase_index"], 3);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.toml", "seed = 1\ntext_count = 20\ncaption_count = 10\nvisual_count = 10\nheldout_count = 10\ncandidate_sets = 5\n");
    let out = dir.path().join("out");
    assert!(prefsel(&["generate", "--seed", "9"], Some(&cfg), &out).status.success());
    assert_eq!(summary(&out)["seed"], 9);
    assert_eq!(summary(&out)["config"]["seed"], 9);
}

#[test]
fn trained_model_picks_planted_best() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write(dir.path(), "gen.toml", "heldout_count = 100\n");
    assert!(prefsel(&["generate", "--seed", "21"], Some(&gen), &dir.path().join("suite")).status.success());
    let cfg = write(dir.path(), "s.toml", SUITE);
    assert!(prefsel(&["select", "--seed", "21"], Some(&cfg), &dir.path().join("select")).status.success());
    let cfg = write(
        dir.path(),
        "t.toml",
        "text_path = \"select/selected_text.jsonl\"\ncaption_path = \"select/selected_caption.jsonl\"\nvisual_path = \"suite/visual.jsonl\"\n",
    );
    let o = prefsel(&["train", "--seed", "21"], Some(&cfg), &dir.path().join("train"));
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = write(dir.path(), "r.toml", "checkpoint_path = \"train/model.json\"\ncandidates_path = \"suite/candidates.jsonl\"\n");
    let out = dir.path().join("rerank");
    assert!(prefsel(&["rerank"], Some(&cfg), &out).status.success());
    let s = summary(&out);
    assert_eq!(s["metrics"]["sets"], 500);
    let hit = s["metrics"]["planted_hit_rate"].as_f64().unwrap();
    assert!(hit >= 0.8, "planted hit rate {hit}");
}

#[test]
fn random_model_is_at_chance_on_balanced_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let samples: Vec<_> = (0..10_000)
        .map(|i| PreferenceSample::from_raw(format!("p{i}"), v(4), vec![v(4), v(4)], Modality::Visual).unwrap())
        .collect();
    save_dataset(&Dataset::new("balanced", Modality::Visual, samples).unwrap(), dir.path().join("h.jsonl")).unwrap();
    RewardModel64::new(4, 4, 8, 99).save_checkpoint(dir.path().join("m.json")).unwrap();
    let cfg = write(dir.path(), "e.toml", "checkpoint_path = \"m.json\"\nheldout_path = \"h.jsonl\"\n");
    let out = dir.path().join("eval");
    assert!(prefsel(&["eval"], Some(&cfg), &out).status.success());
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "accuracy {acc}");

    let again = dir.path().join("eval2");
    assert!(prefsel(&["eval"], Some(&cfg), &again).status.success());
    assert_eq!(std::fs::read(out.join("metrics.json")).unwrap(), std::fs::read(again.join("metrics.json")).unwrap());
}

#[test]
fn win_counts_need_both_sides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.toml", "win_a = 3\n");
    let o = prefsel(&["eval"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("win_a"), "{}", stderr(&o));
}
