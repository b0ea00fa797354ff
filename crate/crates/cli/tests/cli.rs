use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use adaprompt::data::Dataset;
use adaprompt::harness::{sample_split, ExperimentReport, FewShotSplit, Shots, StepLog};
use serde_json::Value;

fn adaprompt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaprompt"))
        .args(args)
        .env_remove("ADAPROMPT_CACHE")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr_error(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().expect("stderr has a line");
    serde_json::from_str::<Value>(last).expect("stderr ends in JSON")["error"].clone()
}

fn synth(dir: &Path) {
    let o = adaprompt(&["synth", "--output-dir", dir.to_str().unwrap(), "--train-per-class", "20", "--test-per-class", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Arguments for a short run that pretrains on the dataset text.
fn tiny_run<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--dataset", data, "--output-dir", out, "--k", "2", "--seeds", "1,2", "--steps", "2,3",
        "--learning-rates", "1e-3", "--pretrain-steps", "2",
    ]
}

fn step_logs(out: &Path) -> Vec<StepLog> {
    fs::read_to_string(out.join("steps.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn verbalize_two_label_schema() {
    let o = adaprompt(&["verbalize", "--labels", "per:city_of_death,no_relation"]);
    assert!(o.status.success());
    let sets: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let words: Vec<Vec<String>> = sets
        .as_array()
        .unwrap()
        .iter()
        .map(|s| serde_json::from_value(s["words"].clone()).unwrap())
        .collect();
    assert_eq!(words, vec![vec!["person", "city", "death"], vec!["none"]]);
}

#[test]
fn verbalize_reports_collisions_as_json() {
    let o = adaprompt(&["verbalize", "--labels", "org:founded_by,org:founded,no_relation"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["kind"], "duplicate_word_set");
    let ok = adaprompt(&["verbalize", "--labels", "org:founded_by,org:founded", "--rules-preset", "tacred"]);
    assert!(ok.status.success());
}

#[test]
fn missing_dataset_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    for cmd in ["train", "split", "eval"] {
        let o = adaprompt(&[cmd, "--dataset", p(&tmp.path().join("absent")), "--output-dir", p(&out)]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        let err = stderr_error(&o);
        assert_eq!(err["stage"], "config");
        assert_eq!(err["kind"], "missing_dataset");
        assert!(!out.exists(), "{cmd} created output");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("s"));
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"dataset": "s/data", "output_dir": "out", "learnin_rate": 0.1}"#).unwrap();
    let o = adaprompt(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["kind"], "invalid_config");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn infeasible_k_fails_before_output() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("s"));
    let out = tmp.path().join("out");
    let o = adaprompt(&["train", "--dataset", p(&tmp.path().join("s/data")), "--output-dir", p(&out), "--k", "500"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["kind"], "insufficient_class_instances");
    assert!(!out.exists());
}

#[test]
fn split_matches_direct_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("s"));
    let data = tmp.path().join("s/data");
    let out = tmp.path().join("out");
    let o = adaprompt(&["split", "--dataset", p(&data), "--output-dir", p(&out), "--k", "2", "--seeds", "13,21"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dataset = Dataset::load_dir(&data).unwrap();
    for seed in [13, 21] {
        let written: FewShotSplit =
            serde_json::from_str(&fs::read_to_string(out.join(format!("splits/k2_seed{seed}.json"))).unwrap()).unwrap();
        assert_eq!(written, sample_split(&dataset, Shots::PerClass(2), seed).unwrap());
        assert_eq!(written.train_ids.len(), 12);
    }
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("s"));
    let cfg = tmp.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"dataset": "s/data", "output_dir": "out", "train": {"template": "copula", "lambda_e": 0.5}, "k_values": [4]}"#,
    )
    .unwrap();
    let o = adaprompt(&[
        "train", "--config", p(&cfg), "--template", "relation-between", "--k", "2", "--seeds", "1", "--steps", "1",
        "--pretrain-steps", "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["template"], "relation-between");
    assert_eq!(resolved["train"]["lambda_e"], 0.5);
    assert_eq!(resolved["k_values"], serde_json::json!([2]));
}

#[test]
fn no_entity_loss_logs_zero_entity_loss() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("s"));
    let data = tmp.path().join("s/data");

    let off = tmp.path().join("off");
    let mut args = tiny_run(p(&data), p(&off));
    args.push("--no-entity-loss");
    let o = adaprompt(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let logs = step_logs(&off);
    assert_eq!(logs.len(), 2 * 3);
    assert!(logs.iter().all(|s| s.l_e == 0.0 && s.total == s.l_r));

    let on = tmp.path().join("on");
    let o = adaprompt(&tiny_run(p(&data), p(&on)));
    assert!(o.status.success());
    assert!(step_logs(&on).iter().all(|s| s.l_e > 0.0));
}

#[test]
fn eval_reproduces_training_report() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("s"));
    let data = tmp.path().join("s/data");
    let out = tmp.path().join("out");
    let o = adaprompt(&tiny_run(p(&data), p(&out)));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: Vec<ExperimentReport> =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let split = &reports[0].report(Shots::PerClass(2)).unwrap().per_split[1];
    assert_eq!(split.seed, 2);

    let eval_out = tmp.path().join("eval");
    let cp = out.join("models/adaprompt/k2_seed2");
    let o = adaprompt(&["eval", "--dataset", p(&data), "--output-dir", p(&eval_out), "--checkpoint", p(&cp)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["micro_f1"].as_f64().unwrap(), split.test_f1);
    let rows = fs::read_to_string(eval_out.join("predictions.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 30);
}

#[test]
fn pretrained_encoder_is_cached() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("s"));
    let data = tmp.path().join("s/data");
    let cache = tmp.path().join("cache");
    let run = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_adaprompt"))
            .args(tiny_run(p(&data), p(out)))
            .env("ADAPROMPT_CACHE", &cache)
            .output()
            .unwrap()
    };
    assert!(run(&tmp.path().join("a")).status.success());
    let entries: Vec<_> = fs::read_dir(&cache).unwrap().collect();
    assert_eq!(entries.len(), 1);
    assert!(run(&tmp.path().join("b")).status.success());
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    let params = |d: &str| fs::read(tmp.path().join(d).join("base/params.bin")).unwrap();
    assert_eq!(params("a"), params("b"));
    assert_eq!(
        fs::read_to_string(tmp.path().join("a/report.json")).unwrap(),
        fs::read_to_string(tmp.path().join("b/report.json")).unwrap()
    );
}

#[test]
fn external_backend_is_rejected_up_front() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("s"));
    let out = tmp.path().join("out");
    let o = adaprompt(&[
        "train", "--dataset", p(&tmp.path().join("s/data")), "--output-dir", p(&out), "--backend", "external:bert-large",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["kind"], "unsupported_backend");
    assert!(!out.exists());
}
