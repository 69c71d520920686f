use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{run, EXIT_OK};

/// What the binary would print and return, run in process.
struct Output {
    code: u8,
    stdout: Vec<u8>,
    stderr: String,
}

fn dmh(args: &[&str]) -> Output {
    let mut buf = Vec::new();
    let result = run(std::iter::once("dmh").chain(args.iter().copied()), &mut buf);
    let (code, stderr) = match result {
        Ok(()) => (EXIT_OK, String::new()),
        Err(e) => (e.exit_code(), e.message()),
    };
    Output { code, stdout: buf, stderr }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    o.stderr.clone()
}

fn code(o: &Output) -> u8 {
    o.code
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn synth(dir: &Path, seed: u64) -> PathBuf {
    let o = dmh(&["synth", "--k", "4", "--per-class", "8", "--seed", &seed.to_string(), "--out", s(dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("manifest.jsonl")
}

const SMALL: &[&str] = &["--hidden", "8", "--latent", "4"];

fn train(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--manifest", s(manifest), "--out", s(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    dmh(&args)
}

fn without_timing(log: &str) -> Vec<Value> {
    log.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            assert!(v.get("timing").is_some());
            v.as_object_mut().unwrap().remove("timing");
            v
        })
        .collect()
}

#[test]
fn synth_is_reproducible_and_echoes_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = dmh(&["synth", "--k", "4", "--per-class", "16", "--seed", "7", "--out", s(dir)]);
        assert_eq!(code(&o), 0);
        assert!(stdout(&o).contains("manifest.jsonl"));
    }
    assert_eq!(tree(&a), tree(&b));
    let spec: Value = serde_json::from_str(&fs::read_to_string(a.join("spec.json")).unwrap()).unwrap();
    assert_eq!(spec["categories"], 4);
    assert_eq!(spec["per_class"]["train"], 16);
    assert_eq!(spec["seed"], 7);
}

#[test]
fn synth_without_out_is_usage_error() {
    let o = dmh(&["synth", "--k", "4"]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn synth_into_unwritable_location_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let o = dmh(&["synth", "--out", s(&blocker.join("sub"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_bad_flag_values_are_usage_errors() {
    assert_eq!(code(&dmh(&["frobnicate"])), 64);
    assert_eq!(code(&dmh(&["synth", "--k", "many", "--out", "x"])), 64);
    assert_eq!(code(&dmh(&["synth", "--k", "1", "--out", "x"])), 64);
    assert_eq!(code(&dmh(&["--help"])), 0);
}

#[test]
fn train_is_deterministic_and_lays_out_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 3);
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    for r in [&r1, &r2] {
        let o = train(&manifest, r, &["--epochs", "3"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).starts_with("final epoch 3"));
    }
    for sub in ["checkpoints", "reports"] {
        assert_eq!(tree(&r1.join(sub)), tree(&r2.join(sub)), "{sub}");
    }
    let ckpts: Vec<_> = tree(&r1.join("checkpoints")).into_keys().collect();
    assert_eq!(
        ckpts,
        ["epoch-0001.ckpt", "epoch-0002.ckpt", "epoch-0003.ckpt"].map(PathBuf::from)
    );
    let l1 = fs::read_to_string(r1.join("logs/train.jsonl")).unwrap();
    let l2 = fs::read_to_string(r2.join("logs/train.jsonl")).unwrap();
    assert_eq!(without_timing(&l1), without_timing(&l2));
    assert_eq!(l1.lines().count(), 3);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 4);
    let full = tmp.path().join("full");
    let part = tmp.path().join("part");
    assert_eq!(code(&train(&manifest, &full, &["--epochs", "4", "--batch-size", "12"])), 0);
    assert_eq!(code(&train(&manifest, &part, &["--epochs", "2", "--batch-size", "12"])), 0);
    let ckpt = part.join("checkpoints/epoch-0002.ckpt");
    let o = train(&manifest, &part, &["--epochs", "4", "--resume", s(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(full.join("checkpoints/epoch-0004.ckpt")).unwrap(),
        fs::read(part.join("checkpoints/epoch-0004.ckpt")).unwrap()
    );
    let full_log = without_timing(&fs::read_to_string(full.join("logs/train.jsonl")).unwrap());
    let part_log = without_timing(&fs::read_to_string(part.join("logs/train.jsonl")).unwrap());
    assert_eq!(full_log, part_log);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 5);
    let config = tmp.path().join("run.json");
    fs::write(
        &config,
        r#"{ "manifest": "data/manifest.jsonl", "out": "from-file",
             "train": { "epochs": 3, "lr": 0.002, "mu": 0.5 },
             "model": { "hidden": 8, "latent": 3 } }"#,
    )
    .unwrap();
    let out = tmp.path().join("from-flag");
    let o = dmh(&["train", "--config", s(&config), "--epochs", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(manifest.exists());
    assert!(!tmp.path().join("from-file").exists());
    let run: Value = serde_json::from_str(&fs::read_to_string(out.join("reports/run_config.json")).unwrap()).unwrap();
    assert_eq!(run["train"]["epochs"], 1);
    assert_eq!(run["train"]["lr"], 0.002);
    assert_eq!(run["train"]["mu"], 0.5);
    assert_eq!(run["model"]["latent"], 3);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("reports/train.json")).unwrap()).unwrap();
    assert_eq!(report["mu"], 0.5);
}

#[test]
fn unknown_config_key_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    for body in [r#"{ "trian": {} }"#, r#"{ "train": { "epoch": 3 } }"#, r#"{ "mask": { "entities": false } }"#] {
        fs::write(&config, body).unwrap();
        assert_eq!(code(&dmh(&["train", "--config", s(&config)])), 64, "{body}");
    }
}

#[test]
fn train_needs_manifest_and_existing_files() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&dmh(&["train", "--out", s(tmp.path())])), 64);
    let missing = tmp.path().join("missing.jsonl");
    assert_eq!(code(&dmh(&["train", "--manifest", s(&missing), "--out", s(tmp.path())])), 2);
    let manifest = synth(&tmp.path().join("data"), 6);
    assert_eq!(code(&train(&manifest, &tmp.path().join("r"), &["--batch-size", "0"])), 64);
}

#[test]
fn ablation_flags_reach_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 8);
    let out = tmp.path().join("abl");
    let o = train(&manifest, &out, &["--epochs", "1", "--mu", "0", "--mask-entities", "--mask-demographics"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run: Value = serde_json::from_str(&fs::read_to_string(out.join("reports/run_config.json")).unwrap()).unwrap();
    assert_eq!(run["train"]["mu"], 0.0);
    assert_eq!(run["mask"]["use_entities"], false);
    assert_eq!(run["mask"]["use_demographics"], false);
    let log = without_timing(&fs::read_to_string(out.join("logs/train.jsonl")).unwrap());
    assert!(log[0]["mean_match_loss"].as_f64().unwrap() > 0.0);
}

fn trained(tmp: &Path) -> (PathBuf, PathBuf) {
    let manifest = synth(&tmp.join("data"), 9);
    let out = tmp.join("run");
    assert_eq!(code(&train(&manifest, &out, &["--epochs", "2"])), 0);
    (manifest, out.join("checkpoints/epoch-0002.ckpt"))
}

#[test]
fn eval_is_deterministic_and_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(tmp.path());
    let args = ["eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--split", "test"];
    let a = dmh(&args);
    let b = dmh(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("accuracy"));

    let mut json_args = args.to_vec();
    json_args.extend(["--format", "json", "--out", s(tmp.path())]);
    let j = dmh(&json_args);
    assert_eq!(code(&j), 0);
    let v: Value = serde_json::from_str(&stdout(&j)).unwrap();
    assert_eq!(v["split"], "test");
    assert_eq!(v["metrics"]["n"], 8);
    for k in ["accuracy", "weighted_precision", "weighted_recall", "weighted_f1"] {
        let x = v["metrics"][k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x));
    }
    assert_eq!(fs::read_to_string(tmp.path().join("reports/eval-test.json")).unwrap(), stdout(&j));
}

#[test]
fn eval_unknown_split_lists_valid_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(tmp.path());
    let o = dmh(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--split", "dev"]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("train, validation, test"), "{}", stderr(&o));
}

#[test]
fn retrieve_ranks_and_is_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(tmp.path());
    let args = ["retrieve", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--query", "topic2cue0 topic2cue1", "--k", "1000"];
    let a = dmh(&args);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, dmh(&args).stdout);
    let text = stdout(&a);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["rank", "id", "similarity", "label"]);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * (8 + 4 + 4));
    let sims: Vec<f64> = rows.iter().map(|r| r.split_whitespace().nth(2).unwrap().parse().unwrap()).collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]));
    assert!(rows.iter().all(|r| r.ends_with("hateful")));
}

#[test]
fn gradcheck_passes_and_detects_sign_flip() {
    let ok = dmh(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    for op in ["matmul", "softmax_axis0", "pass_through", "clamp", "model"] {
        assert!(stdout(&ok).lines().any(|l| l.starts_with(op)), "{op} missing");
    }
    let bad = dmh(&["gradcheck", "--seed", "1", "--inject-sign-flip"]);
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn latent_default_follows_dataset_tag() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 10);
    for (tag, latent) in [("synthetic", 4), ("fhm-like", 6)] {
        let out = tmp.path().join(tag);
        let o = dmh(&["train", "--manifest", s(&manifest), "--out", s(&out), "--hidden", "8", "--epochs", "1", "--dataset", tag]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let ckpt = crate::checkpoint::Checkpoint::<f64>::load(out.join("checkpoints/epoch-0001.ckpt")).unwrap();
        assert_eq!(ckpt.model.config.disentangle.latent, latent, "{tag}");
    }
}
