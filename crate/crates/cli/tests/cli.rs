use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn nilink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nilink"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(args: &[&str]) {
    let o = nilink(args);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn mention(m: &str, gold: &str) -> String {
    format!("{{\"doc_id\":\"d\",\"mention\":\"{m}\",\"ctxt_l\":\"\",\"ctxt_r\":\"\",\"gold\":\"{gold}\"}}\n")
}

#[test]
fn eval_of_the_five_mention_example() {
    let dir = tempfile::tempdir().unwrap();
    let gold: String = ["e1", "e2", "NIL", "NIL", "e3"].iter().map(|g| mention("x", g)).collect();
    let test = dir.path().join("test.jsonl");
    fs::write(&test, gold).unwrap();
    let preds: String = ["e1", "e9", "NIL", "e4", "NIL"]
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{{\"i\":{i},\"pred\":\"{p}\",\"score\":1.0,\"is_nil_prob\":null}}\n"))
        .collect();
    let pp = dir.path().join("preds.jsonl");
    fs::write(&pp, preds).unwrap();
    let out = dir.path().join("eval");
    ok(&["eval", "--test", s(&test), "--predictions", s(&pp), "--out", s(&out)]);
    let r = json(&out.join("report.json"));
    assert_eq!(r["f1_o"].as_f64().unwrap(), 0.5);
    assert_eq!(r["accuracy"].as_f64().unwrap(), 0.4);
    assert!((r["p_in"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().contains("F1_o"));
    assert!(out.join("manifest-eval.json").is_file());
}

fn synth(dir: &Path) -> PathBuf {
    let out = dir.join("synth");
    ok(&[
        "synth",
        "--set",
        "synth_entities=30",
        "--set",
        "synth_mentions=150",
        "--out",
        s(&out),
    ]);
    out
}

#[test]
fn prune_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path());
    let onto = syn.join("ontology.jsonl");
    for run in ["a", "b"] {
        ok(&["prune", "--ontology", s(&onto), "--fraction", "0.2", "--seed", "1", "--out", s(&dir.path().join(run))]);
    }
    for f in ["ontology.jsonl", "removed.txt"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let removed = fs::read_to_string(dir.path().join("a/removed.txt")).unwrap();
    assert_eq!(removed.lines().count(), 6);

    // diff of the original against the pruned release recovers the removed ids
    let diff = dir.path().join("diff");
    ok(&[
        "diff",
        "--ontology",
        s(&onto),
        "--old-ontology",
        s(&dir.path().join("a/ontology.jsonl")),
        "--out",
        s(&diff),
    ]);
    assert_eq!(fs::read_to_string(diff.join("out_of_kb.txt")).unwrap(), removed);
}

#[test]
fn exit_codes_and_cleanup() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&nilink(&["prune", "--out", s(&out)])), 2);
    assert_eq!(code(&nilink(&["prune", "--no-such-flag"])), 1);
    assert_eq!(code(&nilink(&["prune", "--set", "nope=1", "--out", s(&out)])), 1);
    assert_eq!(code(&nilink(&["frobnicate"])), 1);
    let missing = dir.path().join("missing.jsonl");
    let o = nilink(&["prune", "--ontology", s(&missing), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\":\"A\",\"name\":\"a\"}\nnot json\n").unwrap();
    let o = nilink(&["prune", "--ontology", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists(), "partial output left behind");

    // failing after other files exist keeps the directory and its old files
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    assert_eq!(code(&nilink(&["prune", "--ontology", s(&bad), "--out", s(&out)])), 2);
    assert!(out.join("keep.txt").is_file());
}

#[test]
fn versioning_remaps_merges_and_marks_new_ids_nil() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let ent = |id: &str, name: &str| format!("{{\"id\":\"{id}\",\"name\":\"{name}\"}}\n");
    fs::write(p.join("new.jsonl"), ent("A", "alpha") + &ent("B", "beta") + &ent("C", "gamma") + &ent("D", "delta"))
        .unwrap();
    fs::write(p.join("old.jsonl"), ent("A", "alpha") + &ent("X", "beta old")).unwrap();
    fs::write(p.join("merges.jsonl"), "{\"retired\":\"B\",\"into\":\"X\"}\n").unwrap();
    let split = mention("alpha", "A") + &mention("beta", "B") + &mention("gamma", "C") + &mention("x", "NIL");
    for name in ["train", "valid", "test"] {
        fs::write(p.join(format!("{name}.jsonl")), &split).unwrap();
    }
    let out = p.join("ds");
    ok(&[
        "build-dataset",
        "--ontology",
        s(&p.join("new.jsonl")),
        "--old-ontology",
        s(&p.join("old.jsonl")),
        "--merges",
        s(&p.join("merges.jsonl")),
        "--train",
        s(&p.join("train.jsonl")),
        "--valid",
        s(&p.join("valid.jsonl")),
        "--test",
        s(&p.join("test.jsonl")),
        "--out",
        s(&out),
    ]);
    assert_eq!(fs::read_to_string(out.join("out_of_kb.txt")).unwrap(), "C\nD\n");
    let golds: Vec<String> = fs::read_to_string(out.join("test.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["gold"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(golds, ["A", "X", "NIL", "NIL"]);
    let stats = json(&out.join("stats.json"));
    assert_eq!(stats["entities"], 2);
    assert_eq!(stats["splits"][2]["out_of_kb"], 2);
}

const TINY: [&str; 14] = [
    "--set", "embed_dim=8", "--set", "heads=2", "--set", "ffn_dim=16", "--set", "bi_epochs=1", "--set",
    "cross_epochs=1", "--set", "layers=1", "--set", "k_grid=2,5",
];

fn dataset(dir: &Path) -> Vec<String> {
    let syn = synth(dir);
    let data = dir.join("data");
    let split_args = |root: &Path| {
        ["ontology", "train", "valid", "test"]
            .iter()
            .flat_map(|k| [format!("--{k}"), s(&root.join(format!("{k}.jsonl"))).to_string()])
            .collect::<Vec<_>>()
    };
    let mut args = vec!["build-dataset".to_string(), "--out".into(), s(&data).into()];
    args.extend(split_args(&syn));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    split_args(&data)
}

#[test]
fn step_by_step_pipeline_sweep_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let work = dir.path().join("work");
    let step = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd, "--out", s(&work)];
        args.extend(TINY);
        args.extend(data.iter().map(String::as_str));
        args.extend(extra);
        ok(&args);
    };
    step("train-bi", &[]);
    step("index", &[]);
    step("train-cross", &[]);
    step("predict", &[]);
    step("eval", &[]);
    step("sweep-k", &[]);
    for k in [2, 5] {
        assert!(work.join(format!("sweep/k{k}.json")).is_file());
    }
    let table = fs::read_to_string(work.join("sweep_k.txt")).unwrap();
    assert!(table.contains("k=2") && table.contains("k=5"), "{table}");

    // predict replays into a fresh directory, reading artifacts from the first
    let again = dir.path().join("again");
    let o = nilink(&["replay", s(&work.join("manifest-predict.json")), "--out", s(&again)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(work.join("predictions.jsonl")).unwrap(),
        fs::read(again.join("predictions.jsonl")).unwrap()
    );

    // a tampered output hash is a runtime failure
    let mp = work.join("manifest-eval.json");
    let mut m = json(&mp);
    m["outputs"]["report.json"] = Value::String("0".repeat(64));
    fs::write(&mp, m.to_string()).unwrap();
    assert_eq!(code(&nilink(&["replay", s(&mp), "--out", s(&dir.path().join("r3"))])), 3);

    // a changed input is a validation failure
    let mp = work.join("manifest-index.json");
    let m = json(&mp);
    let input = m["inputs"].as_object().unwrap().keys().find(|k| k.ends_with("bi.ckpt")).unwrap().clone();
    fs::write(&input, "corrupt").unwrap();
    assert_eq!(code(&nilink(&["replay", s(&mp), "--out", s(&dir.path().join("r4"))])), 2);
}

#[test]
fn eval_reads_any_methods_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    for method in ["sieve", "ft_classifier"] {
        let out = dir.path().join(method);
        let mut args = vec!["run", "--method", method, "--out", s(&out)];
        args.extend(data.iter().map(String::as_str));
        ok(&args);
        let e = dir.path().join(format!("{method}-eval"));
        let test = &data[data.iter().position(|a| a == "--test").unwrap() + 1];
        ok(&[
            "eval",
            "--test",
            test,
            "--predictions",
            s(&out.join("predictions.jsonl")),
            "--out",
            s(&e),
        ]);
        assert_eq!(fs::read(out.join("report.json")).unwrap(), fs::read(e.join("report.json")).unwrap());
    }
}
