//! Runs the `r2e` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use r2e_core::eval::parse_eval_set;
use r2e_core::pipeline::{evaluate, ArtifactLayout, EvaluateOptions, R2eSystem};
use serde_json::Value;

fn r2e() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_r2e"));
    for (k, _) in std::env::vars() {
        if k.starts_with("R2E_") {
            c.env_remove(k);
        }
    }
    c.env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dump(cmd: &mut Command) -> toml::Table {
    let o = run(cmd.arg("--dump-config"));
    assert!(o.status.success(), "{}", stderr(&o));
    toml::from_str(&stdout(&o)).unwrap()
}

fn k_of(t: &toml::Table) -> i64 {
    t["inference"]["k"].as_integer().unwrap()
}

#[test]
fn version_is_json() {
    let o = run(r2e().arg("--version"));
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["name"], "r2e");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn flag_beats_env_beats_file_beats_default() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.toml");
    std::fs::write(&file, "[inference]\nk = 8\n").unwrap();
    assert_eq!(k_of(&dump(&mut r2e())), 64);
    assert_eq!(k_of(&dump(r2e().arg("--config").arg(&file))), 8);
    assert_eq!(k_of(&dump(r2e().arg("--config").arg(&file).env("R2E_K", "12"))), 12);
    let flagged = dump(
        r2e()
            .arg("--config")
            .arg(&file)
            .env("R2E_K", "12")
            .args(["rank", "--query", "x [MASK]", "--k", "16"]),
    );
    assert_eq!(k_of(&flagged), 16);
    let set = dump(r2e().arg("--config").arg(&file).args(["--set", "inference.k=20"]));
    assert_eq!(k_of(&set), 20);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["--no-such-flag"],
        vec![],
        vec!["--set", "inference.c=2", "--dump-config"],
        vec!["--set", "inference.bogus=1", "--dump-config"],
        vec!["rank"],
    ] {
        let o = run(r2e().args(&args));
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = run(r2e().args(["--config", "/nonexistent/r2e.toml", "--dump-config"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stages_out_of_order_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    for (stage, needs) in [
        ("train-retriever", "ingest"),
        ("build-index", "ingest"),
        ("train-reasoner", "ingest"),
    ] {
        let o = run(r2e().arg("--artifacts").arg(dir.path()).arg(stage));
        assert_eq!(o.status.code(), Some(4), "{stage}");
        assert!(stderr(&o).contains(&format!("`{needs}`")), "{stage}: {}", stderr(&o));
    }
    let o = run(r2e().arg("--artifacts").arg(dir.path()).args(["rank", "--query", "a [MASK]"]));
    assert_eq!(o.status.code(), Some(4));
}

fn write_dictionary(dir: &Path) -> PathBuf {
    let p = dir.join("dict.tsv");
    std::fs::write(&p, "GENE1\tgene1\nGENE2\tgene2\n").unwrap();
    p
}

#[test]
fn ingest_reports_bad_lines_and_accepts_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let dict = write_dictionary(dir.path());
    let docs = dir.path().join("docs.jsonl");
    std::fs::write(
        &docs,
        "{\"doc_id\":\"d1\",\"year\":2001,\"sent_idx\":0,\"text\":\"gene1 binds.\"}\n{oops\n",
    )
    .unwrap();
    let art = dir.path().join("a");
    let o = run(r2e().arg("--artifacts").arg(&art).arg("ingest").arg("--docs").arg(&docs).arg("--dictionary").arg(&dict));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    std::fs::write(&docs, "").unwrap();
    let o = run(r2e().arg("--artifacts").arg(&art).arg("ingest").arg("--docs").arg(&docs).arg("--dictionary").arg(&dict));
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(manifest["documents"], 0);
    assert_eq!(manifest["passages"], 0);
    assert_eq!(std::fs::read_to_string(art.join("corpus.jsonl")).unwrap(), "");
}

fn rank_lines(o: &Output) -> Vec<Value> {
    assert!(o.status.success(), "{}", stderr(o));
    stdout(o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn synth_fixture_full_pipeline() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world");
    let o = run(r2e().args(["synth", "--entities", "4", "--sentences", "600", "--queries-per-entity", "5", "--disjoint", "--out"]).arg(&world));
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = world.join("r2e.toml");
    let base = |c: &mut Command| {
        c.arg("--config")
            .arg(&cfg)
            .args(["--threads", "1"])
            .args(["--set", "mlm_train.epochs=8", "--set", "reasoner_train.epochs=6"])
            .args(["--set", "reasoner.k=4", "--set", "inference.k=4"]);
    };
    let step = |args: &[&str]| {
        let mut c = r2e();
        base(&mut c);
        let o = run(c.args(args));
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    let docs = world.join("docs.jsonl");
    let dict = world.join("dictionary.tsv");
    let ingest = [
        "ingest",
        "--docs",
        docs.to_str().unwrap(),
        "--dictionary",
        dict.to_str().unwrap(),
    ];
    let manifest: Value = serde_json::from_str(&stdout(&step(&ingest))).unwrap();
    assert_eq!(manifest["documents"], 600);
    let art = world.join("artifacts");
    let files = ["corpus.jsonl", "splits.json", "manifest.json"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(art.join(f)).unwrap()).collect();
    step(&ingest);
    let second: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(art.join(f)).unwrap()).collect();
    assert_eq!(first, second, "ingest is byte-for-byte reproducible");

    step(&["train-retriever"]);
    step(&["build-index"]);
    step(&["train-reasoner"]);

    let query = "t000 t001 [MASK] t002 t003.";
    let plain = rank_lines(&step(&["rank", "--query", query, "--c", "0"]));
    let corrected = rank_lines(&step(&["rank", "--query", query, "--c", "0.5"]));
    assert_eq!(plain.len(), 4);
    for e in &plain {
        assert_eq!(e["f_c"], 0.0);
        assert_eq!(e["corrected_logit"], e["logit"]);
    }
    // Zipf counts are non-uniform, so the correction moves scores but not logits.
    let by_id = |v: &[Value]| -> std::collections::BTreeMap<String, (f64, f64)> {
        v.iter()
            .map(|e| {
                (
                    e["answer_id"].as_str().unwrap().to_string(),
                    (e["logit"].as_f64().unwrap(), e["corrected_logit"].as_f64().unwrap()),
                )
            })
            .collect()
    };
    let (p, c) = (by_id(&plain), by_id(&corrected));
    assert!(p.iter().all(|(a, s)| s.0 == c[a].0));
    assert!(p.iter().any(|(a, s)| s.1 != c[a].1));

    let explained: Value =
        serde_json::from_str(&stdout(&step(&["explain", "--query", query, "--answer", "ENT00", "--exact"]))).unwrap();
    let sum: f64 = explained["evidence"].as_array().unwrap().iter().map(|e| e["shapley"].as_f64().unwrap()).sum();
    let baseline = explained["baseline"].as_f64().unwrap();
    assert!((baseline + sum - explained["total"].as_f64().unwrap()).abs() < 1e-9);

    let eval_set = world.join("eval.csv");
    let report: Value =
        serde_json::from_str(&stdout(&step(&["evaluate", "--eval-set", eval_set.to_str().unwrap()]))).unwrap();
    let sys = R2eSystem::<f64>::load(&ArtifactLayout::new(&art)).unwrap();
    let records = parse_eval_set(&std::fs::read_to_string(&eval_set).unwrap()).unwrap();
    let direct = evaluate(
        &sys,
        &records,
        &EvaluateOptions {
            k: 4,
            c: 0.5,
            ..EvaluateOptions::default()
        },
    )
    .unwrap();
    assert_eq!(report, serde_json::to_value(&direct).unwrap());
    assert!(direct.methods["r2e-cor"].auroc.is_some());
    assert!(started.elapsed().as_secs() < 300, "{:?}", started.elapsed());
}
