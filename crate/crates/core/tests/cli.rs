mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;

fn absa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_absa"))
        .args(args)
        .env_remove("ABSA_LLM_API_KEY")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn corpus_validate_reports_on_stderr() {
    let out = absa(&["corpus", "validate", path(&fixture("mini_laptop.xml"))]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    assert!(stderr(&out).contains("12 sentences"));
}

#[test]
fn bad_corpus_is_a_domain_error_naming_the_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.xml");
    std::fs::write(
        &file,
        r#"<Reviews><Review rid="1"><sentences><sentence id="x:1"><text>ab</text><Opinions><Opinion target="a" category="A#B" polarity="odd" from="0" to="1"/></Opinions></sentence></sentences></Review></Reviews>"#,
    )
    .unwrap();
    let out = absa(&["corpus", "validate", path(&file)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("bad.xml") && err.contains("x:1"), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    let out = absa(&["bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).to_lowercase().contains("usage"));
    assert_eq!(absa(&[]).status.code(), Some(2));
    assert_eq!(absa(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed=1\nbogus.key=2\n").unwrap();
    let out = absa(&["matrix", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus.key"));

    let golden = fixture("golden.cfg");
    assert_eq!(absa(&["matrix", "--config", path(&golden), "--set", "noequals"]).status.code(), Some(2));
    assert_eq!(absa(&["probe", "mask", "--config", path(&golden), "--fractions", "0,2"]).status.code(), Some(2));
}

#[test]
fn knowledge_check() {
    assert_eq!(absa(&["knowledge", "check", path(&fixture("knowledge.tsv"))]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("k.tsv");
    std::fs::write(&file, "[lexicon]\nscreen\tlaptop\n").unwrap();
    let out = absa(&["knowledge", "check", path(&file)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"));
}

#[test]
fn matrix_twice_gives_identical_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = absa(&["matrix", "--config", path(&fixture("golden.cfg")), "--out-dir", path(&out_dir)]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for ext in ["json", "csv", "txt"] {
        let a = std::fs::read(dir.path().join("a").join(format!("report.{ext}"))).unwrap();
        let b = std::fs::read(dir.path().join("b").join(format!("report.{ext}"))).unwrap();
        assert_eq!(a, b);
        assert_eq!(String::from_utf8(a).unwrap(), read_fixture(&format!("golden/report.{ext}")));
    }
}

#[test]
fn probe_mask_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = absa(&["probe", "mask", "--config", path(&fixture("golden.cfg")), "--out-dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for ext in ["json", "csv", "txt"] {
        let got = std::fs::read_to_string(dir.path().join(format!("probe.{ext}"))).unwrap();
        assert_eq!(got, read_fixture(&format!("golden/probe.{ext}")));
    }
}

#[test]
fn train_predict_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("nb.json");
    let cfg = fixture("golden.cfg");
    let out = absa(&["train", "--config", path(&cfg), "--domain", "laptop", "--out", path(&model)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(doc["format_version"], 1);
    assert_eq!(doc["model_kind"], "nb");

    let corpus = fixture("mini_restaurant.xml");
    let args = ["--model", path(&model), "--corpus", path(&corpus), "--domain", "restaurant"];
    let eval = absa(&[&["evaluate"], &args[..]].concat());
    assert_eq!(eval.status.code(), Some(0));
    let scores: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(scores["accuracy"], "0.5556");

    let pred = absa(&[&["predict"], &args[..]].concat());
    assert_eq!(pred.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_slice(&pred.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 18);

    std::fs::write(&model, "{\"format_version\": 99}").unwrap();
    assert_eq!(absa(&[&["evaluate"], &args[..]].concat()).status.code(), Some(1));
}

#[test]
fn extract_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("aspects.json");
    let out = absa(&["extract", "--config", path(&fixture("golden.cfg")), "--domain", "laptop", "--out", path(&file)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(doc["L1:0"][0]["term"], "battery life");
    let missing = absa(&["extract", "--config", path(&fixture("golden.cfg")), "--domain", "hotel"]);
    assert_ne!(missing.status.code(), Some(0));
}

#[test]
fn gradcheck_passes_for_the_default_config() {
    let out = absa(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max_rel_error"));
    assert_eq!(absa(&["gradcheck", "--epsilon", "0"]).status.code(), Some(2));
}
