mod common;

use std::io::Write;
use std::process::{Command, Output};

use common::*;
use serde_json::Value;

fn ddsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddsim")).args(args).output().unwrap()
}

fn corpus_file(name: &str) -> String {
    corpus_dir().join(format!("{name}.dds")).to_string_lossy().into_owned()
}

fn json(args: &[&str]) -> (i32, Value) {
    let out = ddsim(args);
    let doc = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)));
    (out.status.code().unwrap(), doc)
}

const RUN_FAILS: [&str; 4] = ["capacity", "foreign_team", "geometry_exclude", "nest_illegal"];

#[test]
fn exit_codes_over_corpus() {
    for (name, _) in corpus() {
        let file = corpus_file(&name);
        let run = ddsim(&["run", &file]).status.code().unwrap();
        assert_eq!(run, i32::from(RUN_FAILS.contains(&name.as_str())), "run {name}");
        let check = ddsim(&["check", &file]).status.code().unwrap();
        assert_eq!(check, i32::from(name == "nest_illegal"), "check {name}");
    }
}

#[test]
fn exit_code_agrees_with_report() {
    for (name, _) in corpus() {
        let (code, doc) = json(&["run", &corpus_file(&name), "--format", "json"]);
        let errors = doc["diagnostics"].as_array().unwrap().iter().any(|d| d["severity"] == "error");
        let failed = doc["assertions"].as_array().unwrap().iter().any(|a| a["passed"] == false);
        assert_eq!(code, i32::from(errors || failed), "{name}");
        assert_eq!(doc["exit_code"], code, "{name}");
        let (code, doc) = json(&["check", &corpus_file(&name), "--format", "json"]);
        let illegal = doc["diagnostics"].as_array().unwrap().iter().any(|d| d["code"] == "E_ILLEGAL_NESTING");
        assert_eq!(code, i32::from(illegal), "check {name}");
    }
}

#[test]
fn geometry_reports() {
    let (code, doc) = json(&["run", &corpus_file("geometry_default"), "--format", "json"]);
    assert_eq!(code, 0);
    assert_eq!(doc["diagnostics"].as_array().unwrap().len(), 0);

    let (code, doc) = json(&["run", &corpus_file("geometry_exclude"), "--format", "json"]);
    assert_eq!(code, 1);
    let d = &doc["diagnostics"][0];
    assert_eq!((d["code"].as_str(), d["path"].as_str()), (Some("E_PARTIAL_DEEPCOPY"), Some("g.iedge2node")));
    assert_eq!(d["severity"], "error");
    assert_eq!(d["rule"], "deep-copy");

    let (code, doc) = json(&["check", &corpus_file("geometry_exclude"), "--format", "json"]);
    assert_eq!(code, 0);
    let diags = doc["diagnostics"].as_array().unwrap();
    assert_eq!(diags.len(), 1);
    assert_eq!(diags[0]["severity"], "warning");
    assert!(doc.get("present_table").is_none());
    assert!(doc.get("spaces").is_none());
}

#[test]
fn clean_check_has_no_findings() {
    let out = ddsim(&["check", &corpus_file("clean")]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("no findings"));
}

#[test]
fn load_failures_exit_two() {
    assert_eq!(ddsim(&["run", "missing_file.dds"]).status.code(), Some(2));

    let mut bad_syntax = tempfile::Builder::new().suffix(".dds").tempfile().unwrap();
    writeln!(bad_syntax, "type T {{ x: ptr int[n*]; }}").unwrap();
    let out = ddsim(&["run", bad_syntax.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1:22"), "{}", String::from_utf8_lossy(&out.stderr));

    let mut invalid = tempfile::Builder::new().suffix(".dds").tempfile().unwrap();
    writeln!(invalid, "type T {{ a: ptr int[2]; }}\npolicy T::p {{ include(a); exclude(a); }}").unwrap();
    assert_eq!(ddsim(&["check", invalid.path().to_str().unwrap()]).status.code(), Some(2));
}

fn keys_sorted(v: &Value) -> bool {
    match v {
        Value::Object(m) => {
            let keys: Vec<&String> = m.keys().collect();
            keys.windows(2).all(|w| w[0] < w[1]) && m.values().all(keys_sorted)
        }
        Value::Array(a) => a.iter().all(keys_sorted),
        _ => true,
    }
}

#[test]
fn json_is_key_sorted_and_stable() {
    for name in ["direction_override", "reductions", "unified_alloc"] {
        let file = corpus_file(name);
        let a = ddsim(&["run", &file, "--format", "json", "--trace"]).stdout;
        let b = ddsim(&["run", &file, "--format", "json", "--trace", "--seed", "99"]).stdout;
        assert_eq!(a, b, "{name}");
        let doc: Value = serde_json::from_slice(&a).unwrap();
        assert!(keys_sorted(&doc), "{name}");
        assert!(doc["events"].as_array().is_some_and(|e| !e.is_empty() || name == "reductions"));
    }
    let (_, doc) = json(&["run", &corpus_file("clean"), "--format", "json"]);
    assert!(doc.get("events").is_none());
}

#[test]
fn deterministic_reductions_flag() {
    let file = corpus_file("reductions");
    let (_, plain) = json(&["run", &file, "--format", "json"]);
    assert!(plain["reductions"].as_array().unwrap().iter().any(|r| r["bitwise_equal"] == false));
    let (_, det) = json(&["run", &file, "--format", "json", "--deterministic-reductions"]);
    for r in det["reductions"].as_array().unwrap() {
        assert_eq!(r["bitwise_equal"], true);
        assert_eq!(r["deterministic"], true);
        assert_eq!(r["value_bits"], r["oracle_bits"]);
    }
}

#[test]
fn text_trace_lists_events() {
    let out = ddsim(&["run", &corpus_file("direction_override"), "--trace"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("events:"));
    assert!(text.contains("CopyOut outer.s1.m2"));
    assert!(text.ends_with("exit 0\n"));
}
