//! Run reports: a key-sorted JSON document and a plain-text rendering.
//!
//! Nothing time- or platform-dependent goes in, so repeated runs of one
//! scenario produce byte-identical output.

use std::fmt::Write as _;

use serde_json::{json, Value as Json};

use crate::reduction::{Num, Target};
use crate::sim::{Mode, Simulation};

fn num(n: &Num) -> Json {
    match n {
        Num::Int(v) => json!(v.to_string()),
        Num::Real(v) => json!(format!("{v:?}")),
    }
}

fn bits(n: &Num) -> Json {
    json!(format!("{:#018x}", n.bits()))
}

fn target(t: Target) -> String {
    match t {
        Target::Scalar => "scalar".into(),
        Target::Array { dim } => format!("array(dim {dim})"),
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Run => "run",
        Mode::Check => "check",
    }
}

/// Machine report. `check` mode leaves out device state.
pub fn json_report(sim: &Simulation, trace: bool) -> Json {
    let reductions: Vec<Json> = sim
        .reductions
        .iter()
        .map(|r| {
            json!({
                "line": r.line,
                "op": r.op.keyword(),
                "kind": r.kind.name(),
                "target": target(r.target),
                "gangs": r.config.num_gangs,
                "vector_length": r.config.vector_length,
                "deterministic": r.config.deterministic,
                "grouping": r.grouping,
                "value": r.value.iter().map(num).collect::<Vec<_>>(),
                "value_bits": r.value.iter().map(bits).collect::<Vec<_>>(),
                "oracle": r.oracle.iter().map(num).collect::<Vec<_>>(),
                "oracle_bits": r.oracle.iter().map(bits).collect::<Vec<_>>(),
                "bitwise_equal": r.bitwise_equal,
            })
        })
        .collect();
    let assertions: Vec<Json> = sim
        .assertions
        .iter()
        .map(|a| json!({"line": a.line, "statement": a.statement, "passed": a.passed, "detail": a.detail}))
        .collect();
    let races: Vec<Json> = sim
        .races
        .iter()
        .map(|r| json!({"line": r.line, "findings": r.report.findings}))
        .collect();
    let mut doc = json!({
        "scenario": sim.scenario.name,
        "mode": mode_name(sim.options.mode),
        "exit_code": sim.exit_code(),
        "diagnostics": sim.diagnostics,
        "assertions": assertions,
        "reductions": reductions,
        "races": races,
    });
    if sim.options.mode == Mode::Run {
        let present: Vec<Json> = sim
            .env
            .entries()
            .map(|e| {
                json!({
                    "path": e.label,
                    "host": e.host_base,
                    "device": e.device_base,
                    "length": e.length,
                    "space": sim.mem.space(e.space).name,
                    "ref_count": e.ref_count,
                    "motion_out": e.motion_out,
                    "ownership": e.ownership,
                })
            })
            .collect();
        let spaces: Vec<Json> = sim
            .mem
            .spaces()
            .iter()
            .map(|s| {
                json!({
                    "name": s.name,
                    "trait": s.trait_.to_string(),
                    "capacity": s.capacity,
                    "allocated": s.allocated,
                    "base": s.base,
                })
            })
            .collect();
        doc["present_table"] = json!(present);
        doc["spaces"] = json!(spaces);
        if trace {
            doc["events"] = json!(sim.env.events());
        }
    }
    doc
}

pub fn json_text(sim: &Simulation, trace: bool) -> String {
    let mut s = serde_json::to_string_pretty(&json_report(sim, trace)).expect("serializable report");
    s.push('\n');
    s
}

pub fn text_report(sim: &Simulation, trace: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} ({})", sim.scenario.name, mode_name(sim.options.mode));
    if sim.diagnostics.is_empty() {
        let _ = writeln!(out, "no findings");
    } else {
        let _ = writeln!(out, "findings:");
    }
    for d in &sim.diagnostics {
        let _ = writeln!(out, "  {d}");
    }
    if !sim.assertions.is_empty() {
        let _ = writeln!(out, "assertions:");
    }
    for a in &sim.assertions {
        let status = if a.passed { "ok" } else { "FAILED" };
        let _ = writeln!(out, "  line {}: {} {status} ({})", a.line, a.statement, a.detail);
    }
    if !sim.reductions.is_empty() {
        let _ = writeln!(out, "reductions:");
    }
    for r in &sim.reductions {
        let values: Vec<String> = r.value.iter().map(Num::to_string).collect();
        let oracle: Vec<String> = r.oracle.iter().map(Num::to_string).collect();
        let _ = writeln!(
            out,
            "  line {}: {} {} {} gangs={} vector_length={}{} -> [{}] serial [{}] grouping {}{}",
            r.line,
            r.op.keyword(),
            r.kind.name(),
            target(r.target),
            r.config.num_gangs,
            r.config.vector_length,
            if r.config.deterministic { " deterministic" } else { "" },
            values.join(", "),
            oracle.join(", "),
            r.grouping,
            if r.bitwise_equal { "" } else { " (differs)" },
        );
    }
    if sim.options.mode == Mode::Run {
        let _ = writeln!(out, "present table:");
        for e in sim.env.entries() {
            let _ = writeln!(
                out,
                "  {} host {} -> {} {} len {} refs {}{}",
                e.label,
                e.host_base,
                sim.mem.space(e.space).name,
                e.device_base,
                e.length,
                e.ref_count,
                if e.motion_out { " copy-back" } else { "" }
            );
        }
        let _ = writeln!(out, "spaces:");
        for s in sim.mem.spaces() {
            let _ = writeln!(out, "  {} {} {}/{} bytes", s.name, s.trait_, s.allocated, s.capacity);
        }
        if trace {
            let _ = writeln!(out, "events:");
            for e in sim.env.events() {
                let counters = match (e.before, e.after) {
                    (Some(b), Some(a)) => format!(" {b}->{a}"),
                    (None, Some(a)) => format!(" ->{a}"),
                    _ => String::new(),
                };
                let dev = e.device.map(|d| format!(" dev {}+{}", d.start, d.len)).unwrap_or_default();
                let _ = writeln!(out, "  #{} {:?} {} [{}]{dev}{counters}", e.seq, e.op, e.path, e.space);
            }
        }
    }
    let _ = writeln!(out, "exit {}", sim.exit_code());
    out
}
