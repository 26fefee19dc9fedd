//! Race detection for loop bodies with unprivatized scalars.
//!
//! A thread is a (gang, lane) pair given by the values of the gang-level and
//! vector-level loop variables (0 when the level is absent); sequential
//! levels run inside a thread. Storage is modelled as:
//!
//! - a scalar with no clause or `firstprivate`: one copy per gang, shared by
//!   that gang's lanes;
//! - `private(x) at v`: one copy per gang when `v` is the gang level, one
//!   copy per lane otherwise (no `at` means the innermost parallel level);
//! - `reduction(x)`: never reported;
//! - array elements: one global location per index tuple.
//!
//! Two distinct threads conflict on a location when both write it
//! (write-write) or one writes and the other reads it (read-write).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::dsl::{AccessKind, IndexAst, LoopCmd, LoopItem, Parallelism, Privatization};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopLevel {
    pub var: String,
    pub parallelism: Parallelism,
    pub extent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyAccess {
    pub var: String,
    pub kind: AccessKind,
    pub indices: Vec<IndexAst>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoopSpec {
    pub levels: Vec<LoopLevel>,
    pub body: Vec<BodyAccess>,
    /// variable -> (clause, level variable it applies at)
    pub clauses: BTreeMap<String, (Privatization, Option<String>)>,
}

impl From<&LoopCmd> for LoopSpec {
    fn from(cmd: &LoopCmd) -> Self {
        let mut spec = LoopSpec {
            levels: cmd
                .levels
                .iter()
                .map(|l| LoopLevel {
                    var: l.var.node.clone(),
                    parallelism: l.parallelism,
                    extent: l.extent,
                })
                .collect(),
            ..Default::default()
        };
        for item in &cmd.body {
            match item {
                LoopItem::Access { kind, var, indices } => spec.body.push(BodyAccess {
                    var: var.node.clone(),
                    kind: *kind,
                    indices: indices.clone(),
                }),
                LoopItem::Privatize { kind, var, level } => {
                    spec.clauses
                        .insert(var.node.clone(), (*kind, level.as_ref().map(|l| l.node.clone())));
                }
            }
        }
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conflict {
    WriteWrite,
    ReadWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParLevel {
    Vector,
    Gang,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub variable: String,
    pub kind: Conflict,
    pub level: ParLevel,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ConflictReport {
    pub findings: Vec<Finding>,
}

/// A storage location under the model above.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Location {
    PerGang { var: String, gang: u64 },
    PerLane { var: String, gang: u64, lane: u64 },
    Element { var: String, index: Vec<i64> },
}

impl Location {
    pub fn var(&self) -> &str {
        match self {
            Location::PerGang { var, .. } | Location::PerLane { var, .. } | Location::Element { var, .. } => var,
        }
    }
}

pub type Thread = (u64, u64);

/// One dynamic access, in program order within its thread.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub thread: Thread,
    pub kind: AccessKind,
    pub location: Location,
}

impl LoopSpec {
    fn level_var(&self, p: Parallelism) -> Option<&str> {
        self.levels.iter().find(|l| l.parallelism == p).map(|l| l.var.as_str())
    }

    /// Every dynamic access the loop performs, in serial iteration order.
    /// Reduction variables are left out.
    pub fn trace(&self) -> Vec<Step> {
        let gang_var = self.level_var(Parallelism::Gang);
        let vector_var = self.level_var(Parallelism::Vector);
        let innermost_parallel = vector_var.or(gang_var);
        let mut out = Vec::new();
        if self.levels.iter().any(|l| l.extent == 0) {
            return out;
        }
        let mut counters = vec![0u64; self.levels.len()];
        loop {
            let value = |name: &str| {
                self.levels
                    .iter()
                    .position(|l| l.var == name)
                    .map(|i| counters[i])
            };
            let thread = (
                gang_var.and_then(value).unwrap_or(0),
                vector_var.and_then(value).unwrap_or(0),
            );
            for access in &self.body {
                let clause = self.clauses.get(&access.var);
                let location = if access.indices.is_empty() {
                    match clause {
                        Some((Privatization::Reduction, _)) => continue,
                        Some((Privatization::Private, at)) => {
                            let at = at.as_deref().or(innermost_parallel);
                            if at.is_some() && at == gang_var {
                                Location::PerGang {
                                    var: access.var.clone(),
                                    gang: thread.0,
                                }
                            } else {
                                Location::PerLane {
                                    var: access.var.clone(),
                                    gang: thread.0,
                                    lane: thread.1,
                                }
                            }
                        }
                        _ => Location::PerGang {
                            var: access.var.clone(),
                            gang: thread.0,
                        },
                    }
                } else {
                    if matches!(clause, Some((Privatization::Reduction, _))) {
                        continue;
                    }
                    Location::Element {
                        var: access.var.clone(),
                        index: access
                            .indices
                            .iter()
                            .map(|ix| match ix {
                                IndexAst::Const(c) => *c,
                                IndexAst::Var(v) => value(v).map(|x| x as i64).unwrap_or(0),
                            })
                            .collect(),
                    }
                };
                out.push(Step {
                    thread,
                    kind: access.kind,
                    location,
                });
            }
            // odometer, innermost level fastest
            let mut i = self.levels.len();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                counters[i] += 1;
                if counters[i] < self.levels[i].extent {
                    break;
                }
                counters[i] = 0;
            }
        }
    }
}

#[derive(Default)]
struct Touches {
    writers: BTreeSet<Thread>,
    readers: BTreeSet<Thread>,
}

pub fn detect_races(spec: &LoopSpec) -> ConflictReport {
    let mut locations: BTreeMap<Location, Touches> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for step in spec.trace() {
        if !order.iter().any(|v| v == step.location.var()) {
            order.push(step.location.var().to_string());
        }
        let t = locations.entry(step.location).or_default();
        match step.kind {
            AccessKind::Write => t.writers.insert(step.thread),
            AccessKind::Read => t.readers.insert(step.thread),
        };
    }
    // (var, level) -> strongest conflict seen
    let mut found: BTreeMap<(String, ParLevel), Conflict> = BTreeMap::new();
    let mut note = |var: &str, level, kind| {
        let slot = found.entry((var.to_string(), level)).or_insert(kind);
        *slot = (*slot).min(kind);
    };
    for (loc, t) in &locations {
        let var = loc.var();
        for a in &t.writers {
            for b in t.writers.range(..a) {
                note(var, if a.0 != b.0 { ParLevel::Gang } else { ParLevel::Vector }, Conflict::WriteWrite);
            }
        }
        for r in &t.readers {
            for w in t.writers.iter().filter(|w| *w != r) {
                note(var, if w.0 != r.0 { ParLevel::Gang } else { ParLevel::Vector }, Conflict::ReadWrite);
            }
        }
    }
    let mut findings = Vec::new();
    for var in &order {
        for level in [ParLevel::Vector, ParLevel::Gang] {
            if let Some(&kind) = found.get(&(var.clone(), level)) {
                findings.push(Finding {
                    variable: var.clone(),
                    kind,
                    level,
                    explanation: explain(spec, var, kind, level),
                });
            }
        }
    }
    ConflictReport { findings }
}

fn explain(spec: &LoopSpec, var: &str, kind: Conflict, level: ParLevel) -> String {
    let what = match kind {
        Conflict::WriteWrite => "write it",
        Conflict::ReadWrite => "read and write it",
    };
    let who = match level {
        ParLevel::Vector => "lanes of one gang",
        ParLevel::Gang => "different gangs",
    };
    let storage = match spec.clauses.get(var) {
        Some((Privatization::FirstPrivate, _)) => "`{var}` is firstprivate, which gives one copy per gang",
        Some((Privatization::Private, _)) => "`{var}` is private at the gang level only",
        _ if spec.body.iter().any(|a| a.var == var && a.indices.is_empty()) => {
            "`{var}` has no data clause, so it is one copy per gang"
        }
        _ => "`{var}` is shared storage",
    };
    format!("{}; {who} {what} concurrently", storage.replace("{var}", var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_scenario, Statement};

    fn spec(src: &str) -> LoopSpec {
        let ast = parse_scenario(src).unwrap();
        match &ast.statements[0].node {
            Statement::Loop(l) => LoopSpec::from(l),
            other => panic!("not a loop: {other:?}"),
        }
    }

    const TMP_LOOP: &str = "loop k: gang(4), i: vector(8) { write tmp; read tmp; write a[i, k]; }";

    #[test]
    fn shared_tmp_loop() {
        let r = detect_races(&spec(TMP_LOOP));
        assert_eq!(r.findings.len(), 1);
        let f = &r.findings[0];
        assert_eq!((f.variable.as_str(), f.kind, f.level), ("tmp", Conflict::WriteWrite, ParLevel::Vector));
    }

    #[test]
    fn privatized_at_vector() {
        let src = "loop k: gang(4), i: vector(8) { write tmp; read tmp; write a[i, k]; private(tmp) at i; }";
        assert!(detect_races(&spec(src)).findings.is_empty());
    }

    #[test]
    fn private_at_gang_still_races() {
        let src = "loop k: gang(4), i: vector(8) { write tmp; private(tmp) at k; }";
        assert_eq!(detect_races(&spec(src)).findings.len(), 1);
    }

    #[test]
    fn firstprivate_races() {
        let src = "loop k: gang(2), i: vector(2) { write tmp; firstprivate(tmp); }";
        assert_eq!(detect_races(&spec(src)).findings[0].level, ParLevel::Vector);
    }

    #[test]
    fn disjoint_writes() {
        let src = "loop k: gang(4), i: vector(8) { write a[i, k]; }";
        assert!(detect_races(&spec(src)).findings.is_empty());
    }

    #[test]
    fn reduction_suppresses() {
        let src = "loop k: gang(4), i: vector(8) { write s; reduction(s); }";
        assert!(detect_races(&spec(src)).findings.is_empty());
    }

    #[test]
    fn shared_element_across_gangs() {
        let src = "loop k: gang(3) { read a[0]; write a[k]; }";
        let r = detect_races(&spec(src));
        assert_eq!(r.findings.len(), 1);
        assert_eq!((r.findings[0].kind, r.findings[0].level), (Conflict::ReadWrite, ParLevel::Gang));
    }

    #[test]
    fn sequential_levels_stay_in_thread() {
        let src = "loop k: gang(2), j: seq(5) { write tmp; }";
        assert!(detect_races(&spec(src)).findings.is_empty());
    }
}
