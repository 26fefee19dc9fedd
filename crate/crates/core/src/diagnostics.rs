//! Coded findings and the static nesting checker.

use std::fmt;

use serde::Serialize;

use crate::dsl::{AccessKind, ElemKind, KernelBlock, Literal, NestKind, NestNode, SourceSpan};
use crate::memory::{Memory, SpaceTrait};
use crate::runtime::{DeviceDataEnv, HostCtx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Code {
    PartialDeepCopy,
    NotPresent,
    AliasOutOfBounds,
    RedundantLoop,
    IllegalNesting,
    Race,
    ForeignTeam,
    NullDeref,
    OutOfBounds,
    BadDeviceAddress,
    Overlap,
    AlreadyPresent,
    BadDeviceRange,
    NoAttachment,
    UnbalancedExit,
    Capacity,
    Shape,
    AssertionFailed,
    DeleteAbsent,
    ExcludedPresent,
    Nondeterministic,
    ForcedDetach,
    Invalid,
}

impl Code {
    pub const ALL: [Code; 23] = [
        Code::PartialDeepCopy,
        Code::NotPresent,
        Code::AliasOutOfBounds,
        Code::RedundantLoop,
        Code::IllegalNesting,
        Code::Race,
        Code::ForeignTeam,
        Code::NullDeref,
        Code::OutOfBounds,
        Code::BadDeviceAddress,
        Code::Overlap,
        Code::AlreadyPresent,
        Code::BadDeviceRange,
        Code::NoAttachment,
        Code::UnbalancedExit,
        Code::Capacity,
        Code::Shape,
        Code::AssertionFailed,
        Code::DeleteAbsent,
        Code::ExcludedPresent,
        Code::Nondeterministic,
        Code::ForcedDetach,
        Code::Invalid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Code::PartialDeepCopy => "E_PARTIAL_DEEPCOPY",
            Code::NotPresent => "E_NOT_PRESENT",
            Code::AliasOutOfBounds => "W_ALIAS_OOB",
            Code::RedundantLoop => "W_REDUNDANT_LOOP",
            Code::IllegalNesting => "E_ILLEGAL_NESTING",
            Code::Race => "W_RACE",
            Code::ForeignTeam => "E_FOREIGN_TEAM",
            Code::NullDeref => "E_NULL_DEREF",
            Code::OutOfBounds => "E_OUT_OF_BOUNDS",
            Code::BadDeviceAddress => "E_BAD_DEVICE_ADDRESS",
            Code::Overlap => "E_OVERLAP",
            Code::AlreadyPresent => "E_ALREADY_PRESENT",
            Code::BadDeviceRange => "E_BAD_DEVICE_RANGE",
            Code::NoAttachment => "E_NO_ATTACHMENT",
            Code::UnbalancedExit => "E_UNBALANCED_EXIT",
            Code::Capacity => "E_CAPACITY",
            Code::Shape => "E_SHAPE",
            Code::AssertionFailed => "E_ASSERTION",
            Code::DeleteAbsent => "W_DELETE_ABSENT",
            Code::ExcludedPresent => "I_EXCLUDED_PRESENT",
            Code::Nondeterministic => "I_NONDETERMINISTIC",
            Code::ForcedDetach => "I_FORCED_DETACH",
            Code::Invalid => "E_INVALID",
        }
    }

    /// Fixed severity, derived from the code's prefix.
    pub fn severity(self) -> Severity {
        match self.as_str().as_bytes()[0] {
            b'E' => Severity::Error,
            b'W' => Severity::Warning,
            _ => Severity::Info,
        }
    }

    /// The rule a finding enforces.
    pub fn rule(self) -> &'static str {
        match self {
            Code::PartialDeepCopy | Code::ExcludedPresent => "deep-copy",
            Code::NotPresent | Code::AlreadyPresent | Code::Overlap | Code::DeleteAbsent => "presence",
            Code::AliasOutOfBounds => "alias-offset",
            Code::RedundantLoop | Code::IllegalNesting => "omp-acc-nesting",
            Code::Race => "scalar-privatization",
            Code::ForeignTeam => "team-local-memory",
            Code::NullDeref | Code::OutOfBounds | Code::BadDeviceAddress => "device-access",
            Code::BadDeviceRange => "external-mapping",
            Code::NoAttachment | Code::ForcedDetach => "attach-detach",
            Code::UnbalancedExit => "reference-count",
            Code::Capacity => "space-capacity",
            Code::Shape => "shape-expression",
            Code::AssertionFailed => "assertion",
            Code::Nondeterministic => "reproducible-reduction",
            Code::Invalid => "validation",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Code {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: Code,
    pub severity: Severity,
    pub path: String,
    pub message: String,
    pub rule: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
}

impl Diagnostic {
    pub fn new(code: Code, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code,
            severity: code.severity(),
            path: path.into(),
            message: message.into(),
            rule: code.rule(),
            line: None,
        }
    }

    pub fn at(mut self, span: SourceSpan) -> Self {
        self.line = Some(span.line);
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        write!(f, "{} [{}] {}: {}", self.severity, self.code, self.path, self.message)
    }
}

/// Checks each kernel access against the device copy, in order. Accesses
/// that resolve are performed: reads load, writes store their literal (or
/// add one when no literal is given).
pub fn check_kernel_access(
    env: &DeviceDataEnv,
    block: &KernelBlock,
    ctx: HostCtx<'_>,
    mem: &mut Memory,
) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for access in &block.accesses {
        let path = &access.path.node;
        let place = match env.resolve_device(path, ctx, mem) {
            Ok(p) => p,
            Err(fault) => {
                out.push(Diagnostic::new(fault.code, fault.path, fault.message).at(access.path.span));
                continue;
            }
        };
        if let (Some(team), Some(space)) = (block.team, mem.space_of(place.addr)) {
            if let SpaceTrait::TeamLocal(owner) = mem.space(space).trait_ {
                if owner != team {
                    out.push(
                        Diagnostic::new(
                            Code::ForeignTeam,
                            path.to_string(),
                            format!("team {team} touches memory local to team {owner}"),
                        )
                        .at(access.path.span),
                    );
                    continue;
                }
            }
        }
        if access.kind == AccessKind::Read {
            continue;
        }
        let old = mem.read_u64(place.addr).expect("resolved device place");
        let new = match (place.elem, access.value) {
            (ElemKind::Int, Some(Literal::Int(v))) => v as u64,
            (ElemKind::Real, Some(Literal::Real(v))) => v.to_bits(),
            (ElemKind::Real, Some(Literal::Int(v))) => (v as f64).to_bits(),
            (ElemKind::Int, Some(Literal::Real(v))) => v as i64 as u64,
            (ElemKind::Int, None) => (old as i64).wrapping_add(1) as u64,
            (ElemKind::Real, None) => (f64::from_bits(old) + 1.0).to_bits(),
        };
        mem.write_u64(place.addr, new).expect("resolved device place");
    }
    out
}

/// Classifies a loop-nesting tree. Findings come out in preorder.
///
/// Every omp node below any acc node is illegal (the nearest acc ancestor is
/// the construct it escapes from). An `omp_parallel_do` whose immediate child
/// is a plain `acc loop` gets a redundancy warning.
pub fn check_nesting(tree: &NestNode) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    walk_nest(tree, &format!("0:{}", tree.kind.keyword()), None, &mut out);
    out
}

fn walk_nest(node: &NestNode, path: &str, acc_ancestor: Option<&str>, out: &mut Vec<Diagnostic>) {
    if node.kind.is_omp() {
        if let Some(acc) = acc_ancestor {
            out.push(Diagnostic::new(
                Code::IllegalNesting,
                path,
                format!("{} inside {acc}", node.kind.keyword()),
            ));
        }
    }
    let acc = if node.kind.is_acc() {
        Some(node.kind.keyword())
    } else {
        acc_ancestor
    };
    for (i, child) in node.children.iter().enumerate() {
        let child_path = format!("{path}/{i}:{}", child.kind.keyword());
        if node.kind == NestKind::OmpParallelDo && child.kind == NestKind::AccLoopPlain {
            out.push(Diagnostic::new(
                Code::RedundantLoop,
                &child_path,
                "acc loop without vector directly inside omp parallel do",
            ));
        }
        walk_nest(child, &child_path, acc, out);
    }
}
