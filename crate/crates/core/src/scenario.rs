//! Static validation: every name resolves, every path type-checks, every
//! command is well formed. A validated [`Scenario`] is ready to execute.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dsl::{
    AccessKind, AssertStmt, AssignValue, DeviceRef, ElemKind, IndexAst, Literal, LoopCmd, LoopItem, MapCommand,
    Parallelism, Path, PathStep, PolicyDecl, PolicyName, ReduceCmd, ReduceData, ScenarioAst, SourceSpan, Spanned,
    Statement, TraitAst, TypeDecl, VarTypeAst,
};
use crate::memory::{SpaceTrait, DEVICE_SPACE, HOST_SPACE};
use crate::policy::{PolicyError, PolicyTable};
use crate::types::{eval_const_shape, MemberKind, TypeDef, TypeError, TypeRegistry};

/// Upper bound on simulated loop iterations.
pub const MAX_LOOP_ITERATIONS: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub span: SourceSpan,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.span, self.message)
    }
}

impl From<TraitAst> for SpaceTrait {
    fn from(t: TraitAst) -> Self {
        match t {
            TraitAst::Default => SpaceTrait::Default,
            TraitAst::LargeCapacity => SpaceTrait::LargeCapacity,
            TraitAst::LowLatency => SpaceTrait::LowLatency,
            TraitAst::HighBandwidth => SpaceTrait::HighBandwidth,
            TraitAst::TeamLocal(n) => SpaceTrait::TeamLocal(n),
            TraitAst::UnifiedShared => SpaceTrait::UnifiedShared,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub ast: ScenarioAst,
    pub types: TypeRegistry,
    pub policies: PolicyTable,
}

/// Static type of a path.
#[derive(Debug, Clone, PartialEq)]
enum PathKind {
    Scalar(ElemKind),
    InlineArray(ElemKind, u64),
    Record(String),
    Pointer(MemberKind),
}

impl PathKind {
    fn record(&self) -> Option<&str> {
        match self {
            PathKind::Record(t) | PathKind::Pointer(MemberKind::RecordPointer(t)) => Some(t),
            _ => None,
        }
    }
}

struct Checker<'a> {
    types: &'a TypeRegistry,
    policies: &'a PolicyTable,
    spaces: BTreeSet<String>,
    devices: BTreeSet<String>,
    vars: BTreeMap<String, VarTypeAst>,
    errors: Vec<ValidationError>,
}

pub fn validate(name: &str, ast: ScenarioAst) -> Result<Scenario, Vec<ValidationError>> {
    let mut errors = Vec::new();
    let type_decls: Vec<(&TypeDecl, SourceSpan)> = ast
        .statements
        .iter()
        .filter_map(|s| match &s.node {
            Statement::Type(t) => Some((t, s.span)),
            _ => None,
        })
        .collect();
    let types = match TypeRegistry::build(type_decls.iter().map(|(t, _)| TypeDef::from(*t)).collect()) {
        Ok(r) => r,
        Err(errs) => {
            for e in errs {
                let span = type_error_span(&e, &type_decls);
                errors.push(ValidationError {
                    span,
                    message: e.to_string(),
                });
            }
            return Err(errors);
        }
    };
    let policy_decls: Vec<(&PolicyDecl, SourceSpan)> = ast
        .statements
        .iter()
        .filter_map(|s| match &s.node {
            Statement::Policy(p) => Some((p, s.span)),
            _ => None,
        })
        .collect();
    let policies = match PolicyTable::build(&policy_decls.iter().map(|(p, _)| *p).collect::<Vec<_>>(), &types) {
        Ok(t) => t,
        Err(errs) => {
            for e in errs {
                let owner = match &e {
                    PolicyError::UnknownPolicy { ty, .. }
                    | PolicyError::ConflictingClause { ty, .. }
                    | PolicyError::UnknownMember { ty, .. }
                    | PolicyError::UnknownType { ty, .. }
                    | PolicyError::ReservedName { ty } => ty.clone(),
                };
                let span = policy_decls
                    .iter()
                    .find(|(p, _)| p.owner.node == owner)
                    .map(|(_, s)| *s)
                    .unwrap_or_default();
                errors.push(ValidationError {
                    span,
                    message: e.to_string(),
                });
            }
            return Err(errors);
        }
    };
    let mut checker = Checker {
        types: &types,
        policies: &policies,
        spaces: BTreeSet::from([HOST_SPACE.to_string(), DEVICE_SPACE.to_string()]),
        devices: BTreeSet::new(),
        vars: BTreeMap::new(),
        errors,
    };
    for stmt in &ast.statements {
        checker.statement(stmt);
    }
    if checker.errors.is_empty() {
        Ok(Scenario {
            name: name.to_string(),
            ast,
            types,
            policies,
        })
    } else {
        Err(checker.errors)
    }
}

fn type_error_span(e: &TypeError, decls: &[(&TypeDecl, SourceSpan)]) -> SourceSpan {
    let named = match e {
        TypeError::DuplicateMember { ty, .. }
        | TypeError::BadShapeReference { ty, .. }
        | TypeError::BadAliasTarget { ty, .. }
        | TypeError::RecursiveEmbedding(ty) => Some(ty.as_str()),
        _ => None,
    };
    decls
        .iter()
        .find(|(d, _)| Some(d.name.node.as_str()) == named)
        .or_else(|| decls.first())
        .map(|(d, _)| d.name.span)
        .unwrap_or_default()
}

impl Checker<'_> {
    fn err(&mut self, span: SourceSpan, message: impl Into<String>) {
        self.errors.push(ValidationError {
            span,
            message: message.into(),
        });
    }

    fn path(&mut self, path: &Spanned<Path>) -> Option<PathKind> {
        match self.path_kind(&path.node) {
            Ok(k) => Some(k),
            Err(msg) => {
                self.err(path.span, msg);
                None
            }
        }
    }

    fn path_kind(&self, path: &Path) -> Result<PathKind, String> {
        let var = self
            .vars
            .get(&path.root)
            .ok_or_else(|| format!("unknown variable `{}`", path.root))?;
        let mut kind = match var {
            VarTypeAst::Scalar(e) => PathKind::Scalar(*e),
            VarTypeAst::Array(e, n) => PathKind::InlineArray(*e, *n),
            VarTypeAst::Record(t) => PathKind::Record(t.clone()),
        };
        for (n, step) in path.steps.iter().enumerate() {
            let here = path.prefix(n);
            kind = match (step, &kind) {
                (PathStep::Field(name), PathKind::Record(t) | PathKind::Pointer(MemberKind::RecordPointer(t))) => {
                    let ty = self.types.get(t).expect("validated type");
                    let member = ty
                        .member(name)
                        .ok_or_else(|| format!("type `{t}` has no member `{name}` (in `{path}`)"))?;
                    match &member.kind {
                        MemberKind::Scalar(e) => PathKind::Scalar(*e),
                        MemberKind::InlineArray { elem, shape } => {
                            PathKind::InlineArray(*elem, eval_const_shape(&shape.node).map_err(|e| e.to_string())?)
                        }
                        MemberKind::Record(t) => PathKind::Record(t.clone()),
                        other => PathKind::Pointer(other.clone()),
                    }
                }
                (PathStep::Index(i), PathKind::InlineArray(e, len)) => {
                    if i >= len {
                        return Err(format!("index {i} out of bounds for `{here}` of length {len}"));
                    }
                    PathKind::Scalar(*e)
                }
                (
                    PathStep::Index(_),
                    PathKind::Pointer(MemberKind::ShapedPointer { elem, .. } | MemberKind::AliasPointer { elem, .. }),
                ) => PathKind::Scalar(*elem),
                (PathStep::Field(name), _) => return Err(format!("`{here}` has no member `{name}`")),
                (PathStep::Index(_), _) => return Err(format!("`{here}` cannot be indexed")),
            };
        }
        Ok(kind)
    }

    fn pointer(&mut self, path: &Spanned<Path>) {
        if let Some(k) = self.path(path) {
            if !matches!(k, PathKind::Pointer(_)) {
                self.err(path.span, format!("`{}` is not a pointer member", path.node));
            }
        }
    }

    fn literal_fits(&mut self, span: SourceSpan, target: ElemKind, lit: Literal, what: &str) {
        if target == ElemKind::Int && matches!(lit, Literal::Real(_)) {
            self.err(span, format!("{what} is an int; cannot use real literal {lit}"));
        }
    }

    fn space(&mut self, name: &Spanned<String>) {
        if !self.spaces.contains(&name.node) {
            self.err(name.span, format!("unknown memory space `{}`", name.node));
        }
    }

    fn statement(&mut self, stmt: &Spanned<Statement>) {
        let span = stmt.span;
        match &stmt.node {
            Statement::Type(_) | Statement::Policy(_) => {}
            Statement::Space(s) => {
                if !self.spaces.insert(s.name.node.clone()) {
                    self.err(s.name.span, format!("memory space `{}` already exists", s.name.node));
                }
                if s.capacity == 0 {
                    self.err(s.name.span, format!("memory space `{}` needs a positive capacity", s.name.node));
                }
            }
            Statement::Var(v) => {
                if let VarTypeAst::Record(t) = &v.ty {
                    if self.types.get(t).is_none() {
                        self.err(v.name.span, format!("unknown type `{t}`"));
                    }
                }
                if let Some(s) = &v.space {
                    self.space(s);
                }
                if self.vars.insert(v.name.node.clone(), v.ty.clone()).is_some() {
                    self.err(v.name.span, format!("variable `{}` is declared twice", v.name.node));
                }
            }
            Statement::Assign(a) => {
                let Some(target) = self.path(&a.target) else { return };
                match (&target, &a.value) {
                    (PathKind::Scalar(e), AssignValue::Literal(lit)) => {
                        self.literal_fits(a.target.span, *e, *lit, &format!("`{}`", a.target.node))
                    }
                    (PathKind::Pointer(_), AssignValue::Null) => {}
                    (PathKind::Pointer(_), AssignValue::AddressOf(p)) => {
                        if let Err(m) = self.path_kind(p) {
                            self.err(span, m);
                        }
                    }
                    (PathKind::Pointer(_), AssignValue::PathOffset(p, _)) => match self.path_kind(p) {
                        Ok(PathKind::Pointer(_) | PathKind::InlineArray(..)) => {}
                        Ok(_) => self.err(span, format!("`{p}` is neither a pointer nor an array")),
                        Err(m) => self.err(span, m),
                    },
                    _ => self.err(span, format!("cannot assign that value to `{}`", a.target.node)),
                }
            }
            Statement::Alloc(p) => {
                if let Some(k) = self.path(p) {
                    if !matches!(k, PathKind::Pointer(MemberKind::ShapedPointer { .. } | MemberKind::RecordPointer(_))) {
                        self.err(p.span, format!("`{}` is not a shaped or record pointer", p.node));
                    }
                }
            }
            Statement::DeviceAlloc(d) => {
                self.space(&d.space);
                if !self.devices.insert(d.name.node.clone()) {
                    self.err(d.name.span, format!("device allocation `{}` is declared twice", d.name.node));
                }
            }
            Statement::Map(cmd) => self.map(cmd),
            Statement::Kernel(k) => {
                for access in &k.accesses {
                    match self.path(&access.path) {
                        Some(PathKind::Scalar(e)) => {
                            if let (AccessKind::Write, Some(lit)) = (access.kind, access.value) {
                                self.literal_fits(access.path.span, e, lit, &format!("`{}`", access.path.node));
                            }
                        }
                        Some(_) => self.err(access.path.span, format!("`{}` is not a scalar element", access.path.node)),
                        None => {}
                    }
                }
            }
            Statement::Reduce(r) => self.reduce(r, span),
            Statement::Loop(l) => self.loop_cmd(l, span),
            Statement::Nest(_) => {}
            Statement::Assert(a) => match a {
                AssertStmt::Present(p) | AssertStmt::Absent(p) => {
                    self.path(p);
                }
                AssertStmt::Value(p, lit) => match self.path(p) {
                    Some(PathKind::Scalar(e)) => self.literal_fits(p.span, e, *lit, &format!("`{}`", p.node)),
                    Some(_) => self.err(p.span, format!("`{}` is not a scalar", p.node)),
                    None => {}
                },
                AssertStmt::Attached(p) | AssertStmt::Detached(p) => self.pointer(p),
            },
        }
    }

    fn map(&mut self, cmd: &MapCommand) {
        match cmd {
            MapCommand::EnterData {
                path, policy, space, ..
            } => {
                let kind = self.path(path);
                if let Some(s) = space {
                    self.space(s);
                }
                if let (Some(kind), Some(policy)) = (kind, policy) {
                    match kind.record() {
                        Some(t) => {
                            if !self.policies.has(t, &policy.node) {
                                self.err(policy.span, format!("no policy `{}` declared for type `{t}`", policy.node));
                            }
                        }
                        None if policy.node == PolicyName::Default => {}
                        None => self.err(policy.span, format!("`{}` is not a record; policies apply to records", path.node)),
                    }
                }
            }
            MapCommand::ExitData { path, .. } | MapCommand::UpdateHost(path) | MapCommand::UpdateDevice(path) => {
                self.path(path);
            }
            MapCommand::Attach(p) | MapCommand::Detach(p) => self.pointer(p),
            MapCommand::MapExternal { path, device } => {
                self.path(path);
                if let DeviceRef::Named(name) = device {
                    if !self.devices.contains(&name.node) {
                        self.err(name.span, format!("unknown device allocation `{}`", name.node));
                    }
                }
            }
        }
    }

    fn reduce(&mut self, r: &ReduceCmd, span: SourceSpan) {
        if r.gangs == 0 || r.vector_length == 0 {
            self.err(span, "reductions need at least one gang and one vector lane");
        }
        let literals: Vec<Literal> = match &r.data {
            ReduceData::Vector(v) => {
                if r.dim.is_some() {
                    self.err(span, "`dim` applies only to matrix data");
                }
                v.clone()
            }
            ReduceData::Matrix(rows) => {
                if rows.iter().any(|row| row.len() != rows[0].len()) {
                    self.err(span, "matrix rows have different lengths");
                }
                if r.dim.unwrap_or(0) > 1 {
                    self.err(span, format!("reduction dimension {} out of range for a matrix", r.dim.unwrap_or(0)));
                }
                rows.iter().flatten().copied().collect()
            }
        };
        if r.kind == ElemKind::Int && literals.iter().any(|l| matches!(l, Literal::Real(_))) {
            self.err(span, "int reduction over real literals");
        }
    }

    fn loop_cmd(&mut self, l: &LoopCmd, span: SourceSpan) {
        let mut names = BTreeSet::new();
        let mut iterations: u64 = 1;
        for level in &l.levels {
            if !names.insert(level.var.node.as_str()) {
                self.err(level.var.span, format!("loop variable `{}` is used twice", level.var.node));
            }
            iterations = iterations.saturating_mul(level.extent);
        }
        for p in [Parallelism::Gang, Parallelism::Vector] {
            if l.levels.iter().filter(|x| x.parallelism == p).count() > 1 {
                self.err(span, format!("at most one {} level is allowed", p.keyword()));
            }
        }
        if iterations > MAX_LOOP_ITERATIONS {
            self.err(span, format!("loop runs {iterations} iterations; the limit is {MAX_LOOP_ITERATIONS}"));
        }
        for item in &l.body {
            match item {
                LoopItem::Access { indices, var, .. } => {
                    for ix in indices {
                        if let IndexAst::Var(v) = ix {
                            if !names.contains(v.as_str()) {
                                self.err(var.span, format!("index `{v}` is not a loop variable"));
                            }
                        }
                    }
                }
                LoopItem::Privatize { level: Some(level), .. } => {
                    if !names.contains(level.node.as_str()) {
                        self.err(level.span, format!("`{}` is not a loop variable", level.node));
                    }
                }
                LoopItem::Privatize { .. } => {}
            }
        }
    }
}
