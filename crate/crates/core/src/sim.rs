//! Executes a validated scenario statement by statement.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::diagnostics::{check_kernel_access, check_nesting, Code, Diagnostic, Severity};
use crate::dsl::{
    parse_scenario, AssertStmt, AssignValue, DeviceRef, ElemKind, Literal, MapCommand, ParseError,
    Path, PolicyName, ReduceCmd, ReduceData, ReduceOp, SourceSpan, Spanned, Statement, VarTypeAst,
};
use crate::memory::{BlockRole, Memory, SimAddress, SpaceId, SpaceTrait};
use crate::reduction::{
    detect_races, run_array_reduction, run_scalar_reduction, Conflict, ConflictReport, ExecConfig, LoopSpec, Num,
    ParLevel, ReductionSpec, Target,
};
use crate::runtime::{host_object, type_error_code, DeviceDataEnv, HostCtx, RuntimeError};
use crate::scenario::{validate, Scenario, ValidationError};
use crate::types::{PlaceKind, TypeError, Value, VarKind, Variables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Run,
    Check,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Options {
    pub mode: Mode,
    pub deterministic_reductions: bool,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    #[error("{} validation error(s); first at {}", .0.len(), .0[0])]
    Invalid(Vec<ValidationError>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertionOutcome {
    pub line: u32,
    pub statement: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRecord {
    pub line: u32,
    pub op: ReduceOp,
    pub kind: ElemKind,
    pub config: ExecConfig,
    pub target: Target,
    pub value: Vec<Num>,
    pub oracle: Vec<Num>,
    pub grouping: String,
    pub bitwise_equal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaceRecord {
    pub line: u32,
    pub report: ConflictReport,
}

pub struct Simulation {
    pub scenario: Scenario,
    pub options: Options,
    pub mem: Memory,
    pub vars: Variables,
    pub env: DeviceDataEnv,
    pub devices: BTreeMap<String, SimAddress>,
    pub diagnostics: Vec<Diagnostic>,
    pub assertions: Vec<AssertionOutcome>,
    pub reductions: Vec<ReductionRecord>,
    pub races: Vec<RaceRecord>,
    /// Host memory just before the first `enter_data`.
    pub host_before_enter: Option<BTreeMap<u64, Vec<u8>>>,
}

/// Parses, validates and runs `src` to completion.
pub fn run_source(name: &str, src: &str, options: Options) -> Result<Simulation, LoadError> {
    let ast = parse_scenario(src)?;
    let scenario = validate(name, ast).map_err(LoadError::Invalid)?;
    let mut sim = Simulation::new(scenario, options);
    sim.run();
    Ok(sim)
}

macro_rules! ctx {
    ($self:ident) => {
        HostCtx {
            types: &$self.scenario.types,
            policies: &$self.scenario.policies,
            vars: &$self.vars,
        }
    };
}

impl Simulation {
    pub fn new(scenario: Scenario, options: Options) -> Self {
        Self {
            scenario,
            options,
            mem: Memory::new(),
            vars: Variables::default(),
            env: DeviceDataEnv::default(),
            devices: BTreeMap::new(),
            diagnostics: Vec::new(),
            assertions: Vec::new(),
            reductions: Vec::new(),
            races: Vec::new(),
            host_before_enter: None,
        }
    }

    pub fn ctx(&self) -> HostCtx<'_> {
        ctx!(self)
    }

    pub fn run(&mut self) {
        let statements = std::mem::take(&mut self.scenario.ast.statements);
        for stmt in &statements {
            let start = self.diagnostics.len();
            self.step(stmt);
            for d in &mut self.diagnostics[start..] {
                d.line.get_or_insert(stmt.span.line);
                if self.options.mode == Mode::Check && d.code == Code::PartialDeepCopy {
                    d.severity = Severity::Warning;
                }
            }
        }
        self.scenario.ast.statements = statements;
    }

    /// Exit status under the current mode: 1 on failure, 0 otherwise.
    pub fn exit_code(&self) -> i32 {
        let failed = match self.options.mode {
            Mode::Run => {
                self.diagnostics.iter().any(|d| d.severity == Severity::Error) || self.assertions.iter().any(|a| !a.passed)
            }
            Mode::Check => self.diagnostics.iter().any(|d| d.code == Code::IllegalNesting),
        };
        i32::from(failed)
    }

    fn report_runtime(&mut self, e: RuntimeError, path: &Path) {
        let path = match &e {
            RuntimeError::NotPresent { path }
            | RuntimeError::Overlap { path }
            | RuntimeError::AlreadyPresent { path }
            | RuntimeError::BadDeviceRange { path, .. }
            | RuntimeError::NoAttachment { path } => path.clone(),
            _ => path.to_string(),
        };
        self.diagnostics.push(Diagnostic::new(e.code(), path, e.to_string()));
    }

    fn report_type(&mut self, e: TypeError, path: &Path) {
        self.diagnostics.push(Diagnostic::new(type_error_code(&e), path.to_string(), e.to_string()));
    }

    fn space_named(&self, name: &str) -> SpaceId {
        self.mem.space_by_name(name).expect("validated space")
    }

    pub fn step(&mut self, stmt: &Spanned<Statement>) {
        match &stmt.node {
            Statement::Type(_) | Statement::Policy(_) => {}
            Statement::Space(s) => {
                if let Err(e) = self.mem.create_space(&s.name.node, s.trait_.into(), s.capacity) {
                    self.diagnostics.push(Diagnostic::new(Code::Invalid, &s.name.node, e.to_string()));
                }
            }
            Statement::Var(v) => self.declare(&v.name.node, &v.ty, v.space.as_ref().map(|s| s.node.as_str())),
            Statement::Assign(a) => {
                if let Err(e) = self.assign(&a.target.node, &a.value) {
                    self.report_type(e, &a.target.node);
                }
            }
            Statement::Alloc(p) => self.alloc(&p.node),
            Statement::DeviceAlloc(d) => {
                let space = self.space_named(&d.space.node);
                match self.mem.alloc(space, d.size, BlockRole::Device) {
                    Ok(addr) => {
                        self.devices.insert(d.name.node.clone(), addr);
                    }
                    Err(e) => self.report_runtime(e.into(), &Path::var(&d.name.node)),
                }
            }
            Statement::Map(cmd) => self.map(cmd),
            Statement::Kernel(k) => {
                let ctx = ctx!(self);
                let found = check_kernel_access(&self.env, k, ctx, &mut self.mem);
                self.diagnostics.extend(found);
            }
            Statement::Reduce(r) => self.reduce(r, stmt.span),
            Statement::Loop(l) => {
                let report = detect_races(&LoopSpec::from(l));
                for f in &report.findings {
                    let kind = match f.kind {
                        Conflict::WriteWrite => "write-write",
                        Conflict::ReadWrite => "read-write",
                    };
                    let level = match f.level {
                        ParLevel::Vector => "vector",
                        ParLevel::Gang => "gang",
                    };
                    self.diagnostics.push(Diagnostic::new(
                        Code::Race,
                        &f.variable,
                        format!("{kind} conflict at {level} level: {}", f.explanation),
                    ));
                }
                self.races.push(RaceRecord {
                    line: stmt.span.line,
                    report,
                });
            }
            Statement::Nest(tree) => {
                self.diagnostics.extend(check_nesting(tree));
            }
            Statement::Assert(a) => {
                let (passed, detail) = self.assert(a);
                if !passed {
                    self.diagnostics
                        .push(Diagnostic::new(Code::AssertionFailed, describe_assert(a), detail.clone()));
                }
                self.assertions.push(AssertionOutcome {
                    line: stmt.span.line,
                    statement: describe_assert(a),
                    passed,
                    detail,
                });
            }
        }
    }

    fn declare(&mut self, name: &str, ty: &VarTypeAst, space: Option<&str>) {
        let kind = match ty {
            VarTypeAst::Scalar(e) => VarKind::Scalar(*e),
            VarTypeAst::Array(e, n) => VarKind::Array(*e, *n),
            VarTypeAst::Record(t) => VarKind::Record(t.clone()),
        };
        let space = space.map_or(self.mem.host(), |s| self.space_named(s));
        match self.vars.instantiate(name, kind, space, &self.scenario.types, &mut self.mem) {
            Ok(info) => {
                let (addr, size) = (info.addr, info.size);
                if self.mem.space(space).trait_ == SpaceTrait::UnifiedShared {
                    self.env.register_identity(name, addr, size, space, &self.mem);
                }
            }
            Err(e) => self.report_type(e, &Path::var(name)),
        }
    }

    fn assign(&mut self, target: &Path, value: &AssignValue) -> Result<(), TypeError> {
        let (types, mem) = (&self.scenario.types, &mut self.mem);
        let value = match value {
            AssignValue::Literal(Literal::Int(v)) => Value::Int(*v),
            AssignValue::Literal(Literal::Real(v)) => Value::Real(*v),
            AssignValue::Null => Value::Addr(SimAddress::NULL),
            AssignValue::AddressOf(p) => Value::Addr(self.vars.resolve(p, types, mem)?.addr),
            AssignValue::PathOffset(p, n) => {
                let place = self.vars.resolve(p, types, mem)?;
                let base = match place.kind {
                    PlaceKind::Pointer { .. } => SimAddress(mem.read_u64(place.addr)?),
                    _ => place.addr,
                };
                Value::Addr(base.shift(n * 8))
            }
        };
        self.vars.write_value(target, value, types, mem)
    }

    fn alloc(&mut self, path: &Path) {
        let result = self
            .vars
            .resolve(path, &self.scenario.types, &self.mem)
            .and_then(|place| {
                let space = self.mem.space_of(place.addr).unwrap_or(self.mem.host());
                let (addr, size) = self.vars.alloc_member(path, space, &self.scenario.types, &mut self.mem)?;
                Ok((space, addr, size))
            });
        match result {
            Ok((space, addr, size)) => {
                if self.mem.space(space).trait_ == SpaceTrait::UnifiedShared {
                    self.env.register_identity(&path.to_string(), addr, size, space, &self.mem);
                }
            }
            Err(e) => self.report_type(e, path),
        }
    }

    fn map(&mut self, cmd: &MapCommand) {
        let ctx = ctx!(self);
        let (result, path) = match cmd {
            MapCommand::EnterData {
                motion,
                path,
                policy,
                space,
            } => {
                if self.host_before_enter.is_none() {
                    self.host_before_enter = Some(self.mem.host_image());
                }
                let space = space
                    .as_ref()
                    .map_or(self.mem.device(), |s| self.mem.space_by_name(&s.node).expect("validated space"));
                let policy = policy.as_ref().map_or(PolicyName::Default, |p| p.node.clone());
                (
                    self.env
                        .enter_data(&path.node, *motion, &policy, space, ctx, &mut self.mem, &mut self.diagnostics),
                    path,
                )
            }
            MapCommand::ExitData { motion, path } => (
                self.env.exit_data(&path.node, *motion, ctx, &mut self.mem, &mut self.diagnostics),
                path,
            ),
            MapCommand::UpdateHost(path) => (self.env.update(&path.node, true, ctx, &mut self.mem), path),
            MapCommand::UpdateDevice(path) => (self.env.update(&path.node, false, ctx, &mut self.mem), path),
            MapCommand::Attach(path) => (self.env.attach(&path.node, ctx, &mut self.mem), path),
            MapCommand::Detach(path) => (self.env.detach(&path.node, ctx, &mut self.mem), path),
            MapCommand::MapExternal { path, device } => {
                let addr = match device {
                    DeviceRef::Addr(a) => SimAddress(*a),
                    DeviceRef::Named(n) => self.devices.get(&n.node).copied().unwrap_or(SimAddress::NULL),
                };
                (self.env.map_external(&path.node, addr, ctx, &self.mem), path)
            }
        };
        if let Err(e) = result {
            self.report_runtime(e, &path.node);
        }
    }

    fn reduce(&mut self, r: &ReduceCmd, span: SourceSpan) {
        let config = ExecConfig {
            num_gangs: r.gangs as usize,
            vector_length: r.vector_length as usize,
            deterministic: r.deterministic || self.options.deterministic_reductions,
        };
        let num = |l: &Literal| Num::from_literal(*l, r.kind).expect("validated literal kind");
        let record = match &r.data {
            ReduceData::Vector(v) => {
                let values: Vec<Num> = v.iter().map(num).collect();
                let spec = ReductionSpec {
                    op: r.op,
                    target: Target::Scalar,
                    kind: r.kind,
                };
                run_scalar_reduction(config, spec, &values).map(|o| ReductionRecord {
                    line: span.line,
                    op: r.op,
                    kind: r.kind,
                    config,
                    target: spec.target,
                    bitwise_equal: o.bitwise_equal(),
                    value: vec![o.value],
                    oracle: vec![o.oracle],
                    grouping: o.grouping,
                })
            }
            ReduceData::Matrix(rows) => {
                let matrix: Vec<Vec<Num>> = rows.iter().map(|row| row.iter().map(num).collect()).collect();
                let spec = ReductionSpec {
                    op: r.op,
                    target: Target::Array {
                        dim: r.dim.unwrap_or(0) as usize,
                    },
                    kind: r.kind,
                };
                run_array_reduction(config, spec, &matrix).map(|o| ReductionRecord {
                    line: span.line,
                    op: r.op,
                    kind: r.kind,
                    config,
                    target: spec.target,
                    bitwise_equal: o.bitwise_equal(),
                    value: o.value,
                    oracle: o.oracle,
                    grouping: o.grouping,
                })
            }
        };
        match record {
            Ok(rec) => {
                if !rec.bitwise_equal {
                    self.diagnostics.push(Diagnostic::new(
                        Code::Nondeterministic,
                        format!("reduce@{}", span.line),
                        format!(
                            "gang grouping {} gives {} but the serial order gives {}",
                            rec.grouping,
                            join(&rec.value),
                            join(&rec.oracle)
                        ),
                    ));
                }
                self.reductions.push(rec);
            }
            Err(e) => self
                .diagnostics
                .push(Diagnostic::new(Code::Invalid, format!("reduce@{}", span.line), e.to_string())),
        }
    }

    fn assert(&self, a: &AssertStmt) -> (bool, String) {
        let ctx = self.ctx();
        match a {
            AssertStmt::Present(p) | AssertStmt::Absent(p) => {
                let present = match host_object(&p.node, ctx, &self.mem) {
                    Ok(obj) => self.env.is_present(obj.base, obj.len),
                    Err(e) => return (false, e.to_string()),
                };
                let want = matches!(a, AssertStmt::Present(_));
                let state = if present { "present" } else { "absent" };
                (present == want, format!("`{}` is {state}", p.node))
            }
            AssertStmt::Value(p, lit) => match self.vars.read_value(&p.node, ctx.types, &self.mem) {
                Ok(v) => {
                    let ok = match (v, lit) {
                        (Value::Int(x), Literal::Int(y)) => x == *y,
                        (Value::Real(x), Literal::Real(y)) => x == *y,
                        (Value::Real(x), Literal::Int(y)) => x == *y as f64,
                        _ => false,
                    };
                    (ok, format!("host value of `{}` is {v}", p.node))
                }
                Err(e) => (false, e.to_string()),
            },
            AssertStmt::Attached(p) | AssertStmt::Detached(p) => {
                let attached = match self.vars.resolve(&p.node, ctx.types, &self.mem) {
                    Ok(place) => self
                        .env
                        .translate(place.addr)
                        .is_some_and(|site| self.env.attachment(site).is_some()),
                    Err(e) => return (false, e.to_string()),
                };
                let want = matches!(a, AssertStmt::Attached(_));
                let state = if attached { "attached" } else { "not attached" };
                (attached == want, format!("`{}` is {state}", p.node))
            }
        }
    }
}

fn join(values: &[Num]) -> String {
    let parts: Vec<String> = values.iter().map(Num::to_string).collect();
    if parts.len() == 1 {
        parts[0].clone()
    } else {
        format!("[{}]", parts.join(", "))
    }
}

fn describe_assert(a: &AssertStmt) -> String {
    match a {
        AssertStmt::Present(p) => format!("assert_present({})", p.node),
        AssertStmt::Absent(p) => format!("assert_absent({})", p.node),
        AssertStmt::Value(p, lit) => format!("assert_value({}, {lit})", p.node),
        AssertStmt::Attached(p) => format!("assert_attached({})", p.node),
        AssertStmt::Detached(p) => format!("assert_detached({})", p.node),
    }
}
