//! Syntax tree for `.dds` scenario files.
//!
//! Every node that carries a [`SourceSpan`] is wrapped in [`Spanned`], whose
//! equality ignores the span. Two trees are therefore equal when they have the
//! same structure, regardless of how the source was formatted.

use std::fmt;

/// 1-based source position plus token length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SourceSpan {
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl SourceSpan {
    pub fn new(line: u32, column: u32, length: u32) -> Self {
        Self {
            line: line.max(1),
            column: column.max(1),
            length: length.max(1),
        }
    }

    /// Span from the start of `self` to the end of `other`, when both are on
    /// one line; otherwise `self`.
    pub fn to(self, other: SourceSpan) -> SourceSpan {
        if self.line == other.line && other.column >= self.column {
            SourceSpan::new(self.line, self.column, other.column + other.length - self.column)
        } else {
            self
        }
    }
}

impl Default for SourceSpan {
    fn default() -> Self {
        Self::new(1, 1, 1)
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone)]
pub struct Spanned<T> {
    pub node: T,
    pub span: SourceSpan,
}

impl<T> Spanned<T> {
    pub fn new(node: T, span: SourceSpan) -> Self {
        Self { node, span }
    }
}

impl<T: PartialEq> PartialEq for Spanned<T> {
    fn eq(&self, other: &Self) -> bool {
        self.node == other.node
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

/// Element-count expression over integer literals and sibling members.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeExpr {
    Int(i64),
    Member(String),
    Binary {
        op: BinOp,
        lhs: Box<ShapeNode>,
        rhs: Box<ShapeNode>,
    },
    Paren(Box<ShapeNode>),
}

pub type ShapeNode = Spanned<ShapeExpr>;

impl ShapeExpr {
    /// Names of all members referenced by the expression, in source order.
    pub fn member_refs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ShapeExpr::Int(_) => {}
            ShapeExpr::Member(name) => out.push(name),
            ShapeExpr::Binary { lhs, rhs, .. } => {
                lhs.node.collect_refs(out);
                rhs.node.collect_refs(out);
            }
            ShapeExpr::Paren(inner) => inner.node.collect_refs(out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElemKind {
    Int,
    Real,
}

impl ElemKind {
    pub fn name(self) -> &'static str {
        match self {
            ElemKind::Int => "int",
            ElemKind::Real => "real",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MemberTypeAst {
    Scalar(ElemKind),
    Record(String),
    InlineArray(ElemKind, ShapeNode),
    ShapedPointer(ElemKind, ShapeNode),
    AliasPointer(ElemKind, String),
    RecordPointer(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberDecl {
    pub name: Spanned<String>,
    pub ty: MemberTypeAst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeDecl {
    pub name: Spanned<String>,
    pub members: Vec<MemberDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyName {
    Named(String),
    Default,
    Star,
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyName::Named(n) => f.write_str(n),
            PolicyName::Default => f.write_str("default"),
            PolicyName::Star => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClauseKind {
    Include,
    Exclude,
    In,
    Out,
    InOut,
    Create,
    NoCreate,
}

impl ClauseKind {
    pub fn keyword(self) -> &'static str {
        match self {
            ClauseKind::Include => "include",
            ClauseKind::Exclude => "exclude",
            ClauseKind::In => "in",
            ClauseKind::Out => "out",
            ClauseKind::InOut => "inout",
            ClauseKind::Create => "create",
            ClauseKind::NoCreate => "nocreate",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Some(match word {
            "include" => ClauseKind::Include,
            "exclude" => ClauseKind::Exclude,
            "in" => ClauseKind::In,
            "out" => ClauseKind::Out,
            "inout" => ClauseKind::InOut,
            "create" => ClauseKind::Create,
            "nocreate" => ClauseKind::NoCreate,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClauseAst {
    pub kind: ClauseKind,
    pub members: Vec<Spanned<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecl {
    pub owner: Spanned<String>,
    pub name: Spanned<PolicyName>,
    pub clauses: Vec<Spanned<ClauseAst>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraitAst {
    Default,
    LargeCapacity,
    LowLatency,
    HighBandwidth,
    TeamLocal(u32),
    UnifiedShared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceDecl {
    pub name: Spanned<String>,
    pub trait_: TraitAst,
    pub capacity: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarTypeAst {
    Scalar(ElemKind),
    Array(ElemKind, u64),
    Record(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: Spanned<String>,
    pub ty: VarTypeAst,
    pub space: Option<Spanned<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathStep {
    Field(String),
    Index(u64),
}

/// `var(.member | [index])*`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    pub root: String,
    pub steps: Vec<PathStep>,
}

impl Path {
    pub fn var(root: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            steps: Vec::new(),
        }
    }

    pub fn field(mut self, name: impl Into<String>) -> Self {
        self.steps.push(PathStep::Field(name.into()));
        self
    }

    pub fn index(mut self, i: u64) -> Self {
        self.steps.push(PathStep::Index(i));
        self
    }

    /// Path truncated to its first `n` steps.
    pub fn prefix(&self, n: usize) -> Path {
        Path {
            root: self.root.clone(),
            steps: self.steps[..n.min(self.steps.len())].to_vec(),
        }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.root)?;
        for step in &self.steps {
            match step {
                PathStep::Field(name) => write!(f, ".{name}")?,
                PathStep::Index(i) => write!(f, "[{i}]")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Literal {
    Int(i64),
    Real(f64),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(v) => write!(f, "{v}"),
            Literal::Real(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignValue {
    Literal(Literal),
    Null,
    AddressOf(Path),
    /// `path` or `path + n` / `path - n`; pointer arithmetic is in elements.
    PathOffset(Path, i64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assign {
    pub target: Spanned<Path>,
    pub value: AssignValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceAllocDecl {
    pub name: Spanned<String>,
    pub space: Spanned<String>,
    pub size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnterMotion {
    Copyin,
    Copy,
    Create,
    NoCreate,
}

impl EnterMotion {
    pub fn keyword(self) -> &'static str {
        match self {
            EnterMotion::Copyin => "copyin",
            EnterMotion::Copy => "copy",
            EnterMotion::Create => "create",
            EnterMotion::NoCreate => "nocreate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitMotion {
    Copyout,
    Delete,
    Release,
}

impl ExitMotion {
    pub fn keyword(self) -> &'static str {
        match self {
            ExitMotion::Copyout => "copyout",
            ExitMotion::Delete => "delete",
            ExitMotion::Release => "release",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceRef {
    Addr(u64),
    Named(Spanned<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapCommand {
    EnterData {
        motion: EnterMotion,
        path: Spanned<Path>,
        policy: Option<Spanned<PolicyName>>,
        space: Option<Spanned<String>>,
    },
    ExitData {
        motion: ExitMotion,
        path: Spanned<Path>,
    },
    UpdateHost(Spanned<Path>),
    UpdateDevice(Spanned<Path>),
    Attach(Spanned<Path>),
    Detach(Spanned<Path>),
    MapExternal {
        path: Spanned<Path>,
        device: DeviceRef,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelAccess {
    pub kind: AccessKind,
    pub path: Spanned<Path>,
    pub value: Option<Literal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBlock {
    pub team: Option<u32>,
    pub accesses: Vec<KernelAccess>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceOp {
    Sum,
    Product,
    Max,
    Min,
}

impl ReduceOp {
    pub fn keyword(self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Product => "product",
            ReduceOp::Max => "max",
            ReduceOp::Min => "min",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReduceData {
    Vector(Vec<Literal>),
    Matrix(Vec<Vec<Literal>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReduceCmd {
    pub op: ReduceOp,
    pub gangs: u64,
    pub vector_length: u64,
    pub kind: ElemKind,
    pub dim: Option<u64>,
    pub data: ReduceData,
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NestKind {
    OmpParallelDo,
    OmpSimd,
    AccParallelLoop,
    AccLoopVector,
    AccLoopPlain,
    PlainDo,
}

impl NestKind {
    pub const ALL: [NestKind; 6] = [
        NestKind::OmpParallelDo,
        NestKind::OmpSimd,
        NestKind::AccParallelLoop,
        NestKind::AccLoopVector,
        NestKind::AccLoopPlain,
        NestKind::PlainDo,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            NestKind::OmpParallelDo => "omp_parallel_do",
            NestKind::OmpSimd => "omp_simd",
            NestKind::AccParallelLoop => "acc_parallel_loop",
            NestKind::AccLoopVector => "acc_loop_vector",
            NestKind::AccLoopPlain => "acc_loop_plain",
            NestKind::PlainDo => "plain_do",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        NestKind::ALL.into_iter().find(|k| k.keyword() == word)
    }

    pub fn is_omp(self) -> bool {
        matches!(self, NestKind::OmpParallelDo | NestKind::OmpSimd)
    }

    pub fn is_acc(self) -> bool {
        matches!(
            self,
            NestKind::AccParallelLoop | NestKind::AccLoopVector | NestKind::AccLoopPlain
        )
    }

    /// acc constructs that open a new compute region.
    pub fn is_acc_compute(self) -> bool {
        matches!(self, NestKind::AccParallelLoop)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestNode {
    pub kind: NestKind,
    pub children: Vec<NestNode>,
}

impl NestNode {
    pub fn leaf(kind: NestKind) -> Self {
        Self {
            kind,
            children: Vec::new(),
        }
    }

    pub fn with(kind: NestKind, children: Vec<NestNode>) -> Self {
        Self { kind, children }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Gang,
    Vector,
    Sequential,
}

impl Parallelism {
    pub fn keyword(self) -> &'static str {
        match self {
            Parallelism::Gang => "gang",
            Parallelism::Vector => "vector",
            Parallelism::Sequential => "seq",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopLevelAst {
    pub var: Spanned<String>,
    pub parallelism: Parallelism,
    pub extent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IndexAst {
    Var(String),
    Const(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Privatization {
    None,
    Private,
    FirstPrivate,
    Reduction,
}

impl Privatization {
    pub fn keyword(self) -> &'static str {
        match self {
            Privatization::None => "none",
            Privatization::Private => "private",
            Privatization::FirstPrivate => "firstprivate",
            Privatization::Reduction => "reduction",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoopItem {
    Access {
        kind: AccessKind,
        var: Spanned<String>,
        indices: Vec<IndexAst>,
    },
    Privatize {
        kind: Privatization,
        var: Spanned<String>,
        level: Option<Spanned<String>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopCmd {
    pub levels: Vec<LoopLevelAst>,
    pub body: Vec<LoopItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssertStmt {
    Present(Spanned<Path>),
    Absent(Spanned<Path>),
    Value(Spanned<Path>, Literal),
    Attached(Spanned<Path>),
    Detached(Spanned<Path>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Type(TypeDecl),
    Policy(PolicyDecl),
    Space(SpaceDecl),
    Var(VarDecl),
    Assign(Assign),
    Alloc(Spanned<Path>),
    DeviceAlloc(DeviceAllocDecl),
    Map(MapCommand),
    Kernel(KernelBlock),
    Reduce(ReduceCmd),
    Loop(LoopCmd),
    Nest(NestNode),
    Assert(AssertStmt),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioAst {
    pub statements: Vec<Spanned<Statement>>,
}
