//! Recursive descent parser for scenario files.

use std::collections::HashMap;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;

pub type ParseResult<T> = Result<T, ParseError>;

const STATEMENT_KEYWORDS: &[&str] = &[
    "type",
    "policy",
    "space",
    "var",
    "alloc",
    "device_alloc",
    "enter_data",
    "exit_data",
    "update",
    "attach",
    "detach",
    "map_external",
    "kernel",
    "reduce",
    "loop",
    "nest",
    "assert_present",
    "assert_absent",
    "assert_value",
    "assert_attached",
    "assert_detached",
];

pub struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    pub fn new(src: &str) -> ParseResult<Self> {
        Ok(Self {
            tokens: tokenize(src)?,
            pos: 0,
        })
    }

    pub fn parse_scenario(&mut self) -> ParseResult<ScenarioAst> {
        let mut statements = Vec::new();
        let mut type_names: HashMap<String, SourceSpan> = HashMap::new();
        let mut policy_names: HashMap<(String, PolicyName), SourceSpan> = HashMap::new();

        while !self.at_eof() {
            let stmt = self.parse_statement()?;
            match &stmt.node {
                Statement::Type(decl) => {
                    if let Some(first) = type_names.get(&decl.name.node) {
                        return Err(ParseError::DuplicateName {
                            name: decl.name.node.clone(),
                            span: decl.name.span,
                            first: *first,
                        });
                    }
                    type_names.insert(decl.name.node.clone(), decl.name.span);
                }
                Statement::Policy(decl) => {
                    let key = (decl.owner.node.clone(), decl.name.node.clone());
                    if let Some(first) = policy_names.get(&key) {
                        return Err(ParseError::DuplicateName {
                            name: format!("{}::{}", key.0, key.1),
                            span: decl.name.span,
                            first: *first,
                        });
                    }
                    policy_names.insert(key, decl.name.span);
                }
                _ => {}
            }
            statements.push(stmt);
        }
        Ok(ScenarioAst { statements })
    }

    /// Parses a complete shape expression; trailing tokens are an error.
    pub fn parse_shape_only(&mut self) -> ParseResult<ShapeNode> {
        if self.at_eof() {
            return Err(self.unexpected("shape expression"));
        }
        let expr = self.parse_shape()?;
        if !self.at_eof() {
            return Err(self.unexpected("operator or end of expression"));
        }
        Ok(expr)
    }

    // ---- token plumbing ----

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let idx = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn span(&self) -> SourceSpan {
        self.tokens[self.pos].span
    }

    fn prev_span(&self) -> SourceSpan {
        self.tokens[self.pos.saturating_sub(1)].span
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if !matches!(t.tok, Tok::Eof) {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            span: self.span(),
            expected: expected.to_string(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> ParseResult<SourceSpan> {
        if *self.peek() == tok {
            Ok(self.bump().span)
        } else {
            Err(self.unexpected(what))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn is_word(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if self.is_word(word) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, word: &str) -> ParseResult<SourceSpan> {
        if self.is_word(word) {
            Ok(self.bump().span)
        } else {
            Err(self.unexpected(&format!("`{word}`")))
        }
    }

    fn ident(&mut self, what: &str) -> ParseResult<Spanned<String>> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let span = self.bump().span;
                Ok(Spanned::new(name, span))
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn uint(&mut self, what: &str) -> ParseResult<u64> {
        match *self.peek() {
            Tok::Int(v) if v >= 0 => {
                self.bump();
                Ok(v as u64)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn semi(&mut self) -> ParseResult<()> {
        self.expect(Tok::Semi, "`;`").map(|_| ())
    }

    fn opt_semi(&mut self) {
        self.eat(&Tok::Semi);
    }

    // ---- statements ----

    fn parse_statement(&mut self) -> ParseResult<Spanned<Statement>> {
        let start = self.span();
        let keyword = match self.peek() {
            Tok::Ident(word)
                if STATEMENT_KEYWORDS.contains(&word.as_str())
                    && !matches!(self.peek_at(1), Tok::Eq | Tok::Dot | Tok::LBracket) =>
            {
                Some(word.clone())
            }
            Tok::Ident(_) => None,
            _ => return Err(self.unexpected("statement")),
        };

        let stmt = match keyword.as_deref() {
            Some("type") => Statement::Type(self.parse_type_decl()?),
            Some("policy") => Statement::Policy(self.parse_policy_decl()?),
            Some("space") => Statement::Space(self.parse_space_decl()?),
            Some("var") => Statement::Var(self.parse_var_decl()?),
            Some("alloc") => {
                self.bump();
                let path = self.parse_path()?;
                self.semi()?;
                Statement::Alloc(path)
            }
            Some("device_alloc") => Statement::DeviceAlloc(self.parse_device_alloc()?),
            Some("enter_data") => Statement::Map(self.parse_enter()?),
            Some("exit_data") => Statement::Map(self.parse_exit()?),
            Some("update") => {
                self.bump();
                let to_host = if self.eat_word("host") {
                    true
                } else if self.eat_word("device") {
                    false
                } else {
                    return Err(self.unexpected("`host` or `device`"));
                };
                let path = self.paren_path()?;
                self.semi()?;
                Statement::Map(if to_host {
                    MapCommand::UpdateHost(path)
                } else {
                    MapCommand::UpdateDevice(path)
                })
            }
            Some("attach") => {
                self.bump();
                let path = self.paren_path()?;
                self.semi()?;
                Statement::Map(MapCommand::Attach(path))
            }
            Some("detach") => {
                self.bump();
                let path = self.paren_path()?;
                self.semi()?;
                Statement::Map(MapCommand::Detach(path))
            }
            Some("map_external") => Statement::Map(self.parse_map_external()?),
            Some("kernel") => Statement::Kernel(self.parse_kernel()?),
            Some("reduce") => Statement::Reduce(self.parse_reduce()?),
            Some("loop") => Statement::Loop(self.parse_loop()?),
            Some("nest") => {
                self.bump();
                let node = self.parse_nest_node()?;
                self.opt_semi();
                Statement::Nest(node)
            }
            Some(word) if word.starts_with("assert_") => Statement::Assert(self.parse_assert()?),
            _ => Statement::Assign(self.parse_assign()?),
        };
        Ok(Spanned::new(stmt, start.to(self.prev_span())))
    }

    fn parse_type_decl(&mut self) -> ParseResult<TypeDecl> {
        self.expect_word("type")?;
        let name = self.ident("type name")?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut members = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let mname = self.ident("member name or `}`")?;
            self.expect(Tok::Colon, "`:`")?;
            let ty = self.parse_member_type()?;
            self.semi()?;
            members.push(MemberDecl { name: mname, ty });
        }
        self.opt_semi();
        Ok(TypeDecl { name, members })
    }

    fn elem_kind(word: &str) -> Option<ElemKind> {
        match word {
            "int" => Some(ElemKind::Int),
            "real" => Some(ElemKind::Real),
            _ => None,
        }
    }

    fn parse_member_type(&mut self) -> ParseResult<MemberTypeAst> {
        if self.eat_word("ptr") {
            let base = self.ident("pointee type")?;
            return match Self::elem_kind(&base.node) {
                Some(elem) => match self.peek() {
                    Tok::LBracket => {
                        self.bump();
                        let shape = self.parse_shape()?;
                        self.expect(Tok::RBracket, "`]`")?;
                        Ok(MemberTypeAst::ShapedPointer(elem, shape))
                    }
                    Tok::At => {
                        self.bump();
                        let sibling = self.ident("sibling member name")?;
                        Ok(MemberTypeAst::AliasPointer(elem, sibling.node))
                    }
                    _ => Err(self.unexpected("`[` or `@`")),
                },
                None => {
                    if matches!(self.peek(), Tok::LBracket | Tok::At) {
                        return Err(self.unexpected("`;` (record pointers have count 1)"));
                    }
                    Ok(MemberTypeAst::RecordPointer(base.node))
                }
            };
        }

        let base = self.ident("member type")?;
        match Self::elem_kind(&base.node) {
            Some(elem) => {
                if self.eat(&Tok::LBracket) {
                    let shape = self.parse_shape()?;
                    self.expect(Tok::RBracket, "`]`")?;
                    Ok(MemberTypeAst::InlineArray(elem, shape))
                } else {
                    Ok(MemberTypeAst::Scalar(elem))
                }
            }
            None => {
                if matches!(self.peek(), Tok::LBracket) {
                    return Err(self.unexpected("`;` (arrays of records are not supported)"));
                }
                Ok(MemberTypeAst::Record(base.node))
            }
        }
    }

    fn parse_policy_decl(&mut self) -> ParseResult<PolicyDecl> {
        self.expect_word("policy")?;
        let owner = self.ident("type name")?;
        self.expect(Tok::ColonColon, "`::`")?;
        let name = self.parse_policy_name()?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut clauses = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let start = self.span();
            let word = self.ident("policy clause or `}`")?;
            let kind = ClauseKind::from_keyword(&word.node).ok_or_else(|| ParseError::Syntax {
                span: word.span,
                expected: "include, exclude, in, out, inout, create or nocreate".into(),
                found: format!("`{}`", word.node),
            })?;
            self.expect(Tok::LParen, "`(`")?;
            let mut members = vec![self.ident("member name")?];
            while self.eat(&Tok::Comma) {
                members.push(self.ident("member name")?);
            }
            self.expect(Tok::RParen, "`)`")?;
            let span = start.to(self.prev_span());
            self.semi()?;
            clauses.push(Spanned::new(ClauseAst { kind, members }, span));
        }
        self.opt_semi();
        Ok(PolicyDecl {
            owner,
            name,
            clauses,
        })
    }

    fn parse_policy_name(&mut self) -> ParseResult<Spanned<PolicyName>> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Star => {
                self.bump();
                Ok(Spanned::new(PolicyName::Star, span))
            }
            Tok::Ident(word) => {
                self.bump();
                let name = if word == "default" {
                    PolicyName::Default
                } else {
                    PolicyName::Named(word)
                };
                Ok(Spanned::new(name, span))
            }
            _ => Err(self.unexpected("policy name, `default` or `*`")),
        }
    }

    fn parse_space_decl(&mut self) -> ParseResult<SpaceDecl> {
        self.expect_word("space")?;
        let name = self.ident("space name")?;
        self.expect(Tok::Colon, "`:`")?;
        let word = self.ident("allocator trait")?;
        let trait_ = match word.node.as_str() {
            "default" => TraitAst::Default,
            "large_capacity" => TraitAst::LargeCapacity,
            "low_latency" => TraitAst::LowLatency,
            "high_bandwidth" => TraitAst::HighBandwidth,
            "unified_shared" => TraitAst::UnifiedShared,
            "team_local" => {
                self.expect(Tok::LParen, "`(`")?;
                let team = self.uint("team id")?;
                self.expect(Tok::RParen, "`)`")?;
                TraitAst::TeamLocal(u32::try_from(team).map_err(|_| ParseError::Syntax {
                    span: self.prev_span(),
                    expected: "team id below 2^32".into(),
                    found: team.to_string(),
                })?)
            }
            other => {
                return Err(ParseError::Syntax {
                    span: word.span,
                    expected: "default, large_capacity, low_latency, high_bandwidth, team_local(N) or unified_shared".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        self.expect_word("capacity")?;
        let capacity = self.uint("capacity in bytes")?;
        self.semi()?;
        Ok(SpaceDecl {
            name,
            trait_,
            capacity,
        })
    }

    fn parse_var_decl(&mut self) -> ParseResult<VarDecl> {
        self.expect_word("var")?;
        let name = self.ident("variable name")?;
        self.expect(Tok::Colon, "`:`")?;
        let base = self.ident("variable type")?;
        let ty = match Self::elem_kind(&base.node) {
            Some(elem) => {
                if self.eat(&Tok::LBracket) {
                    let len = self.uint("array length")?;
                    self.expect(Tok::RBracket, "`]`")?;
                    VarTypeAst::Array(elem, len)
                } else {
                    VarTypeAst::Scalar(elem)
                }
            }
            None => VarTypeAst::Record(base.node),
        };
        let space = if self.eat_word("in") {
            Some(self.ident("memory space name")?)
        } else {
            None
        };
        self.semi()?;
        Ok(VarDecl { name, ty, space })
    }

    fn parse_device_alloc(&mut self) -> ParseResult<DeviceAllocDecl> {
        self.expect_word("device_alloc")?;
        let name = self.ident("allocation name")?;
        self.expect_word("in")?;
        let space = self.ident("memory space name")?;
        let size = self.uint("size in bytes")?;
        self.semi()?;
        Ok(DeviceAllocDecl { name, space, size })
    }

    fn parse_path(&mut self) -> ParseResult<Spanned<Path>> {
        let root = self.ident("variable name")?;
        let mut path = Path::var(root.node);
        loop {
            match self.peek() {
                Tok::Dot => {
                    self.bump();
                    path.steps.push(PathStep::Field(self.ident("member name")?.node));
                }
                Tok::LBracket => {
                    self.bump();
                    let i = self.uint("non-negative index")?;
                    self.expect(Tok::RBracket, "`]`")?;
                    path.steps.push(PathStep::Index(i));
                }
                _ => break,
            }
        }
        Ok(Spanned::new(path, root.span.to(self.prev_span())))
    }

    fn paren_path(&mut self) -> ParseResult<Spanned<Path>> {
        self.expect(Tok::LParen, "`(`")?;
        let path = self.parse_path()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(path)
    }

    fn parse_enter(&mut self) -> ParseResult<MapCommand> {
        self.expect_word("enter_data")?;
        let word = self.ident("data motion")?;
        let motion = match word.node.as_str() {
            "copyin" => EnterMotion::Copyin,
            "copy" => EnterMotion::Copy,
            "create" => EnterMotion::Create,
            "nocreate" => EnterMotion::NoCreate,
            other => {
                return Err(ParseError::Syntax {
                    span: word.span,
                    expected: "copyin, copy, create or nocreate".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        let path = self.paren_path()?;
        let policy = if self.eat_word("policy") {
            self.expect(Tok::LParen, "`(`")?;
            let name = self.parse_policy_name()?;
            self.expect(Tok::RParen, "`)`")?;
            Some(name)
        } else {
            None
        };
        let space = if self.eat_word("in") {
            Some(self.ident("memory space name")?)
        } else {
            None
        };
        self.semi()?;
        Ok(MapCommand::EnterData {
            motion,
            path,
            policy,
            space,
        })
    }

    fn parse_exit(&mut self) -> ParseResult<MapCommand> {
        self.expect_word("exit_data")?;
        let word = self.ident("data motion")?;
        let motion = match word.node.as_str() {
            "copyout" => ExitMotion::Copyout,
            "delete" => ExitMotion::Delete,
            "release" => ExitMotion::Release,
            other => {
                return Err(ParseError::Syntax {
                    span: word.span,
                    expected: "copyout, delete or release".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        let path = self.paren_path()?;
        self.semi()?;
        Ok(MapCommand::ExitData { motion, path })
    }

    fn parse_map_external(&mut self) -> ParseResult<MapCommand> {
        self.expect_word("map_external")?;
        self.expect(Tok::LParen, "`(`")?;
        let path = self.parse_path()?;
        self.expect(Tok::Comma, "`,`")?;
        let device = match self.peek().clone() {
            Tok::Int(v) if v >= 0 => {
                self.bump();
                DeviceRef::Addr(v as u64)
            }
            Tok::Ident(_) => DeviceRef::Named(self.ident("device allocation")?),
            _ => return Err(self.unexpected("device address or allocation name")),
        };
        self.expect(Tok::RParen, "`)`")?;
        self.semi()?;
        Ok(MapCommand::MapExternal { path, device })
    }

    fn parse_literal(&mut self) -> ParseResult<Literal> {
        let negative = self.eat(&Tok::Minus);
        let lit = match *self.peek() {
            Tok::Int(v) => Literal::Int(if negative { -v } else { v }),
            Tok::Real(v) => Literal::Real(if negative { -v } else { v }),
            _ => return Err(self.unexpected("literal")),
        };
        self.bump();
        Ok(lit)
    }

    fn parse_kernel(&mut self) -> ParseResult<KernelBlock> {
        self.expect_word("kernel")?;
        let team = if self.eat_word("team") {
            self.expect(Tok::LParen, "`(`")?;
            let t = self.uint("team id")?;
            self.expect(Tok::RParen, "`)`")?;
            Some(t as u32)
        } else {
            None
        };
        self.expect(Tok::LBrace, "`{`")?;
        let mut accesses = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let kind = if self.eat_word("reads") {
                AccessKind::Read
            } else if self.eat_word("writes") {
                AccessKind::Write
            } else {
                return Err(self.unexpected("`reads`, `writes` or `}`"));
            };
            self.expect(Tok::LParen, "`(`")?;
            let path = self.parse_path()?;
            let value = if kind == AccessKind::Write && self.eat(&Tok::Comma) {
                Some(self.parse_literal()?)
            } else {
                None
            };
            self.expect(Tok::RParen, "`)`")?;
            self.semi()?;
            accesses.push(KernelAccess { kind, path, value });
        }
        self.opt_semi();
        Ok(KernelBlock { team, accesses })
    }

    fn parse_literal_list(&mut self) -> ParseResult<Vec<Literal>> {
        self.expect(Tok::LBracket, "`[`")?;
        let mut out = Vec::new();
        if self.eat(&Tok::RBracket) {
            return Ok(out);
        }
        loop {
            out.push(self.parse_literal()?);
            if self.eat(&Tok::RBracket) {
                return Ok(out);
            }
            self.expect(Tok::Comma, "`,` or `]`")?;
        }
    }

    fn parse_reduce(&mut self) -> ParseResult<ReduceCmd> {
        self.expect_word("reduce")?;
        self.expect(Tok::LParen, "`(`")?;
        let word = self.ident("reduction operator")?;
        let op = match word.node.as_str() {
            "sum" => ReduceOp::Sum,
            "product" => ReduceOp::Product,
            "max" => ReduceOp::Max,
            "min" => ReduceOp::Min,
            other => {
                return Err(ParseError::Syntax {
                    span: word.span,
                    expected: "sum, product, max or min".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        self.expect(Tok::Comma, "`,`")?;
        let gangs = self.uint("gang count")?;
        self.expect(Tok::Comma, "`,`")?;
        let vector_length = self.uint("vector length")?;
        self.expect(Tok::Comma, "`,`")?;
        let kind_word = self.ident("`int` or `real`")?;
        let kind = Self::elem_kind(&kind_word.node).ok_or_else(|| ParseError::Syntax {
            span: kind_word.span,
            expected: "`int` or `real`".into(),
            found: format!("`{}`", kind_word.node),
        })?;
        let dim = if self.eat_word("dim") {
            Some(self.uint("dimension index")?)
        } else {
            None
        };
        let data = if matches!(self.peek(), Tok::LBracket) && matches!(self.peek_at(1), Tok::LBracket) {
            self.bump();
            let mut rows = vec![self.parse_literal_list()?];
            while self.eat(&Tok::Comma) {
                rows.push(self.parse_literal_list()?);
            }
            self.expect(Tok::RBracket, "`]`")?;
            ReduceData::Matrix(rows)
        } else {
            ReduceData::Vector(self.parse_literal_list()?)
        };
        let deterministic = if self.eat(&Tok::Comma) {
            self.expect_word("deterministic")?;
            true
        } else {
            false
        };
        self.expect(Tok::RParen, "`)`")?;
        self.semi()?;
        Ok(ReduceCmd {
            op,
            gangs,
            vector_length,
            kind,
            dim,
            data,
            deterministic,
        })
    }

    fn parse_loop(&mut self) -> ParseResult<LoopCmd> {
        self.expect_word("loop")?;
        let mut levels = Vec::new();
        loop {
            let var = self.ident("loop variable")?;
            self.expect(Tok::Colon, "`:`")?;
            let par_word = self.ident("gang, vector or seq")?;
            let parallelism = match par_word.node.as_str() {
                "gang" => Parallelism::Gang,
                "vector" => Parallelism::Vector,
                "seq" => Parallelism::Sequential,
                other => {
                    return Err(ParseError::Syntax {
                        span: par_word.span,
                        expected: "gang, vector or seq".into(),
                        found: format!("`{other}`"),
                    })
                }
            };
            self.expect(Tok::LParen, "`(`")?;
            let extent = self.uint("loop extent")?;
            self.expect(Tok::RParen, "`)`")?;
            levels.push(LoopLevelAst {
                var,
                parallelism,
                extent,
            });
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::LBrace, "`{`")?;
        let mut body = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let word = self.ident("loop body item or `}`")?;
            let item = match word.node.as_str() {
                "read" | "write" => {
                    let kind = if word.node == "read" {
                        AccessKind::Read
                    } else {
                        AccessKind::Write
                    };
                    let var = self.ident("variable name")?;
                    let mut indices = Vec::new();
                    if self.eat(&Tok::LBracket) {
                        loop {
                            indices.push(match self.peek().clone() {
                                Tok::Ident(name) => {
                                    self.bump();
                                    IndexAst::Var(name)
                                }
                                Tok::Int(v) => {
                                    self.bump();
                                    IndexAst::Const(v)
                                }
                                _ => return Err(self.unexpected("loop variable or integer")),
                            });
                            if self.eat(&Tok::RBracket) {
                                break;
                            }
                            self.expect(Tok::Comma, "`,` or `]`")?;
                        }
                    }
                    LoopItem::Access { kind, var, indices }
                }
                "private" | "firstprivate" | "reduction" => {
                    let kind = match word.node.as_str() {
                        "private" => Privatization::Private,
                        "firstprivate" => Privatization::FirstPrivate,
                        _ => Privatization::Reduction,
                    };
                    self.expect(Tok::LParen, "`(`")?;
                    let var = self.ident("variable name")?;
                    self.expect(Tok::RParen, "`)`")?;
                    let level = if self.eat_word("at") {
                        Some(self.ident("loop variable")?)
                    } else {
                        None
                    };
                    LoopItem::Privatize { kind, var, level }
                }
                other => {
                    return Err(ParseError::Syntax {
                        span: word.span,
                        expected: "read, write, private, firstprivate or reduction".into(),
                        found: format!("`{other}`"),
                    })
                }
            };
            self.semi()?;
            body.push(item);
        }
        self.opt_semi();
        Ok(LoopCmd { levels, body })
    }

    fn parse_nest_node(&mut self) -> ParseResult<NestNode> {
        let word = self.ident("loop construct kind")?;
        let kind = NestKind::from_keyword(&word.node).ok_or_else(|| ParseError::Syntax {
            span: word.span,
            expected: "omp_parallel_do, omp_simd, acc_parallel_loop, acc_loop_vector, acc_loop_plain or plain_do".into(),
            found: format!("`{}`", word.node),
        })?;
        let mut children = Vec::new();
        if self.eat(&Tok::LBrace) {
            while !self.eat(&Tok::RBrace) {
                children.push(self.parse_nest_node()?);
                self.eat(&Tok::Comma);
            }
        }
        Ok(NestNode { kind, children })
    }

    fn parse_assert(&mut self) -> ParseResult<AssertStmt> {
        let word = self.ident("assertion")?;
        let stmt = match word.node.as_str() {
            "assert_present" => AssertStmt::Present(self.paren_path()?),
            "assert_absent" => AssertStmt::Absent(self.paren_path()?),
            "assert_attached" => AssertStmt::Attached(self.paren_path()?),
            "assert_detached" => AssertStmt::Detached(self.paren_path()?),
            "assert_value" => {
                self.expect(Tok::LParen, "`(`")?;
                let path = self.parse_path()?;
                self.expect(Tok::Comma, "`,`")?;
                let lit = self.parse_literal()?;
                self.expect(Tok::RParen, "`)`")?;
                AssertStmt::Value(path, lit)
            }
            other => {
                return Err(ParseError::Syntax {
                    span: word.span,
                    expected: "assertion".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        self.semi()?;
        Ok(stmt)
    }

    fn parse_assign(&mut self) -> ParseResult<Assign> {
        let target = self.parse_path()?;
        self.expect(Tok::Eq, "`=`")?;
        let value = match self.peek().clone() {
            Tok::Int(_) | Tok::Real(_) | Tok::Minus => AssignValue::Literal(self.parse_literal()?),
            Tok::Amp => {
                self.bump();
                AssignValue::AddressOf(self.parse_path()?.node)
            }
            Tok::Ident(word) if word == "null" => {
                self.bump();
                AssignValue::Null
            }
            Tok::Ident(_) => {
                let path = self.parse_path()?.node;
                let offset = match self.peek() {
                    Tok::Plus | Tok::Minus => {
                        let negative = matches!(self.bump().tok, Tok::Minus);
                        let n = self.uint("element offset")? as i64;
                        if negative {
                            -n
                        } else {
                            n
                        }
                    }
                    _ => 0,
                };
                AssignValue::PathOffset(path, offset)
            }
            _ => return Err(self.unexpected("value")),
        };
        self.semi()?;
        Ok(Assign { target, value })
    }

    // ---- shape expressions ----

    fn parse_shape(&mut self) -> ParseResult<ShapeNode> {
        let mut lhs = self.parse_term()?;
        while let Some(op) = match self.peek() {
            Tok::Plus => Some(BinOp::Add),
            Tok::Minus => Some(BinOp::Sub),
            _ => None,
        } {
            let op_span = self.bump().span;
            let rhs = self.parse_operand(op_span, Self::parse_term)?;
            lhs = binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> ParseResult<ShapeNode> {
        let mut lhs = self.parse_factor()?;
        while let Some(op) = match self.peek() {
            Tok::Star => Some(BinOp::Mul),
            Tok::Slash => Some(BinOp::Div),
            _ => None,
        } {
            let op_span = self.bump().span;
            let rhs = self.parse_operand(op_span, Self::parse_factor)?;
            lhs = binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    /// Right operand of a binary operator. A missing operand is reported at
    /// the dangling operator.
    fn parse_operand(
        &mut self,
        op_span: SourceSpan,
        f: fn(&mut Self) -> ParseResult<ShapeNode>,
    ) -> ParseResult<ShapeNode> {
        if !matches!(self.peek(), Tok::Int(_) | Tok::Ident(_) | Tok::LParen) {
            return Err(ParseError::Syntax {
                span: op_span,
                expected: "factor".into(),
                found: self.peek().describe(),
            });
        }
        f(self)
    }

    fn parse_factor(&mut self) -> ParseResult<ShapeNode> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Spanned::new(ShapeExpr::Int(v), span))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(Spanned::new(ShapeExpr::Member(name), span))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.parse_shape()?;
                let close = self.expect(Tok::RParen, "`)`")?;
                Ok(Spanned::new(ShapeExpr::Paren(Box::new(inner)), span.to(close)))
            }
            Tok::Real(_) => Err(ParseError::Syntax {
                span,
                expected: "integer literal".into(),
                found: self.peek().describe(),
            }),
            _ => Err(self.unexpected("factor")),
        }
    }
}

fn binary(op: BinOp, lhs: ShapeNode, rhs: ShapeNode) -> ShapeNode {
    let span = lhs.span.to(rhs.span);
    Spanned::new(
        ShapeExpr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        },
        span,
    )
}
