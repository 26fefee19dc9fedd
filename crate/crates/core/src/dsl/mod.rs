//! The `.dds` scenario language: lexer, parser, pretty-printer.
//!
//! ```text
//! stmt      := typedecl | policydecl | spacedecl | vardecl | assign | alloc
//!            | devalloc | cmd
//! typedecl  := "type" ID "{" { ID ":" mtype ";" } "}"
//! mtype     := "int" | "real" | ID
//!            | ("int"|"real") "[" shape "]"          inline array
//!            | "ptr" ("int"|"real") "[" shape "]"    shaped pointer
//!            | "ptr" ("int"|"real") "@" ID           alias into a sibling pointer
//!            | "ptr" ID                              pointer to one record
//! shape     := term { ("+"|"-") term }
//! term      := factor { ("*"|"/") factor }
//! factor    := INT | ID | "(" shape ")"
//! policydecl:= "policy" ID "::" (ID|"*") "{" { pclause ";" } "}"
//! pclause   := ("include"|"exclude"|"in"|"out"|"inout"|"create"|"nocreate")
//!              "(" ID {"," ID} ")"
//! spacedecl := "space" ID ":" trait "capacity" INT ";"
//! trait     := "default" | "large_capacity" | "low_latency" | "high_bandwidth"
//!            | "team_local" "(" INT ")" | "unified_shared"
//! vardecl   := "var" ID ":" vtype [ "in" ID ] ";"
//! vtype     := "int" | "real" | ("int"|"real") "[" INT "]" | ID
//! assign    := path "=" ( literal | "null" | "&" path | path [("+"|"-") INT] ) ";"
//! alloc     := "alloc" path ";"
//! devalloc  := "device_alloc" ID "in" ID INT ";"
//! path      := ID { "." ID | "[" INT "]" }
//! cmd       := "enter_data" emotion "(" path ")" [ "policy" "(" pname ")" ] [ "in" ID ] ";"
//!            | "exit_data" ("copyout"|"delete"|"release") "(" path ")" ";"
//!            | "update" ("host"|"device") "(" path ")" ";"
//!            | ("attach"|"detach") "(" path ")" ";"
//!            | "map_external" "(" path "," (INT|ID) ")" ";"
//!            | "kernel" [ "team" "(" INT ")" ] "{" { access ";" } "}"
//!            | "reduce" "(" op "," INT "," INT "," ("int"|"real") [ "dim" INT ]
//!              data [ "," "deterministic" ] ")" ";"
//!            | "loop" level { "," level } "{" { item ";" } "}"
//!            | "nest" node [ ";" ]
//!            | ("assert_present"|"assert_absent"|"assert_attached"|"assert_detached")
//!              "(" path ")" ";"
//!            | "assert_value" "(" path "," literal ")" ";"
//! emotion   := "copyin" | "copy" | "create" | "nocreate"
//! pname     := ID | "default" | "*"
//! access    := ("reads" "(" path ")") | ("writes" "(" path [ "," literal ] ")")
//! op        := "sum" | "product" | "max" | "min"
//! data      := "[" literals "]" | "[" "[" literals "]" { "," "[" literals "]" } "]"
//! level     := ID ":" ("gang"|"vector"|"seq") "(" INT ")"
//! item      := ("read"|"write") ID [ "[" idx { "," idx } "]" ]
//!            | ("private"|"firstprivate"|"reduction") "(" ID ")" [ "at" ID ]
//! node      := kind [ "{" { node [","] } "}" ]
//! ```
//!
//! `#` starts a comment that runs to the end of the line. A `;` after a
//! statement that ends in `}` is optional.

pub mod ast;
mod lexer;
mod parser;
mod pretty;

use thiserror::Error;

pub use ast::*;
pub use parser::Parser;
pub use pretty::{pretty_print, print_nest, print_shape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("{span}: expected {expected}, found {found}")]
    Syntax {
        span: SourceSpan,
        expected: String,
        found: String,
    },
    #[error("{span}: duplicate declaration of `{name}` (first declared at {first})")]
    DuplicateName {
        name: String,
        span: SourceSpan,
        first: SourceSpan,
    },
}

impl ParseError {
    pub fn span(&self) -> SourceSpan {
        match self {
            ParseError::Syntax { span, .. } | ParseError::DuplicateName { span, .. } => *span,
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioAst, ParseError> {
    Parser::new(text)?.parse_scenario()
}

pub fn parse_shape_expr(text: &str) -> Result<ShapeNode, ParseError> {
    Parser::new(text)?.parse_shape_only()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(name: &str) -> ShapeExpr {
        ShapeExpr::Member(name.into())
    }

    fn bin(op: BinOp, lhs: ShapeExpr, rhs: ShapeExpr) -> ShapeExpr {
        ShapeExpr::Binary {
            op,
            lhs: Box::new(Spanned::new(lhs, SourceSpan::default())),
            rhs: Box::new(Spanned::new(rhs, SourceSpan::default())),
        }
    }

    #[test]
    fn minimal_type_declaration() {
        let ast = parse_scenario("type T { n: int; }").unwrap();
        assert_eq!(ast.statements.len(), 1);
        match &ast.statements[0].node {
            Statement::Type(decl) => {
                assert_eq!(decl.name.node, "T");
                assert_eq!(decl.members.len(), 1);
                assert_eq!(decl.members[0].name.node, "n");
                assert_eq!(decl.members[0].ty, MemberTypeAst::Scalar(ElemKind::Int));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn include_and_exclude_of_same_member_parses() {
        let ast = parse_scenario("policy T::p { include(a); exclude(a); }").unwrap();
        let Statement::Policy(decl) = &ast.statements[0].node else {
            panic!("not a policy");
        };
        assert_eq!(decl.clauses.len(), 2);
        assert_eq!(decl.clauses[0].node.kind, ClauseKind::Include);
        assert_eq!(decl.clauses[1].node.kind, ClauseKind::Exclude);
    }

    #[test]
    fn dangling_operator_in_member_shape() {
        let err = parse_scenario("type T { x: ptr int[n*]; }").unwrap_err();
        match err {
            ParseError::Syntax {
                span, expected, found, ..
            } => {
                // `type T { x: ptr int[n*]; }`: the `*` is column 22
                assert_eq!(span, SourceSpan::new(1, 22, 1));
                assert_eq!(expected, "factor");
                assert_eq!(found, "`]`");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shape_precedence() {
        assert_eq!(
            parse_shape_expr("nb_edges*2").unwrap().node,
            bin(BinOp::Mul, member("nb_edges"), ShapeExpr::Int(2))
        );
        let paren = ShapeExpr::Paren(Box::new(Spanned::new(
            bin(BinOp::Add, member("n"), ShapeExpr::Int(1)),
            SourceSpan::default(),
        )));
        assert_eq!(
            parse_shape_expr("(n+1)*m").unwrap().node,
            bin(BinOp::Mul, paren, member("m"))
        );
        assert_eq!(
            parse_shape_expr("a-b-c").unwrap().node,
            bin(BinOp::Sub, bin(BinOp::Sub, member("a"), member("b")), member("c"))
        );
        assert_eq!(
            parse_shape_expr("a+b*c").unwrap().node,
            bin(BinOp::Add, member("a"), bin(BinOp::Mul, member("b"), member("c")))
        );
    }

    #[test]
    fn shape_errors() {
        match parse_shape_expr("n*").unwrap_err() {
            ParseError::Syntax { expected, .. } => assert_eq!(expected, "factor"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_shape_expr("").is_err());
        assert!(parse_shape_expr("(n+1").is_err());
        assert!(parse_shape_expr("n+1)").is_err());
        assert!(parse_shape_expr("n*1.5").is_err());
    }

    #[test]
    fn duplicate_type_and_policy_names() {
        let err = parse_scenario("type T { } type T { }").unwrap_err();
        assert!(matches!(err, ParseError::DuplicateName { ref name, .. } if name == "T"));
        let err = parse_scenario("policy T::p { } policy T::p { }").unwrap_err();
        assert!(matches!(err, ParseError::DuplicateName { .. }));
        // same policy name on different types is fine
        parse_scenario("policy T::p { } policy U::p { }").unwrap();
    }

    #[test]
    fn commands() {
        let src = r#"
            space hbm: high_bandwidth capacity 1048576;
            space t0: team_local(0) capacity 65536;
            var g: Geometry in hbm;
            var buf: int[8];
            g.nb_edges = 4;
            g.q = g.p + 2;
            g.r = &buf[1];
            g.p = null;
            alloc g.iedge2node;
            device_alloc d0 in device 64;
            enter_data copyin(g) policy(topo) in hbm;
            enter_data copy(g) policy(*);
            exit_data copyout(g);
            update host(g.iedge2node);
            attach(g.iedge2node);
            detach(g.iedge2node);
            map_external(buf, d0);
            map_external(buf, 0x20000000000);
            kernel team(1) { reads(g.iedge2node[0]); writes(g.x[1], -2.5); }
            reduce(sum, 3, 2, real [1e16, 1.0, -1e16]);
            reduce(max, 2, 1, int dim 0 [[3, 1], [2, 5]], deterministic);
            loop k: gang(4), i: vector(8) { write tmp; read tmp; write a[i, k]; private(tmp) at i; }
            nest omp_parallel_do { acc_loop_vector { plain_do } }
            assert_present(g);
            assert_value(g.nb_edges, 4);
        "#;
        let ast = parse_scenario(src).unwrap();
        assert_eq!(ast.statements.len(), 25);
        let reparsed = parse_scenario(&pretty_print(&ast)).unwrap();
        assert_eq!(ast, reparsed);
    }

    #[test]
    fn rejects_unknown_nest_kind_and_motion() {
        assert!(parse_scenario("nest omp_target { plain_do };").is_err());
        assert!(parse_scenario("enter_data copyout(g);").is_err());
        assert!(parse_scenario("exit_data copyin(g);").is_err());
    }

    #[test]
    fn keyword_named_variable_can_be_assigned() {
        let ast = parse_scenario("loop.n = 3;").unwrap();
        assert!(matches!(ast.statements[0].node, Statement::Assign(_)));
    }
}
