mod common;

use common::corpus;
use ddsim::dsl::{parse_scenario, parse_shape_expr, pretty_print, ParseError};
use ddsim::scenario::validate;
use proptest::prelude::*;

#[test]
fn corpus_parses_validates_and_round_trips() {
    for (name, src) in corpus() {
        let ast = parse_scenario(&src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let printed = pretty_print(&ast);
        let again = parse_scenario(&printed).unwrap_or_else(|e| panic!("{name} reprint: {e}\n{printed}"));
        assert_eq!(ast, again, "{name}");
        assert_eq!(pretty_print(&again), printed, "{name}");
        validate(&name, ast).unwrap_or_else(|e| panic!("{name}: {}", e[0]));
    }
}

#[test]
fn spans_stay_inside_the_input() {
    for (name, src) in corpus() {
        let lines: Vec<&str> = src.lines().collect();
        for stmt in parse_scenario(&src).unwrap().statements {
            let s = stmt.span;
            let line = lines[s.line as usize - 1];
            assert!(s.column as usize <= line.len(), "{name}: {s}");
        }
    }
}

#[test]
fn shape_expressions() {
    assert!(parse_shape_expr("nb_edges*2").is_ok());
    assert!(parse_shape_expr("(n+1)*m").is_ok());
    for bad in ["", "n*", "(n", "n)", "1.5", "n +* 2"] {
        assert!(parse_shape_expr(bad).is_err(), "{bad:?}");
    }
}

proptest! {
    #[test]
    fn parser_is_total(src in "[ -~\n]{0,120}") {
        // either an AST or exactly one error, never a panic
        let first = parse_scenario(&src);
        let second = parse_scenario(&src);
        prop_assert_eq!(first.is_ok(), second.is_ok());
        if let Err(ParseError::Syntax { span, .. }) = first {
            prop_assert!(span.line as usize <= src.lines().count().max(1) + 1);
        }
    }

    #[test]
    fn token_soup_never_panics(words in prop::collection::vec(prop::sample::select(vec![
        "type", "T", "{", "}", "n", ":", "int", "ptr", "real", "[", "]", "*", "+", "(", ")", ";",
        "policy", "::", "exclude", "var", "x", "enter_data", "copyin", "kernel", "reads", "loop",
        "gang", "vector", "nest", "omp_parallel_do", "acc_loop_plain", "reduce", "sum", ",", "1", "2.5", "@",
    ]), 0..40)) {
        let src = words.join(" ");
        if let Ok(ast) = parse_scenario(&src) {
            let again = parse_scenario(&pretty_print(&ast)).unwrap();
            prop_assert_eq!(ast.clone(), again);
            let _ = validate("soup", ast);
        }
    }
}
