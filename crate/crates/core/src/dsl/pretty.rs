//! Renders a [`ScenarioAst`] back to scenario source.

use std::fmt::Write;

use super::ast::*;

pub fn pretty_print(ast: &ScenarioAst) -> String {
    let mut out = String::new();
    for stmt in &ast.statements {
        print_statement(&mut out, &stmt.node);
        out.push('\n');
    }
    out
}

pub fn print_shape(expr: &ShapeExpr) -> String {
    match expr {
        ShapeExpr::Int(v) => v.to_string(),
        ShapeExpr::Member(name) => name.clone(),
        ShapeExpr::Binary { op, lhs, rhs } => {
            format!("{} {} {}", print_shape(&lhs.node), op.symbol(), print_shape(&rhs.node))
        }
        ShapeExpr::Paren(inner) => format!("({})", print_shape(&inner.node)),
    }
}

fn member_type(ty: &MemberTypeAst) -> String {
    match ty {
        MemberTypeAst::Scalar(e) => e.name().to_string(),
        MemberTypeAst::Record(t) => t.clone(),
        MemberTypeAst::InlineArray(e, shape) => format!("{}[{}]", e.name(), print_shape(&shape.node)),
        MemberTypeAst::ShapedPointer(e, shape) => {
            format!("ptr {}[{}]", e.name(), print_shape(&shape.node))
        }
        MemberTypeAst::AliasPointer(e, sibling) => format!("ptr {} @ {}", e.name(), sibling),
        MemberTypeAst::RecordPointer(t) => format!("ptr {t}"),
    }
}

fn trait_name(t: TraitAst) -> String {
    match t {
        TraitAst::Default => "default".into(),
        TraitAst::LargeCapacity => "large_capacity".into(),
        TraitAst::LowLatency => "low_latency".into(),
        TraitAst::HighBandwidth => "high_bandwidth".into(),
        TraitAst::TeamLocal(team) => format!("team_local({team})"),
        TraitAst::UnifiedShared => "unified_shared".into(),
    }
}

fn literal_list(items: &[Literal]) -> String {
    let parts: Vec<String> = items.iter().map(|l| l.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

pub fn print_nest(node: &NestNode) -> String {
    if node.children.is_empty() {
        node.kind.keyword().to_string()
    } else {
        let kids: Vec<String> = node.children.iter().map(print_nest).collect();
        format!("{} {{ {} }}", node.kind.keyword(), kids.join(", "))
    }
}

fn print_statement(out: &mut String, stmt: &Statement) {
    match stmt {
        Statement::Type(decl) => {
            let _ = writeln!(out, "type {} {{", decl.name.node);
            for m in &decl.members {
                let _ = writeln!(out, "    {}: {};", m.name.node, member_type(&m.ty));
            }
            out.push('}');
        }
        Statement::Policy(decl) => {
            let _ = writeln!(out, "policy {}::{} {{", decl.owner.node, decl.name.node);
            for clause in &decl.clauses {
                let names: Vec<&str> = clause.node.members.iter().map(|m| m.node.as_str()).collect();
                let _ = writeln!(out, "    {}({});", clause.node.kind.keyword(), names.join(", "));
            }
            out.push('}');
        }
        Statement::Space(decl) => {
            let _ = write!(
                out,
                "space {}: {} capacity {};",
                decl.name.node,
                trait_name(decl.trait_),
                decl.capacity
            );
        }
        Statement::Var(decl) => {
            let ty = match &decl.ty {
                VarTypeAst::Scalar(e) => e.name().to_string(),
                VarTypeAst::Array(e, n) => format!("{}[{}]", e.name(), n),
                VarTypeAst::Record(t) => t.clone(),
            };
            let _ = write!(out, "var {}: {}", decl.name.node, ty);
            if let Some(space) = &decl.space {
                let _ = write!(out, " in {}", space.node);
            }
            out.push(';');
        }
        Statement::Assign(assign) => {
            let value = match &assign.value {
                AssignValue::Literal(l) => l.to_string(),
                AssignValue::Null => "null".into(),
                AssignValue::AddressOf(p) => format!("&{p}"),
                AssignValue::PathOffset(p, 0) => p.to_string(),
                AssignValue::PathOffset(p, n) if *n < 0 => format!("{p} - {}", n.unsigned_abs()),
                AssignValue::PathOffset(p, n) => format!("{p} + {n}"),
            };
            let _ = write!(out, "{} = {};", assign.target.node, value);
        }
        Statement::Alloc(path) => {
            let _ = write!(out, "alloc {};", path.node);
        }
        Statement::DeviceAlloc(decl) => {
            let _ = write!(out, "device_alloc {} in {} {};", decl.name.node, decl.space.node, decl.size);
        }
        Statement::Map(cmd) => print_map(out, cmd),
        Statement::Kernel(block) => {
            out.push_str("kernel ");
            if let Some(team) = block.team {
                let _ = write!(out, "team({team}) ");
            }
            out.push_str("{\n");
            for access in &block.accesses {
                let verb = match access.kind {
                    AccessKind::Read => "reads",
                    AccessKind::Write => "writes",
                };
                match access.value {
                    Some(v) => {
                        let _ = writeln!(out, "    {verb}({}, {v});", access.path.node);
                    }
                    None => {
                        let _ = writeln!(out, "    {verb}({});", access.path.node);
                    }
                }
            }
            out.push('}');
        }
        Statement::Reduce(cmd) => {
            let data = match &cmd.data {
                ReduceData::Vector(items) => literal_list(items),
                ReduceData::Matrix(rows) => {
                    let rows: Vec<String> = rows.iter().map(|r| literal_list(r)).collect();
                    format!("[{}]", rows.join(", "))
                }
            };
            let dim = cmd.dim.map(|d| format!(" dim {d}")).unwrap_or_default();
            let det = if cmd.deterministic { ", deterministic" } else { "" };
            let _ = write!(
                out,
                "reduce({}, {}, {}, {}{} {}{});",
                cmd.op.keyword(),
                cmd.gangs,
                cmd.vector_length,
                cmd.kind.name(),
                dim,
                data,
                det
            );
        }
        Statement::Loop(cmd) => {
            let levels: Vec<String> = cmd
                .levels
                .iter()
                .map(|l| format!("{}: {}({})", l.var.node, l.parallelism.keyword(), l.extent))
                .collect();
            let _ = writeln!(out, "loop {} {{", levels.join(", "));
            for item in &cmd.body {
                match item {
                    LoopItem::Access { kind, var, indices } => {
                        let verb = match kind {
                            AccessKind::Read => "read",
                            AccessKind::Write => "write",
                        };
                        if indices.is_empty() {
                            let _ = writeln!(out, "    {verb} {};", var.node);
                        } else {
                            let idx: Vec<String> = indices
                                .iter()
                                .map(|i| match i {
                                    IndexAst::Var(v) => v.clone(),
                                    IndexAst::Const(c) => c.to_string(),
                                })
                                .collect();
                            let _ = writeln!(out, "    {verb} {}[{}];", var.node, idx.join(", "));
                        }
                    }
                    LoopItem::Privatize { kind, var, level } => {
                        let _ = write!(out, "    {}({})", kind.keyword(), var.node);
                        if let Some(level) = level {
                            let _ = write!(out, " at {}", level.node);
                        }
                        out.push_str(";\n");
                    }
                }
            }
            out.push('}');
        }
        Statement::Nest(node) => {
            let _ = write!(out, "nest {};", print_nest(node));
        }
        Statement::Assert(a) => {
            let _ = match a {
                AssertStmt::Present(p) => write!(out, "assert_present({});", p.node),
                AssertStmt::Absent(p) => write!(out, "assert_absent({});", p.node),
                AssertStmt::Attached(p) => write!(out, "assert_attached({});", p.node),
                AssertStmt::Detached(p) => write!(out, "assert_detached({});", p.node),
                AssertStmt::Value(p, lit) => write!(out, "assert_value({}, {});", p.node, lit),
            };
        }
    }
}

fn print_map(out: &mut String, cmd: &MapCommand) {
    let _ = match cmd {
        MapCommand::EnterData {
            motion,
            path,
            policy,
            space,
        } => {
            let _ = write!(out, "enter_data {}({})", motion.keyword(), path.node);
            if let Some(p) = policy {
                let _ = write!(out, " policy({})", p.node);
            }
            if let Some(s) = space {
                let _ = write!(out, " in {}", s.node);
            }
            write!(out, ";")
        }
        MapCommand::ExitData { motion, path } => {
            write!(out, "exit_data {}({});", motion.keyword(), path.node)
        }
        MapCommand::UpdateHost(p) => write!(out, "update host({});", p.node),
        MapCommand::UpdateDevice(p) => write!(out, "update device({});", p.node),
        MapCommand::Attach(p) => write!(out, "attach({});", p.node),
        MapCommand::Detach(p) => write!(out, "detach({});", p.node),
        MapCommand::MapExternal { path, device } => match device {
            DeviceRef::Addr(a) => write!(out, "map_external({}, {:#x});", path.node, a),
            DeviceRef::Named(n) => write!(out, "map_external({}, {});", path.node, n.node),
        },
    };
}
