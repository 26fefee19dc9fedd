use super::{Layout, MemberKind, TypeDef, TypeError};
use crate::dsl::{BinOp, ElemKind, ShapeExpr};
use crate::memory::{Memory, SimAddress};

/// Evaluates `expr` against the current host values of the instance at `base`.
pub fn eval_shape(
    expr: &ShapeExpr,
    ty: &TypeDef,
    layout: &Layout,
    base: SimAddress,
    mem: &Memory,
) -> Result<u64, TypeError> {
    let value = eval_with(expr, &mut |name| {
        let idx = ty
            .member_index(name)
            .filter(|&i| ty.members[i].kind == MemberKind::Scalar(ElemKind::Int))
            .ok_or_else(|| TypeError::UnresolvedMember(name.to_string()))?;
        Ok(mem.read_u64(base.offset(layout.offsets[idx]))? as i64)
    })?;
    non_negative(value)
}

/// Evaluates a shape with no member references.
pub fn eval_const_shape(expr: &ShapeExpr) -> Result<u64, TypeError> {
    let value = eval_with(expr, &mut |name| Err(TypeError::UnresolvedMember(name.to_string())))?;
    non_negative(value)
}

fn non_negative(v: i64) -> Result<u64, TypeError> {
    if v < 0 {
        Err(TypeError::NegativeShape(v))
    } else {
        Ok(v as u64)
    }
}

fn eval_with(
    expr: &ShapeExpr,
    lookup: &mut dyn FnMut(&str) -> Result<i64, TypeError>,
) -> Result<i64, TypeError> {
    match expr {
        ShapeExpr::Int(v) => Ok(*v),
        ShapeExpr::Member(name) => lookup(name),
        ShapeExpr::Paren(inner) => eval_with(&inner.node, lookup),
        ShapeExpr::Binary { op, lhs, rhs } => {
            let a = eval_with(&lhs.node, lookup)?;
            let b = eval_with(&rhs.node, lookup)?;
            let r = match op {
                BinOp::Add => a.checked_add(b),
                BinOp::Sub => a.checked_sub(b),
                BinOp::Mul => a.checked_mul(b),
                BinOp::Div => {
                    if b == 0 {
                        return Err(TypeError::DivisionByZero);
                    }
                    // truncates toward zero
                    a.checked_div(b)
                }
            };
            r.ok_or(TypeError::ShapeOverflow)
        }
    }
}
