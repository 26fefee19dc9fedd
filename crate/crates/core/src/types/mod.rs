//! Declared record types, their memory layout, and host-side instances.
//!
//! Layout is a fixed simple ABI: every scalar and pointer occupies one 8-byte
//! slot, inline arrays occupy `8 * count` bytes, nested records embed their
//! full size, and members follow declaration order with no extra padding.

mod instance;
mod shape;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dsl::{ElemKind, MemberTypeAst, ShapeNode, TypeDecl};
use crate::memory::MemoryError;

pub use instance::{pointee, Place, PlaceKind, Pointee, Value, VarInfo, VarKind, Variables};
pub use shape::{eval_const_shape, eval_shape};

pub const SLOT: u64 = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum MemberKind {
    Scalar(ElemKind),
    InlineArray { elem: ElemKind, shape: ShapeNode },
    ShapedPointer { elem: ElemKind, shape: ShapeNode },
    AliasPointer { elem: ElemKind, sibling: String },
    Record(String),
    RecordPointer(String),
}

impl MemberKind {
    pub fn is_pointer(&self) -> bool {
        matches!(
            self,
            MemberKind::ShapedPointer { .. } | MemberKind::AliasPointer { .. } | MemberKind::RecordPointer(_)
        )
    }

    /// Members the default deep-copy policy traverses.
    pub fn is_traversable(&self) -> bool {
        self.is_pointer() || matches!(self, MemberKind::Record(_))
    }
}

impl From<&MemberTypeAst> for MemberKind {
    fn from(ty: &MemberTypeAst) -> Self {
        match ty {
            MemberTypeAst::Scalar(e) => MemberKind::Scalar(*e),
            MemberTypeAst::Record(t) => MemberKind::Record(t.clone()),
            MemberTypeAst::InlineArray(e, s) => MemberKind::InlineArray {
                elem: *e,
                shape: s.clone(),
            },
            MemberTypeAst::ShapedPointer(e, s) => MemberKind::ShapedPointer {
                elem: *e,
                shape: s.clone(),
            },
            MemberTypeAst::AliasPointer(e, sib) => MemberKind::AliasPointer {
                elem: *e,
                sibling: sib.clone(),
            },
            MemberTypeAst::RecordPointer(t) => MemberKind::RecordPointer(t.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub name: String,
    pub kind: MemberKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeDef {
    pub name: String,
    pub members: Vec<Member>,
}

impl TypeDef {
    pub fn member_index(&self, name: &str) -> Option<usize> {
        self.members.iter().position(|m| m.name == name)
    }

    pub fn member(&self, name: &str) -> Option<&Member> {
        self.members.iter().find(|m| m.name == name)
    }
}

impl From<&TypeDecl> for TypeDef {
    fn from(decl: &TypeDecl) -> Self {
        TypeDef {
            name: decl.name.node.clone(),
            members: decl
                .members
                .iter()
                .map(|m| Member {
                    name: m.name.node.clone(),
                    kind: MemberKind::from(&m.ty),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub total_size: u64,
    pub offsets: Vec<u64>,
    pub sizes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("unresolved type `{0}`")]
    UnresolvedType(String),
    #[error("inline array `{member}` needs a constant shape")]
    NonConstantInlineShape { member: String },
    #[error("type `{0}` embeds itself by value")]
    RecursiveEmbedding(String),
    #[error("type `{ty}` declares member `{member}` twice")]
    DuplicateMember { ty: String, member: String },
    #[error("shape of `{member}` refers to `{reference}`, which is not an int member of `{ty}`")]
    BadShapeReference { ty: String, member: String, reference: String },
    #[error("alias `{member}` of `{ty}` must name a shaped pointer sibling, not `{sibling}`")]
    BadAliasTarget { ty: String, member: String, sibling: String },
    #[error("shape evaluated to {0}, which is negative")]
    NegativeShape(i64),
    #[error("division by zero in shape expression")]
    DivisionByZero,
    #[error("shape arithmetic overflowed")]
    ShapeOverflow,
    #[error("`{0}` is not an int member of the instance")]
    UnresolvedMember(String),
    #[error("index {index} out of bounds for `{path}` of length {len}")]
    OutOfBounds { path: String, index: u64, len: u64 },
    #[error("`{0}` is a null pointer")]
    NullDeref(String),
    #[error("unknown path `{0}`")]
    UnknownPath(String),
    #[error("variable `{0}` is declared twice")]
    DuplicateVariable(String),
    #[error("`{path}` holds {expected}, cannot store {found}")]
    KindMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, Default)]
pub struct TypeRegistry {
    types: BTreeMap<String, TypeDef>,
    layouts: BTreeMap<String, Layout>,
}

impl TypeRegistry {
    /// Builds a registry and precomputes every layout. Types may refer to
    /// each other in any order.
    pub fn build(types: Vec<TypeDef>) -> Result<Self, Vec<TypeError>> {
        let mut reg = TypeRegistry {
            types: types.into_iter().map(|t| (t.name.clone(), t)).collect(),
            layouts: BTreeMap::new(),
        };
        let mut errors = Vec::new();
        for ty in reg.types.values() {
            errors.extend(check_members(ty, &reg));
        }
        let names: Vec<String> = reg.types.keys().cloned().collect();
        let mut layouts = BTreeMap::new();
        for name in &names {
            match compute_layout(&reg.types[name], &reg) {
                Ok(layout) => {
                    layouts.insert(name.clone(), layout);
                }
                Err(e) => {
                    if !errors.contains(&e) {
                        errors.push(e);
                    }
                }
            }
        }
        if errors.is_empty() {
            reg.layouts = layouts;
            Ok(reg)
        } else {
            Err(errors)
        }
    }

    pub fn get(&self, name: &str) -> Option<&TypeDef> {
        self.types.get(name)
    }

    pub fn layout(&self, name: &str) -> Option<&Layout> {
        self.layouts.get(name)
    }

    pub fn types(&self) -> impl Iterator<Item = &TypeDef> {
        self.types.values()
    }
}

fn check_members(ty: &TypeDef, reg: &TypeRegistry) -> Vec<TypeError> {
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    for m in &ty.members {
        if !seen.insert(m.name.as_str()) {
            errors.push(TypeError::DuplicateMember {
                ty: ty.name.clone(),
                member: m.name.clone(),
            });
        }
    }
    for m in &ty.members {
        match &m.kind {
            MemberKind::ShapedPointer { shape, .. } | MemberKind::InlineArray { shape, .. } => {
                for r in shape.node.member_refs() {
                    let ok = matches!(
                        ty.member(r).map(|x| &x.kind),
                        Some(MemberKind::Scalar(ElemKind::Int))
                    );
                    if !ok {
                        errors.push(TypeError::BadShapeReference {
                            ty: ty.name.clone(),
                            member: m.name.clone(),
                            reference: r.to_string(),
                        });
                    }
                }
            }
            MemberKind::AliasPointer { sibling, .. } => {
                if !matches!(ty.member(sibling).map(|x| &x.kind), Some(MemberKind::ShapedPointer { .. })) {
                    errors.push(TypeError::BadAliasTarget {
                        ty: ty.name.clone(),
                        member: m.name.clone(),
                        sibling: sibling.clone(),
                    });
                }
            }
            MemberKind::RecordPointer(t) if reg.get(t).is_none() => {
                errors.push(TypeError::UnresolvedType(t.clone()));
            }
            _ => {}
        }
    }
    errors
}

/// Computes the layout of `ty`, resolving nested records through `registry`.
pub fn compute_layout(ty: &TypeDef, registry: &TypeRegistry) -> Result<Layout, TypeError> {
    layout_rec(ty, registry, &mut Vec::new())
}

fn layout_rec(ty: &TypeDef, reg: &TypeRegistry, stack: &mut Vec<String>) -> Result<Layout, TypeError> {
    if stack.contains(&ty.name) {
        return Err(TypeError::RecursiveEmbedding(ty.name.clone()));
    }
    if let Some(l) = reg.layout(&ty.name) {
        return Ok(l.clone());
    }
    stack.push(ty.name.clone());
    let mut offsets = Vec::with_capacity(ty.members.len());
    let mut sizes = Vec::with_capacity(ty.members.len());
    let mut cursor = 0u64;
    for m in &ty.members {
        let size = match &m.kind {
            MemberKind::Scalar(_)
            | MemberKind::ShapedPointer { .. }
            | MemberKind::AliasPointer { .. }
            | MemberKind::RecordPointer(_) => SLOT,
            MemberKind::InlineArray { shape, .. } => {
                let n = eval_const_shape(&shape.node).map_err(|e| match e {
                    TypeError::UnresolvedMember(_) => TypeError::NonConstantInlineShape {
                        member: m.name.clone(),
                    },
                    other => other,
                })?;
                n * SLOT
            }
            MemberKind::Record(t) => {
                let nested = reg.get(t).ok_or_else(|| TypeError::UnresolvedType(t.clone()))?;
                layout_rec(nested, reg, stack)?.total_size
            }
        };
        // zero-sized members still take a slot so offsets stay strictly increasing
        let size = size.max(SLOT);
        offsets.push(cursor);
        sizes.push(size);
        cursor += size;
    }
    stack.pop();
    Ok(Layout {
        total_size: cursor,
        offsets,
        sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_scenario;
    use crate::dsl::Statement;

    fn registry(src: &str) -> Result<TypeRegistry, Vec<TypeError>> {
        let ast = parse_scenario(src).unwrap();
        let types = ast
            .statements
            .iter()
            .filter_map(|s| match &s.node {
                Statement::Type(t) => Some(TypeDef::from(t)),
                _ => None,
            })
            .collect();
        TypeRegistry::build(types)
    }

    #[test]
    fn two_slot_layout() {
        let reg = registry("type A { n: int; p: ptr int[n]; }").unwrap();
        let l = reg.layout("A").unwrap();
        assert_eq!(l.total_size, 16);
        assert_eq!(l.offsets, vec![0, 8]);
    }

    #[test]
    fn nested_record_layout() {
        let reg = registry("type S { x: int; y: real; z: ptr S; } type A { a: int; s: S; }").unwrap();
        assert_eq!(reg.layout("S").unwrap().total_size, 24);
        let l = reg.layout("A").unwrap();
        assert_eq!(l.total_size, 32);
        assert_eq!(l.offsets, vec![0, 8]);
        assert_eq!(l.sizes, vec![8, 24]);
    }

    #[test]
    fn inline_array_layout() {
        let reg = registry("type A { a: int[2*3]; b: int; }").unwrap();
        let l = reg.layout("A").unwrap();
        assert_eq!(l.offsets, vec![0, 48]);
        assert_eq!(l.total_size, 56);
    }

    #[test]
    fn unresolved_type() {
        let errs = registry("type A { x: Unknown; }").unwrap_err();
        assert_eq!(errs, vec![TypeError::UnresolvedType("Unknown".into())]);
    }

    #[test]
    fn non_constant_inline_shape() {
        let errs = registry("type A { n: int; a: int[n]; }").unwrap_err();
        assert!(errs.contains(&TypeError::NonConstantInlineShape { member: "a".into() }));
    }

    #[test]
    fn recursion_only_behind_pointers() {
        assert!(registry("type L { next: ptr L; v: int; }").is_ok());
        let errs = registry("type A { b: B; } type B { a: A; }").unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, TypeError::RecursiveEmbedding(_))));
    }

    #[test]
    fn member_invariants() {
        let errs = registry("type A { n: int; n: real; }").unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, TypeError::DuplicateMember { .. })));
        let errs = registry("type A { r: real; p: ptr int[r]; }").unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, TypeError::BadShapeReference { .. })));
        let errs = registry("type A { n: int; q: ptr int @ n; }").unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, TypeError::BadAliasTarget { .. })));
    }

    #[test]
    fn layout_is_deterministic_and_aligned() {
        let src = "type S { a: int; b: ptr int[a]; } type T { s: S; c: real[3]; d: ptr S; }";
        let r1 = registry(src).unwrap();
        let r2 = registry(src).unwrap();
        for t in r1.types() {
            let l = r1.layout(&t.name).unwrap();
            assert_eq!(l, r2.layout(&t.name).unwrap());
            assert_eq!(l.total_size % 8, 0);
            for w in l.offsets.windows(2) {
                assert!(w[0] < w[1]);
            }
            for (o, s) in l.offsets.iter().zip(&l.sizes) {
                assert_eq!(o % 8, 0);
                assert!(o + s <= l.total_size);
            }
        }
    }
}
