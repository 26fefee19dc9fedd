//! Host-side variables and member paths.

use std::collections::BTreeMap;
use std::fmt;

use super::{eval_const_shape, eval_shape, MemberKind, TypeError, TypeRegistry, SLOT};
use crate::dsl::{ElemKind, Path, PathStep};
use crate::memory::{BlockRole, Memory, SimAddress, SpaceId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Addr(SimAddress),
}

impl Value {
    pub fn bits(self) -> u64 {
        match self {
            Value::Int(v) => v as u64,
            Value::Real(v) => v.to_bits(),
            Value::Addr(a) => a.0,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v:?}"),
            Value::Addr(a) => write!(f, "{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarKind {
    Scalar(ElemKind),
    Array(ElemKind, u64),
    Record(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub kind: VarKind,
    pub addr: SimAddress,
    pub size: u64,
    pub space: SpaceId,
}

/// What a resolved path denotes.
#[derive(Debug, Clone, PartialEq)]
pub enum PlaceKind {
    Scalar(ElemKind),
    InlineArray { elem: ElemKind, len: u64 },
    Record(String),
    /// A pointer slot, with the record that owns it (shapes are evaluated
    /// against the owner).
    Pointer {
        member: MemberKind,
        owner_type: String,
        owner_base: SimAddress,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub addr: SimAddress,
    pub kind: PlaceKind,
    pub path: Path,
}

/// Pointee of a pointer slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointee {
    pub addr: SimAddress,
    pub len_bytes: u64,
    pub record: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Variables {
    vars: BTreeMap<String, VarInfo>,
}

impl Variables {
    pub fn get(&self, name: &str) -> Option<&VarInfo> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &VarInfo> {
        self.vars.values()
    }

    pub fn size_of(kind: &VarKind, types: &TypeRegistry) -> Result<u64, TypeError> {
        Ok(match kind {
            VarKind::Scalar(_) => SLOT,
            VarKind::Array(_, n) => n * SLOT,
            VarKind::Record(t) => {
                types
                    .layout(t)
                    .ok_or_else(|| TypeError::UnresolvedType(t.clone()))?
                    .total_size
            }
        })
    }

    /// Allocates zeroed storage for a new variable in `space`.
    pub fn instantiate(
        &mut self,
        name: &str,
        kind: VarKind,
        space: SpaceId,
        types: &TypeRegistry,
        mem: &mut Memory,
    ) -> Result<&VarInfo, TypeError> {
        if self.vars.contains_key(name) {
            return Err(TypeError::DuplicateVariable(name.to_string()));
        }
        let size = Self::size_of(&kind, types)?;
        let addr = mem.alloc(space, size, BlockRole::Host)?;
        self.vars.insert(
            name.to_string(),
            VarInfo {
                name: name.to_string(),
                kind,
                addr,
                size,
                space,
            },
        );
        Ok(&self.vars[name])
    }

    pub fn resolve(&self, path: &Path, types: &TypeRegistry, mem: &Memory) -> Result<Place, TypeError> {
        let var = self
            .vars
            .get(&path.root)
            .ok_or_else(|| TypeError::UnknownPath(path.to_string()))?;
        let mut place = Place {
            addr: var.addr,
            kind: match &var.kind {
                VarKind::Scalar(e) => PlaceKind::Scalar(*e),
                VarKind::Array(e, n) => PlaceKind::InlineArray { elem: *e, len: *n },
                VarKind::Record(t) => PlaceKind::Record(t.clone()),
            },
            path: Path::var(&path.root),
        };
        for step in &path.steps {
            place = step_place(place, step, types, mem)?;
        }
        Ok(place)
    }

    pub fn read_value(&self, path: &Path, types: &TypeRegistry, mem: &Memory) -> Result<Value, TypeError> {
        let place = self.resolve(path, types, mem)?;
        let raw = mem.read_u64(place.addr)?;
        match place.kind {
            PlaceKind::Scalar(ElemKind::Int) => Ok(Value::Int(raw as i64)),
            PlaceKind::Scalar(ElemKind::Real) => Ok(Value::Real(f64::from_bits(raw))),
            PlaceKind::Pointer { .. } => Ok(Value::Addr(SimAddress(raw))),
            _ => Err(TypeError::KindMismatch {
                path: path.to_string(),
                expected: "a scalar or pointer".into(),
                found: "an aggregate".into(),
            }),
        }
    }

    pub fn write_value(&self, path: &Path, value: Value, types: &TypeRegistry, mem: &mut Memory) -> Result<(), TypeError> {
        let place = self.resolve(path, types, mem)?;
        let bits = match (&place.kind, value) {
            (PlaceKind::Scalar(ElemKind::Int), Value::Int(v)) => v as u64,
            (PlaceKind::Scalar(ElemKind::Real), Value::Real(v)) => v.to_bits(),
            (PlaceKind::Scalar(ElemKind::Real), Value::Int(v)) => (v as f64).to_bits(),
            (PlaceKind::Pointer { .. }, Value::Addr(a)) => a.0,
            (kind, v) => {
                return Err(TypeError::KindMismatch {
                    path: path.to_string(),
                    expected: describe(kind).into(),
                    found: v.to_string(),
                })
            }
        };
        mem.write_u64(place.addr, bits)?;
        Ok(())
    }

    /// Allocates the pointee of a shaped or record pointer member (evaluating
    /// its shape now) in `space`, and stores the address into the slot.
    pub fn alloc_member(
        &self,
        path: &Path,
        space: SpaceId,
        types: &TypeRegistry,
        mem: &mut Memory,
    ) -> Result<(SimAddress, u64), TypeError> {
        let place = self.resolve(path, types, mem)?;
        let PlaceKind::Pointer {
            member,
            owner_type,
            owner_base,
        } = &place.kind
        else {
            return Err(TypeError::KindMismatch {
                path: path.to_string(),
                expected: "a shaped or record pointer".into(),
                found: describe(&place.kind).into(),
            });
        };
        let size = match member {
            MemberKind::ShapedPointer { shape, .. } => {
                let ty = types.get(owner_type).expect("registered owner");
                let layout = types.layout(owner_type).expect("registered owner");
                eval_shape(&shape.node, ty, layout, *owner_base, mem)? * SLOT
            }
            MemberKind::RecordPointer(t) => {
                types
                    .layout(t)
                    .ok_or_else(|| TypeError::UnresolvedType(t.clone()))?
                    .total_size
            }
            _ => {
                return Err(TypeError::KindMismatch {
                    path: path.to_string(),
                    expected: "a shaped or record pointer".into(),
                    found: "an alias pointer".into(),
                })
            }
        };
        let addr = mem.alloc(space, size, BlockRole::Host)?;
        mem.write_u64(place.addr, addr.0)?;
        Ok((addr, size))
    }
}

fn describe(kind: &PlaceKind) -> &'static str {
    match kind {
        PlaceKind::Scalar(ElemKind::Int) => "an int",
        PlaceKind::Scalar(ElemKind::Real) => "a real",
        PlaceKind::InlineArray { .. } => "an array",
        PlaceKind::Record(_) => "a record",
        PlaceKind::Pointer { .. } => "a pointer",
    }
}

/// Pointee range of a pointer place, using host values.
pub fn pointee(place: &Place, types: &TypeRegistry, mem: &Memory) -> Result<Pointee, TypeError> {
    let PlaceKind::Pointer {
        member,
        owner_type,
        owner_base,
    } = &place.kind
    else {
        return Err(TypeError::UnknownPath(place.path.to_string()));
    };
    let target = SimAddress(mem.read_u64(place.addr)?);
    if target.is_null() {
        return Err(TypeError::NullDeref(place.path.to_string()));
    }
    match member {
        MemberKind::ShapedPointer { shape, .. } => {
            let ty = types.get(owner_type).expect("registered owner");
            let layout = types.layout(owner_type).expect("registered owner");
            let count = eval_shape(&shape.node, ty, layout, *owner_base, mem)?;
            Ok(Pointee {
                addr: target,
                len_bytes: count * SLOT,
                record: None,
            })
        }
        MemberKind::RecordPointer(t) => Ok(Pointee {
            addr: target,
            len_bytes: types.layout(t).map(|l| l.total_size).unwrap_or(0),
            record: Some(t.clone()),
        }),
        MemberKind::AliasPointer { .. } => {
            // an alias may point anywhere into its sibling's allocation
            let remaining = mem
                .block_containing(target)
                .map(|(base, b)| b.size.saturating_sub(target.diff(base) as u64))
                .unwrap_or(0);
            Ok(Pointee {
                addr: target,
                len_bytes: remaining,
                record: None,
            })
        }
        _ => unreachable!("pointer places hold pointer members"),
    }
}

fn step_place(place: Place, step: &PathStep, types: &TypeRegistry, mem: &Memory) -> Result<Place, TypeError> {
    let mut path = place.path.clone();
    path.steps.push(step.clone());
    match (step, &place.kind) {
        (PathStep::Field(name), PlaceKind::Record(t)) => field_of(place.addr, t, name, path, types),
        (PathStep::Field(name), PlaceKind::Pointer { member: MemberKind::RecordPointer(t), .. }) => {
            let target = SimAddress(mem.read_u64(place.addr)?);
            if target.is_null() {
                return Err(TypeError::NullDeref(place.path.to_string()));
            }
            field_of(target, t, name, path, types)
        }
        (PathStep::Index(i), PlaceKind::InlineArray { elem, len }) => {
            if *i >= *len {
                return Err(TypeError::OutOfBounds {
                    path: place.path.to_string(),
                    index: *i,
                    len: *len,
                });
            }
            Ok(Place {
                addr: place.addr.offset(i * SLOT),
                kind: PlaceKind::Scalar(*elem),
                path,
            })
        }
        (
            PathStep::Index(i),
            PlaceKind::Pointer {
                member: MemberKind::ShapedPointer { elem, .. } | MemberKind::AliasPointer { elem, .. },
                ..
            },
        ) => {
            let elem = *elem;
            let target = pointee(&place, types, mem)?;
            let len = target.len_bytes / SLOT;
            if *i >= len {
                return Err(TypeError::OutOfBounds {
                    path: place.path.to_string(),
                    index: *i,
                    len,
                });
            }
            Ok(Place {
                addr: target.addr.offset(i * SLOT),
                kind: PlaceKind::Scalar(elem),
                path,
            })
        }
        _ => Err(TypeError::UnknownPath(path.to_string())),
    }
}

fn field_of(base: SimAddress, ty_name: &str, name: &str, path: Path, types: &TypeRegistry) -> Result<Place, TypeError> {
    let ty = types
        .get(ty_name)
        .ok_or_else(|| TypeError::UnresolvedType(ty_name.to_string()))?;
    let layout = types.layout(ty_name).expect("layout for registered type");
    let idx = ty
        .member_index(name)
        .ok_or_else(|| TypeError::UnknownPath(path.to_string()))?;
    let member = &ty.members[idx];
    let addr = base.offset(layout.offsets[idx]);
    let kind = match &member.kind {
        MemberKind::Scalar(e) => PlaceKind::Scalar(*e),
        MemberKind::InlineArray { elem, shape } => PlaceKind::InlineArray {
            elem: *elem,
            len: eval_const_shape(&shape.node)?,
        },
        MemberKind::Record(t) => PlaceKind::Record(t.clone()),
        other => PlaceKind::Pointer {
            member: other.clone(),
            owner_type: ty_name.to_string(),
            owner_base: base,
        },
    };
    Ok(Place { addr, kind, path })
}
