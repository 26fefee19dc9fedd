//! The device data environment: present table, attachment counters, deep-copy
//! traversal, and the device-side views used by kernels and the reachability
//! walker.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::{Code, Diagnostic};
use crate::dsl::{ElemKind, EnterMotion, ExitMotion, Path, PathStep, PolicyName};
use crate::memory::{BlockRole, Memory, MemoryError, SimAddress, SpaceId};
use crate::policy::{Direction, Origin, Policy, PolicyError, PolicyTable};
use crate::types::{
    eval_shape, pointee, MemberKind, PlaceKind, TypeError, TypeRegistry, VarKind, Variables, SLOT,
};

/// Read-only host-side view a runtime operation works against.
#[derive(Clone, Copy)]
pub struct HostCtx<'a> {
    pub types: &'a TypeRegistry,
    pub policies: &'a PolicyTable,
    pub vars: &'a Variables,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ownership {
    /// Allocated by a mapping; freed when the entry goes away.
    Runtime,
    /// Unified-shared storage; device and host address coincide.
    Identity,
    /// Registered through `map_external`; never freed by the runtime.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChildLink {
    pub host_base: SimAddress,
    /// The child's direction came from the parent clause, so it exits with
    /// the parent's exit motion; otherwise it is released.
    pub inherited: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresentEntry {
    pub host_base: SimAddress,
    pub length: u64,
    pub device_base: SimAddress,
    pub space: SpaceId,
    pub ref_count: u64,
    pub motion_out: bool,
    pub ownership: Ownership,
    pub children: Vec<ChildLink>,
    pub label: String,
}

impl PresentEntry {
    fn host_contains(&self, addr: SimAddress) -> bool {
        addr.0 >= self.host_base.0 && addr.0 - self.host_base.0 < self.length
            || (self.length == 0 && addr == self.host_base)
    }

    fn device_contains(&self, addr: SimAddress) -> bool {
        addr.0 >= self.device_base.0 && addr.0 - self.device_base.0 < self.length
            || (self.length == 0 && addr == self.device_base)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttachmentRecord {
    pub site: SimAddress,
    pub counter: u64,
    pub saved_host_value: SimAddress,
    /// Pointer path the slot was first attached through.
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AddrRange {
    pub start: SimAddress,
    pub len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOp {
    Alloc,
    CopyIn,
    CopyOut,
    RefInc,
    RefDec,
    Attach,
    Detach,
    Free,
    Remove,
    MapExternal,
    Present,
    UpdateHost,
    UpdateDevice,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub seq: u64,
    pub op: EventOp,
    pub path: String,
    pub space: String,
    pub host: Option<AddrRange>,
    pub device: Option<AddrRange>,
    pub before: Option<u64>,
    pub after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("`{path}` is not present on the device")]
    NotPresent { path: String },
    #[error("`{path}` overlaps an existing mapping it does not match exactly")]
    Overlap { path: String },
    #[error("`{path}` is already present")]
    AlreadyPresent { path: String },
    #[error("{addr} does not start a free device allocation of {len} bytes for `{path}`")]
    BadDeviceRange { path: String, addr: SimAddress, len: u64 },
    #[error("`{path}` has no attachment to detach")]
    NoAttachment { path: String },
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl RuntimeError {
    pub fn code(&self) -> Code {
        match self {
            RuntimeError::NotPresent { .. } => Code::NotPresent,
            RuntimeError::Overlap { .. } => Code::Overlap,
            RuntimeError::AlreadyPresent { .. } => Code::AlreadyPresent,
            RuntimeError::BadDeviceRange { .. } => Code::BadDeviceRange,
            RuntimeError::NoAttachment { .. } => Code::NoAttachment,
            RuntimeError::Type(e) => type_error_code(e),
            RuntimeError::Memory(MemoryError::CapacityExceeded { .. }) => Code::Capacity,
            RuntimeError::Memory(_) => Code::BadDeviceAddress,
            RuntimeError::Policy(_) => Code::Invalid,
        }
    }
}

pub fn type_error_code(e: &TypeError) -> Code {
    match e {
        TypeError::NullDeref(_) => Code::NullDeref,
        TypeError::OutOfBounds { .. } => Code::OutOfBounds,
        TypeError::NegativeShape(_)
        | TypeError::DivisionByZero
        | TypeError::ShapeOverflow
        | TypeError::UnresolvedMember(_) => Code::Shape,
        TypeError::Memory(MemoryError::CapacityExceeded { .. }) => Code::Capacity,
        _ => Code::Invalid,
    }
}

/// Host storage a path denotes: a whole variable, a member, or the pointee
/// of a pointer member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostObject {
    pub base: SimAddress,
    pub len: u64,
    pub record: Option<String>,
}

pub fn host_object(path: &Path, ctx: HostCtx<'_>, mem: &Memory) -> Result<HostObject, TypeError> {
    let place = ctx.vars.resolve(path, ctx.types, mem)?;
    Ok(match &place.kind {
        PlaceKind::Scalar(_) => HostObject {
            base: place.addr,
            len: SLOT,
            record: None,
        },
        PlaceKind::InlineArray { len, .. } => HostObject {
            base: place.addr,
            len: len * SLOT,
            record: None,
        },
        PlaceKind::Record(t) => HostObject {
            base: place.addr,
            len: ctx.types.layout(t).expect("registered").total_size,
            record: Some(t.clone()),
        },
        PlaceKind::Pointer { .. } => {
            let p = pointee(&place, ctx.types, mem)?;
            HostObject {
                base: p.addr,
                len: p.len_bytes,
                record: p.record,
            }
        }
    })
}

impl EnterMotion {
    pub fn direction(self) -> Direction {
        match self {
            EnterMotion::Copyin => Direction::In,
            EnterMotion::Copy => Direction::InOut,
            EnterMotion::Create => Direction::Create,
            EnterMotion::NoCreate => Direction::NoCreate,
        }
    }
}

/// Static type of a device-side place during a kernel walk.
#[derive(Debug, Clone, PartialEq)]
enum DevKind {
    Scalar(ElemKind),
    InlineArray(ElemKind, u64),
    Record(String),
    Pointer(MemberKind),
}

/// Resolved device element for a kernel access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DevicePlace {
    pub addr: SimAddress,
    pub elem: ElemKind,
}

/// Why a device-side path walk failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceFault {
    pub code: Code,
    pub path: String,
    pub message: String,
}

struct MapResult {
    device: Option<SimAddress>,
    entered: bool,
}

#[derive(Default)]
struct Traversal {
    visited: BTreeSet<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct DeviceDataEnv {
    entries: BTreeMap<u64, PresentEntry>,
    device_index: BTreeMap<u64, u64>,
    attachments: BTreeMap<u64, AttachmentRecord>,
    events: Vec<Event>,
}

impl DeviceDataEnv {
    pub fn entries(&self) -> impl Iterator<Item = &PresentEntry> {
        self.entries.values()
    }

    pub fn entry(&self, host_base: SimAddress) -> Option<&PresentEntry> {
        self.entries.get(&host_base.0)
    }

    pub fn attachments(&self) -> impl Iterator<Item = &AttachmentRecord> {
        self.attachments.values()
    }

    pub fn attachment(&self, site: SimAddress) -> Option<&AttachmentRecord> {
        self.attachments.get(&site.0)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Entry whose host range contains `host`.
    pub fn entry_containing(&self, host: SimAddress) -> Option<&PresentEntry> {
        self.entries
            .range(..=host.0)
            .next_back()
            .map(|(_, e)| e)
            .filter(|e| e.host_contains(host))
    }

    /// Entry whose device range contains `device`.
    pub fn device_entry(&self, device: SimAddress) -> Option<&PresentEntry> {
        let (_, host) = self.device_index.range(..=device.0).next_back()?;
        self.entries.get(host).filter(|e| e.device_contains(device))
    }

    pub fn translate(&self, host: SimAddress) -> Option<SimAddress> {
        self.entry_containing(host)
            .map(|e| e.device_base.offset(host.0 - e.host_base.0))
    }

    /// Whether the whole object `[base, base+len)` lies in one entry.
    pub fn is_present(&self, base: SimAddress, len: u64) -> bool {
        self.entry_containing(base)
            .is_some_and(|e| base.0 + len <= e.host_base.0 + e.length)
    }

    fn overlapping(&self, base: SimAddress, len: u64) -> Option<&PresentEntry> {
        if len == 0 {
            return self.entries.get(&base.0);
        }
        let end = base.0 + len;
        self.entries
            .range(..end)
            .rev()
            .map(|(_, e)| e)
            .find(|e| e.length > 0 && e.host_base.0 + e.length > base.0 || e.host_base == base)
    }

    fn log(
        &mut self,
        op: EventOp,
        path: &str,
        space: &str,
        host: Option<AddrRange>,
        device: Option<AddrRange>,
        counters: (Option<u64>, Option<u64>),
    ) {
        self.events.push(Event {
            seq: self.events.len() as u64,
            op,
            path: path.to_string(),
            space: space.to_string(),
            host,
            device,
            before: counters.0,
            after: counters.1,
        });
    }

    fn insert_entry(&mut self, entry: PresentEntry) {
        self.device_index.insert(entry.device_base.0, entry.host_base.0);
        self.entries.insert(entry.host_base.0, entry);
    }

    /// Auto-registers unified-shared storage as present with an identity mapping.
    pub fn register_identity(&mut self, label: &str, base: SimAddress, len: u64, space: SpaceId, mem: &Memory) {
        self.insert_entry(PresentEntry {
            host_base: base,
            length: len,
            device_base: base,
            space,
            ref_count: 1,
            motion_out: false,
            ownership: Ownership::Identity,
            children: Vec::new(),
            label: label.to_string(),
        });
        let range = Some(AddrRange { start: base, len });
        self.log(EventOp::Present, label, &mem.space(space).name, range, range, (None, Some(1)));
    }

    /// Maps `path` (and, for records, everything its policy reaches) into `space`.
    #[allow(clippy::too_many_arguments)]
    pub fn enter_data(
        &mut self,
        path: &Path,
        motion: EnterMotion,
        policy: &PolicyName,
        space: SpaceId,
        ctx: HostCtx<'_>,
        mem: &mut Memory,
        diags: &mut Vec<Diagnostic>,
    ) -> Result<(), RuntimeError> {
        let obj = host_object(path, ctx, mem)?;
        let policy = match &obj.record {
            Some(t) => Some(ctx.policies.resolve(ctx.types.get(t).expect("registered"), policy)?),
            None => None,
        };
        let mut tr = Traversal::default();
        self.map_object(&obj, motion.direction(), policy, path, space, &mut tr, ctx, mem, diags)?;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn map_object(
        &mut self,
        obj: &HostObject,
        dir: Direction,
        policy: Option<Policy>,
        path: &Path,
        space: SpaceId,
        tr: &mut Traversal,
        ctx: HostCtx<'_>,
        mem: &mut Memory,
        diags: &mut Vec<Diagnostic>,
    ) -> Result<MapResult, RuntimeError> {
        if tr.visited.contains(&obj.base.0) {
            // reached again through a cycle: attach only
            return Ok(MapResult {
                device: self.translate(obj.base),
                entered: false,
            });
        }
        let label = path.to_string();
        let host_range = Some(AddrRange {
            start: obj.base,
            len: obj.len,
        });
        let (device, identity) = match self.entries.get_mut(&obj.base.0) {
            Some(e) if e.length == obj.len => {
                e.ref_count += 1;
                let (dev, count, ownership) = (e.device_base, e.ref_count, e.ownership);
                let space_name = mem.space(e.space).name.clone();
                let dev_range = Some(AddrRange { start: dev, len: obj.len });
                self.log(EventOp::RefInc, &label, &space_name, host_range, dev_range, (Some(count - 1), Some(count)));
                (dev, ownership == Ownership::Identity)
            }
            _ => {
                if self.overlapping(obj.base, obj.len).is_some() {
                    return Err(RuntimeError::Overlap { path: label });
                }
                let space_name = mem.space(space).name.clone();
                if dir == Direction::NoCreate {
                    self.log(EventOp::Skip, &label, &space_name, host_range, None, (None, None));
                    return Ok(MapResult {
                        device: None,
                        entered: false,
                    });
                }
                let dev = mem.alloc(space, obj.len, BlockRole::Device)?;
                let dev_range = Some(AddrRange { start: dev, len: obj.len });
                self.log(EventOp::Alloc, &label, &space_name, host_range, dev_range, (None, Some(1)));
                if dir.copies_in() {
                    mem.copy(obj.base, dev, obj.len)?;
                    self.log(EventOp::CopyIn, &label, &space_name, host_range, dev_range, (None, None));
                }
                self.insert_entry(PresentEntry {
                    host_base: obj.base,
                    length: obj.len,
                    device_base: dev,
                    space,
                    ref_count: 1,
                    motion_out: dir.copies_out(),
                    ownership: Ownership::Runtime,
                    children: Vec::new(),
                    label: label.clone(),
                });
                if let Some(t) = &obj.record {
                    // every pointer slot starts out holding its host value
                    copy_pointer_slots(obj.base, dev, t, ctx.types, mem)?;
                }
                (dev, false)
            }
        };
        tr.visited.insert(obj.base.0);
        if !identity {
            if let (Some(t), Some(policy)) = (&obj.record, &policy) {
                self.traverse_record(obj.base, device, t, policy, dir, obj.base, path, space, tr, ctx, mem, diags)?;
            }
        }
        Ok(MapResult {
            device: Some(device),
            entered: true,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn traverse_record(
        &mut self,
        host_rec: SimAddress,
        dev_rec: SimAddress,
        type_name: &str,
        policy: &Policy,
        dir: Direction,
        owner: SimAddress,
        path: &Path,
        space: SpaceId,
        tr: &mut Traversal,
        ctx: HostCtx<'_>,
        mem: &mut Memory,
        diags: &mut Vec<Diagnostic>,
    ) -> Result<(), RuntimeError> {
        let ty = ctx.types.get(type_name).expect("registered");
        let layout = ctx.types.layout(type_name).expect("registered");
        let mut aliases = Vec::new();
        for (i, member) in ty.members.iter().enumerate() {
            let host_slot = host_rec.offset(layout.offsets[i]);
            let dev_slot = dev_rec.offset(layout.offsets[i]);
            let mpath = path.clone().field(&member.name);
            let action = policy.member_action(member, dir);
            match &member.kind {
                MemberKind::Record(t) => {
                    if action.traverse {
                        let nested = ctx.policies.resolve(ctx.types.get(t).expect("registered"), &PolicyName::Default)?;
                        self.traverse_record(
                            host_slot, dev_slot, t, &nested, action.direction, owner, &mpath, space, tr, ctx, mem,
                            diags,
                        )?;
                    }
                }
                MemberKind::ShapedPointer { .. } | MemberKind::RecordPointer(_) => {
                    let hv = SimAddress(mem.read_u64(host_slot)?);
                    if hv.is_null() {
                        continue;
                    }
                    if !action.traverse {
                        if self.translate(hv).is_some() {
                            diags.push(Diagnostic::new(
                                Code::ExcludedPresent,
                                mpath.to_string(),
                                "pointee is present but the member is excluded; slot left untranslated",
                            ));
                        }
                        continue;
                    }
                    let child = match &member.kind {
                        MemberKind::ShapedPointer { shape, .. } => HostObject {
                            base: hv,
                            len: eval_shape(&shape.node, ty, layout, host_rec, mem)? * SLOT,
                            record: None,
                        },
                        MemberKind::RecordPointer(t) => HostObject {
                            base: hv,
                            len: ctx.types.layout(t).expect("registered").total_size,
                            record: Some(t.clone()),
                        },
                        _ => unreachable!(),
                    };
                    let child_policy = match &child.record {
                        Some(t) => Some(ctx.policies.resolve(ctx.types.get(t).expect("registered"), &PolicyName::Default)?),
                        None => None,
                    };
                    let result =
                        self.map_object(&child, action.direction, child_policy, &mpath, space, tr, ctx, mem, diags)?;
                    if result.entered {
                        if let Some(e) = self.entries.get_mut(&owner.0) {
                            e.children.push(ChildLink {
                                host_base: hv,
                                inherited: action.origin == Origin::Inherited,
                            });
                        }
                    }
                    if let Some(dev) = result.device {
                        self.attach_site(dev_slot, hv, dev, true, &mpath, mem)?;
                    }
                }
                MemberKind::AliasPointer { .. } => {
                    if action.traverse {
                        aliases.push(i);
                    }
                }
                MemberKind::Scalar(_) | MemberKind::InlineArray { .. } => {}
            }
        }
        // aliases go last so their sibling is already translated
        for i in aliases {
            let member = &ty.members[i];
            let MemberKind::AliasPointer { sibling, .. } = &member.kind else {
                unreachable!()
            };
            let mpath = path.clone().field(&member.name);
            let host_alias = SimAddress(mem.read_u64(host_rec.offset(layout.offsets[i]))?);
            if host_alias.is_null() {
                continue;
            }
            let s = ty.member_index(sibling).expect("validated alias");
            let host_sibling = SimAddress(mem.read_u64(host_rec.offset(layout.offsets[s]))?);
            let Some(dev_sibling) = (!host_sibling.is_null()).then(|| self.translate(host_sibling)).flatten() else {
                continue;
            };
            let MemberKind::ShapedPointer { shape, .. } = &ty.members[s].kind else {
                unreachable!("validated alias")
            };
            let sibling_len = eval_shape(&shape.node, ty, layout, host_rec, mem)? * SLOT;
            let offset = host_alias.diff(host_sibling);
            let dev = dev_sibling.shift(offset);
            if offset < 0 || offset as u64 >= sibling_len {
                diags.push(Diagnostic::new(
                    Code::AliasOutOfBounds,
                    mpath.to_string(),
                    format!(
                        "alias offset {offset} bytes lies outside `{sibling}` ({sibling_len} bytes); device address {dev} is not inside its mapping"
                    ),
                ));
            }
            self.attach_site(dev_rec.offset(layout.offsets[i]), host_alias, dev, true, &mpath, mem)?;
        }
        Ok(())
    }

    /// Writes `device_value` into the device slot at `site`. A structural
    /// attach (from traversal) creates the record once; explicit attaches
    /// count.
    fn attach_site(
        &mut self,
        site: SimAddress,
        host_value: SimAddress,
        device_value: SimAddress,
        structural: bool,
        path: &Path,
        mem: &mut Memory,
    ) -> Result<(), RuntimeError> {
        let owner = self.device_entry(site).expect("attach site inside a mapping");
        let (shared, space) = (owner.ownership == Ownership::Identity, owner.space);
        let before = self.attachments.get(&site.0).map(|r| r.counter).unwrap_or(0);
        let after = if structural && before > 0 { before } else { before + 1 };
        let first_path = self.attachments.get(&site.0).map_or_else(|| path.to_string(), |r| r.path.clone());
        self.attachments.insert(
            site.0,
            AttachmentRecord {
                site,
                counter: after,
                saved_host_value: host_value,
                path: first_path,
            },
        );
        if !shared {
            mem.write_u64(site, device_value.0)?;
        }
        let space_name = mem.space(space).name.clone();
        self.log(
            EventOp::Attach,
            &path.to_string(),
            &space_name,
            Some(AddrRange { start: host_value, len: 0 }),
            Some(AddrRange { start: site, len: SLOT }),
            (Some(before), Some(after)),
        );
        Ok(())
    }

    pub fn exit_data(
        &mut self,
        path: &Path,
        motion: ExitMotion,
        ctx: HostCtx<'_>,
        mem: &mut Memory,
        diags: &mut Vec<Diagnostic>,
    ) -> Result<(), RuntimeError> {
        let obj = host_object(path, ctx, mem)?;
        match self.entries.get(&obj.base.0) {
            Some(e) if e.length == obj.len => {
                self.exit_entry(obj.base, motion, mem, diags)?;
                Ok(())
            }
            _ if motion == ExitMotion::Delete => {
                diags.push(Diagnostic::new(Code::DeleteAbsent, path.to_string(), "delete of an absent object has no effect"));
                Ok(())
            }
            _ => Err(RuntimeError::NotPresent { path: path.to_string() }),
        }
    }

    fn exit_entry(
        &mut self,
        host_base: SimAddress,
        motion: ExitMotion,
        mem: &mut Memory,
        diags: &mut Vec<Diagnostic>,
    ) -> Result<(), RuntimeError> {
        let e = self.entries.get_mut(&host_base.0).expect("caller checked");
        if e.ownership == Ownership::Identity && e.ref_count == 1 {
            // unified storage stays present
            return Ok(());
        }
        let before = e.ref_count;
        e.ref_count = if motion == ExitMotion::Delete { 0 } else { before - 1 };
        let after = e.ref_count;
        let label = e.label.clone();
        let space_name = mem.space(e.space).name.clone();
        let host_range = Some(AddrRange {
            start: e.host_base,
            len: e.length,
        });
        let dev_range = Some(AddrRange {
            start: e.device_base,
            len: e.length,
        });
        self.log(EventOp::RefDec, &label, &space_name, host_range, dev_range, (Some(before), Some(after)));
        if after > 0 {
            return Ok(());
        }
        let entry = self.entries.remove(&host_base.0).expect("present");
        self.device_index.remove(&entry.device_base.0);
        let dev_end = entry.device_base.0 + entry.length;
        let sites: Vec<u64> = self.attachments.range(entry.device_base.0..dev_end).map(|(&s, _)| s).collect();
        for site in sites {
            let rec = self.attachments.remove(&site).expect("listed");
            if rec.counter > 1 {
                diags.push(Diagnostic::new(
                    Code::ForcedDetach,
                    &label,
                    format!("attachment at {} still had {} explicit attach(es)", rec.site, rec.counter - 1),
                ));
            }
            if entry.ownership != Ownership::Identity {
                mem.write_u64(rec.site, rec.saved_host_value.0)?;
            }
            self.log(
                EventOp::Detach,
                &rec.path,
                &space_name,
                Some(AddrRange {
                    start: rec.saved_host_value,
                    len: 0,
                }),
                Some(AddrRange { start: rec.site, len: SLOT }),
                (Some(rec.counter), Some(0)),
            );
        }
        let copy_back = motion == ExitMotion::Copyout || (entry.motion_out && motion != ExitMotion::Delete);
        if copy_back && entry.ownership != Ownership::Identity {
            mem.copy(entry.device_base, entry.host_base, entry.length)?;
            self.log(EventOp::CopyOut, &label, &space_name, host_range, dev_range, (None, None));
        }
        for link in &entry.children {
            let child_motion = if link.inherited { motion } else { ExitMotion::Release };
            if self.entries.contains_key(&link.host_base.0) {
                self.exit_entry(link.host_base, child_motion, mem, diags)?;
            } else {
                diags.push(Diagnostic::new(
                    Code::UnbalancedExit,
                    &label,
                    format!("child mapping at {} was already removed", link.host_base),
                ));
            }
        }
        match entry.ownership {
            Ownership::Runtime => {
                mem.free(entry.space, entry.device_base)?;
                self.log(EventOp::Free, &label, &space_name, host_range, dev_range, (None, None));
            }
            Ownership::External | Ownership::Identity => {
                self.log(EventOp::Remove, &label, &space_name, host_range, dev_range, (None, None));
            }
        }
        Ok(())
    }

    /// Device slot of the pointer at `path`, plus the pointer's host value.
    fn pointer_site(&self, path: &Path, ctx: HostCtx<'_>, mem: &Memory) -> Result<(SimAddress, SimAddress), RuntimeError> {
        let place = ctx.vars.resolve(path, ctx.types, mem)?;
        let site = self.translate(place.addr).ok_or_else(|| RuntimeError::NotPresent {
            path: path.prefix(path.steps.len().saturating_sub(1)).to_string(),
        })?;
        Ok((site, SimAddress(mem.read_u64(place.addr)?)))
    }

    pub fn attach(&mut self, path: &Path, ctx: HostCtx<'_>, mem: &mut Memory) -> Result<(), RuntimeError> {
        let (site, host_value) = self.pointer_site(path, ctx, mem)?;
        let target = (!host_value.is_null())
            .then(|| self.translate(host_value))
            .flatten()
            .ok_or_else(|| RuntimeError::NotPresent { path: path.to_string() })?;
        self.attach_site(site, host_value, target, false, path, mem)
    }

    pub fn detach(&mut self, path: &Path, ctx: HostCtx<'_>, mem: &mut Memory) -> Result<(), RuntimeError> {
        let (site, _) = self.pointer_site(path, ctx, mem)?;
        let rec = self
            .attachments
            .get_mut(&site.0)
            .ok_or_else(|| RuntimeError::NoAttachment { path: path.to_string() })?;
        let before = rec.counter;
        rec.counter -= 1;
        let rec = rec.clone();
        if rec.counter == 0 {
            self.attachments.remove(&site.0);
            let owner = self.device_entry(site).expect("attachment inside a mapping");
            if owner.ownership != Ownership::Identity {
                mem.write_u64(site, rec.saved_host_value.0)?;
            }
        }
        let space = mem.space_of(site).map(|s| mem.space(s).name.clone()).unwrap_or_default();
        self.log(
            EventOp::Detach,
            &path.to_string(),
            &space,
            Some(AddrRange {
                start: rec.saved_host_value,
                len: 0,
            }),
            Some(AddrRange { start: site, len: SLOT }),
            (Some(before), Some(rec.counter)),
        );
        Ok(())
    }

    /// Copies between host and device for an object inside one mapping.
    /// Attached pointer slots keep their value on each side.
    pub fn update(&mut self, path: &Path, to_host: bool, ctx: HostCtx<'_>, mem: &mut Memory) -> Result<(), RuntimeError> {
        let obj = host_object(path, ctx, mem)?;
        if !self.is_present(obj.base, obj.len) {
            return Err(RuntimeError::NotPresent { path: path.to_string() });
        }
        let entry = self.entry_containing(obj.base).expect("present");
        let (identity, space) = (entry.ownership == Ownership::Identity, entry.space);
        let dev = self.translate(obj.base).expect("present");
        if !identity {
            let (from, to) = if to_host { (dev, obj.base) } else { (obj.base, dev) };
            let mut bytes = mem.read_bytes(from, obj.len)?;
            for rec in self.attachments.range(dev.0..dev.0 + obj.len).map(|(_, r)| r) {
                let off = (rec.site.0 - dev.0) as usize;
                let keep = if to_host {
                    rec.saved_host_value.0
                } else {
                    mem.read_u64(rec.site)?
                };
                bytes[off..off + 8].copy_from_slice(&keep.to_le_bytes());
            }
            mem.write_bytes(to, &bytes)?;
        }
        let op = if to_host { EventOp::UpdateHost } else { EventOp::UpdateDevice };
        let space_name = mem.space(space).name.clone();
        self.log(
            op,
            &path.to_string(),
            &space_name,
            Some(AddrRange {
                start: obj.base,
                len: obj.len,
            }),
            Some(AddrRange { start: dev, len: obj.len }),
            (None, None),
        );
        Ok(())
    }

    /// Registers caller-provided device memory for `path` without copying.
    pub fn map_external(&mut self, path: &Path, device: SimAddress, ctx: HostCtx<'_>, mem: &Memory) -> Result<(), RuntimeError> {
        let obj = host_object(path, ctx, mem)?;
        if self.translate(obj.base).is_some() || self.overlapping(obj.base, obj.len).is_some() {
            return Err(RuntimeError::AlreadyPresent { path: path.to_string() });
        }
        let bad = || RuntimeError::BadDeviceRange {
            path: path.to_string(),
            addr: device,
            len: obj.len,
        };
        let (block_base, block) = mem.block_containing(device).ok_or_else(bad)?;
        let fits = block.role == BlockRole::Device && device.0 + obj.len <= block_base.0 + block.size;
        let taken = self
            .entries
            .values()
            .any(|e| e.device_base.0 < device.0 + obj.len.max(1) && device.0 < e.device_base.0 + e.length.max(1));
        if !fits || taken {
            return Err(bad());
        }
        let space = block.space;
        self.insert_entry(PresentEntry {
            host_base: obj.base,
            length: obj.len,
            device_base: device,
            space,
            ref_count: 1,
            motion_out: false,
            ownership: Ownership::External,
            children: Vec::new(),
            label: path.to_string(),
        });
        self.log(
            EventOp::MapExternal,
            &path.to_string(),
            &mem.space(space).name,
            Some(AddrRange {
                start: obj.base,
                len: obj.len,
            }),
            Some(AddrRange {
                start: device,
                len: obj.len,
            }),
            (None, Some(1)),
        );
        Ok(())
    }

    fn hop(&self, value: SimAddress, path: &Path, mem: &Memory) -> Result<(), DeviceFault> {
        let fault = |code, message: String| DeviceFault {
            code,
            path: path.to_string(),
            message,
        };
        if value.is_null() {
            return Err(fault(Code::NullDeref, "device copy of the pointer is null".into()));
        }
        if self.device_entry(value).is_some() {
            return Ok(());
        }
        match mem.block_containing(value) {
            Some((_, b)) if b.role == BlockRole::Host => Err(fault(
                Code::PartialDeepCopy,
                format!("device copy holds host address {value}; the member was not deep-copied"),
            )),
            _ => Err(fault(
                Code::BadDeviceAddress,
                format!("device copy holds {value}, which is not inside any present device range"),
            )),
        }
    }

    /// Walks `path` on the device copy, hop by hop.
    pub fn resolve_device(&self, path: &Path, ctx: HostCtx<'_>, mem: &Memory) -> Result<DevicePlace, DeviceFault> {
        let root = Path::var(&path.root);
        let not_present = || DeviceFault {
            code: Code::NotPresent,
            path: path.root.clone(),
            message: "variable is not present on the device".into(),
        };
        let var = ctx.vars.get(&path.root).ok_or_else(not_present)?;
        let mut addr = self.translate(var.addr).ok_or_else(not_present)?;
        if !self.is_present(var.addr, var.size) && path.steps.is_empty() {
            return Err(not_present());
        }
        let mut kind = match &var.kind {
            VarKind::Scalar(e) => DevKind::Scalar(*e),
            VarKind::Array(e, n) => DevKind::InlineArray(*e, *n),
            VarKind::Record(t) => DevKind::Record(t.clone()),
        };
        let mut cur = root;
        let invalid = |p: &Path| DeviceFault {
            code: Code::Invalid,
            path: p.to_string(),
            message: "path does not match the declared types".into(),
        };
        let read = |a: SimAddress, p: &Path| {
            mem.read_u64(a).map(SimAddress).map_err(|_| DeviceFault {
                code: Code::BadDeviceAddress,
                path: p.to_string(),
                message: format!("{a} is not readable device memory"),
            })
        };
        for step in &path.steps {
            let next = {
                let mut p = cur.clone();
                p.steps.push(step.clone());
                p
            };
            match (step, &kind) {
                (PathStep::Field(name), DevKind::Record(t) | DevKind::Pointer(MemberKind::RecordPointer(t))) => {
                    if matches!(kind, DevKind::Pointer(_)) {
                        let v = read(addr, &cur)?;
                        self.hop(v, &cur, mem)?;
                        addr = v;
                    }
                    let ty = ctx.types.get(t).ok_or_else(|| invalid(&next))?;
                    let layout = ctx.types.layout(t).expect("registered");
                    let i = ty.member_index(name).ok_or_else(|| invalid(&next))?;
                    addr = addr.offset(layout.offsets[i]);
                    kind = match &ty.members[i].kind {
                        MemberKind::Scalar(e) => DevKind::Scalar(*e),
                        MemberKind::InlineArray { elem, .. } => DevKind::InlineArray(*elem, layout.sizes[i] / SLOT),
                        MemberKind::Record(t) => DevKind::Record(t.clone()),
                        other => DevKind::Pointer(other.clone()),
                    };
                }
                (PathStep::Index(i), DevKind::InlineArray(elem, len)) => {
                    if i >= len {
                        return Err(DeviceFault {
                            code: Code::OutOfBounds,
                            path: cur.to_string(),
                            message: format!("index {i} out of bounds for length {len}"),
                        });
                    }
                    addr = addr.offset(i * SLOT);
                    kind = DevKind::Scalar(*elem);
                }
                (
                    PathStep::Index(i),
                    DevKind::Pointer(MemberKind::ShapedPointer { elem, .. } | MemberKind::AliasPointer { elem, .. }),
                ) => {
                    let elem = *elem;
                    let v = read(addr, &cur)?;
                    self.hop(v, &cur, mem)?;
                    let entry = self.device_entry(v).expect("hop checked");
                    let target = v.offset(i * SLOT);
                    if target.0 + SLOT > entry.device_base.0 + entry.length {
                        let len = (entry.device_base.0 + entry.length).saturating_sub(v.0) / SLOT;
                        return Err(DeviceFault {
                            code: Code::OutOfBounds,
                            path: cur.to_string(),
                            message: format!("index {i} out of bounds for device range of {len} elements"),
                        });
                    }
                    addr = target;
                    kind = DevKind::Scalar(elem);
                }
                _ => return Err(invalid(&next)),
            }
            cur = next;
        }
        match kind {
            DevKind::Scalar(elem) => Ok(DevicePlace { addr, elem }),
            _ => Err(invalid(&cur)),
        }
    }

    /// Pointer members reachable from the device copy of `path` whose slot
    /// holds a non-null address outside every present device range.
    pub fn untranslated_slots(&self, path: &Path, ctx: HostCtx<'_>, mem: &Memory) -> Result<Vec<Path>, TypeError> {
        let obj = host_object(path, ctx, mem)?;
        let mut out = Vec::new();
        if let (Some(t), Some(dev)) = (&obj.record, self.translate(obj.base)) {
            let mut visited = BTreeSet::from([dev.0]);
            self.walk_device(dev, t, path, ctx.types, mem, &mut visited, &mut out)?;
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn walk_device(
        &self,
        dev_rec: SimAddress,
        type_name: &str,
        path: &Path,
        types: &TypeRegistry,
        mem: &Memory,
        visited: &mut BTreeSet<u64>,
        out: &mut Vec<Path>,
    ) -> Result<(), TypeError> {
        let ty = types.get(type_name).expect("registered");
        let layout = types.layout(type_name).expect("registered");
        for (i, member) in ty.members.iter().enumerate() {
            let slot = dev_rec.offset(layout.offsets[i]);
            let mpath = path.clone().field(&member.name);
            match &member.kind {
                MemberKind::Record(t) => self.walk_device(slot, t, &mpath, types, mem, visited, out)?,
                kind if kind.is_pointer() => {
                    let v = SimAddress(mem.read_u64(slot)?);
                    if v.is_null() {
                        continue;
                    }
                    if self.device_entry(v).is_none() {
                        out.push(mpath);
                    } else if let MemberKind::RecordPointer(t) = kind {
                        if visited.insert(v.0) {
                            self.walk_device(v, t, &mpath, types, mem, visited, out)?;
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Copies the host value of every pointer slot (including those inside
/// embedded records) into the fresh device copy.
fn copy_pointer_slots(
    host_rec: SimAddress,
    dev_rec: SimAddress,
    type_name: &str,
    types: &TypeRegistry,
    mem: &mut Memory,
) -> Result<(), MemoryError> {
    let ty = types.get(type_name).expect("registered");
    let layout = types.layout(type_name).expect("registered");
    for (i, member) in ty.members.iter().enumerate() {
        let off = layout.offsets[i];
        match &member.kind {
            MemberKind::Record(t) => copy_pointer_slots(host_rec.offset(off), dev_rec.offset(off), t, types, mem)?,
            k if k.is_pointer() => {
                let v = mem.read_u64(host_rec.offset(off))?;
                mem.write_u64(dev_rec.offset(off), v)?;
            }
            _ => {}
        }
    }
    Ok(())
}
