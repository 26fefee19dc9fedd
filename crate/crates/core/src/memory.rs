//! Simulated memory spaces with allocator traits.
//!
//! Every space owns a fixed, disjoint window of the 64-bit simulated address
//! space. Space `i` (in creation order) starts at `(i + 1) << 40`. The host
//! space and the default device space are created first, so their windows are
//! stable across runs. Allocation is a bump pointer; freed addresses are never
//! handed out again.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub const HOST_SPACE: &str = "host";
pub const DEVICE_SPACE: &str = "device";

const WINDOW_BITS: u32 = 40;
const BUILTIN_CAPACITY: u64 = 1 << 32;

/// A simulated address. Zero is null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimAddress(pub u64);

impl SimAddress {
    pub const NULL: SimAddress = SimAddress(0);

    pub fn is_null(self) -> bool {
        self.0 == 0
    }

    pub fn offset(self, bytes: u64) -> SimAddress {
        SimAddress(self.0.wrapping_add(bytes))
    }

    /// Signed byte distance `self - base`.
    pub fn diff(self, base: SimAddress) -> i64 {
        self.0.wrapping_sub(base.0) as i64
    }

    pub fn shift(self, bytes: i64) -> SimAddress {
        SimAddress(self.0.wrapping_add(bytes as u64))
    }
}

impl fmt::Display for SimAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl Serialize for SimAddress {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceTrait {
    Default,
    LargeCapacity,
    LowLatency,
    HighBandwidth,
    TeamLocal(u32),
    UnifiedShared,
}

impl fmt::Display for SpaceTrait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceTrait::Default => f.write_str("default"),
            SpaceTrait::LargeCapacity => f.write_str("large_capacity"),
            SpaceTrait::LowLatency => f.write_str("low_latency"),
            SpaceTrait::HighBandwidth => f.write_str("high_bandwidth"),
            SpaceTrait::TeamLocal(t) => write!(f, "team_local({t})"),
            SpaceTrait::UnifiedShared => f.write_str("unified_shared"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpaceId(pub usize);

#[derive(Debug, Clone)]
pub struct MemorySpace {
    pub id: SpaceId,
    pub name: String,
    pub trait_: SpaceTrait,
    pub capacity: u64,
    pub allocated: u64,
    pub base: SimAddress,
    pub extent: u64,
    cursor: u64,
}

impl MemorySpace {
    pub fn contains(&self, addr: SimAddress) -> bool {
        addr.0 >= self.base.0 && addr.0 - self.base.0 < self.extent
    }
}

/// Whether a block holds host-side program data or a device copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRole {
    Host,
    Device,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub space: SpaceId,
    pub size: u64,
    pub rounded: u64,
    pub role: BlockRole,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("memory space `{0}` already exists")]
    DuplicateSpace(String),
    #[error("memory space `{0}` needs a positive capacity")]
    ZeroCapacity(String),
    #[error("unknown memory space `{0}`")]
    UnknownSpace(String),
    #[error("allocating {requested} bytes in `{space}` exceeds its capacity ({allocated} of {capacity} in use)")]
    CapacityExceeded {
        space: String,
        requested: u64,
        allocated: u64,
        capacity: u64,
    },
    #[error("{addr} was already freed")]
    DoubleFree { addr: SimAddress },
    #[error("{addr} is not an allocation of `{space}`")]
    ForeignAddress { space: String, addr: SimAddress },
    #[error("access of {len} bytes at {addr} is outside every live allocation")]
    Unmapped { addr: SimAddress, len: u64 },
}

#[derive(Debug, Clone)]
pub struct Memory {
    spaces: Vec<MemorySpace>,
    blocks: BTreeMap<u64, Block>,
    freed: BTreeSet<u64>,
}

impl Default for Memory {
    fn default() -> Self {
        Self::new()
    }
}

impl Memory {
    /// Fresh memory with the `host` and `device` spaces.
    pub fn new() -> Self {
        let mut mem = Self {
            spaces: Vec::new(),
            blocks: BTreeMap::new(),
            freed: BTreeSet::new(),
        };
        mem.create_space(HOST_SPACE, SpaceTrait::Default, BUILTIN_CAPACITY)
            .expect("fresh memory");
        mem.create_space(DEVICE_SPACE, SpaceTrait::Default, BUILTIN_CAPACITY)
            .expect("fresh memory");
        mem
    }

    pub fn host(&self) -> SpaceId {
        SpaceId(0)
    }

    pub fn device(&self) -> SpaceId {
        SpaceId(1)
    }

    pub fn create_space(
        &mut self,
        name: &str,
        trait_: SpaceTrait,
        capacity: u64,
    ) -> Result<SpaceId, MemoryError> {
        if self.space_by_name(name).is_some() {
            return Err(MemoryError::DuplicateSpace(name.to_string()));
        }
        if capacity == 0 {
            return Err(MemoryError::ZeroCapacity(name.to_string()));
        }
        let id = SpaceId(self.spaces.len());
        let extent = 1u64 << WINDOW_BITS;
        self.spaces.push(MemorySpace {
            id,
            name: name.to_string(),
            trait_,
            capacity: capacity.min(extent),
            allocated: 0,
            base: SimAddress(((id.0 as u64) + 1) << WINDOW_BITS),
            extent,
            cursor: 0,
        });
        Ok(id)
    }

    pub fn spaces(&self) -> &[MemorySpace] {
        &self.spaces
    }

    pub fn space(&self, id: SpaceId) -> &MemorySpace {
        &self.spaces[id.0]
    }

    pub fn space_by_name(&self, name: &str) -> Option<SpaceId> {
        self.spaces.iter().find(|s| s.name == name).map(|s| s.id)
    }

    /// Space whose address window contains `addr`.
    pub fn space_of(&self, addr: SimAddress) -> Option<SpaceId> {
        self.spaces.iter().find(|s| s.contains(addr)).map(|s| s.id)
    }

    /// Bump-allocates `size` bytes (rounded up to 8), zero-initialized.
    pub fn alloc(&mut self, space: SpaceId, size: u64, role: BlockRole) -> Result<SimAddress, MemoryError> {
        let rounded = size.div_ceil(8) * 8;
        let sp = &mut self.spaces[space.0];
        let step = rounded.max(8);
        if sp.allocated + rounded > sp.capacity || sp.cursor + step > sp.extent {
            return Err(MemoryError::CapacityExceeded {
                space: sp.name.clone(),
                requested: size,
                allocated: sp.allocated,
                capacity: sp.capacity,
            });
        }
        let addr = sp.base.offset(sp.cursor);
        sp.cursor += step;
        sp.allocated += rounded;
        self.blocks.insert(
            addr.0,
            Block {
                space,
                size,
                rounded,
                role,
                bytes: vec![0; rounded as usize],
            },
        );
        Ok(addr)
    }

    pub fn free(&mut self, space: SpaceId, addr: SimAddress) -> Result<(), MemoryError> {
        match self.blocks.get(&addr.0) {
            Some(block) if block.space == space => {
                let rounded = block.rounded;
                self.blocks.remove(&addr.0);
                self.freed.insert(addr.0);
                self.spaces[space.0].allocated -= rounded;
                Ok(())
            }
            None if self.freed.contains(&addr.0) && self.spaces[space.0].contains(addr) => {
                Err(MemoryError::DoubleFree { addr })
            }
            _ => Err(MemoryError::ForeignAddress {
                space: self.spaces[space.0].name.clone(),
                addr,
            }),
        }
    }

    /// Live block that starts exactly at `addr`.
    pub fn block_at(&self, addr: SimAddress) -> Option<&Block> {
        self.blocks.get(&addr.0)
    }

    /// Live block containing `addr` as `(base, block)`.
    pub fn block_containing(&self, addr: SimAddress) -> Option<(SimAddress, &Block)> {
        let (&base, block) = self.blocks.range(..=addr.0).next_back()?;
        if addr.0 - base < block.size.max(1) {
            Some((SimAddress(base), block))
        } else {
            None
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = (SimAddress, &Block)> {
        self.blocks.iter().map(|(&a, b)| (SimAddress(a), b))
    }

    fn locate(&self, addr: SimAddress, len: u64) -> Result<(u64, usize), MemoryError> {
        let unmapped = MemoryError::Unmapped { addr, len };
        let (&base, block) = self.blocks.range(..=addr.0).next_back().ok_or(unmapped.clone())?;
        let off = addr.0 - base;
        if off.checked_add(len).is_some_and(|end| end <= block.rounded) {
            Ok((base, off as usize))
        } else {
            Err(unmapped)
        }
    }

    pub fn read_bytes(&self, addr: SimAddress, len: u64) -> Result<Vec<u8>, MemoryError> {
        if len == 0 {
            return Ok(Vec::new());
        }
        let (base, off) = self.locate(addr, len)?;
        Ok(self.blocks[&base].bytes[off..off + len as usize].to_vec())
    }

    pub fn write_bytes(&mut self, addr: SimAddress, data: &[u8]) -> Result<(), MemoryError> {
        if data.is_empty() {
            return Ok(());
        }
        let (base, off) = self.locate(addr, data.len() as u64)?;
        let block = self.blocks.get_mut(&base).expect("located block");
        block.bytes[off..off + data.len()].copy_from_slice(data);
        Ok(())
    }

    pub fn copy(&mut self, from: SimAddress, to: SimAddress, len: u64) -> Result<(), MemoryError> {
        let data = self.read_bytes(from, len)?;
        self.write_bytes(to, &data)
    }

    pub fn read_u64(&self, addr: SimAddress) -> Result<u64, MemoryError> {
        let bytes = self.read_bytes(addr, 8)?;
        Ok(u64::from_le_bytes(bytes.try_into().expect("8 bytes")))
    }

    pub fn write_u64(&mut self, addr: SimAddress, value: u64) -> Result<(), MemoryError> {
        self.write_bytes(addr, &value.to_le_bytes())
    }

    /// Snapshot of every live host-role block, keyed by base address.
    pub fn host_image(&self) -> BTreeMap<u64, Vec<u8>> {
        self.blocks
            .iter()
            .filter(|(_, b)| b.role == BlockRole::Host)
            .map(|(&a, b)| (a, b.bytes.clone()))
            .collect()
    }

    /// Sum of rounded live allocation sizes in `space`.
    pub fn live_bytes(&self, space: SpaceId) -> u64 {
        self.blocks.values().filter(|b| b.space == space).map(|b| b.rounded).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builtin_spaces_are_disjoint() {
        let mut mem = Memory::new();
        let hbm = mem.create_space("hbm", SpaceTrait::HighBandwidth, 1 << 20).unwrap();
        let spaces = mem.spaces();
        for a in spaces {
            for b in spaces {
                if a.id != b.id {
                    assert!(!a.contains(b.base));
                }
            }
        }
        assert_ne!(mem.space(hbm).base, mem.space(mem.host()).base);
    }

    #[test]
    fn duplicate_space() {
        let mut mem = Memory::new();
        mem.create_space("hbm", SpaceTrait::HighBandwidth, 1 << 20).unwrap();
        assert_eq!(
            mem.create_space("hbm", SpaceTrait::LargeCapacity, 1 << 20),
            Err(MemoryError::DuplicateSpace("hbm".into()))
        );
    }

    #[test]
    fn team_local_carries_team_id() {
        let mut mem = Memory::new();
        let t0 = mem.create_space("team0", SpaceTrait::TeamLocal(0), 64 * 1024).unwrap();
        assert_eq!(mem.space(t0).trait_, SpaceTrait::TeamLocal(0));
    }

    #[test]
    fn alloc_accounting_and_capacity() {
        let mut mem = Memory::new();
        let hbm = mem.create_space("hbm", SpaceTrait::HighBandwidth, 1 << 20).unwrap();
        let a = mem.alloc(hbm, 24, BlockRole::Device).unwrap();
        assert!(mem.space(hbm).contains(a));
        assert_eq!(mem.space(hbm).allocated, 24);

        let small = mem.create_space("small", SpaceTrait::LowLatency, 16).unwrap();
        assert!(matches!(
            mem.alloc(small, 24, BlockRole::Device),
            Err(MemoryError::CapacityExceeded { .. })
        ));
        // rounding: 3 bytes account as 8
        mem.alloc(small, 3, BlockRole::Device).unwrap();
        assert_eq!(mem.space(small).allocated, 8);
    }

    #[test]
    fn double_free_and_foreign_address() {
        let mut mem = Memory::new();
        let dev = mem.device();
        let a = mem.alloc(dev, 16, BlockRole::Device).unwrap();
        mem.free(dev, a).unwrap();
        assert_eq!(mem.free(dev, a), Err(MemoryError::DoubleFree { addr: a }));
        let h = mem.alloc(mem.host(), 8, BlockRole::Host).unwrap();
        assert!(matches!(mem.free(dev, h), Err(MemoryError::ForeignAddress { .. })));
    }

    #[test]
    fn freed_addresses_are_not_recycled() {
        let mut mem = Memory::new();
        let dev = mem.device();
        let a = mem.alloc(dev, 16, BlockRole::Device).unwrap();
        mem.free(dev, a).unwrap();
        let b = mem.alloc(dev, 16, BlockRole::Device).unwrap();
        assert_ne!(a, b);
        assert!(mem.read_u64(a).is_err());
    }

    #[test]
    fn zero_size_allocations_get_distinct_addresses() {
        let mut mem = Memory::new();
        let dev = mem.device();
        let a = mem.alloc(dev, 0, BlockRole::Device).unwrap();
        let b = mem.alloc(dev, 0, BlockRole::Device).unwrap();
        assert_ne!(a, b);
        assert_eq!(mem.space(dev).allocated, 0);
    }

    #[test]
    fn word_round_trip() {
        let mut mem = Memory::new();
        let a = mem.alloc(mem.host(), 16, BlockRole::Host).unwrap();
        mem.write_u64(a.offset(8), 0xdead_beef).unwrap();
        assert_eq!(mem.read_u64(a.offset(8)).unwrap(), 0xdead_beef);
        assert!(mem.read_u64(a.offset(16)).is_err());
    }

    proptest! {
        #[test]
        fn accounting_conservation(ops in proptest::collection::vec((0u64..100, any::<bool>()), 1..60)) {
            let mut mem = Memory::new();
            let sp = mem.create_space("s", SpaceTrait::LargeCapacity, 1 << 16).unwrap();
            let mut live: Vec<SimAddress> = Vec::new();
            for (size, free) in ops {
                if free && !live.is_empty() {
                    let addr = live.remove(size as usize % live.len());
                    mem.free(sp, addr).unwrap();
                } else {
                    live.push(mem.alloc(sp, size, BlockRole::Device).unwrap());
                }
                prop_assert_eq!(mem.space(sp).allocated, mem.live_bytes(sp));
            }
            // live allocations never overlap
            let mut ranges: Vec<(u64, u64)> = live
                .iter()
                .map(|a| (a.0, a.0 + mem.block_at(*a).unwrap().rounded))
                .collect();
            ranges.sort();
            for w in ranges.windows(2) {
                prop_assert!(w[0].1 <= w[1].0);
            }
        }
    }
}
