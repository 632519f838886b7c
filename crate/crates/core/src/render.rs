//! Stand-in for the GPU side: a deduplicated, refcounted asset cache that
//! models VRAM, shared vs per-view frame work, and per-player frame digests.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::ecs::EntityId;
use crate::storage::PlayerId;

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Self(FNV_OFFSET)
    }
}

impl Fnv64 {
    pub fn resume(state: u64) -> Self {
        Self(state)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

/// Content identifier. Equal ids always name identical bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AssetId(pub String);

impl AssetId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssetError {
    #[error("asset {0} has zero size")]
    ZeroSize(AssetId),
    #[error("asset {asset} is cached with {cached} bytes, reload requested {requested}")]
    SizeMismatch {
        asset: AssetId,
        cached: u64,
        requested: u64,
    },
    #[error("{holder} holds no handle to asset {asset}")]
    NotHeld { asset: AssetId, holder: EntityId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetHandle {
    pub asset: AssetId,
    pub holder: EntityId,
}

#[derive(Debug, Clone)]
struct AssetEntry {
    size: u64,
    refcount: u64,
    holders: BTreeMap<EntityId, u32>,
}

/// Refcounted asset store. Zero-ref entries are evicted immediately.
#[derive(Debug, Clone, Default)]
pub struct AssetCache {
    entries: BTreeMap<AssetId, AssetEntry>,
    asset_bytes: u64,
    framebuffer_bytes: u64,
    views: u64,
}

impl AssetCache {
    pub fn new(framebuffer_bytes: u64) -> Self {
        Self {
            framebuffer_bytes,
            ..Self::default()
        }
    }

    /// Checks that a load would succeed without mutating anything.
    pub fn check(&self, asset: &AssetId, size: u64) -> Result<(), AssetError> {
        if size == 0 {
            return Err(AssetError::ZeroSize(asset.clone()));
        }
        match self.entries.get(asset) {
            Some(e) if e.size != size => Err(AssetError::SizeMismatch {
                asset: asset.clone(),
                cached: e.size,
                requested: size,
            }),
            _ => Ok(()),
        }
    }

    pub fn load(&mut self, asset: &AssetId, size: u64, holder: EntityId) -> Result<AssetHandle, AssetError> {
        self.check(asset, size)?;
        let entry = self.entries.entry(asset.clone()).or_insert_with(|| {
            self.asset_bytes += size;
            AssetEntry {
                size,
                refcount: 0,
                holders: BTreeMap::new(),
            }
        });
        entry.refcount += 1;
        *entry.holders.entry(holder).or_default() += 1;
        Ok(AssetHandle {
            asset: asset.clone(),
            holder,
        })
    }

    /// Drops one handle. Returns the evicted size when the last handle goes.
    pub fn release(&mut self, asset: &AssetId, holder: EntityId) -> Result<Option<u64>, AssetError> {
        let not_held = || AssetError::NotHeld {
            asset: asset.clone(),
            holder,
        };
        let entry = self.entries.get_mut(asset).ok_or_else(not_held)?;
        let count = entry.holders.get_mut(&holder).ok_or_else(not_held)?;
        *count -= 1;
        if *count == 0 {
            entry.holders.remove(&holder);
        }
        entry.refcount -= 1;
        if entry.refcount > 0 {
            return Ok(None);
        }
        let size = entry.size;
        self.entries.remove(asset);
        self.asset_bytes -= size;
        Ok(Some(size))
    }

    pub fn refcount(&self, asset: &AssetId) -> u64 {
        self.entries.get(asset).map_or(0, |e| e.refcount)
    }

    pub fn handles_held(&self, asset: &AssetId, holder: EntityId) -> u32 {
        self.entries
            .get(asset)
            .and_then(|e| e.holders.get(&holder).copied())
            .unwrap_or(0)
    }

    pub fn contains(&self, asset: &AssetId) -> bool {
        self.entries.contains_key(asset)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn asset_bytes(&self) -> u64 {
        self.asset_bytes
    }

    pub fn framebuffer_bytes(&self) -> u64 {
        self.framebuffer_bytes
    }

    pub fn set_framebuffer_bytes(&mut self, bytes: u64) {
        self.framebuffer_bytes = bytes;
    }

    pub fn views(&self) -> u64 {
        self.views
    }

    pub(crate) fn attach_view(&mut self) {
        self.views += 1;
    }

    pub(crate) fn detach_view(&mut self) {
        self.views -= 1;
    }

    /// Distinct cached asset bytes plus one framebuffer per active view.
    pub fn total_vram(&self) -> u64 {
        self.asset_bytes + self.framebuffer_bytes * self.views
    }
}

/// GPU work charged in one tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameWork {
    /// Charged once per tick when at least one view renders.
    pub shared_units: u64,
    /// Sum of per-view units across every rendered view.
    pub per_view_units: u64,
}

impl FrameWork {
    pub fn total(&self) -> u64 {
        self.shared_units + self.per_view_units
    }
}

/// Hash of what one player observes in one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameDigest {
    pub player: PlayerId,
    pub tick: u64,
    pub hash: u64,
}

/// GPU accounting for a tick: shared work once if anyone is watching, plus
/// per-view work for each player.
pub fn frame_work(shared_units: u64, per_view_units: u64, views: u64) -> FrameWork {
    FrameWork {
        shared_units: if views > 0 { shared_units } else { 0 },
        per_view_units: per_view_units * views,
    }
}
