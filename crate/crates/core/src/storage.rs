//! Capsule storage: the single global store shared by every player, plus one
//! local store per active player.
//!
//! Every entity and every gameplay event carries a [`Scope`]. Routing sends
//! `Scope::Global` state to the global store and `Scope::Local(p)` state to
//! player `p`'s local store. A player observes the global store plus its own
//! local store and nothing else.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::ecs::EntityId;
use crate::error::EngineError;
use crate::events::GameplayEvent;

/// Bytes charged for an empty local store (session table entry, queue
/// headers, cursor).
pub const LOCAL_STORAGE_OVERHEAD: u64 = 256;

/// Engine-lifetime player identifier. Never reissued after a player leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlayerId(pub u64);

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Ownership tag attached to every entity and event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Global,
    Local(PlayerId),
}

impl Scope {
    pub fn owner(self) -> Option<PlayerId> {
        match self {
            Scope::Global => None,
            Scope::Local(p) => Some(p),
        }
    }

    /// True if state with this scope is observable by `player`.
    pub fn visible_to(self, player: PlayerId) -> bool {
        match self {
            Scope::Global => true,
            Scope::Local(owner) => owner == player,
        }
    }
}

/// Result of routing a scope: which store holds the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreHandle {
    Global,
    Local(PlayerId),
}

/// Everything released when a local store is destroyed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReclaimReport {
    pub player: Option<PlayerId>,
    pub entities_despawned: u64,
    pub ram_bytes: u64,
    pub vram_bytes: u64,
    pub assets_evicted: Vec<String>,
    pub events_dropped: u64,
}

impl ReclaimReport {
    pub(crate) fn absorb(&mut self, other: ReclaimReport) {
        self.entities_despawned += other.entities_despawned;
        self.ram_bytes += other.ram_bytes;
        self.vram_bytes += other.vram_bytes;
        self.assets_evicted.extend(other.assets_evicted);
        self.events_dropped += other.events_dropped;
    }
}

/// The one shared store. Only [`CapsuleStorage`] can construct it.
#[derive(Debug)]
pub struct GlobalStorage {
    entities: BTreeSet<EntityId>,
    pub(crate) events: VecDeque<GameplayEvent>,
    entity_bytes: u64,
    pub(crate) event_bytes: u64,
    next_ordinal: u64,
}

impl GlobalStorage {
    fn new() -> Self {
        Self {
            entities: BTreeSet::new(),
            events: VecDeque::new(),
            entity_bytes: 0,
            event_bytes: 0,
            next_ordinal: 0,
        }
    }

    pub fn entities(&self) -> &BTreeSet<EntityId> {
        &self.entities
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    pub fn bytes(&self) -> u64 {
        self.entity_bytes + self.event_bytes
    }
}

/// Per-player store: the player's private entities and event queue.
#[derive(Debug)]
pub struct LocalStorage {
    owner: PlayerId,
    entities: BTreeSet<EntityId>,
    pub(crate) events: VecDeque<GameplayEvent>,
    entity_bytes: u64,
    pub(crate) event_bytes: u64,
    next_ordinal: u64,
    /// Highest global seq already delivered to this player (or issued before
    /// the player joined).
    pub(crate) global_cursor: u64,
    /// Running fold of every event applied to this player.
    pub(crate) event_state: u64,
    pub(crate) events_applied: u64,
}

impl LocalStorage {
    fn new(owner: PlayerId, global_cursor: u64) -> Self {
        Self {
            owner,
            entities: BTreeSet::new(),
            events: VecDeque::new(),
            entity_bytes: 0,
            event_bytes: 0,
            next_ordinal: 0,
            global_cursor,
            event_state: crate::render::FNV_OFFSET,
            events_applied: 0,
        }
    }

    pub fn owner(&self) -> PlayerId {
        self.owner
    }

    pub fn entities(&self) -> &BTreeSet<EntityId> {
        &self.entities
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    pub fn event_state(&self) -> u64 {
        self.event_state
    }

    pub fn events_applied(&self) -> u64 {
        self.events_applied
    }

    pub fn bytes(&self) -> u64 {
        LOCAL_STORAGE_OVERHEAD + self.entity_bytes + self.event_bytes
    }
}

/// Global store plus the map of local stores, keyed by active player.
#[derive(Debug)]
pub struct CapsuleStorage {
    global: GlobalStorage,
    locals: BTreeMap<PlayerId, LocalStorage>,
    retired: BTreeSet<PlayerId>,
    /// Last issued event seq; one counter for every scope.
    pub(crate) last_seq: u64,
}

impl Default for CapsuleStorage {
    fn default() -> Self {
        Self::new()
    }
}

impl CapsuleStorage {
    pub fn new() -> Self {
        Self {
            global: GlobalStorage::new(),
            locals: BTreeMap::new(),
            retired: BTreeSet::new(),
            last_seq: 0,
        }
    }

    pub fn global(&self) -> &GlobalStorage {
        &self.global
    }

    pub fn local(&self, player: PlayerId) -> Result<&LocalStorage, EngineError> {
        self.locals.get(&player).ok_or(EngineError::UnknownPlayer(player))
    }

    pub(crate) fn local_mut(&mut self, player: PlayerId) -> Result<&mut LocalStorage, EngineError> {
        self.locals.get_mut(&player).ok_or(EngineError::UnknownPlayer(player))
    }

    pub(crate) fn global_mut(&mut self) -> &mut GlobalStorage {
        &mut self.global
    }

    pub fn players(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.locals.keys().copied()
    }

    pub fn player_count(&self) -> usize {
        self.locals.len()
    }

    pub fn is_active(&self, player: PlayerId) -> bool {
        self.locals.contains_key(&player)
    }

    /// Registers an empty local store. Fails for active or retired ids.
    pub fn create_local(&mut self, player: PlayerId) -> Result<(), EngineError> {
        if self.locals.contains_key(&player) || self.retired.contains(&player) {
            return Err(EngineError::DuplicatePlayer(player));
        }
        let cursor = self.last_seq;
        self.locals.insert(player, LocalStorage::new(player, cursor));
        Ok(())
    }

    /// Removes the local store record. Entity teardown is the world's job;
    /// the store must already be empty of entities.
    pub(crate) fn remove_local(&mut self, player: PlayerId) -> Result<LocalStorage, EngineError> {
        let local = self.locals.remove(&player).ok_or(EngineError::UnknownPlayer(player))?;
        debug_assert!(local.entities.is_empty());
        self.retired.insert(player);
        self.collect_global_events();
        Ok(local)
    }

    pub fn route_entity(&self, scope: Scope) -> Result<StoreHandle, EngineError> {
        match scope {
            Scope::Global => Ok(StoreHandle::Global),
            Scope::Local(p) if self.locals.contains_key(&p) => Ok(StoreHandle::Local(p)),
            Scope::Local(p) => Err(EngineError::UnknownPlayer(p)),
        }
    }

    /// Inserts an entity id into its routed store and returns the store-relative
    /// ordinal used for canonical encoding.
    pub(crate) fn insert_entity(&mut self, scope: Scope, id: EntityId, bytes: u64) -> Result<u64, EngineError> {
        match self.route_entity(scope)? {
            StoreHandle::Global => {
                let g = &mut self.global;
                g.entities.insert(id);
                g.entity_bytes += bytes;
                g.next_ordinal += 1;
                Ok(g.next_ordinal - 1)
            }
            StoreHandle::Local(p) => {
                let l = self.locals.get_mut(&p).expect("routed");
                l.entities.insert(id);
                l.entity_bytes += bytes;
                l.next_ordinal += 1;
                Ok(l.next_ordinal - 1)
            }
        }
    }

    pub(crate) fn remove_entity(&mut self, scope: Scope, id: EntityId, bytes: u64) {
        let (set, counter) = match scope {
            Scope::Global => (&mut self.global.entities, &mut self.global.entity_bytes),
            Scope::Local(p) => {
                let Some(l) = self.locals.get_mut(&p) else {
                    return;
                };
                (&mut l.entities, &mut l.entity_bytes)
            }
        };
        if set.remove(&id) {
            *counter -= bytes;
        }
        // an emptied scene reloads with the same ordinals it had the first time
        if self.global.entities.is_empty() {
            self.global.next_ordinal = 0;
        }
    }

    /// Global entities plus the player's own local entities, ascending.
    pub fn visible_set(&self, player: PlayerId) -> Result<Vec<EntityId>, EngineError> {
        let local = self.local(player)?;
        let mut out: Vec<EntityId> = self
            .global
            .entities
            .iter()
            .chain(local.entities.iter())
            .copied()
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Global bytes plus every local store's bytes.
    pub fn bytes(&self) -> u64 {
        self.global.bytes() + self.locals.values().map(LocalStorage::bytes).sum::<u64>()
    }

    pub fn entity_count(&self) -> usize {
        self.global.entities.len() + self.locals.values().map(|l| l.entities.len()).sum::<usize>()
    }
}
