//! Minimal deterministic ECS world.
//!
//! Entities live in a generational slot table; every entity is also filed in
//! exactly one capsule store according to its [`Scope`]. A tick is one serial
//! pass: input, logic, render, metrics. Per-player work inside a stage walks
//! players in ascending id order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cost::{Census, CostModel, ResourceSample, Usage};
use crate::error::EngineError;
use crate::events::{EventDraft, GameplayEvent};
use crate::render::{AssetCache, AssetId, Fnv64, FrameDigest, FrameWork};
use crate::storage::{CapsuleStorage, PlayerId, ReclaimReport, Scope};

/// Bookkeeping bytes charged per live entity on top of its payloads.
pub const ENTITY_OVERHEAD: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    index: u32,
    generation: u32,
}

impl EntityId {
    pub fn new(index: u32, generation: u32) -> Self {
        Self { index, generation }
    }

    pub fn index(self) -> u32 {
        self.index
    }

    pub fn generation(self) -> u32 {
        self.generation
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}v{}", self.index, self.generation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentKind(pub u32);

/// Opaque component payload; its length must equal the size declared for
/// its kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub kind: ComponentKind,
    pub payload: Vec<u8>,
}

impl Component {
    pub fn new(kind: u32, payload: Vec<u8>) -> Self {
        Self {
            kind: ComponentKind(kind),
            payload,
        }
    }
}

/// Everything needed to spawn one entity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityDesc {
    pub components: Vec<Component>,
    /// Assets this entity holds a handle on, with their sizes.
    pub assets: Vec<(AssetId, u64)>,
    /// Other entities this one points at.
    pub refs: Vec<EntityId>,
}

impl EntityDesc {
    pub fn new(components: Vec<Component>) -> Self {
        Self {
            components,
            ..Self::default()
        }
    }

    pub fn with_asset(mut self, asset: AssetId, size: u64) -> Self {
        self.assets.push((asset, size));
        self
    }

    pub fn with_ref(mut self, target: EntityId) -> Self {
        self.refs.push(target);
        self
    }

    pub fn bytes(&self) -> u64 {
        ENTITY_OVERHEAD + self.components.iter().map(|c| c.payload.len() as u64).sum::<u64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Input,
    Logic,
    Render,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Input, Stage::Logic, Stage::Render, Stage::Metrics];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeFilter {
    Global,
    PerPlayer,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemDescriptor {
    pub name: String,
    pub scope_filter: ScopeFilter,
    pub stage: Stage,
    /// CPU work charged per invocation.
    pub work_units: u64,
}

impl SystemDescriptor {
    pub fn new(name: impl Into<String>, scope_filter: ScopeFilter, stage: Stage) -> Self {
        Self {
            name: name.into(),
            scope_filter,
            stage,
            work_units: 0,
        }
    }

    pub fn with_work(mut self, units: u64) -> Self {
        self.work_units = units;
        self
    }

    fn invocations(&self, players: u64) -> u64 {
        match self.scope_filter {
            ScopeFilter::Global => 1,
            ScopeFilter::PerPlayer => players,
            ScopeFilter::Both => 1 + players,
        }
    }
}

/// What a system sees when it runs: the tick, the scope it runs for, and the
/// world.
pub struct SystemContext<'w> {
    pub tick: u64,
    pub scope: Scope,
    pub world: &'w mut World,
}

pub trait System: Send {
    fn descriptor(&self) -> &SystemDescriptor;
    fn run(&mut self, ctx: &mut SystemContext<'_>);
}

/// Adapts a closure into a [`System`].
pub struct FnSystem<F> {
    descriptor: SystemDescriptor,
    f: F,
}

impl<F> FnSystem<F>
where
    F: FnMut(&mut SystemContext<'_>) + Send,
{
    pub fn new(descriptor: SystemDescriptor, f: F) -> Self {
        Self { descriptor, f }
    }
}

impl<F> System for FnSystem<F>
where
    F: FnMut(&mut SystemContext<'_>) + Send,
{
    fn descriptor(&self) -> &SystemDescriptor {
        &self.descriptor
    }

    fn run(&mut self, ctx: &mut SystemContext<'_>) {
        (self.f)(ctx)
    }
}

/// One player input, routed as a local gameplay event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayerInput {
    pub name: String,
    pub payload: Vec<u8>,
}

impl PlayerInput {
    pub fn new(name: impl Into<String>, payload: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            payload,
        }
    }
}

pub type InputBatches = BTreeMap<PlayerId, Vec<PlayerInput>>;

#[derive(Debug, Clone)]
pub struct TickReport {
    pub tick: u64,
    pub frames: Vec<FrameDigest>,
    pub work: FrameWork,
    pub sample: ResourceSample,
    pub overrun: bool,
    pub dropped_inputs: u64,
    /// Recorded for diagnostics only.
    pub wall: Duration,
}

impl TickReport {
    pub fn model_ms(&self) -> f64 {
        self.sample.tick_model_ms
    }

    pub fn digest_for(&self, player: PlayerId) -> Option<u64> {
        self.frames.iter().find(|f| f.player == player).map(|f| f.hash)
    }
}

#[derive(Debug)]
struct EntityRecord {
    scope: Scope,
    ordinal: u64,
    components: Vec<Component>,
    assets: Vec<AssetId>,
    refs: Vec<EntityId>,
    bytes: u64,
}

#[derive(Debug, Default)]
struct Slot {
    generation: u32,
    record: Option<EntityRecord>,
}

pub struct World {
    seed: u64,
    budget_ms: f64,
    tick: u64,
    rng: ChaCha8Rng,
    kinds: BTreeMap<ComponentKind, usize>,
    slots: Vec<Slot>,
    free: Vec<u32>,
    live: usize,
    storage: CapsuleStorage,
    assets: AssetCache,
    cost: CostModel,
    systems: Vec<Box<dyn System>>,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("seed", &self.seed)
            .field("tick", &self.tick)
            .field("live", &self.live)
            .field("players", &self.storage.player_count())
            .finish_non_exhaustive()
    }
}

impl World {
    pub fn new(seed: u64, budget_ms: f64) -> Result<Self, EngineError> {
        Self::with_cost_model(seed, budget_ms, CostModel::default())
    }

    pub fn with_cost_model(seed: u64, budget_ms: f64, cost: CostModel) -> Result<Self, EngineError> {
        if !(budget_ms.is_finite() && budget_ms > 0.0) {
            return Err(EngineError::InvalidBudget(budget_ms));
        }
        Ok(Self {
            seed,
            budget_ms,
            tick: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            kinds: BTreeMap::new(),
            slots: Vec::new(),
            free: Vec::new(),
            live: 0,
            storage: CapsuleStorage::new(),
            assets: AssetCache::new(cost.framebuffer),
            cost,
            systems: Vec::new(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn budget_ms(&self) -> f64 {
        self.budget_ms
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    /// Moves the clock forward without running ticks. Used to start an
    /// instance in step with an already-running machine clock.
    pub fn set_start_tick(&mut self, tick: u64) {
        assert!(tick >= self.tick, "the tick counter never goes backwards");
        self.tick = tick;
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn set_cost_model(&mut self, cost: CostModel) {
        self.assets.set_framebuffer_bytes(cost.framebuffer);
        self.cost = cost;
    }

    pub fn storage(&self) -> &CapsuleStorage {
        &self.storage
    }

    pub fn assets(&self) -> &AssetCache {
        &self.assets
    }

    pub fn live_count(&self) -> usize {
        self.live
    }

    pub fn register_component(&mut self, kind: ComponentKind, size: usize) -> Result<(), EngineError> {
        match self.kinds.get(&kind) {
            Some(&existing) if existing != size => Err(EngineError::KindRedeclared { kind, existing }),
            _ => {
                self.kinds.insert(kind, size);
                Ok(())
            }
        }
    }

    pub fn add_system(&mut self, system: Box<dyn System>) {
        self.systems.push(system);
    }

    pub fn systems(&self) -> impl Iterator<Item = &SystemDescriptor> {
        self.systems.iter().map(|s| s.descriptor())
    }

    fn record(&self, id: EntityId) -> Result<&EntityRecord, EngineError> {
        self.slots
            .get(id.index as usize)
            .filter(|s| s.generation == id.generation)
            .and_then(|s| s.record.as_ref())
            .ok_or(EngineError::StaleEntity(id))
    }

    pub fn is_live(&self, id: EntityId) -> bool {
        self.record(id).is_ok()
    }

    pub fn scope_of(&self, id: EntityId) -> Result<Scope, EngineError> {
        self.record(id).map(|r| r.scope)
    }

    pub fn component(&self, id: EntityId, kind: ComponentKind) -> Result<Option<&[u8]>, EngineError> {
        Ok(self
            .record(id)?
            .components
            .iter()
            .find(|c| c.kind == kind)
            .map(|c| c.payload.as_slice()))
    }

    pub fn assets_of(&self, id: EntityId) -> Result<&[AssetId], EngineError> {
        self.record(id).map(|r| r.assets.as_slice())
    }

    pub fn refs_of(&self, id: EntityId) -> Result<&[EntityId], EngineError> {
        self.record(id).map(|r| r.refs.as_slice())
    }

    /// Overwrites an existing component's payload.
    pub fn set_component(&mut self, id: EntityId, component: Component) -> Result<(), EngineError> {
        self.validate_component(&component)?;
        self.record(id)?;
        let slot = &mut self.slots[id.index as usize];
        let rec = slot.record.as_mut().expect("checked live");
        match rec.components.iter_mut().find(|c| c.kind == component.kind) {
            Some(c) => {
                c.payload = component.payload;
                Ok(())
            }
            None => Err(EngineError::UnknownComponentKind(component.kind)),
        }
    }

    fn validate_component(&self, c: &Component) -> Result<(), EngineError> {
        let declared = *self
            .kinds
            .get(&c.kind)
            .ok_or(EngineError::UnknownComponentKind(c.kind))?;
        if declared != c.payload.len() {
            return Err(EngineError::PayloadSize {
                kind: c.kind,
                declared,
                actual: c.payload.len(),
            });
        }
        Ok(())
    }

    fn validate_spawn(&self, scope: Scope, desc: &EntityDesc) -> Result<(), EngineError> {
        self.storage.route_entity(scope)?;
        let mut seen = BTreeSet::new();
        for c in &desc.components {
            self.validate_component(c)?;
            if !seen.insert(c.kind) {
                return Err(EngineError::DuplicateComponent(c.kind));
            }
        }
        for &target in &desc.refs {
            let target_scope = self.scope_of(target)?;
            let allowed = match scope {
                Scope::Global => target_scope == Scope::Global,
                Scope::Local(p) => target_scope.visible_to(p),
            };
            if !allowed {
                return Err(EngineError::CrossScopeReference {
                    from: scope,
                    to: target,
                });
            }
        }
        // Validate the whole asset list, including repeats within it, before
        // touching the cache.
        let mut sizes: BTreeMap<&AssetId, u64> = BTreeMap::new();
        for (asset, size) in &desc.assets {
            self.assets.check(asset, *size)?;
            if let Some(&prev) = sizes.get(asset) {
                if prev != *size {
                    return Err(crate::render::AssetError::SizeMismatch {
                        asset: asset.clone(),
                        cached: prev,
                        requested: *size,
                    }
                    .into());
                }
            }
            sizes.insert(asset, *size);
        }
        Ok(())
    }

    pub fn spawn_entity(&mut self, scope: Scope, components: Vec<Component>) -> Result<EntityId, EngineError> {
        self.spawn(scope, EntityDesc::new(components))
    }

    /// Spawns into the store routed from `scope`. Nothing changes on error.
    pub fn spawn(&mut self, scope: Scope, mut desc: EntityDesc) -> Result<EntityId, EngineError> {
        self.validate_spawn(scope, &desc)?;
        let index = match self.free.pop() {
            Some(i) => i,
            None => {
                self.slots.push(Slot::default());
                (self.slots.len() - 1) as u32
            }
        };
        let id = EntityId::new(index, self.slots[index as usize].generation);
        let bytes = desc.bytes();
        let ordinal = self.storage.insert_entity(scope, id, bytes)?;
        let mut assets = Vec::with_capacity(desc.assets.len());
        for (asset, size) in desc.assets.drain(..) {
            self.assets.load(&asset, size, id)?;
            assets.push(asset);
        }
        desc.components.sort_by_key(|c| c.kind);
        self.slots[index as usize].record = Some(EntityRecord {
            scope,
            ordinal,
            components: desc.components,
            assets,
            refs: desc.refs,
            bytes,
        });
        self.live += 1;
        Ok(id)
    }

    pub fn despawn(&mut self, id: EntityId) -> Result<(), EngineError> {
        self.despawn_inner(id).map(|_| ())
    }

    fn despawn_inner(&mut self, id: EntityId) -> Result<ReclaimReport, EngineError> {
        self.record(id)?;
        let slot = &mut self.slots[id.index as usize];
        let rec = slot.record.take().expect("checked live");
        slot.generation = slot.generation.wrapping_add(1);
        self.free.push(id.index);
        self.live -= 1;
        self.storage.remove_entity(rec.scope, id, rec.bytes);
        let mut report = ReclaimReport {
            entities_despawned: 1,
            ram_bytes: rec.bytes,
            ..ReclaimReport::default()
        };
        for asset in rec.assets {
            if let Some(size) = self.assets.release(&asset, id)? {
                report.vram_bytes += size;
                report.assets_evicted.push(asset.0);
            }
        }
        Ok(report)
    }

    pub fn create_local(&mut self, player: PlayerId) -> Result<(), EngineError> {
        self.storage.create_local(player)?;
        self.assets.attach_view();
        Ok(())
    }

    /// Despawns every entity the player owns, releases their asset handles
    /// and drops the local store. The global store is not touched.
    pub fn destroy_local(&mut self, player: PlayerId) -> Result<ReclaimReport, EngineError> {
        let local = self.storage.local(player)?;
        let owned: Vec<EntityId> = local.entities().iter().copied().collect();
        let pending_bytes = local.bytes() - crate::storage::LOCAL_STORAGE_OVERHEAD;
        let mut report = ReclaimReport {
            player: Some(player),
            ..ReclaimReport::default()
        };
        for id in owned {
            report.absorb(self.despawn_inner(id)?);
        }
        let removed = self.storage.remove_local(player)?;
        report.events_dropped = removed.pending_events() as u64;
        report.ram_bytes = pending_bytes + crate::storage::LOCAL_STORAGE_OVERHEAD;
        report.vram_bytes += self.assets.framebuffer_bytes();
        self.assets.detach_view();
        Ok(report)
    }

    pub fn visible_set(&self, player: PlayerId) -> Result<Vec<EntityId>, EngineError> {
        self.storage.visible_set(player)
    }

    /// Emits an event stamped with the current tick.
    pub fn emit(&mut self, draft: EventDraft) -> Result<u64, EngineError> {
        self.storage.emit(draft, self.tick)
    }

    pub fn drain_for(&mut self, player: PlayerId, up_to_tick: u64) -> Result<Vec<GameplayEvent>, EngineError> {
        self.storage.drain_for(player, up_to_tick)
    }

    pub(crate) fn system_units(&self, players: u64) -> u64 {
        self.systems
            .iter()
            .map(|s| {
                let d = s.descriptor();
                d.work_units * d.invocations(players)
            })
            .sum()
    }

    pub fn census(&self) -> Census {
        let players = self.storage.player_count() as u64;
        let global_entities = self.storage.global().entities().len() as u64;
        let local_entities = (self.storage.entity_count() as u64) - global_entities;
        Census {
            players,
            global_entities,
            local_entities,
            visible_entities: players * global_entities + local_entities,
            system_units: self.system_units(players),
            storage_bytes: self.storage.bytes(),
            vram_bytes: self.assets.total_vram(),
        }
    }

    pub fn usage(&self) -> Usage {
        self.cost.usage(&self.census())
    }

    /// Resource sample of the current state, stamped with the current tick.
    pub fn sample(&self) -> ResourceSample {
        let usage = self.usage();
        ResourceSample::from_usage(
            self.tick,
            self.storage.player_count() as u64,
            usage,
            self.cost.tick_ms(&usage, self.budget_ms),
        )
    }

    /// Digest of everything `player` can observe at the current tick.
    ///
    /// Entities are keyed by their store-relative spawn ordinal rather than
    /// by slot index, so co-resident players never shift each other's keys.
    pub fn frame_digest(&self, player: PlayerId) -> Result<FrameDigest, EngineError> {
        let local = self.storage.local(player)?;
        let mut h = Fnv64::default();
        let stores: [(u8, &BTreeSet<EntityId>); 2] = [(0, self.storage.global().entities()), (1, local.entities())];
        for (tag, ids) in stores {
            let mut recs: Vec<&EntityRecord> = ids
                .iter()
                .map(|&id| self.record(id).expect("stores hold live ids"))
                .collect();
            recs.sort_by_key(|r| r.ordinal);
            for r in recs {
                h.write(&[tag]);
                h.write_u64(r.ordinal);
                for c in &r.components {
                    h.write(&c.kind.0.to_le_bytes());
                    h.write(&(c.payload.len() as u32).to_le_bytes());
                    h.write(&c.payload);
                }
            }
        }
        h.write_u64(local.event_state());
        h.write_u64(self.tick);
        Ok(FrameDigest {
            player,
            tick: self.tick,
            hash: h.finish(),
        })
    }

    fn run_stage(&mut self, systems: &mut [Box<dyn System>], stage: Stage) {
        for sys in systems.iter_mut().filter(|s| s.descriptor().stage == stage) {
            let filter = sys.descriptor().scope_filter;
            if matches!(filter, ScopeFilter::Global | ScopeFilter::Both) {
                let mut ctx = SystemContext {
                    tick: self.tick,
                    scope: Scope::Global,
                    world: self,
                };
                sys.run(&mut ctx);
            }
            if matches!(filter, ScopeFilter::PerPlayer | ScopeFilter::Both) {
                let players: Vec<PlayerId> = self.storage.players().collect();
                for p in players {
                    if !self.storage.is_active(p) {
                        continue;
                    }
                    let mut ctx = SystemContext {
                        tick: self.tick,
                        scope: Scope::Local(p),
                        world: self,
                    };
                    sys.run(&mut ctx);
                }
            }
        }
    }

    /// Runs one tick: every stage in order, all players on this one thread.
    pub fn tick(&mut self, inputs: &InputBatches) -> TickReport {
        let started = Instant::now();
        let tick = self.tick;
        let mut systems = std::mem::take(&mut self.systems);
        let mut dropped_inputs = 0;

        // input: each player's batch becomes local events
        for (&p, batch) in inputs {
            if !self.storage.is_active(p) {
                dropped_inputs += batch.len() as u64;
                continue;
            }
            for input in batch {
                self.storage
                    .emit(
                        EventDraft::new(Scope::Local(p), input.name.clone(), input.payload.clone()),
                        tick,
                    )
                    .expect("active player");
            }
        }
        self.run_stage(&mut systems, Stage::Input);

        // logic: deliver events and fold them into each player's state
        let players: Vec<PlayerId> = self.storage.players().collect();
        for &p in &players {
            let events = self.storage.drain_for(p, tick).expect("active player");
            let local = self.storage.local_mut(p).expect("active player");
            let mut h = Fnv64::resume(local.event_state);
            for e in &events {
                h.write(e.name.as_bytes());
                h.write_u64(e.payload.len() as u64);
                h.write(&e.payload);
            }
            local.event_state = h.finish();
            local.events_applied += events.len() as u64;
        }
        self.run_stage(&mut systems, Stage::Logic);

        // render
        let players: Vec<PlayerId> = self.storage.players().collect();
        let frames: Vec<FrameDigest> = players
            .iter()
            .map(|&p| self.frame_digest(p).expect("active player"))
            .collect();
        let work = self.cost.frame_work(players.len() as u64);
        self.run_stage(&mut systems, Stage::Render);

        self.run_stage(&mut systems, Stage::Metrics);
        // systems registered while ticking run from the next tick on
        systems.append(&mut self.systems);
        self.systems = systems;
        let sample = self.sample();
        self.tick += 1;

        TickReport {
            tick,
            overrun: sample.tick_model_ms > self.budget_ms,
            frames,
            work,
            sample,
            dropped_inputs,
            wall: started.elapsed(),
        }
    }
}
