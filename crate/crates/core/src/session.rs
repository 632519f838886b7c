//! Player lifecycle on top of a [`World`]: admission against the tick budget,
//! leave with reclamation, and engine-wide failure that ends every session
//! at once.
//!
//! The engine also owns the shared scene. Scene entities are global; they
//! are loaded when the first session becomes active and unloaded when the
//! last one ends, so an engine with no players carries only its fixed cost.

use std::collections::{BTreeMap, BTreeSet};

use crate::cost::Usage;
use crate::ecs::{EntityDesc, EntityId, InputBatches, TickReport, World};
use crate::error::EngineError;
use crate::events::EventDraft;
use crate::render::AssetId;
use crate::storage::{PlayerId, ReclaimReport, Scope, LOCAL_STORAGE_OVERHEAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    Left,
    Disconnected,
    EngineFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Active,
    Ended(EndReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Session {
    pub player: PlayerId,
    pub joined_at_tick: u64,
    pub state: SessionState,
}

impl Session {
    pub fn is_active(&self) -> bool {
        self.state == SessionState::Active
    }
}

/// Per-player content spawned into the player's local store on join.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlayerProfile {
    pub entities: Vec<EntityDesc>,
}

/// Global content shared by every player.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scene {
    pub entities: Vec<EntityDesc>,
}

/// Accept a player only if the predicted tick time stays within budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissionPolicy {
    pub budget_ms: f64,
}

/// What the predictor expects the engine to cost after a join.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub usage: Usage,
    pub tick_ms: f64,
}

#[derive(Debug)]
pub struct Engine {
    world: World,
    policy: AdmissionPolicy,
    scene: Scene,
    scene_resident: Option<Vec<EntityId>>,
    sessions: BTreeMap<PlayerId, Session>,
    next_player: u64,
    down: Option<String>,
}

impl Engine {
    pub fn new(world: World, scene: Scene) -> Self {
        let policy = AdmissionPolicy {
            budget_ms: world.budget_ms(),
        };
        Self {
            world,
            policy,
            scene,
            scene_resident: None,
            sessions: BTreeMap::new(),
            next_player: 0,
            down: None,
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    /// Direct world access for hosts that add systems or global content.
    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn policy(&self) -> AdmissionPolicy {
        self.policy
    }

    pub fn is_down(&self) -> bool {
        self.down.is_some()
    }

    pub fn scene_loaded(&self) -> bool {
        self.scene_resident.is_some()
    }

    pub fn session(&self, player: PlayerId) -> Option<&Session> {
        self.sessions.get(&player)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn active_players(&self) -> Vec<PlayerId> {
        self.sessions
            .values()
            .filter(|s| s.is_active())
            .map(|s| s.player)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.sessions.values().filter(|s| s.is_active()).count()
    }

    /// Closed-form prediction of the engine's per-tick cost with `profile`
    /// added as one more player.
    pub fn predict_join(&self, profile: &PlayerProfile) -> Prediction {
        let mut c = self.world.census();
        let mut new_assets: BTreeSet<AssetId> = BTreeSet::new();
        let mut vram_extra = 0;
        let mut add_assets = |descs: &[EntityDesc]| {
            for d in descs {
                for (asset, size) in &d.assets {
                    if !self.world.assets().contains(asset) && new_assets.insert(asset.clone()) {
                        vram_extra += size;
                    }
                }
            }
        };
        if self.scene_resident.is_none() {
            c.global_entities += self.scene.entities.len() as u64;
            c.storage_bytes += self.scene.entities.iter().map(EntityDesc::bytes).sum::<u64>();
            add_assets(&self.scene.entities);
        }
        add_assets(&profile.entities);
        c.players += 1;
        c.local_entities += profile.entities.len() as u64;
        c.storage_bytes += LOCAL_STORAGE_OVERHEAD + profile.entities.iter().map(EntityDesc::bytes).sum::<u64>();
        c.visible_entities = c.players * c.global_entities + c.local_entities;
        c.system_units = self.world.system_units(c.players);
        c.vram_bytes += vram_extra + self.world.cost_model().framebuffer;

        let usage = self.world.cost_model().usage(&c);
        Prediction {
            usage,
            tick_ms: self.world.cost_model().tick_ms(&usage, self.policy.budget_ms),
        }
    }

    fn load_scene(&mut self) -> Result<(), EngineError> {
        if self.scene_resident.is_some() {
            return Ok(());
        }
        let mut ids = Vec::with_capacity(self.scene.entities.len());
        for desc in self.scene.entities.clone() {
            match self.world.spawn(Scope::Global, desc) {
                Ok(id) => ids.push(id),
                Err(e) => {
                    for id in ids {
                        self.world.despawn(id).expect("just spawned");
                    }
                    return Err(e);
                }
            }
        }
        self.scene_resident = Some(ids);
        Ok(())
    }

    fn unload_scene(&mut self) -> ReclaimReport {
        let mut report = ReclaimReport::default();
        let before_ram = self.world.storage().global().bytes();
        let before_vram = self.world.assets().total_vram();
        if let Some(ids) = self.scene_resident.take() {
            for id in ids {
                if self.world.is_live(id) {
                    self.world.despawn(id).expect("live");
                    report.entities_despawned += 1;
                }
            }
        }
        report.ram_bytes = before_ram - self.world.storage().global().bytes();
        report.vram_bytes = before_vram - self.world.assets().total_vram();
        report
    }

    /// Admits a new player if the predicted tick fits the budget. A rejected
    /// join changes nothing.
    pub fn join(&mut self, profile: &PlayerProfile) -> Result<Session, EngineError> {
        if let Some(reason) = &self.down {
            return Err(EngineError::EngineDown(reason.clone()));
        }
        let prediction = self.predict_join(profile);
        if prediction.tick_ms > self.policy.budget_ms {
            return Err(EngineError::CapacityExceeded {
                predicted_ms: prediction.tick_ms,
                budget_ms: self.policy.budget_ms,
            });
        }

        let player = PlayerId(self.next_player);
        self.next_player += 1;
        let scene_was_loaded = self.scene_loaded();
        self.load_scene()?;
        let spawned = self.world.create_local(player).and_then(|()| {
            for desc in &profile.entities {
                self.world.spawn(Scope::Local(player), desc.clone())?;
            }
            Ok(())
        });
        if let Err(e) = spawned {
            if self.world.storage().is_active(player) {
                self.world.destroy_local(player).expect("active");
            }
            if !scene_was_loaded {
                self.unload_scene();
            }
            return Err(e);
        }

        let session = Session {
            player,
            joined_at_tick: self.world.tick_count(),
            state: SessionState::Active,
        };
        self.sessions.insert(player, session);
        debug_assert_eq!(self.world.usage(), prediction.usage);
        Ok(session)
    }

    pub fn leave(&mut self, player: PlayerId) -> Result<ReclaimReport, EngineError> {
        self.end_session(player, EndReason::Left)
    }

    /// Ends one session: its local store is reclaimed; the scene goes with
    /// the last active session.
    pub fn end_session(&mut self, player: PlayerId, reason: EndReason) -> Result<ReclaimReport, EngineError> {
        match self.sessions.get(&player) {
            Some(s) if s.is_active() => {}
            _ => return Err(EngineError::UnknownPlayer(player)),
        }
        let mut report = self.world.destroy_local(player)?;
        self.sessions.get_mut(&player).expect("checked").state = SessionState::Ended(reason);
        if self.active_count() == 0 {
            report.absorb(self.unload_scene());
        }
        Ok(report)
    }

    /// Fate-sharing: every active session ends with the engine.
    pub fn terminate_engine(&mut self, reason: impl Into<String>) -> Vec<Session> {
        let mut ended = Vec::new();
        for player in self.active_players() {
            self.world.destroy_local(player).expect("active session has storage");
            let s = self.sessions.get_mut(&player).expect("active");
            s.state = SessionState::Ended(EndReason::EngineFailure);
            ended.push(*s);
        }
        self.unload_scene();
        self.down.get_or_insert_with(|| reason.into());
        ended
    }

    pub fn emit_global(&mut self, name: impl Into<String>, payload: Vec<u8>) -> Result<u64, EngineError> {
        self.world.emit(EventDraft::new(Scope::Global, name, payload))
    }

    pub fn tick(&mut self, inputs: &InputBatches) -> TickReport {
        self.world.tick(inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{budget_ms_for_fps, CostModel};
    use crate::ecs::{Component, ComponentKind};

    fn engine(cost: CostModel) -> Engine {
        let mut w = World::with_cost_model(1, budget_ms_for_fps(30), cost).unwrap();
        w.register_component(ComponentKind(0), 8).unwrap();
        let scene = Scene {
            entities: (0..3)
                .map(|i| EntityDesc::new(vec![Component::new(0, vec![i; 8])]).with_asset(AssetId::new("hall"), 500))
                .collect(),
        };
        Engine::new(w, scene)
    }

    fn profile() -> PlayerProfile {
        PlayerProfile {
            entities: vec![EntityDesc::new(vec![Component::new(0, vec![1; 8])]).with_asset(AssetId::new("avatar"), 50)],
        }
    }

    fn tight() -> CostModel {
        CostModel {
            shared_gpu: 100,
            per_view_gpu: 200,
            gpu_capacity: 1000,
            ..CostModel::default()
        }
    }

    #[test]
    fn first_join_admitted_and_loads_scene() {
        let mut e = engine(CostModel::default());
        assert!(!e.scene_loaded());
        let s = e.join(&profile()).unwrap();
        assert!(s.is_active());
        assert!(e.scene_loaded());
        assert_eq!(e.world().storage().global().entities().len(), 3);
    }

    #[test]
    fn prediction_matches_measurement() {
        let mut e = engine(CostModel::default());
        for _ in 0..4 {
            let predicted = e.predict_join(&profile());
            e.join(&profile()).unwrap();
            let r = e.tick(&InputBatches::new());
            assert_eq!(r.sample.usage(), predicted.usage);
            assert_eq!(r.sample.tick_model_ms, predicted.tick_ms);
        }
    }

    #[test]
    fn rejection_has_no_side_effects() {
        let mut e = engine(tight());
        // gpu: 100 + 200n <= 1000 -> 4 players
        for _ in 0..4 {
            e.join(&profile()).unwrap();
        }
        let before = (
            e.world().storage().bytes(),
            e.world().assets().total_vram(),
            e.active_count(),
        );
        let err = e.join(&profile()).unwrap_err();
        assert!(matches!(err, EngineError::CapacityExceeded { .. }));
        assert_eq!(
            before,
            (
                e.world().storage().bytes(),
                e.world().assets().total_vram(),
                e.active_count()
            )
        );
    }

    #[test]
    fn leave_frees_capacity() {
        let mut e = engine(tight());
        let players: Vec<_> = (0..4).map(|_| e.join(&profile()).unwrap().player).collect();
        assert!(e.join(&profile()).is_err());
        e.leave(players[1]).unwrap();
        assert!(e.join(&profile()).is_ok());
        assert_eq!(e.leave(players[1]), Err(EngineError::UnknownPlayer(players[1])));
    }

    #[test]
    fn player_ids_monotonic() {
        let mut e = engine(CostModel::default());
        let a = e.join(&profile()).unwrap().player;
        e.leave(a).unwrap();
        let b = e.join(&profile()).unwrap().player;
        assert!(b > a);
    }

    #[test]
    fn reclamation_matches_never_admitted() {
        let mut with = engine(CostModel::default());
        let mut without = engine(CostModel::default());
        let a = with.join(&profile()).unwrap().player;
        without.join(&profile()).unwrap();
        let b = with.join(&profile()).unwrap().player;
        with.leave(b).unwrap();
        assert_eq!(with.world().usage(), without.world().usage());
        // last one out unloads the scene as well
        with.leave(a).unwrap();
        let idle = engine(CostModel::default());
        assert_eq!(with.world().usage(), idle.world().usage());
    }

    #[test]
    fn terminate_ends_everyone() {
        let mut e = engine(CostModel::default());
        for _ in 0..5 {
            e.join(&profile()).unwrap();
        }
        let ended = e.terminate_engine("gpu failure");
        assert_eq!(ended.len(), 5);
        assert!(ended
            .iter()
            .all(|s| s.state == SessionState::Ended(EndReason::EngineFailure)));
        assert_eq!(e.active_count(), 0);
        assert!(matches!(e.join(&profile()), Err(EngineError::EngineDown(_))));
    }

    #[test]
    fn terminate_idle_engine() {
        let mut e = engine(CostModel::default());
        assert!(e.terminate_engine("maintenance").is_empty());
    }

    #[test]
    fn failed_spawn_rolls_back_join() {
        let mut e = engine(CostModel::default());
        let bad = PlayerProfile {
            entities: vec![EntityDesc::new(vec![Component::new(0, vec![0; 3])])],
        };
        assert!(matches!(e.join(&bad), Err(EngineError::PayloadSize { .. })));
        assert_eq!(e.active_count(), 0);
        assert!(!e.scene_loaded());
        assert_eq!(e.world().storage().player_count(), 0);
    }
}
