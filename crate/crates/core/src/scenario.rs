//! Declarative workloads.
//!
//! A scenario is a TOML document describing the shared scene, what every
//! player brings, the asset mix, who joins and leaves when, and the cost
//! constants of the machine. The same document drives the capsule engine and
//! the process-per-player baseline; nothing in it is specific to either.

use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{budget_ms_for_fps, CostModel};
use crate::ecs::{Component, ComponentKind, EntityDesc, PlayerInput, World, ENTITY_OVERHEAD};
use crate::render::{AssetId, Fnv64};
use crate::session::{Engine, PlayerProfile, Scene};
use crate::storage::LOCAL_STORAGE_OVERHEAD;

pub const SCHEMA_VERSION: u32 = 1;

/// Component kinds of per-player entities start here; scene kinds start at 0.
pub const LOCAL_KIND_BASE: u32 = 1000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot write scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityGroup {
    pub count: u32,
    pub component_sizes: Vec<usize>,
}

impl EntityGroup {
    pub fn bytes_each(&self) -> u64 {
        ENTITY_OVERHEAD + self.component_sizes.iter().map(|&s| s as u64).sum::<u64>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub id: String,
    pub size: u64,
    /// Shared assets keep one id for every player; private ones get a copy
    /// per player.
    pub shared: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleAction {
    Join,
    Leave,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub tick: u64,
    pub action: ScheduleAction,
    /// Join ordinal of the leaving player (0 = first join attempt).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub player: Option<u64>,
}

/// A periodic event: fires on every tick divisible by `every`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub every: u64,
    pub name: String,
    pub payload_size: usize,
}

/// Machine and engine constants. The GPU split lives at the top level of the
/// scenario because it describes the workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub engine_fixed_cpu: u64,
    pub entity_cpu: u64,
    pub per_player_cpu: u64,
    pub cpu_capacity: u64,
    pub cpu_cores: u64,
    pub engine_fixed_ram: u64,
    pub gpu_capacity: u64,
    pub framebuffer: u64,
    pub vram_capacity: u64,
    pub vram_overcommit_penalty: f64,
}

impl CostTable {
    pub fn from_model(m: &CostModel) -> Self {
        Self {
            engine_fixed_cpu: m.engine_fixed_cpu,
            entity_cpu: m.entity_cpu,
            per_player_cpu: m.per_player_cpu,
            cpu_capacity: m.cpu_capacity,
            cpu_cores: m.cpu_cores,
            engine_fixed_ram: m.engine_fixed_ram,
            gpu_capacity: m.gpu_capacity,
            framebuffer: m.framebuffer,
            vram_capacity: m.vram_capacity,
            vram_overcommit_penalty: m.vram_overcommit_penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub target_fps: u32,
    pub duration_ticks: u64,
    pub shared_gpu: u64,
    pub per_view_gpu: u64,
    pub global_entities: EntityGroup,
    pub per_player_entities: EntityGroup,
    #[serde(default)]
    pub assets: Vec<AssetSpec>,
    #[serde(default)]
    pub join_schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub global_events: Vec<EventSpec>,
    #[serde(default)]
    pub player_inputs: Vec<EventSpec>,
    pub cost_model: CostTable,
}

fn derived_rng(seed: u64, domain: &str, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = Fnv64::default();
    h.write_u64(seed);
    h.write(domain.as_bytes());
    h.write_u64(a);
    h.write_u64(b);
    ChaCha8Rng::seed_from_u64(h.finish())
}

fn random_bytes(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut v = vec![0; len];
    rng.fill_bytes(&mut v);
    v
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.target_fps == 0 {
            return invalid("target_fps must be > 0".into());
        }
        if let Err(e) = self.cost_model().validate() {
            return invalid(format!("cost_model: {e}"));
        }
        if self.per_player_entities.count == 0 && !self.assets.is_empty() {
            return invalid("assets need at least one per-player entity to hold them".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for a in &self.assets {
            if a.size == 0 {
                return invalid(format!("asset {} has zero size", a.id));
            }
            if a.id.contains('@') {
                return invalid(format!("asset id {} may not contain '@'", a.id));
            }
            if !ids.insert(&a.id) {
                return invalid(format!("asset {} listed twice", a.id));
            }
        }
        for e in self.global_events.iter().chain(&self.player_inputs) {
            if e.every == 0 {
                return invalid(format!("event {} has every = 0", e.name));
            }
        }
        let mut joins = 0u64;
        let mut left = std::collections::BTreeSet::new();
        for (i, entry) in self.join_schedule.iter().enumerate() {
            if i > 0 && entry.tick <= self.join_schedule[i - 1].tick {
                return invalid("join_schedule ticks must be strictly increasing".into());
            }
            match (entry.action, entry.player) {
                (ScheduleAction::Join, None) => joins += 1,
                (ScheduleAction::Join, Some(_)) => {
                    return invalid("join entries take no player".into());
                }
                (ScheduleAction::Leave, Some(p)) if p < joins && left.insert(p) => {}
                (ScheduleAction::Leave, _) => {
                    return invalid(format!(
                        "leave at tick {} must name an earlier join that has not left",
                        entry.tick
                    ));
                }
            }
        }
        if let Some(last) = self.join_schedule.last() {
            if self.duration_ticks < last.tick {
                return invalid("duration_ticks is shorter than the join schedule".into());
            }
        }
        Ok(())
    }

    pub fn budget_ms(&self) -> f64 {
        budget_ms_for_fps(self.target_fps)
    }

    pub fn cost_model(&self) -> CostModel {
        let t = &self.cost_model;
        CostModel {
            engine_fixed_cpu: t.engine_fixed_cpu,
            entity_cpu: t.entity_cpu,
            per_player_cpu: t.per_player_cpu,
            cpu_capacity: t.cpu_capacity,
            cpu_cores: t.cpu_cores,
            engine_fixed_ram: t.engine_fixed_ram,
            shared_gpu: self.shared_gpu,
            per_view_gpu: self.per_view_gpu,
            gpu_capacity: t.gpu_capacity,
            framebuffer: t.framebuffer,
            vram_capacity: t.vram_capacity,
            vram_overcommit_penalty: t.vram_overcommit_penalty,
        }
    }

    pub fn set_cost_model(&mut self, m: &CostModel) {
        self.shared_gpu = m.shared_gpu;
        self.per_view_gpu = m.per_view_gpu;
        self.cost_model = CostTable::from_model(m);
    }

    /// True when every resource has something players can share.
    pub fn has_shared_content(&self) -> bool {
        self.global_entities.count > 0
            && self.cost_model.entity_cpu > 0
            && self.shared_gpu > 0
            && self.assets.iter().any(|a| a.shared)
    }

    /// A fresh world with this scenario's component kinds and costs.
    pub fn build_world(&self) -> World {
        let mut w =
            World::with_cost_model(self.seed, self.budget_ms(), self.cost_model()).expect("validated target_fps");
        for (i, &size) in self.global_entities.component_sizes.iter().enumerate() {
            w.register_component(ComponentKind(i as u32), size)
                .expect("fresh world");
        }
        for (i, &size) in self.per_player_entities.component_sizes.iter().enumerate() {
            w.register_component(ComponentKind(LOCAL_KIND_BASE + i as u32), size)
                .expect("fresh world");
        }
        w
    }

    pub fn scene(&self) -> Scene {
        let mut rng = derived_rng(self.seed, "scene", 0, 0);
        let entities = (0..self.global_entities.count)
            .map(|_| {
                EntityDesc::new(
                    self.global_entities
                        .component_sizes
                        .iter()
                        .enumerate()
                        .map(|(k, &size)| Component::new(k as u32, random_bytes(&mut rng, size)))
                        .collect(),
                )
            })
            .collect();
        Scene { entities }
    }

    /// Content of the `ordinal`-th player to join.
    pub fn player_profile(&self, ordinal: u64) -> PlayerProfile {
        let mut rng = derived_rng(self.seed, "player", ordinal, 0);
        let group = &self.per_player_entities;
        let mut entities: Vec<EntityDesc> = (0..group.count)
            .map(|_| {
                EntityDesc::new(
                    group
                        .component_sizes
                        .iter()
                        .enumerate()
                        .map(|(k, &size)| Component::new(LOCAL_KIND_BASE + k as u32, random_bytes(&mut rng, size)))
                        .collect(),
                )
            })
            .collect();
        for (i, a) in self.assets.iter().enumerate() {
            let id = if a.shared {
                AssetId::new(a.id.clone())
            } else {
                AssetId::new(format!("{}@{ordinal}", a.id))
            };
            let holder = i % entities.len();
            entities[holder].assets.push((id, a.size));
        }
        PlayerProfile { entities }
    }

    pub fn build_engine(&self) -> Engine {
        Engine::new(self.build_world(), self.scene())
    }

    /// Inputs the `ordinal`-th player sends for `tick`.
    pub fn inputs_for(&self, ordinal: u64, tick: u64) -> Vec<PlayerInput> {
        self.player_inputs
            .iter()
            .filter(|e| tick.is_multiple_of(e.every))
            .map(|e| {
                let mut rng = derived_rng(self.seed, &e.name, ordinal, tick);
                PlayerInput::new(e.name.clone(), random_bytes(&mut rng, e.payload_size))
            })
            .collect()
    }

    /// Environment events fired at `tick`.
    pub fn global_events_at(&self, tick: u64) -> Vec<(String, Vec<u8>)> {
        self.global_events
            .iter()
            .filter(|e| tick.is_multiple_of(e.every))
            .map(|e| {
                let mut rng = derived_rng(self.seed, &e.name, u64::MAX, tick);
                (e.name.clone(), random_bytes(&mut rng, e.payload_size))
            })
            .collect()
    }

    /// Closed-form sizes of the shared scene and of one player.
    pub fn footprint(&self) -> Footprint {
        let shared_asset_bytes = self.assets.iter().filter(|a| a.shared).map(|a| a.size).sum();
        let private_asset_bytes = self.assets.iter().filter(|a| !a.shared).map(|a| a.size).sum();
        Footprint {
            global_entities: u64::from(self.global_entities.count),
            global_bytes: u64::from(self.global_entities.count) * self.global_entities.bytes_each(),
            local_entities: u64::from(self.per_player_entities.count),
            local_bytes: LOCAL_STORAGE_OVERHEAD
                + u64::from(self.per_player_entities.count) * self.per_player_entities.bytes_each(),
            shared_asset_bytes,
            private_asset_bytes,
        }
    }
}

/// Static sizes a scenario implies, independent of any run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub global_entities: u64,
    pub global_bytes: u64,
    pub local_entities: u64,
    /// Including the local store's own overhead.
    pub local_bytes: u64,
    pub shared_asset_bytes: u64,
    pub private_asset_bytes: u64,
}
