//! Headless multi-tenant ECS engine core.
//!
//! One engine hosts many players. Shared state lives in a single global
//! store; each player's private entities and events live in that player's
//! local store. Routing by [`Scope`] keeps players isolated while assets and
//! shared frame work are paid for once.

pub mod apps;
pub mod calibrate;
pub mod cost;
pub mod ecs;
pub mod error;
pub mod events;
pub mod gateway;
pub mod harness;
pub mod render;
pub mod scenario;
pub mod session;
pub mod storage;

pub use cost::{CostModel, ResourceSample, Usage};
pub use ecs::{Component, ComponentKind, EntityDesc, EntityId, PlayerInput, World};
pub use error::EngineError;
pub use events::{EventDraft, GameplayEvent};
pub use harness::{capacity_search, compare_runs, run_baseline, run_capsule, Mode, RunResult};
pub use render::{AssetCache, AssetId, FrameDigest, FrameWork};
pub use scenario::Scenario;
pub use session::{Engine, PlayerProfile, Scene, Session};
pub use storage::{CapsuleStorage, PlayerId, Scope};
