use thiserror::Error;

use crate::ecs::{ComponentKind, EntityId};
use crate::render::AssetError;
use crate::storage::PlayerId;

/// Errors raised by world, storage, event and session operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("player {0} has no local storage")]
    UnknownPlayer(PlayerId),
    #[error("player {0} already has (or had) a local storage")]
    DuplicatePlayer(PlayerId),
    #[error("entity {0} is not live")]
    StaleEntity(EntityId),
    #[error("component kind {0:?} is not registered")]
    UnknownComponentKind(ComponentKind),
    #[error("component kind {kind:?} declared as {declared} bytes, got {actual}")]
    PayloadSize {
        kind: ComponentKind,
        declared: usize,
        actual: usize,
    },
    #[error("entity carries component kind {0:?} twice")]
    DuplicateComponent(ComponentKind),
    #[error("component kind {kind:?} already registered with size {existing}")]
    KindRedeclared { kind: ComponentKind, existing: usize },
    #[error("{from:?}-scoped entity may not reference {to}")]
    CrossScopeReference { from: crate::storage::Scope, to: EntityId },
    #[error("predicted tick cost {predicted_ms:.3} ms exceeds budget {budget_ms:.3} ms")]
    CapacityExceeded { predicted_ms: f64, budget_ms: f64 },
    #[error("engine is down: {0}")]
    EngineDown(String),
    #[error("invalid budget {0} ms")]
    InvalidBudget(f64),
    #[error(transparent)]
    Asset(#[from] AssetError),
}
