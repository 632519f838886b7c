//! Gameplay events, the second layer of capsule storage.
//!
//! A global event is broadcast to every player that was active when it was
//! issued; a local event reaches only its owner. Every event gets a seq from
//! one engine-wide counter, so the interleaving of global and local events is
//! the same for everyone who sees both.

use crate::error::EngineError;
use crate::storage::{CapsuleStorage, PlayerId, Scope};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameplayEvent {
    pub seq: u64,
    pub name: String,
    pub scope: Scope,
    pub payload: Vec<u8>,
    pub tick_issued: u64,
    /// Which player caused the event; `None` for the environment.
    pub origin: Option<PlayerId>,
}

/// An event before routing assigns it a seq.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventDraft {
    pub scope: Scope,
    pub name: String,
    pub payload: Vec<u8>,
    pub origin: Option<PlayerId>,
}

impl EventDraft {
    pub fn new(scope: Scope, name: impl Into<String>, payload: Vec<u8>) -> Self {
        Self {
            scope,
            name: name.into(),
            payload,
            origin: scope.owner(),
        }
    }

    pub fn with_origin(mut self, origin: Option<PlayerId>) -> Self {
        self.origin = origin;
        self
    }
}

impl CapsuleStorage {
    /// Routes the event to its store and returns the assigned seq.
    pub fn emit(&mut self, draft: EventDraft, tick: u64) -> Result<u64, EngineError> {
        if let Scope::Local(p) = draft.scope {
            if !self.is_active(p) {
                return Err(EngineError::UnknownPlayer(p));
            }
        }
        self.last_seq += 1;
        let event = GameplayEvent {
            seq: self.last_seq,
            name: draft.name,
            scope: draft.scope,
            payload: draft.payload,
            tick_issued: tick,
            origin: draft.origin,
        };
        let size = event.payload.len() as u64;
        match event.scope {
            Scope::Global => {
                let g = self.global_mut();
                g.event_bytes += size;
                g.events.push_back(event);
                // Nobody active means nobody will ever consume it.
                self.collect_global_events();
            }
            Scope::Local(p) => {
                let l = self.local_mut(p)?;
                l.event_bytes += size;
                l.events.push_back(event);
            }
        }
        Ok(self.last_seq)
    }

    /// Hands `player` every event it has not seen yet, issued at or before
    /// `up_to_tick`, in seq order. Local entries are consumed; global entries
    /// stay until every active player has consumed them.
    pub fn drain_for(&mut self, player: PlayerId, up_to_tick: u64) -> Result<Vec<GameplayEvent>, EngineError> {
        let cursor = self.local(player)?.global_cursor;
        let globals: Vec<GameplayEvent> = self
            .global()
            .events
            .iter()
            .skip_while(|e| e.seq <= cursor)
            .take_while(|e| e.tick_issued <= up_to_tick)
            .cloned()
            .collect();

        let local = self.local_mut(player)?;
        let mut locals = Vec::new();
        while local.events.front().is_some_and(|e| e.tick_issued <= up_to_tick) {
            let e = local.events.pop_front().expect("front checked");
            local.event_bytes -= e.payload.len() as u64;
            locals.push(e);
        }
        if let Some(last) = globals.last() {
            local.global_cursor = last.seq;
        }

        let mut merged = Vec::with_capacity(globals.len() + locals.len());
        let (mut g, mut l) = (globals.into_iter().peekable(), locals.into_iter().peekable());
        loop {
            let take_global = match (g.peek(), l.peek()) {
                (Some(a), Some(b)) => a.seq < b.seq,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            merged.push(if take_global { g.next() } else { l.next() }.expect("peeked"));
        }

        self.collect_global_events();
        Ok(merged)
    }

    /// Drops global events that every active player has already consumed.
    pub(crate) fn collect_global_events(&mut self) {
        let floor = self
            .players()
            .map(|p| self.local(p).expect("active").global_cursor)
            .min()
            .unwrap_or(u64::MAX);
        let g = self.global_mut();
        while g.events.front().is_some_and(|e| e.seq <= floor) {
            let e = g.events.pop_front().expect("front checked");
            g.event_bytes -= e.payload.len() as u64;
        }
    }
}
