//! Socket front-end: bot and player clients join, send inputs and receive
//! per-tick frame notifications over a small binary protocol.

mod bot;
mod server;
pub mod wire;

pub use bot::BotClient;
pub use server::{ConnId, Gateway, GatewayConfig, GatewayError, GatewayStats, InputEvent};
pub use wire::{Message, RejectReason};
