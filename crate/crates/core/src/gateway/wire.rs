//! Length-prefixed binary framing.
//!
//! Every message is `[version u8][type u8][len u32 BE][payload]`. Integers in
//! payloads are big-endian; floats are IEEE-754 big-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 6;
/// Largest payload a peer may declare.
pub const MAX_PAYLOAD: u32 = 1 << 20;

pub const JOIN: u8 = 1;
pub const JOIN_ACK: u8 = 2;
pub const REJECT: u8 = 3;
pub const INPUT: u8 = 4;
pub const FRAME: u8 = 5;
pub const LEAVE: u8 = 6;
pub const ENGINE_DOWN: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RejectReason {
    Capacity = 1,
    EngineDown = 2,
    Protocol = 3,
    NotJoined = 4,
    Duplicate = 5,
    ServerFull = 6,
}

impl RejectReason {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            1 => Self::Capacity,
            2 => Self::EngineDown,
            3 => Self::Protocol,
            4 => Self::NotJoined,
            5 => Self::Duplicate,
            6 => Self::ServerFull,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Join,
    JoinAck {
        player: u64,
    },
    /// Refusal or error report. Capacity rejections carry the predicted tick
    /// time and the budget; other reasons send zeros.
    Reject {
        reason: RejectReason,
        predicted_ms: f64,
        budget_ms: f64,
    },
    Input {
        client_seq: u64,
        name: String,
        payload: Vec<u8>,
    },
    Frame {
        tick: u64,
        digest: u64,
        tick_model_ms: f64,
    },
    Leave,
    EngineDown {
        reason: String,
    },
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("declared payload length {0} exceeds the limit")]
    TooLong(u32),
    #[error("malformed {0} payload")]
    Malformed(&'static str),
    #[error("connection closed mid-message")]
    Truncated,
}

impl Message {
    pub fn reject(reason: RejectReason) -> Self {
        Message::Reject {
            reason,
            predicted_ms: 0.0,
            budget_ms: 0.0,
        }
    }

    pub fn type_byte(&self) -> u8 {
        match self {
            Message::Join => JOIN,
            Message::JoinAck { .. } => JOIN_ACK,
            Message::Reject { .. } => REJECT,
            Message::Input { .. } => INPUT,
            Message::Frame { .. } => FRAME,
            Message::Leave => LEAVE,
            Message::EngineDown { .. } => ENGINE_DOWN,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Message::Join | Message::Leave => {}
            Message::JoinAck { player } => p.extend(player.to_be_bytes()),
            Message::Reject {
                reason,
                predicted_ms,
                budget_ms,
            } => {
                p.push(*reason as u8);
                p.extend(predicted_ms.to_be_bytes());
                p.extend(budget_ms.to_be_bytes());
            }
            Message::Input {
                client_seq,
                name,
                payload,
            } => {
                p.extend(client_seq.to_be_bytes());
                let name = &name.as_bytes()[..name.len().min(255)];
                p.push(name.len() as u8);
                p.extend(name);
                p.extend(payload);
            }
            Message::Frame {
                tick,
                digest,
                tick_model_ms,
            } => {
                p.extend(tick.to_be_bytes());
                p.extend(digest.to_be_bytes());
                p.extend(tick_model_ms.to_be_bytes());
            }
            Message::EngineDown { reason } => p.extend(reason.as_bytes()),
        }
        p
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.push(VERSION);
        out.push(self.type_byte());
        out.extend((payload.len() as u32).to_be_bytes());
        out.extend(payload);
        out
    }

    pub fn decode(ty: u8, p: &[u8]) -> Result<Self, WireError> {
        let u64_at = |i: usize| u64::from_be_bytes(p[i..i + 8].try_into().expect("8 bytes"));
        let f64_at = |i: usize| f64::from_be_bytes(p[i..i + 8].try_into().expect("8 bytes"));
        let exact = |n: usize, what| {
            if p.len() == n {
                Ok(())
            } else {
                Err(WireError::Malformed(what))
            }
        };
        Ok(match ty {
            JOIN => {
                exact(0, "JOIN")?;
                Message::Join
            }
            JOIN_ACK => {
                exact(8, "JOIN_ACK")?;
                Message::JoinAck { player: u64_at(0) }
            }
            REJECT => {
                exact(17, "REJECT")?;
                Message::Reject {
                    reason: RejectReason::from_u8(p[0]).ok_or(WireError::Malformed("REJECT"))?,
                    predicted_ms: f64_at(1),
                    budget_ms: f64_at(9),
                }
            }
            INPUT => {
                if p.len() < 9 || p.len() < 9 + p[8] as usize {
                    return Err(WireError::Malformed("INPUT"));
                }
                let end = 9 + p[8] as usize;
                Message::Input {
                    client_seq: u64_at(0),
                    name: String::from_utf8(p[9..end].to_vec()).map_err(|_| WireError::Malformed("INPUT"))?,
                    payload: p[end..].to_vec(),
                }
            }
            FRAME => {
                exact(24, "FRAME")?;
                Message::Frame {
                    tick: u64_at(0),
                    digest: u64_at(8),
                    tick_model_ms: f64_at(16),
                }
            }
            LEAVE => {
                exact(0, "LEAVE")?;
                Message::Leave
            }
            ENGINE_DOWN => Message::EngineDown {
                reason: String::from_utf8(p.to_vec()).map_err(|_| WireError::Malformed("ENGINE_DOWN"))?,
            },
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

/// Reads one message. `Ok(None)` is a clean close between messages.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, WireError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if header[0] != VERSION {
        return Err(WireError::Version(header[0]));
    }
    let ty = header[1];
    if !(JOIN..=ENGINE_DOWN).contains(&ty) {
        return Err(WireError::UnknownType(ty));
    }
    let len = u32::from_be_bytes(header[2..6].try_into().expect("4 bytes"));
    if len > MAX_PAYLOAD {
        return Err(WireError::TooLong(len));
    }
    let mut payload = vec![0; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => WireError::Io(e),
    })?;
    Message::decode(ty, &payload).map(Some)
}

pub fn write_message<W: Write>(w: &mut W, m: &Message) -> io::Result<()> {
    w.write_all(&m.encode())
}
