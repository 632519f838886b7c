//! C ABI over the engine.
//!
//! Engines are opaque heap handles created from a scenario document and
//! released with `capsule_engine_free`. Every fallible call returns a
//! [`CapsuleStatus`]; the message of the last failure on the calling thread
//! is available from `capsule_last_error`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use capsule_core::ecs::InputBatches;
use capsule_core::harness::{self, Mode};
use capsule_core::scenario::Scenario;
use capsule_core::session::Engine;
use capsule_core::{EngineError, PlayerId, PlayerInput};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapsuleStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidScenario = 3,
    CapacityExceeded = 4,
    UnknownPlayer = 5,
    EngineDown = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapsuleMode {
    Capsule = 0,
    Baseline = 1,
}

/// One tick's resource sample.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CapsuleSample {
    pub tick: u64,
    pub players: u64,
    pub cpu_work: u64,
    pub ram_bytes: u64,
    pub gpu_work: u64,
    pub vram_bytes: u64,
    pub tick_model_ms: f64,
}

/// Opaque engine handle.
pub struct CapsuleEngine {
    scenario: Scenario,
    engine: Engine,
    pending: InputBatches,
    next_ordinal: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: CapsuleStatus, msg: impl std::fmt::Display) -> CapsuleStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
    status
}

fn engine_status(e: &EngineError) -> CapsuleStatus {
    match e {
        EngineError::CapacityExceeded { .. } => CapsuleStatus::CapacityExceeded,
        EngineError::UnknownPlayer(_) => CapsuleStatus::UnknownPlayer,
        EngineError::EngineDown(_) => CapsuleStatus::EngineDown,
        _ => CapsuleStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> CapsuleStatus) -> CapsuleStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(CapsuleStatus::Internal, "internal panic"))
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, CapsuleStatus> {
    if p.is_null() {
        return Err(fail(CapsuleStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CapsuleStatus::InvalidArgument, "string is not UTF-8"))
}

fn parse(doc: &str) -> Result<Scenario, CapsuleStatus> {
    Scenario::from_toml_str(doc).map_err(|e| fail(CapsuleStatus::InvalidScenario, e))
}

fn boxed(scenario: Scenario) -> *mut CapsuleEngine {
    Box::into_raw(Box::new(CapsuleEngine {
        engine: scenario.build_engine(),
        scenario,
        pending: InputBatches::new(),
        next_ordinal: 0,
    }))
}

/// Creates an engine from a scenario document (TOML text).
///
/// # Safety
/// `scenario_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_new_from_str(
    scenario_toml: *const c_char,
    out: *mut *mut CapsuleEngine,
) -> CapsuleStatus {
    guard(|| {
        if out.is_null() {
            return fail(CapsuleStatus::NullPointer, "null out pointer");
        }
        match text(scenario_toml).and_then(parse) {
            Ok(s) => {
                *out = boxed(s);
                CapsuleStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Creates an engine from a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_new_from_path(
    path: *const c_char,
    out: *mut *mut CapsuleEngine,
) -> CapsuleStatus {
    guard(|| {
        if out.is_null() {
            return fail(CapsuleStatus::NullPointer, "null out pointer");
        }
        let path = match text(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match Scenario::load(path) {
            Ok(s) => {
                *out = boxed(s);
                CapsuleStatus::Ok
            }
            Err(e) => fail(CapsuleStatus::InvalidScenario, e),
        }
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from a constructor above and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_free(engine: *mut CapsuleEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

unsafe fn with<'a>(engine: *mut CapsuleEngine) -> Result<&'a mut CapsuleEngine, CapsuleStatus> {
    engine
        .as_mut()
        .ok_or_else(|| fail(CapsuleStatus::NullPointer, "null engine"))
}

/// Admits the next player of the scenario. Writes its id to `out_player`.
///
/// # Safety
/// `engine` must be a live handle; `out_player` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_join(engine: *mut CapsuleEngine, out_player: *mut u64) -> CapsuleStatus {
    guard(|| {
        let e = match with(engine) {
            Ok(e) => e,
            Err(s) => return s,
        };
        if out_player.is_null() {
            return fail(CapsuleStatus::NullPointer, "null out pointer");
        }
        match e.engine.join(&e.scenario.player_profile(e.next_ordinal)) {
            Ok(session) => {
                e.next_ordinal += 1;
                *out_player = session.player.0;
                CapsuleStatus::Ok
            }
            Err(err) => fail(engine_status(&err), err),
        }
    })
}

/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_leave(engine: *mut CapsuleEngine, player: u64) -> CapsuleStatus {
    guard(|| {
        let e = match with(engine) {
            Ok(e) => e,
            Err(s) => return s,
        };
        e.pending.remove(&PlayerId(player));
        match e.engine.leave(PlayerId(player)) {
            Ok(_) => CapsuleStatus::Ok,
            Err(err) => fail(engine_status(&err), err),
        }
    })
}

/// Queues an input for `player`, applied on the next tick.
///
/// # Safety
/// `engine` must be a live handle, `name` NUL-terminated, and `payload` valid
/// for `len` bytes (it may be null when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_input(
    engine: *mut CapsuleEngine,
    player: u64,
    name: *const c_char,
    payload: *const u8,
    len: usize,
) -> CapsuleStatus {
    guard(|| {
        let e = match with(engine) {
            Ok(e) => e,
            Err(s) => return s,
        };
        let name = match text(name) {
            Ok(n) => n,
            Err(s) => return s,
        };
        if payload.is_null() && len > 0 {
            return fail(CapsuleStatus::NullPointer, "null payload");
        }
        let bytes = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(payload, len).to_vec()
        };
        let p = PlayerId(player);
        if !e.engine.session(p).is_some_and(|s| s.is_active()) {
            return fail(CapsuleStatus::UnknownPlayer, EngineError::UnknownPlayer(p));
        }
        e.pending.entry(p).or_default().push(PlayerInput::new(name, bytes));
        CapsuleStatus::Ok
    })
}

/// Runs one tick. `out` may be null.
///
/// # Safety
/// `engine` must be a live handle; `out`, if not null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_tick(engine: *mut CapsuleEngine, out: *mut CapsuleSample) -> CapsuleStatus {
    guard(|| {
        let e = match with(engine) {
            Ok(e) => e,
            Err(s) => return s,
        };
        if !e.engine.is_down() {
            let tick = e.engine.world().tick_count();
            for (name, payload) in e.scenario.global_events_at(tick) {
                let _ = e.engine.emit_global(name, payload);
            }
        }
        let inputs = std::mem::take(&mut e.pending);
        let s = e.engine.tick(&inputs).sample;
        if let Some(out) = out.as_mut() {
            *out = CapsuleSample {
                tick: s.tick,
                players: s.players,
                cpu_work: s.cpu_work,
                ram_bytes: s.ram_bytes,
                gpu_work: s.gpu_work,
                vram_bytes: s.vram_bytes,
                tick_model_ms: s.tick_model_ms,
            };
        }
        CapsuleStatus::Ok
    })
}

/// Digest of what `player` observes at the current tick.
///
/// # Safety
/// `engine` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_frame_digest(
    engine: *const CapsuleEngine,
    player: u64,
    out: *mut u64,
) -> CapsuleStatus {
    guard(|| {
        let Some(e) = engine.as_ref() else {
            return fail(CapsuleStatus::NullPointer, "null engine");
        };
        if out.is_null() {
            return fail(CapsuleStatus::NullPointer, "null out pointer");
        }
        match e.engine.world().frame_digest(PlayerId(player)) {
            Ok(d) => {
                *out = d.hash;
                CapsuleStatus::Ok
            }
            Err(err) => fail(engine_status(&err), err),
        }
    })
}

/// Takes the engine down with every session on it. Writes the number of
/// sessions ended to `out_ended` when not null.
///
/// # Safety
/// `engine` must be a live handle; `reason` NUL-terminated or null.
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_terminate(
    engine: *mut CapsuleEngine,
    reason: *const c_char,
    out_ended: *mut usize,
) -> CapsuleStatus {
    guard(|| {
        let e = match with(engine) {
            Ok(e) => e,
            Err(s) => return s,
        };
        let reason = if reason.is_null() {
            "terminated"
        } else {
            match text(reason) {
                Ok(r) => r,
                Err(s) => return s,
            }
        };
        e.pending.clear();
        let ended = e.engine.terminate_engine(reason).len();
        if let Some(out) = out_ended.as_mut() {
            *out = ended;
        }
        CapsuleStatus::Ok
    })
}

/// # Safety
/// `engine` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capsule_engine_active_players(engine: *const CapsuleEngine, out: *mut usize) -> CapsuleStatus {
    guard(|| {
        let Some(e) = engine.as_ref() else {
            return fail(CapsuleStatus::NullPointer, "null engine");
        };
        match out.as_mut() {
            Some(out) => {
                *out = e.engine.active_count();
                CapsuleStatus::Ok
            }
            None => fail(CapsuleStatus::NullPointer, "null out pointer"),
        }
    })
}

/// Largest player count the scenario's machine hosts in `mode`.
///
/// # Safety
/// `scenario_toml` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capsule_capacity_search(
    scenario_toml: *const c_char,
    mode: CapsuleMode,
    out: *mut u64,
) -> CapsuleStatus {
    guard(|| {
        if out.is_null() {
            return fail(CapsuleStatus::NullPointer, "null out pointer");
        }
        let s = match text(scenario_toml).and_then(parse) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let mode = match mode {
            CapsuleMode::Capsule => Mode::Capsule,
            CapsuleMode::Baseline => Mode::Baseline,
        };
        *out = harness::capacity_search(&s, mode);
        CapsuleStatus::Ok
    })
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one, so a
/// return value above `len` means the buffer was too small.
///
/// # Safety
/// `buf` must be writable for `len` bytes, or null with `len` 0.
#[no_mangle]
pub unsafe extern "C" fn capsule_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}
