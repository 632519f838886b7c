//! Independent oracles and generators shared by the property suites and the
//! acceptance run. Nothing here calls into engine internals; every expected
//! value is recomputed from first principles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};

use capsule_core::cost::{budget_ms_for_fps, CostModel};
use capsule_core::ecs::InputBatches;
use capsule_core::harness::{sweep, CapsuleHost, Host, Mode};
use capsule_core::render::{AssetCache, AssetError};
use capsule_core::scenario::{AssetSpec, CostTable, EntityGroup, EventSpec, Scenario, ScheduleAction, ScheduleEntry};
use capsule_core::{AssetId, Component, ComponentKind, EntityDesc, EntityId, EventDraft, PlayerId, Scope, World};

/// Runs `cases` generated inputs through `check` with a fixed RNG, so every
/// run sees the same cases. Returns the number of cases and the first failure.
pub fn run_fixed<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), String>,
) -> Result<u32, String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    let mut runner = TestRunner::new_with_rng(config, rng);
    runner
        .run(&strategy, |v| check(v).map_err(TestCaseError::fail))
        .map(|()| cases)
        .map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- isolation

#[derive(Debug, Clone)]
pub enum Op {
    Join,
    Leave(u8),
    SpawnGlobal(u8),
    SpawnLocal(u8, u8),
    Despawn(u8),
    EmitGlobal(u8),
    EmitLocal(u8, u8),
    Drain(u8),
    Tick,
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => Just(Op::Join),
        1 => any::<u8>().prop_map(Op::Leave),
        2 => any::<u8>().prop_map(Op::SpawnGlobal),
        4 => (any::<u8>(), any::<u8>()).prop_map(|(w, b)| Op::SpawnLocal(w, b)),
        2 => any::<u8>().prop_map(Op::Despawn),
        2 => any::<u8>().prop_map(Op::EmitGlobal),
        4 => (any::<u8>(), any::<u8>()).prop_map(|(w, b)| Op::EmitLocal(w, b)),
        3 => any::<u8>().prop_map(Op::Drain),
        1 => Just(Op::Tick),
    ]
}

pub fn trace() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(op(), 1..80)
}

#[derive(Debug)]
struct Logged {
    seq: u64,
    scope: Scope,
    payload: Vec<u8>,
}

/// Broadcast-and-filter model: one flat list of every entity and every event
/// ever emitted; a player's view is a filter over it.
#[derive(Debug, Default)]
struct IsolationOracle {
    entities: BTreeMap<EntityId, Scope>,
    log: Vec<Logged>,
    /// player -> highest seq already delivered (or existing at join)
    seen: BTreeMap<PlayerId, u64>,
    last_seq: u64,
}

impl IsolationOracle {
    fn visible(&self, q: PlayerId) -> Vec<EntityId> {
        self.entities
            .iter()
            .filter(|(_, s)| matches!(s, Scope::Global) || **s == Scope::Local(q))
            .map(|(&id, _)| id)
            .collect()
    }

    fn drain(&mut self, q: PlayerId) -> Vec<(u64, Scope, Vec<u8>)> {
        let seen = self.seen[&q];
        let out: Vec<_> = self
            .log
            .iter()
            .filter(|e| e.seq > seen)
            .filter(|e| matches!(e.scope, Scope::Global) || e.scope == Scope::Local(q))
            .map(|e| (e.seq, e.scope, e.payload.clone()))
            .collect();
        self.seen.insert(q, self.last_seq);
        out
    }
}

fn pick(players: &[PlayerId], b: u8) -> Option<PlayerId> {
    (!players.is_empty()).then(|| players[b as usize % players.len()])
}

/// Payload bytes that name their owner, so leaks are detectable by content.
fn taint(owner: Option<PlayerId>, n: u64) -> Vec<u8> {
    let tag = owner.map_or(0xff, |p| p.0 as u8);
    vec![tag, (n & 0xff) as u8, (n >> 8) as u8, 0xa5]
}

pub fn check_isolation(ops: Vec<Op>) -> Result<(), String> {
    let mut w = World::new(1, budget_ms_for_fps(30)).unwrap();
    w.register_component(ComponentKind(0), 4).unwrap();
    let mut o = IsolationOracle::default();
    let mut next_player = 0;
    let mut departed: Vec<PlayerId> = Vec::new();
    let mut counter = 0u64;

    for (step, op) in ops.iter().enumerate() {
        counter += 1;
        let players: Vec<PlayerId> = o.seen.keys().copied().collect();
        match *op {
            Op::Join => {
                let p = PlayerId(next_player);
                next_player += 1;
                w.create_local(p).map_err(|e| e.to_string())?;
                o.seen.insert(p, o.last_seq);
            }
            Op::Leave(b) => {
                let Some(p) = pick(&players, b) else { continue };
                w.destroy_local(p).map_err(|e| e.to_string())?;
                o.seen.remove(&p);
                o.entities.retain(|_, s| *s != Scope::Local(p));
                departed.push(p);
            }
            Op::SpawnGlobal(_) => {
                let id = w
                    .spawn_entity(Scope::Global, vec![Component::new(0, taint(None, counter))])
                    .map_err(|e| e.to_string())?;
                o.entities.insert(id, Scope::Global);
            }
            Op::SpawnLocal(who, _) => {
                let Some(p) = pick(&players, who) else { continue };
                let id = w
                    .spawn_entity(Scope::Local(p), vec![Component::new(0, taint(Some(p), counter))])
                    .map_err(|e| e.to_string())?;
                o.entities.insert(id, Scope::Local(p));
            }
            Op::Despawn(b) => {
                let ids: Vec<EntityId> = o.entities.keys().copied().collect();
                if ids.is_empty() {
                    continue;
                }
                let id = ids[b as usize % ids.len()];
                w.despawn(id).map_err(|e| e.to_string())?;
                o.entities.remove(&id);
            }
            Op::EmitGlobal(_) => {
                let payload = taint(None, counter);
                let seq = w
                    .emit(EventDraft::new(Scope::Global, "env", payload.clone()))
                    .map_err(|e| e.to_string())?;
                o.last_seq = seq;
                o.log.push(Logged {
                    seq,
                    scope: Scope::Global,
                    payload,
                });
            }
            Op::EmitLocal(who, _) => {
                let Some(p) = pick(&players, who) else { continue };
                let payload = taint(Some(p), counter);
                let seq = w
                    .emit(EventDraft::new(Scope::Local(p), "act", payload.clone()))
                    .map_err(|e| e.to_string())?;
                o.last_seq = seq;
                o.log.push(Logged {
                    seq,
                    scope: Scope::Local(p),
                    payload,
                });
            }
            Op::Drain(b) => {
                let Some(q) = pick(&players, b) else { continue };
                let got: Vec<(u64, Scope, Vec<u8>)> = w
                    .drain_for(q, u64::MAX)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|e| (e.seq, e.scope, e.payload))
                    .collect();
                if let Some(leak) = got.iter().find(|e| matches!(e.1, Scope::Local(p) if p != q)) {
                    return Err(format!("step {step}: {q} drained another player's event {leak:?}"));
                }
                let want = o.drain(q);
                if got != want {
                    return Err(format!("step {step}: drain_for({q}) = {got:?}, oracle {want:?}"));
                }
            }
            Op::Tick => {
                w.tick(&InputBatches::new());
                for q in players {
                    o.seen.insert(q, o.last_seq);
                }
            }
        }

        for &q in o.seen.keys() {
            let got = w.visible_set(q).map_err(|e| e.to_string())?;
            for id in &got {
                if let Ok(Scope::Local(p)) = w.scope_of(*id) {
                    if p != q {
                        return Err(format!("step {step}: {q} sees {p}'s entity {id}"));
                    }
                }
            }
            let want = o.visible(q);
            if got != want {
                return Err(format!("step {step}: visible_set({q}) = {got:?}, oracle {want:?}"));
            }
        }
        for &p in &departed {
            if w.visible_set(p).is_ok() || w.drain_for(p, u64::MAX).is_ok() {
                return Err(format!("step {step}: departed {p} still has a store"));
            }
        }
    }
    Ok(())
}

// -------------------------------------------------------------------- dedup

pub const ASSET_POOL: [(&str, u64); 6] = [
    ("mesh", 100),
    ("tex", 250),
    ("hdr", 4000),
    ("tiny", 7),
    ("anim", 1000),
    ("font", 33),
];

#[derive(Debug, Clone)]
pub enum CacheOp {
    /// asset, holder, whether to request a wrong size
    Load(u8, u8, bool),
    Release(u8, u8),
}

pub fn cache_trace() -> impl Strategy<Value = Vec<CacheOp>> {
    let op = prop_oneof![
        5 => (any::<u8>(), 0u8..8, prop::bool::weighted(0.1)).prop_map(|(a, h, bad)| CacheOp::Load(a, h, bad)),
        4 => (any::<u8>(), 0u8..8).prop_map(|(a, h)| CacheOp::Release(a, h)),
    ];
    prop::collection::vec(op, 1..120)
}

/// total_vram must equal the sizes of assets with at least one handle held.
pub fn check_cache_dedup(ops: Vec<CacheOp>) -> Result<(), String> {
    let mut cache = AssetCache::new(0);
    // asset -> (size, holder -> handles)
    let mut held: BTreeMap<&str, (u64, BTreeMap<u8, u32>)> = BTreeMap::new();
    for (step, op) in ops.iter().enumerate() {
        match *op {
            CacheOp::Load(a, h, bad) => {
                let (name, size) = ASSET_POOL[a as usize % ASSET_POOL.len()];
                let size = if bad { size + 1 } else { size };
                let r = cache.load(&AssetId::new(name), size, EntityId::new(h.into(), 0));
                match held.get_mut(name) {
                    Some((cached, _)) if *cached != size => {
                        if !matches!(r, Err(AssetError::SizeMismatch { .. })) {
                            return Err(format!("step {step}: mismatched reload gave {r:?}"));
                        }
                    }
                    entry => {
                        r.map_err(|e| format!("step {step}: {e}"))?;
                        match entry {
                            Some((_, holders)) => *holders.entry(h).or_default() += 1,
                            None => {
                                held.insert(name, (size, BTreeMap::from([(h, 1)])));
                            }
                        }
                    }
                }
            }
            CacheOp::Release(a, h) => {
                let (name, _) = ASSET_POOL[a as usize % ASSET_POOL.len()];
                let r = cache.release(&AssetId::new(name), EntityId::new(h.into(), 0));
                let holds = held.get(name).and_then(|(_, hs)| hs.get(&h)).copied().unwrap_or(0);
                if holds == 0 {
                    if !matches!(r, Err(AssetError::NotHeld { .. })) {
                        return Err(format!("step {step}: release by non-holder gave {r:?}"));
                    }
                    continue;
                }
                r.map_err(|e| format!("step {step}: {e}"))?;
                let (_, hs) = held.get_mut(name).expect("held");
                *hs.get_mut(&h).expect("held") -= 1;
                if hs[&h] == 0 {
                    hs.remove(&h);
                }
                if hs.is_empty() {
                    held.remove(name);
                }
            }
        }
        let want: u64 = held.values().map(|(s, _)| s).sum();
        if cache.total_vram() != want {
            return Err(format!(
                "step {step}: total_vram {} != oracle {want}",
                cache.total_vram()
            ));
        }
        for (name, (_, hs)) in &held {
            let refs: u64 = hs.values().map(|&n| u64::from(n)).sum();
            if cache.refcount(&AssetId::new(*name)) != refs {
                return Err(format!("step {step}: refcount of {name} wrong"));
            }
        }
        if cache.len() != held.len() {
            return Err(format!("step {step}: {} cached, oracle {}", cache.len(), held.len()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum WorldAssetOp {
    Join,
    Leave(u8),
    /// owner (None = global), asset picks
    Spawn(Option<u8>, Vec<u8>),
    Despawn(u8),
}

pub fn world_asset_trace() -> impl Strategy<Value = Vec<WorldAssetOp>> {
    let op = prop_oneof![
        2 => Just(WorldAssetOp::Join),
        1 => any::<u8>().prop_map(WorldAssetOp::Leave),
        5 => (prop::option::weighted(0.8, any::<u8>()), prop::collection::vec(any::<u8>(), 0..4))
            .prop_map(|(w, a)| WorldAssetOp::Spawn(w, a)),
        3 => any::<u8>().prop_map(WorldAssetOp::Despawn),
    ];
    prop::collection::vec(op, 1..80)
}

pub const FRAMEBUFFER: u64 = 64;

/// VRAM through the world: distinct assets of live entities plus one
/// framebuffer per active player.
pub fn check_world_dedup(ops: Vec<WorldAssetOp>) -> Result<(), String> {
    let cost = CostModel {
        framebuffer: FRAMEBUFFER,
        ..CostModel::default()
    };
    let mut w = World::with_cost_model(3, budget_ms_for_fps(30), cost).unwrap();
    let mut players: Vec<PlayerId> = Vec::new();
    let mut next = 0;
    let mut live: BTreeMap<EntityId, (Scope, Vec<&str>)> = BTreeMap::new();
    for (step, op) in ops.iter().enumerate() {
        match op {
            WorldAssetOp::Join => {
                let p = PlayerId(next);
                next += 1;
                w.create_local(p).map_err(|e| e.to_string())?;
                players.push(p);
            }
            WorldAssetOp::Leave(b) => {
                let Some(p) = pick(&players, *b) else { continue };
                w.destroy_local(p).map_err(|e| e.to_string())?;
                players.retain(|&x| x != p);
                live.retain(|_, (s, _)| *s != Scope::Local(p));
            }
            WorldAssetOp::Spawn(owner, picks) => {
                let scope = match owner {
                    None => Scope::Global,
                    Some(b) => match pick(&players, *b) {
                        Some(p) => Scope::Local(p),
                        None => continue,
                    },
                };
                let mut desc = EntityDesc::new(vec![]);
                let mut names = Vec::new();
                for a in picks {
                    let (name, size) = ASSET_POOL[*a as usize % ASSET_POOL.len()];
                    desc = desc.with_asset(AssetId::new(name), size);
                    names.push(name);
                }
                let id = w.spawn(scope, desc).map_err(|e| e.to_string())?;
                live.insert(id, (scope, names));
            }
            WorldAssetOp::Despawn(b) => {
                let ids: Vec<EntityId> = live.keys().copied().collect();
                if ids.is_empty() {
                    continue;
                }
                let id = ids[*b as usize % ids.len()];
                w.despawn(id).map_err(|e| e.to_string())?;
                live.remove(&id);
            }
        }
        let distinct: BTreeSet<&str> = live.values().flat_map(|(_, n)| n.iter().copied()).collect();
        let want: u64 = distinct
            .iter()
            .map(|n| ASSET_POOL.iter().find(|(x, _)| x == n).unwrap().1)
            .sum::<u64>()
            + FRAMEBUFFER * players.len() as u64;
        if w.assets().total_vram() != want {
            return Err(format!(
                "step {step}: vram {} != oracle {want}",
                w.assets().total_vram()
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- scenarios

fn sizes() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..512, 1..4)
}

/// Scenarios on a machine large enough for `players` players, with shared
/// content on every resource.
pub fn shared_scenario() -> impl Strategy<Value = Scenario> {
    (
        (any::<u64>(), 1u64..200, 0u64..100, 1u32..40, sizes(), 1u32..8, sizes()),
        (
            prop::collection::vec(1u64..100_000, 1..3),
            prop::collection::vec(1u64..100_000, 0..3),
            0u64..5_000,
            1u64..5,
            0u64..4,
            1u64..16,
            0u64..1_000_000,
            0u64..1_000_000,
        ),
        (prop::option::of(1u64..5), prop::option::of(1u64..5)),
    )
        .prop_map(
            |((seed, sg, pv, gc, gs, lc, ls), (shared, private, fc, ec, pc, cores, fr, fb), (ge, pi))| {
                let mut assets: Vec<AssetSpec> = shared
                    .iter()
                    .enumerate()
                    .map(|(i, &size)| AssetSpec {
                        id: format!("shared{i}"),
                        size,
                        shared: true,
                    })
                    .collect();
                assets.extend(private.iter().enumerate().map(|(i, &size)| AssetSpec {
                    id: format!("own{i}"),
                    size,
                    shared: false,
                }));
                Scenario {
                    schema_version: 1,
                    name: "generated".into(),
                    seed,
                    target_fps: 30,
                    duration_ticks: 12,
                    shared_gpu: sg,
                    per_view_gpu: pv,
                    global_entities: EntityGroup {
                        count: gc,
                        component_sizes: gs,
                    },
                    per_player_entities: EntityGroup {
                        count: lc,
                        component_sizes: ls,
                    },
                    assets,
                    join_schedule: vec![
                        ScheduleEntry {
                            tick: 0,
                            action: ScheduleAction::Join,
                            player: None,
                        },
                        ScheduleEntry {
                            tick: 2,
                            action: ScheduleAction::Join,
                            player: None,
                        },
                    ],
                    global_events: ge
                        .map(|every| EventSpec {
                            every,
                            name: "env".into(),
                            payload_size: 16,
                        })
                        .into_iter()
                        .collect(),
                    player_inputs: pi
                        .map(|every| EventSpec {
                            every,
                            name: "act".into(),
                            payload_size: 8,
                        })
                        .into_iter()
                        .collect(),
                    cost_model: CostTable {
                        engine_fixed_cpu: fc,
                        entity_cpu: ec,
                        per_player_cpu: pc,
                        cpu_capacity: 1 << 40,
                        cpu_cores: cores,
                        engine_fixed_ram: fr,
                        gpu_capacity: 1 << 40,
                        framebuffer: fb,
                        vram_capacity: 1 << 50,
                        vram_overcommit_penalty: 4.0,
                    },
                }
            },
        )
}

pub const SWEEP_PLAYERS: u64 = 8;

/// Capsule marginal cost below the first player's on every resource, capsule
/// below baseline, baseline exactly linear.
pub fn check_sublinear(s: Scenario) -> Result<(), String> {
    s.validate().map_err(|e| e.to_string())?;
    if !s.has_shared_content() {
        return Err("generator produced a scenario without shared content".into());
    }
    let cap = sweep(&s, Mode::Capsule, SWEEP_PLAYERS);
    let base = sweep(&s, Mode::Baseline, SWEEP_PLAYERS);
    if cap.len() as u64 != SWEEP_PLAYERS + 1 || base.len() as u64 != SWEEP_PLAYERS + 1 {
        return Err("machine did not fit the sweep".into());
    }
    let u = |v: &[capsule_core::ResourceSample], n: usize| {
        let x = v[n].usage();
        [x.cpu_work, x.ram_bytes, x.gpu_work, x.vram_bytes]
    };
    let first: Vec<u64> = (0..4).map(|r| u(&cap, 1)[r] - u(&cap, 0)[r]).collect();
    for n in 2..=SWEEP_PLAYERS as usize {
        for (r, name) in ["cpu", "ram", "gpu", "vram"].iter().enumerate() {
            let marginal = u(&cap, n)[r] - u(&cap, n - 1)[r];
            if marginal >= first[r] {
                return Err(format!(
                    "{name}: marginal({n}) = {marginal} >= first player {}",
                    first[r]
                ));
            }
            if u(&cap, n)[r] >= u(&base, n)[r] {
                return Err(format!("{name}: capsule({n}) not below baseline"));
            }
        }
        let one = base[1].usage();
        if base[n].usage() != one * n as u64 {
            return Err(format!("baseline({n}) != {n} x baseline(1)"));
        }
    }
    Ok(())
}

// ------------------------------------------------------------- transparency

/// Join ticks per ordinal for a co-resident run of `n` players.
pub fn staggered(n: u64) -> Vec<u64> {
    (0..n).map(|k| k * 3 % 7).collect()
}

/// Digest stream of `ordinal`, keyed by tick, with the given join ticks.
fn digests(s: &Scenario, joins: &BTreeMap<u64, u64>, ticks: u64, ordinal: u64) -> Result<Vec<(u64, u64)>, String> {
    let mut host = CapsuleHost::new(s.clone());
    let mut out = Vec::new();
    for tick in 0..ticks {
        for (&o, _) in joins.iter().filter(|(_, &t)| t == tick) {
            host.join(o).map_err(|e| format!("join of player {o}: {e}"))?;
        }
        let step = host.step();
        out.extend(
            step.digests
                .iter()
                .filter(|(o, _)| *o == ordinal)
                .map(|&(_, h)| (tick, h)),
        );
    }
    Ok(out)
}

/// Each of `n` co-resident players sees exactly what it sees alone. Frames do
/// not depend on the cost model, so the machine is enlarged to admit `n`.
pub fn check_transparency(s: &Scenario, n: u64, ticks: u64) -> Result<(), String> {
    let mut s = s.clone();
    s.cost_model.cpu_capacity = 1 << 40;
    s.cost_model.gpu_capacity = 1 << 40;
    s.cost_model.vram_capacity = 1 << 50;
    let s = &s;
    let joins: BTreeMap<u64, u64> = staggered(n)
        .into_iter()
        .enumerate()
        .map(|(k, t)| (k as u64, t))
        .collect();
    for ordinal in 0..n {
        let together = digests(s, &joins, ticks, ordinal)?;
        let alone = digests(s, &BTreeMap::from([(ordinal, joins[&ordinal])]), ticks, ordinal)?;
        if together.is_empty() || together != alone {
            return Err(format!("player {ordinal} with {n} co-residents sees different frames"));
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ gateway

/// Light scenario with room for dozens of players and no environment events,
/// so every applied event came from a client.
pub const LOBBY: &str = r#"
schema_version = 1
name = "lobby"
seed = 11
target_fps = 30
duration_ticks = 100
shared_gpu = 10
per_view_gpu = 1

[global_entities]
count = 8
component_sizes = [16, 8]

[per_player_entities]
count = 2
component_sizes = [8]

[[assets]]
id = "hall"
size = 4096
shared = true

[cost_model]
engine_fixed_cpu = 100
entity_cpu = 2
per_player_cpu = 1
cpu_capacity = 1000000
cpu_cores = 8
engine_fixed_ram = 4096
gpu_capacity = 1000
framebuffer = 64
vram_capacity = 100000000
vram_overcommit_penalty = 4.0
"#;

pub fn lobby() -> Scenario {
    Scenario::from_toml_str(LOBBY).expect("lobby scenario parses")
}

pub fn gateway(s: Scenario) -> capsule_core::gateway::Gateway {
    capsule_core::gateway::Gateway::serve(s, capsule_core::gateway::GatewayConfig::default()).expect("bind loopback")
}

/// Ticks until `done` holds or `timeout` passes.
pub fn tick_until(
    gw: &mut capsule_core::gateway::Gateway,
    timeout: std::time::Duration,
    mut done: impl FnMut(&capsule_core::gateway::Gateway) -> bool,
) -> bool {
    let deadline = std::time::Instant::now() + timeout;
    while std::time::Instant::now() < deadline {
        gw.tick();
        if done(gw) {
            return true;
        }
        std::thread::sleep(std::time::Duration::from_micros(500));
    }
    false
}

/// What one bot observed over its connection.
#[derive(Debug, Default)]
pub struct BotLog {
    pub player: Option<u64>,
    pub frame_ticks: Vec<u64>,
    pub engine_down: u32,
    pub rejects: u32,
}

/// Joins, answers each of its first `inputs` frames with one input, and reads
/// until the server closes the connection.
pub fn bot(addr: std::net::SocketAddr, inputs: u64) -> Result<BotLog, String> {
    use capsule_core::gateway::{BotClient, Message};
    let mut c = BotClient::connect(addr).map_err(|e| e.to_string())?;
    c.set_timeout(Some(std::time::Duration::from_secs(60)))
        .map_err(|e| e.to_string())?;
    c.request_join().map_err(|e| e.to_string())?;
    let mut log = BotLog::default();
    loop {
        match c.recv().map_err(|e| e.to_string())? {
            Some(Message::JoinAck { player }) => log.player = Some(player),
            Some(Message::Frame { tick, .. }) => {
                log.frame_ticks.push(tick);
                if (log.frame_ticks.len() as u64) <= inputs {
                    c.send_input("move", &tick.to_be_bytes()).map_err(|e| e.to_string())?;
                }
            }
            Some(Message::EngineDown { .. }) => log.engine_down += 1,
            Some(Message::Reject { .. }) => log.rejects += 1,
            Some(other) => return Err(format!("unexpected {other:?}")),
            None => return Ok(log),
        }
    }
}

/// `n` bots each send inputs for their first `frames` frames; every input
/// must arrive and every bot must see consecutive frames and one ENGINE_DOWN.
pub fn check_bot_load(n: usize, frames: u64) -> Result<(), String> {
    use std::time::Duration;
    let mut gw = gateway(lobby());
    let addr = gw.local_addr();
    let bots: Vec<_> = (0..n).map(|_| std::thread::spawn(move || bot(addr, frames))).collect();
    let want = n as u64 * frames;
    if !tick_until(&mut gw, Duration::from_secs(50), |g| g.stats().inputs_accepted >= want) {
        return Err(format!("only {} of {want} inputs arrived", gw.stats().inputs_accepted));
    }
    let stats = gw.stats();
    let down = gw.terminate("load test over");
    if stats.joins != n as u64 || down != n || stats.inputs_accepted != want {
        return Err(format!(
            "joins {}, ENGINE_DOWN {down}, inputs {}",
            stats.joins, stats.inputs_accepted
        ));
    }
    let mut sent = 0;
    for b in bots {
        let log = b.join().map_err(|_| "bot panicked".to_string())??;
        let ticks = &log.frame_ticks;
        if (ticks.len() as u64) < frames || ticks.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(format!("player {:?}: frames missing or out of order", log.player));
        }
        if log.engine_down != 1 || log.rejects != 0 {
            return Err(format!("player {:?}: {log:?}", log.player));
        }
        sent += ticks.len() as u64;
    }
    if sent != stats.frames_sent {
        return Err(format!("server sent {} frames, bots read {sent}", stats.frames_sent));
    }
    Ok(())
}

/// `n` joined bots; terminating the engine sends exactly `n` ENGINE_DOWN and
/// leaves no active session.
pub fn check_fate_sharing(n: usize) -> Result<(), String> {
    use std::time::Duration;
    let mut gw = gateway(lobby());
    let addr = gw.local_addr();
    let bots: Vec<_> = (0..n).map(|_| std::thread::spawn(move || bot(addr, 0))).collect();
    if !tick_until(&mut gw, Duration::from_secs(10), |g| g.engine().active_count() == n) {
        return Err(format!("only {} of {n} bots joined", gw.engine().active_count()));
    }
    let down = gw.terminate("host lost");
    let active = gw.engine().active_count();
    let still_active = gw.engine().sessions().filter(|s| s.is_active()).count();
    let mut received = 0;
    for b in bots {
        received += b.join().map_err(|_| "bot panicked".to_string())??.engine_down;
    }
    if down != n || received as usize != n || active != 0 || still_active != 0 {
        return Err(format!(
            "{down} ENGINE_DOWN sent, {received} received, {active} active players, {still_active} active sessions"
        ));
    }
    Ok(())
}
