//! Scaling experiments: capsule vs process-per-player baseline.
//!
//! Both modes are driven through [`Host`], which joins players by ordinal
//! (the n-th join attempt gets the n-th player profile of the scenario) and
//! advances one tick at a time. Runs are sequential and fully deterministic.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use thiserror::Error;

use crate::cost::{CostModel, ResourceSample, Usage};
use crate::ecs::InputBatches;
use crate::error::EngineError;
use crate::scenario::{Scenario, ScenarioError, ScheduleAction};
use crate::session::Engine;
use crate::storage::PlayerId;

/// Join attempts after which capacity search gives up.
pub const MAX_PROBE_PLAYERS: u64 = 4096;

pub const RESULTS_HEADER: [&str; 10] = [
    "tick",
    "mode",
    "players",
    "cpu_work",
    "cpu_util",
    "ram_bytes",
    "gpu_work",
    "gpu_util",
    "vram_bytes",
    "tick_model_ms",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    InvalidScenario(#[from] ScenarioError),
    #[error("both runs use {0} mode but differ; compare needs one run per mode")]
    ModeMismatch(Mode),
    #[error("malformed results csv: {0}")]
    BadCsv(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Capsule,
    Baseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Capsule => "capsule",
            Mode::Baseline => "baseline",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "capsule" => Ok(Mode::Capsule),
            "baseline" => Ok(Mode::Baseline),
            other => Err(format!("unknown mode {other:?} (expected capsule or baseline)")),
        }
    }
}

/// Outcome of one tick across the whole machine.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub sample: ResourceSample,
    /// (join ordinal, frame digest) for every active player.
    pub digests: Vec<(u64, u64)>,
}

/// A machine hosting players in one of the two modes.
pub trait Host {
    fn mode(&self) -> Mode;
    fn scenario(&self) -> &Scenario;
    /// Admits the player with this join ordinal.
    fn join(&mut self, ordinal: u64) -> Result<(), EngineError>;
    fn leave(&mut self, ordinal: u64) -> Result<(), EngineError>;
    fn active(&self) -> u64;
    /// Runs one tick: fires the scenario's global events, sends each active
    /// player's inputs, and samples the machine.
    fn step(&mut self) -> Step;
}

pub fn new_host(scenario: &Scenario, mode: Mode) -> Box<dyn Host> {
    match mode {
        Mode::Capsule => Box::new(CapsuleHost::new(scenario.clone())),
        Mode::Baseline => Box::new(BaselineFleet::new(scenario.clone())),
    }
}

fn drive(engine: &mut Engine, scenario: &Scenario, players: &BTreeMap<u64, PlayerId>) -> crate::ecs::TickReport {
    let tick = engine.world().tick_count();
    for (name, payload) in scenario.global_events_at(tick) {
        engine.emit_global(name, payload).expect("engine is up");
    }
    let batches: InputBatches = players
        .iter()
        .map(|(&ordinal, &p)| (p, scenario.inputs_for(ordinal, tick)))
        .collect();
    engine.tick(&batches)
}

/// All players in one engine.
#[derive(Debug)]
pub struct CapsuleHost {
    scenario: Scenario,
    engine: Engine,
    players: BTreeMap<u64, PlayerId>,
}

impl CapsuleHost {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            engine: scenario.build_engine(),
            scenario,
            players: BTreeMap::new(),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn player(&self, ordinal: u64) -> Option<PlayerId> {
        self.players.get(&ordinal).copied()
    }
}

impl Host for CapsuleHost {
    fn mode(&self) -> Mode {
        Mode::Capsule
    }

    fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn join(&mut self, ordinal: u64) -> Result<(), EngineError> {
        let session = self.engine.join(&self.scenario.player_profile(ordinal))?;
        self.players.insert(ordinal, session.player);
        Ok(())
    }

    fn leave(&mut self, ordinal: u64) -> Result<(), EngineError> {
        let p = self
            .players
            .get(&ordinal)
            .copied()
            .ok_or(EngineError::UnknownPlayer(PlayerId(ordinal)))?;
        self.engine.leave(p)?;
        self.players.remove(&ordinal);
        Ok(())
    }

    fn active(&self) -> u64 {
        self.players.len() as u64
    }

    fn step(&mut self) -> Step {
        let report = drive(&mut self.engine, &self.scenario, &self.players);
        let digests = self
            .players
            .iter()
            .map(|(&o, &p)| (o, report.digest_for(p).expect("active player rendered")))
            .collect();
        Step {
            sample: report.sample,
            digests,
        }
    }
}

#[derive(Debug)]
struct Instance {
    engine: Engine,
    player: PlayerId,
}

/// One engine per player on a shared machine.
///
/// Each instance runs its own main thread; instances beyond the core count
/// time-slice. GPU and VRAM are shared by all instances.
#[derive(Debug)]
pub struct BaselineFleet {
    scenario: Scenario,
    cost: CostModel,
    budget_ms: f64,
    clock: u64,
    instances: BTreeMap<u64, Instance>,
}

impl BaselineFleet {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            cost: scenario.cost_model(),
            budget_ms: scenario.budget_ms(),
            scenario,
            clock: 0,
            instances: BTreeMap::new(),
        }
    }

    /// Frame time of the slowest instance given each instance's usage.
    pub fn machine_ms(cost: &CostModel, budget_ms: f64, usages: &[Usage]) -> f64 {
        let gpu: u64 = usages.iter().map(|u| u.gpu_work).sum();
        let vram: u64 = usages.iter().map(|u| u.vram_bytes).sum();
        let slicing = (usages.len() as f64 / cost.cpu_cores as f64).max(1.0);
        usages
            .iter()
            .map(|u| {
                let ms = cost.frame_ms(u.cpu_work, gpu, vram, budget_ms);
                ms.max(cost.cpu_ms(u.cpu_work, budget_ms) * slicing)
            })
            .fold(0.0, f64::max)
    }

    fn usages(&self) -> Vec<Usage> {
        self.instances.values().map(|i| i.engine.world().usage()).collect()
    }
}

impl Host for BaselineFleet {
    fn mode(&self) -> Mode {
        Mode::Baseline
    }

    fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn join(&mut self, ordinal: u64) -> Result<(), EngineError> {
        let mut engine = self.scenario.build_engine();
        engine.world_mut().set_start_tick(self.clock);
        // the instance's own admission first, then the machine's
        let session = engine.join(&self.scenario.player_profile(ordinal))?;
        let mut usages = self.usages();
        usages.push(engine.world().usage());
        let predicted_ms = Self::machine_ms(&self.cost, self.budget_ms, &usages);
        if predicted_ms > self.budget_ms {
            return Err(EngineError::CapacityExceeded {
                predicted_ms,
                budget_ms: self.budget_ms,
            });
        }
        self.instances.insert(
            ordinal,
            Instance {
                engine,
                player: session.player,
            },
        );
        Ok(())
    }

    fn leave(&mut self, ordinal: u64) -> Result<(), EngineError> {
        let mut inst = self
            .instances
            .remove(&ordinal)
            .ok_or(EngineError::UnknownPlayer(PlayerId(ordinal)))?;
        inst.engine.leave(inst.player)?;
        Ok(())
    }

    fn active(&self) -> u64 {
        self.instances.len() as u64
    }

    fn step(&mut self) -> Step {
        let mut usages = Vec::with_capacity(self.instances.len());
        let mut digests = Vec::with_capacity(self.instances.len());
        for (&ordinal, inst) in &mut self.instances {
            let players = BTreeMap::from([(ordinal, inst.player)]);
            let report = drive(&mut inst.engine, &self.scenario, &players);
            usages.push(report.sample.usage());
            digests.push((ordinal, report.digest_for(inst.player).expect("own player")));
        }
        let sample = ResourceSample::from_usage(
            self.clock,
            usages.len() as u64,
            usages.iter().copied().sum(),
            Self::machine_ms(&self.cost, self.budget_ms, &usages),
        );
        self.clock += 1;
        Step { sample, digests }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub tick: u64,
    pub ordinal: u64,
    pub error: EngineError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub mode: Mode,
    pub samples: Vec<ResourceSample>,
    pub max_players_admitted: u64,
    /// Join ordinal -> (tick, digest) for every tick the player was active.
    pub digests: BTreeMap<u64, Vec<(u64, u64)>>,
    pub rejections: Vec<Rejection>,
}

impl RunResult {
    /// A result known only by its samples, e.g. read back from CSV.
    pub fn from_samples(mode: Mode, samples: Vec<ResourceSample>) -> Self {
        Self {
            mode,
            max_players_admitted: samples.iter().map(|s| s.players).max().unwrap_or(0),
            samples,
            digests: BTreeMap::new(),
            rejections: Vec::new(),
        }
    }
}

/// Plays the scenario's join schedule for `duration_ticks` ticks.
pub fn run(scenario: &Scenario, mode: Mode) -> Result<RunResult, HarnessError> {
    scenario.validate()?;
    let mut host = new_host(scenario, mode);
    let mut schedule = scenario.join_schedule.iter().peekable();
    let mut next_ordinal = 0;
    let mut result = RunResult::from_samples(mode, Vec::new());
    for tick in 0..scenario.duration_ticks {
        while let Some(entry) = schedule.next_if(|e| e.tick == tick) {
            match entry.action {
                ScheduleAction::Join => {
                    let ordinal = next_ordinal;
                    next_ordinal += 1;
                    if let Err(error) = host.join(ordinal) {
                        log::info!("{mode}: join {ordinal} at tick {tick} rejected: {error}");
                        result.rejections.push(Rejection { tick, ordinal, error });
                    }
                }
                ScheduleAction::Leave => {
                    let ordinal = entry.player.expect("validated");
                    if let Err(e) = host.leave(ordinal) {
                        log::debug!("{mode}: leave {ordinal} ignored: {e}");
                    }
                }
            }
        }
        result.max_players_admitted = result.max_players_admitted.max(host.active());
        let step = host.step();
        for (ordinal, hash) in step.digests {
            result.digests.entry(ordinal).or_default().push((tick, hash));
        }
        result.samples.push(step.sample);
    }
    Ok(result)
}

pub fn run_capsule(scenario: &Scenario) -> Result<RunResult, HarnessError> {
    run(scenario, Mode::Capsule)
}

pub fn run_baseline(scenario: &Scenario) -> Result<RunResult, HarnessError> {
    run(scenario, Mode::Baseline)
}

/// Samples at 0, 1, 2, ... players, adding one player per tick until a join
/// is rejected, a tick overruns the budget, or `limit` players are in.
/// Entry `n` is the first tick with `n` players.
pub fn sweep(scenario: &Scenario, mode: Mode, limit: u64) -> Vec<ResourceSample> {
    let budget = scenario.budget_ms();
    let mut host = new_host(scenario, mode);
    let mut samples = vec![host.step().sample];
    for ordinal in 0..limit {
        if host.join(ordinal).is_err() {
            break;
        }
        let sample = host.step().sample;
        if sample.tick_model_ms > budget {
            break;
        }
        samples.push(sample);
    }
    samples
}

/// Largest player count that is admitted and ticks within budget.
pub fn capacity_search(scenario: &Scenario, mode: Mode) -> u64 {
    sweep(scenario, mode, MAX_PROBE_PLAYERS).len() as u64 - 1
}

/// Scaling curve: one row per player count from 1 to capacity.
pub fn bench(scenario: &Scenario, mode: Mode) -> Vec<ResourceSample> {
    let mut rows = sweep(scenario, mode, MAX_PROBE_PLAYERS);
    rows.remove(0);
    rows
}

pub fn write_samples_csv<W: io::Write>(
    out: W,
    mode: Mode,
    cost: &CostModel,
    samples: &[ResourceSample],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for s in samples {
        w.write_record([
            s.tick.to_string(),
            mode.to_string(),
            s.players.to_string(),
            s.cpu_work.to_string(),
            format!("{:.6}", cost.cpu_util(s.cpu_work)),
            s.ram_bytes.to_string(),
            s.gpu_work.to_string(),
            format!("{:.6}", cost.gpu_util(s.gpu_work)),
            s.vram_bytes.to_string(),
            format!("{:.6}", s.tick_model_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a results CSV back. All rows must share one mode.
pub fn read_samples_csv<R: io::Read>(input: R) -> Result<(Mode, Vec<ResourceSample>), HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(RESULTS_HEADER) {
        return Err(HarnessError::BadCsv(format!(
            "expected header {}",
            RESULTS_HEADER.join(",")
        )));
    }
    let mut mode = None;
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| HarnessError::BadCsv(format!("row {}: bad {what}", line + 1));
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(RESULTS_HEADER[i]));
        let row_mode: Mode = rec[1].parse().map_err(|_| bad("mode"))?;
        if *mode.get_or_insert(row_mode) != row_mode {
            return Err(bad("mode (mixed modes)"));
        }
        samples.push(ResourceSample {
            tick: int(0)?,
            players: int(2)?,
            cpu_work: int(3)?,
            ram_bytes: int(5)?,
            gpu_work: int(6)?,
            vram_bytes: int(8)?,
            tick_model_ms: rec[9].parse().map_err(|_| bad("tick_model_ms"))?,
        });
    }
    let mode = mode.ok_or_else(|| HarnessError::BadCsv("no rows".into()))?;
    Ok((mode, samples))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub cpu: f64,
    pub ram: f64,
    pub gpu: f64,
    pub vram: f64,
}

impl Ratios {
    /// How many times more `b` uses than `a`, per resource.
    pub fn between(a: &Usage, b: &Usage) -> Self {
        let r = |x: u64, y: u64| match (x, y) {
            (0, 0) => 1.0,
            (0, _) => f64::INFINITY,
            _ => y as f64 / x as f64,
        };
        Self {
            cpu: r(a.cpu_work, b.cpu_work),
            ram: r(a.ram_bytes, b.ram_bytes),
            gpu: r(a.gpu_work, b.gpu_work),
            vram: r(a.vram_bytes, b.vram_bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub players: u64,
    pub a: Usage,
    pub b: Usage,
    pub ratios: Ratios,
}

/// Cost of the n-th player: usage(n) - usage(n - 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarginalRow {
    pub players: u64,
    pub cpu_work: i128,
    pub ram_bytes: i128,
    pub gpu_work: i128,
    pub vram_bytes: i128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub a_mode: Mode,
    pub b_mode: Mode,
    pub rows: Vec<ComparisonRow>,
    pub marginal_a: Vec<MarginalRow>,
    pub marginal_b: Vec<MarginalRow>,
}

impl ComparisonReport {
    pub fn at(&self, players: u64) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.players == players)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["players", "cpu_ratio", "ram_ratio", "gpu_ratio", "vram_ratio"])?;
        for r in &self.rows {
            w.write_record([
                r.players.to_string(),
                format!("{:.6}", r.ratios.cpu),
                format!("{:.6}", r.ratios.ram),
                format!("{:.6}", r.ratios.gpu),
                format!("{:.6}", r.ratios.vram),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_marginal_csv<W: io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mode", "players", "cpu_work", "ram_bytes", "gpu_work", "vram_bytes"])?;
        for (mode, rows) in [(self.a_mode, &self.marginal_a), (self.b_mode, &self.marginal_b)] {
            for m in rows {
                w.write_record([
                    mode.to_string(),
                    m.players.to_string(),
                    m.cpu_work.to_string(),
                    m.ram_bytes.to_string(),
                    m.gpu_work.to_string(),
                    m.vram_bytes.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} / {} usage ratio", self.b_mode, self.a_mode)?;
        writeln!(
            f,
            "{:>7} {:>9} {:>9} {:>9} {:>9}",
            "players", "cpu", "ram", "gpu", "vram"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>7} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                r.players, r.ratios.cpu, r.ratios.ram, r.ratios.gpu, r.ratios.vram
            )?;
        }
        for (mode, rows) in [(self.a_mode, &self.marginal_a), (self.b_mode, &self.marginal_b)] {
            writeln!(f, "\nmarginal cost per added player ({mode})")?;
            writeln!(
                f,
                "{:>7} {:>12} {:>14} {:>10} {:>14}",
                "players", "cpu", "ram", "gpu", "vram"
            )?;
            for m in rows {
                writeln!(
                    f,
                    "{:>7} {:>12} {:>14} {:>10} {:>14}",
                    m.players, m.cpu_work, m.ram_bytes, m.gpu_work, m.vram_bytes
                )?;
            }
        }
        Ok(())
    }
}

/// Steady-state usage per player count: the last sample seen with that count.
fn by_players(samples: &[ResourceSample]) -> BTreeMap<u64, Usage> {
    samples.iter().map(|s| (s.players, s.usage())).collect()
}

fn marginal(levels: &BTreeMap<u64, Usage>) -> Vec<MarginalRow> {
    levels
        .iter()
        .filter_map(|(&n, u)| {
            let prev = levels.get(&n.checked_sub(1)?)?;
            let d = |x: u64, y: u64| i128::from(x) - i128::from(y);
            Some(MarginalRow {
                players: n,
                cpu_work: d(u.cpu_work, prev.cpu_work),
                ram_bytes: d(u.ram_bytes, prev.ram_bytes),
                gpu_work: d(u.gpu_work, prev.gpu_work),
                vram_bytes: d(u.vram_bytes, prev.vram_bytes),
            })
        })
        .collect()
}

/// Per-resource `b / a` ratios at every player count both runs reached.
///
/// Comparing a run with an identical copy of itself is allowed (all ratios
/// are 1.0); two different runs of the same mode are a `ModeMismatch`.
pub fn compare_runs(a: &RunResult, b: &RunResult) -> Result<ComparisonReport, HarnessError> {
    if a.mode == b.mode && a.samples != b.samples {
        return Err(HarnessError::ModeMismatch(a.mode));
    }
    let (la, lb) = (by_players(&a.samples), by_players(&b.samples));
    let rows = la
        .iter()
        .filter(|(&n, _)| n > 0)
        .filter_map(|(&n, ua)| {
            let ub = lb.get(&n)?;
            Some(ComparisonRow {
                players: n,
                a: *ua,
                b: *ub,
                ratios: Ratios::between(ua, ub),
            })
        })
        .collect();
    Ok(ComparisonReport {
        a_mode: a.mode,
        b_mode: b.mode,
        rows,
        marginal_a: marginal(&la),
        marginal_b: marginal(&lb),
    })
}
