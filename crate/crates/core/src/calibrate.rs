//! Closed-form resource curves and the cost-model calibration built on them.
//!
//! Every usage figure the engine samples for a scenario without user systems
//! has a closed form in the player count. Calibration inverts those forms:
//! given target capacities and capsule/baseline ratios it solves for the
//! engine-fixed and shared constants, grid-searches the GPU split, and then
//! confirms the result by simulation.

use std::fmt;

use thiserror::Error;

use crate::cost::{CostModel, Usage};
use crate::harness::{capacity_search, sweep, BaselineFleet, Mode, Ratios, MAX_PROBE_PLAYERS};
use crate::scenario::Scenario;

/// GPU capacity every calibrated model uses; the GPU split is expressed
/// against it.
pub const CALIBRATED_GPU_CAPACITY: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bottleneck {
    MainThread,
    Gpu,
    Vram,
}

impl fmt::Display for Bottleneck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bottleneck::MainThread => "main-thread",
            Bottleneck::Gpu => "gpu",
            Bottleneck::Vram => "vram",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTargets {
    pub capsule_capacity: u64,
    pub baseline_capacity: u64,
    /// Baseline / capsule usage at `baseline_capacity` players.
    pub ratios: Ratios,
    /// Allowed relative error on each ratio.
    pub tolerance: f64,
    /// The resource that turns away the capsule's next player.
    pub bottleneck: Bottleneck,
}

impl CalibrationTargets {
    /// Low-graphics tier: lots of shared content, GPU-bound at 9 players,
    /// baseline VRAM-bound after 4.
    pub fn low_tier() -> Self {
        Self {
            capsule_capacity: 9,
            baseline_capacity: 4,
            ratios: Ratios {
                cpu: 3.70,
                ram: 3.87,
                gpu: 1.43,
                vram: 3.11,
            },
            tolerance: 0.02,
            bottleneck: Bottleneck::Gpu,
        }
    }

    pub fn medium_tier() -> Self {
        Self {
            capsule_capacity: 5,
            baseline_capacity: 3,
            ratios: Ratios {
                cpu: 2.6,
                ram: 2.8,
                gpu: 1.2,
                vram: 2.2,
            },
            tolerance: 0.02,
            bottleneck: Bottleneck::MainThread,
        }
    }

    /// High-graphics tier: heavy per-view work, the main thread saturates on
    /// the third player.
    pub fn high_tier() -> Self {
        Self {
            capsule_capacity: 2,
            baseline_capacity: 2,
            ratios: Ratios {
                cpu: 1.8,
                ram: 1.9,
                gpu: 1.09,
                vram: 1.6,
            },
            tolerance: 0.02,
            bottleneck: Bottleneck::MainThread,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("no cost model meets the targets: {0}")]
    Unsatisfiable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub cost: CostModel,
    pub capsule_capacity: u64,
    pub baseline_capacity: u64,
    pub ratios: Ratios,
    pub bottleneck: Option<Bottleneck>,
}

/// Capsule usage with `n` players resident.
pub fn capsule_usage(s: &Scenario, cost: &CostModel, n: u64) -> Usage {
    if n == 0 {
        return Usage {
            cpu_work: cost.engine_fixed_cpu,
            ram_bytes: cost.engine_fixed_ram,
            gpu_work: 0,
            vram_bytes: 0,
        };
    }
    let f = s.footprint();
    Usage {
        cpu_work: cost.engine_fixed_cpu
            + cost.entity_cpu * (f.global_entities + n * f.local_entities)
            + cost.per_player_cpu * n * (f.global_entities + f.local_entities),
        ram_bytes: cost.engine_fixed_ram + f.global_bytes + n * f.local_bytes,
        gpu_work: cost.shared_gpu + cost.per_view_gpu * n,
        vram_bytes: f.shared_asset_bytes + n * (f.private_asset_bytes + cost.framebuffer),
    }
}

/// Baseline usage: `n` copies of a one-player engine.
pub fn baseline_usage(s: &Scenario, cost: &CostModel, n: u64) -> Usage {
    capsule_usage(s, cost, 1.min(n)) * n
}

pub fn tick_ms(s: &Scenario, cost: &CostModel, mode: Mode, n: u64) -> f64 {
    let budget = s.budget_ms();
    match mode {
        Mode::Capsule => cost.tick_ms(&capsule_usage(s, cost, n), budget),
        Mode::Baseline => {
            let one = capsule_usage(s, cost, 1);
            BaselineFleet::machine_ms(cost, budget, &vec![one; n as usize])
        }
    }
}

pub fn capacity(s: &Scenario, cost: &CostModel, mode: Mode) -> u64 {
    let budget = s.budget_ms();
    (1..=MAX_PROBE_PLAYERS)
        .find(|&n| tick_ms(s, cost, mode, n) > budget)
        .map_or(MAX_PROBE_PLAYERS, |n| n - 1)
}

/// Which resource puts the capsule over budget with `n` players, checked in
/// order GPU, main thread, VRAM.
pub fn capsule_bottleneck(s: &Scenario, cost: &CostModel, n: u64) -> Option<Bottleneck> {
    let budget = s.budget_ms();
    let u = capsule_usage(s, cost, n);
    if cost.gpu_ms(u.gpu_work, budget) > budget {
        Some(Bottleneck::Gpu)
    } else if cost.cpu_ms(u.cpu_work, budget) > budget {
        Some(Bottleneck::MainThread)
    } else if u.vram_bytes > cost.vram_capacity {
        Some(Bottleneck::Vram)
    } else {
        None
    }
}

pub fn closed_form_ratios(s: &Scenario, cost: &CostModel, n: u64) -> Ratios {
    Ratios::between(&capsule_usage(s, cost, n), &baseline_usage(s, cost, n))
}

/// With usage `shared + n * per` in the capsule and `n * (shared + per)` in
/// the baseline, the ratio at `n` is `r` exactly when
/// `shared = n * per * (r - 1) / (n - r)`.
fn shared_for_ratio(n: u64, r: f64, per: f64) -> Option<f64> {
    let n = n as f64;
    (r >= 1.0 && r < n).then(|| n * per * (r - 1.0) / (n - r))
}

fn within(actual: f64, target: f64, tol: f64) -> bool {
    (actual - target).abs() <= tol * target
}

fn ratios_within(a: &Ratios, t: &Ratios, tol: f64) -> bool {
    within(a.cpu, t.cpu, tol) && within(a.ram, t.ram, tol) && within(a.gpu, t.gpu, tol) && within(a.vram, t.vram, tol)
}

fn unsat(msg: impl Into<String>) -> CalibrationError {
    CalibrationError::Unsatisfiable(msg.into())
}

fn nonneg(v: f64, what: &str) -> Result<u64, CalibrationError> {
    if v.is_finite() && v >= -0.5 {
        Ok(v.round().max(0.0) as u64)
    } else {
        Err(unsat(format!("{what} would have to be negative")))
    }
}

/// Solves for engine-fixed CPU and RAM, the GPU split, framebuffer size and
/// CPU/VRAM capacities; workload shape, entity costs and core count come from
/// `base`.
pub fn calibrate(base: &Scenario, t: &CalibrationTargets) -> Result<Calibration, CalibrationError> {
    let n = t.baseline_capacity;
    let nc = t.capsule_capacity;
    if n == 0 || nc == 0 {
        return Err(unsat("capacities must be at least 1"));
    }
    let f = base.footprint();
    let mut cost = base.cost_model();
    cost.gpu_capacity = CALIBRATED_GPU_CAPACITY;
    let ratio = |r: f64, per: f64, what: &str| {
        if n == 1 {
            return if r == 1.0 {
                Ok(None)
            } else {
                Err(unsat(format!("{what} ratio at one player is always 1")))
            };
        }
        shared_for_ratio(n, r, per)
            .map(Some)
            .ok_or_else(|| unsat(format!("{what} ratio {r} is not reachable with {n} players")))
    };

    // main thread: shared = fixed + scene simulation
    let per_cpu = cost.entity_cpu * f.local_entities + cost.per_player_cpu * (f.global_entities + f.local_entities);
    if let Some(shared) = ratio(t.ratios.cpu, per_cpu as f64, "cpu")? {
        cost.engine_fixed_cpu = nonneg(
            shared - (cost.entity_cpu * f.global_entities) as f64,
            "engine_fixed_cpu",
        )?;
    }

    // ram: shared = fixed + scene bytes
    if let Some(shared) = ratio(t.ratios.ram, f.local_bytes as f64, "ram")? {
        cost.engine_fixed_ram = nonneg(shared - f.global_bytes as f64, "engine_fixed_ram")?;
    }

    // vram: shared assets are fixed by the workload, solve for the framebuffer
    if n > 1 {
        if t.ratios.vram <= 1.0 || t.ratios.vram >= n as f64 {
            return Err(unsat(format!("vram ratio {} is not reachable", t.ratios.vram)));
        }
        let nf = n as f64;
        let per = f.shared_asset_bytes as f64 * (nf - t.ratios.vram) / (nf * (t.ratios.vram - 1.0));
        cost.framebuffer = nonneg(per - f.private_asset_bytes as f64, "framebuffer")?;
    }

    // gpu: grid over per-view work, shared work follows from the ratio
    let cap = cost.gpu_capacity;
    let mut best: Option<(f64, u64, u64)> = None;
    for v in 1..=cap {
        let s = match ratio(t.ratios.gpu, v as f64, "gpu")? {
            Some(x) => x.round() as u64,
            None => 0,
        };
        let g = |k: u64| s + v * k;
        let fits = match t.bottleneck {
            Bottleneck::Gpu => g(nc) <= cap && g(nc + 1) > cap,
            _ => g(nc + 1) <= cap,
        } && n * g(1) <= cap;
        if !fits {
            continue;
        }
        let r = if n == 1 { 1.0 } else { (n * g(1)) as f64 / g(n) as f64 };
        let err = (r - t.ratios.gpu).abs();
        if best.is_none_or(|(e, _, _)| err <= e) {
            best = Some((err, s, v));
        }
    }
    let (_, shared_gpu, per_view_gpu) = best.ok_or_else(|| unsat("no GPU split gives the capsule capacity"))?;
    cost.shared_gpu = shared_gpu;
    cost.per_view_gpu = per_view_gpu;

    let mut probe = base.clone();
    probe.set_cost_model(&cost);
    let cpu = |k: u64| capsule_usage(&probe, &cost, k).cpu_work;
    cost.cpu_capacity = match t.bottleneck {
        Bottleneck::MainThread => cpu(nc) + (cpu(nc + 1) - cpu(nc)) / 2,
        _ => (cpu(nc + 1) * 5).div_ceil(4),
    };
    let vc = |k: u64| capsule_usage(&probe, &cost, k).vram_bytes;
    let one = baseline_usage(&probe, &cost, 1).vram_bytes;
    cost.vram_capacity = match t.bottleneck {
        Bottleneck::Vram => vc(nc),
        _ => (one * (2 * n + 1)) / 2,
    };
    if cost.vram_capacity == 0 {
        return Err(unsat("scenario has no VRAM footprint"));
    }
    probe.set_cost_model(&cost);

    let result = Calibration {
        capsule_capacity: capacity(&probe, &cost, Mode::Capsule),
        baseline_capacity: capacity(&probe, &cost, Mode::Baseline),
        ratios: closed_form_ratios(&probe, &cost, n),
        bottleneck: capsule_bottleneck(&probe, &cost, nc + 1),
        cost,
    };
    if result.capsule_capacity != nc || result.baseline_capacity != n {
        return Err(unsat(format!(
            "closest model hosts {} capsule / {} baseline players, wanted {nc} / {n}",
            result.capsule_capacity, result.baseline_capacity
        )));
    }
    if result.bottleneck != Some(t.bottleneck) {
        return Err(unsat(format!(
            "capsule is limited by {:?}, wanted {}",
            result.bottleneck, t.bottleneck
        )));
    }
    if !ratios_within(&result.ratios, &t.ratios, t.tolerance) {
        return Err(unsat(format!("closest ratios {:?} miss the targets", result.ratios)));
    }
    verify(&probe, &result)?;
    Ok(result)
}

/// Re-derives the calibrated figures by running the engine.
fn verify(s: &Scenario, c: &Calibration) -> Result<(), CalibrationError> {
    let (cap_c, cap_b) = (capacity_search(s, Mode::Capsule), capacity_search(s, Mode::Baseline));
    if (cap_c, cap_b) != (c.capsule_capacity, c.baseline_capacity) {
        return Err(unsat(format!(
            "simulation hosts {cap_c} / {cap_b} players, closed form {} / {}",
            c.capsule_capacity, c.baseline_capacity
        )));
    }
    let n = c.baseline_capacity;
    let (sc, sb) = (sweep(s, Mode::Capsule, n), sweep(s, Mode::Baseline, n));
    let measured = Ratios::between(&sc[n as usize].usage(), &sb[n as usize].usage());
    if measured != c.ratios {
        return Err(unsat(format!(
            "simulated ratios {measured:?} differ from closed form {:?}",
            c.ratios
        )));
    }
    Ok(())
}
