//! Abstract per-tick resource accounting.
//!
//! CPU and GPU are measured in work units against a per-tick capacity; RAM and
//! VRAM in bytes. Tick time is derived from the model, never from the wall
//! clock, so every figure is reproducible on any machine.

use std::iter::Sum;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::render::{frame_work, FrameWork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Main-loop work paid every tick regardless of content.
    pub engine_fixed_cpu: u64,
    /// Simulation work per live entity (each entity simulated once per tick).
    pub entity_cpu: u64,
    /// Per-player work per entity in that player's visible set.
    pub per_player_cpu: u64,
    /// Work units one core completes within one tick budget.
    pub cpu_capacity: u64,
    pub cpu_cores: u64,
    pub engine_fixed_ram: u64,
    pub shared_gpu: u64,
    pub per_view_gpu: u64,
    /// GPU work units that fit in one tick budget.
    pub gpu_capacity: u64,
    /// Per-view output buffer in VRAM.
    pub framebuffer: u64,
    pub vram_capacity: u64,
    /// Frame-time floor, in multiples of the budget, once VRAM is overcommitted.
    pub vram_overcommit_penalty: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            engine_fixed_cpu: 1_000,
            entity_cpu: 1,
            per_player_cpu: 1,
            cpu_capacity: 100_000,
            cpu_cores: 8,
            engine_fixed_ram: 1 << 20,
            shared_gpu: 10,
            per_view_gpu: 4,
            gpu_capacity: 1_000,
            framebuffer: 32 << 20,
            vram_capacity: 24 << 30,
            vram_overcommit_penalty: 4.0,
        }
    }
}

/// Counts read off engine state that drive the cost model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Census {
    pub players: u64,
    pub global_entities: u64,
    pub local_entities: u64,
    /// Sum over players of visible-set size.
    pub visible_entities: u64,
    pub system_units: u64,
    pub storage_bytes: u64,
    pub vram_bytes: u64,
}

/// Resources consumed in one tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Usage {
    pub cpu_work: u64,
    pub ram_bytes: u64,
    pub gpu_work: u64,
    pub vram_bytes: u64,
}

impl Add for Usage {
    type Output = Usage;
    fn add(self, o: Usage) -> Usage {
        Usage {
            cpu_work: self.cpu_work + o.cpu_work,
            ram_bytes: self.ram_bytes + o.ram_bytes,
            gpu_work: self.gpu_work + o.gpu_work,
            vram_bytes: self.vram_bytes + o.vram_bytes,
        }
    }
}

impl Mul<u64> for Usage {
    type Output = Usage;
    fn mul(self, n: u64) -> Usage {
        Usage {
            cpu_work: self.cpu_work * n,
            ram_bytes: self.ram_bytes * n,
            gpu_work: self.gpu_work * n,
            vram_bytes: self.vram_bytes * n,
        }
    }
}

impl Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), Add::add)
    }
}

/// One row of the resource time series.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ResourceSample {
    pub tick: u64,
    pub players: u64,
    pub cpu_work: u64,
    pub ram_bytes: u64,
    pub gpu_work: u64,
    pub vram_bytes: u64,
    pub tick_model_ms: f64,
}

impl ResourceSample {
    pub fn from_usage(tick: u64, players: u64, usage: Usage, tick_model_ms: f64) -> Self {
        Self {
            tick,
            players,
            cpu_work: usage.cpu_work,
            ram_bytes: usage.ram_bytes,
            gpu_work: usage.gpu_work,
            vram_bytes: usage.vram_bytes,
            tick_model_ms,
        }
    }

    pub fn usage(&self) -> Usage {
        Usage {
            cpu_work: self.cpu_work,
            ram_bytes: self.ram_bytes,
            gpu_work: self.gpu_work,
            vram_bytes: self.vram_bytes,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("cpu_capacity", self.cpu_capacity),
            ("cpu_cores", self.cpu_cores),
            ("gpu_capacity", self.gpu_capacity),
            ("vram_capacity", self.vram_capacity),
        ] {
            if v == 0 {
                return Err(format!("{name} must be > 0"));
            }
        }
        if !(self.vram_overcommit_penalty.is_finite() && self.vram_overcommit_penalty >= 1.0) {
            return Err("vram_overcommit_penalty must be finite and >= 1".into());
        }
        Ok(())
    }

    /// Serial main-thread work: fixed engine work plus a sum over every
    /// entity and every player's view.
    pub fn cpu_work(&self, c: &Census) -> u64 {
        self.engine_fixed_cpu
            + self.entity_cpu * (c.global_entities + c.local_entities)
            + self.per_player_cpu * c.visible_entities
            + c.system_units
    }

    pub fn frame_work(&self, views: u64) -> FrameWork {
        frame_work(self.shared_gpu, self.per_view_gpu, views)
    }

    pub fn usage(&self, c: &Census) -> Usage {
        Usage {
            cpu_work: self.cpu_work(c),
            ram_bytes: self.engine_fixed_ram + c.storage_bytes,
            gpu_work: self.frame_work(c.players).total(),
            vram_bytes: c.vram_bytes,
        }
    }

    pub fn cpu_ms(&self, cpu_work: u64, budget_ms: f64) -> f64 {
        cpu_work as f64 / self.cpu_capacity as f64 * budget_ms
    }

    pub fn gpu_ms(&self, gpu_work: u64, budget_ms: f64) -> f64 {
        gpu_work as f64 / self.gpu_capacity as f64 * budget_ms
    }

    /// Frame time given one main thread's CPU work and the GPU/VRAM load of
    /// the whole machine. CPU and GPU overlap, so the slower one sets the pace.
    pub fn frame_ms(&self, cpu_work: u64, machine_gpu: u64, machine_vram: u64, budget_ms: f64) -> f64 {
        let ms = self
            .cpu_ms(cpu_work, budget_ms)
            .max(self.gpu_ms(machine_gpu, budget_ms));
        if machine_vram > self.vram_capacity {
            ms.max(budget_ms * self.vram_overcommit_penalty)
        } else {
            ms
        }
    }

    /// Frame time of a single engine that owns the whole machine.
    pub fn tick_ms(&self, usage: &Usage, budget_ms: f64) -> f64 {
        self.frame_ms(usage.cpu_work, usage.gpu_work, usage.vram_bytes, budget_ms)
    }

    pub fn cpu_util(&self, cpu_work: u64) -> f64 {
        cpu_work as f64 / (self.cpu_capacity * self.cpu_cores) as f64
    }

    pub fn gpu_util(&self, gpu_work: u64) -> f64 {
        gpu_work as f64 / self.gpu_capacity as f64
    }
}

/// Per-tick budget in milliseconds for a target frame rate.
pub fn budget_ms_for_fps(fps: u32) -> f64 {
    1000.0 / f64::from(fps)
}
