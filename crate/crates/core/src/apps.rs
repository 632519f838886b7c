//! Built-in application profiles and the single/multi-player compatibility
//! check.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::calibrate::CalibrationTargets;
use crate::harness::{run, HarnessError, Mode};
use crate::scenario::{Scenario, ScenarioError, ScheduleAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GraphicsTier {
    High,
    Medium,
    Low,
}

impl GraphicsTier {
    pub fn targets(self) -> CalibrationTargets {
        match self {
            GraphicsTier::High => CalibrationTargets::high_tier(),
            GraphicsTier::Medium => CalibrationTargets::medium_tier(),
            GraphicsTier::Low => CalibrationTargets::low_tier(),
        }
    }
}

impl fmt::Display for GraphicsTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphicsTier::High => "high",
            GraphicsTier::Medium => "medium",
            GraphicsTier::Low => "low",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppProfile {
    pub name: String,
    pub scenario: Scenario,
    pub tier: GraphicsTier,
    /// The scenario document as shipped.
    pub document: String,
}

const BUILTINS: [(&str, GraphicsTier, &str); 3] = [
    (
        "cathedral",
        GraphicsTier::High,
        include_str!("../../../scenarios/cathedral.scn"),
    ),
    (
        "arena",
        GraphicsTier::Medium,
        include_str!("../../../scenarios/arena.scn"),
    ),
    (
        "exhibition",
        GraphicsTier::Low,
        include_str!("../../../scenarios/exhibition.scn"),
    ),
];

pub fn builtin_profiles() -> Vec<AppProfile> {
    BUILTINS
        .iter()
        .map(|&(name, tier, document)| AppProfile {
            name: name.to_string(),
            scenario: Scenario::from_toml_str(document).expect("shipped scenario is valid"),
            tier,
            document: document.to_string(),
        })
        .collect()
}

/// Tier of the built-in profile with this scenario name.
pub fn builtin_tier(name: &str) -> Option<GraphicsTier> {
    BUILTINS.iter().find(|b| b.0 == name).map(|b| b.1)
}

/// Keys that would let a scenario behave differently per execution mode.
pub const MODE_SPECIFIC_KEYS: [&str; 6] = [
    "mode",
    "capsule",
    "baseline",
    "isolation",
    "process_per_player",
    "players_per_engine",
];

#[derive(Debug, Error)]
pub enum CompatibilityError {
    #[error("incompatible scenario: {0}")]
    IncompatibleScenario(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatibilityReport {
    pub name: String,
    /// Dotted paths of any mode-specific keys found in the document.
    pub mode_specific_fields: Vec<String>,
    /// First player alone: capsule and baseline digests agree.
    pub solo_digests_equal: bool,
    /// Every player's digests in the multi-player capsule run equal the
    /// baseline's for the ticks both hosted them.
    pub multi_digests_equal: bool,
    pub players_compared: u64,
}

impl CompatibilityReport {
    pub fn passed(&self) -> bool {
        self.mode_specific_fields.is_empty() && self.solo_digests_equal && self.multi_digests_equal
    }
}

fn find_mode_keys(value: &toml::Value, path: &str, out: &mut Vec<String>) {
    let children: Vec<(String, &toml::Value)> = match value {
        toml::Value::Table(t) => t.iter().map(|(k, v)| (k.clone(), v)).collect(),
        toml::Value::Array(a) => a.iter().enumerate().map(|(i, v)| (i.to_string(), v)).collect(),
        _ => return,
    };
    for (key, child) in children {
        let here = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        if MODE_SPECIFIC_KEYS.contains(&key.to_ascii_lowercase().as_str()) {
            out.push(here.clone());
        }
        find_mode_keys(child, &here, out);
    }
}

/// Lists mode-specific keys anywhere in a scenario document.
pub fn mode_specific_fields(document: &str) -> Result<Vec<String>, CompatibilityError> {
    let value: toml::Value = toml::from_str(document).map_err(ScenarioError::from)?;
    let mut out = Vec::new();
    find_mode_keys(&value, "", &mut out);
    Ok(out)
}

/// Runs the one scenario document single-player in the capsule, multi-player
/// in the capsule, and in the baseline, and compares what players observed.
pub fn compatibility_check(profile: &AppProfile) -> Result<CompatibilityReport, CompatibilityError> {
    let mode_specific_fields = mode_specific_fields(&profile.document)?;
    if !mode_specific_fields.is_empty() {
        return Err(CompatibilityError::IncompatibleScenario(format!(
            "mode-specific fields: {}",
            mode_specific_fields.join(", ")
        )));
    }
    let s = Scenario::from_toml_str(&profile.document)?;
    let joins = s
        .join_schedule
        .iter()
        .filter(|e| e.action == ScheduleAction::Join)
        .count();
    if joins == 0 && !s.player_inputs.is_empty() {
        return Err(CompatibilityError::IncompatibleScenario(
            "per-player inputs but no player ever joins".into(),
        ));
    }

    let mut solo = s.clone();
    solo.join_schedule.retain(|e| e.action == ScheduleAction::Join);
    solo.join_schedule.truncate(1);
    let solo_digests_equal = run(&solo, Mode::Capsule)?.digests == run(&solo, Mode::Baseline)?.digests;

    let (multi, base) = (run(&s, Mode::Capsule)?, run(&s, Mode::Baseline)?);
    let mut multi_digests_equal = true;
    let mut compared = BTreeSet::new();
    for (ordinal, stream) in &multi.digests {
        let Some(other) = base.digests.get(ordinal) else {
            continue;
        };
        compared.insert(*ordinal);
        let theirs: std::collections::BTreeMap<u64, u64> = other.iter().copied().collect();
        for (tick, hash) in stream {
            if theirs.get(tick).is_some_and(|h| h != hash) {
                multi_digests_equal = false;
            }
        }
    }

    Ok(CompatibilityReport {
        name: profile.name.clone(),
        mode_specific_fields,
        solo_digests_equal,
        multi_digests_equal,
        players_compared: compared.len() as u64,
    })
}
