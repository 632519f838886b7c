mod common;

use proptest::prelude::*;

use capsule_core::calibrate::{capacity, CALIBRATED_GPU_CAPACITY};
use capsule_core::harness::{capacity_search, Mode};
use capsule_core::scenario::Scenario;
use common::*;

fn fail(r: Result<(), String>) -> Result<(), TestCaseError> {
    r.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn players_never_see_each_others_state(ops in trace()) {
        fail(check_isolation(ops))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn cache_vram_is_distinct_held_bytes(ops in cache_trace()) {
        fail(check_cache_dedup(ops))?;
    }

    #[test]
    fn world_vram_is_distinct_assets_plus_framebuffers(ops in world_asset_trace()) {
        fail(check_world_dedup(ops))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn shared_content_makes_growth_sublinear(s in shared_scenario()) {
        fail(check_sublinear(s))?;
    }
}

fn constrained(mut s: Scenario, cpu: u64, gpu: u64) -> Scenario {
    s.cost_model.cpu_capacity = cpu;
    s.cost_model.gpu_capacity = gpu;
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn more_capacity_never_admits_fewer(
        s in shared_scenario(),
        cpu in 2_000u64..200_000,
        gpu in 50u64..CALIBRATED_GPU_CAPACITY,
    ) {
        for mode in [Mode::Capsule, Mode::Baseline] {
            let base = constrained(s.clone(), cpu, gpu);
            let n = capacity(&base, &base.cost_model(), mode);
            for wider in [constrained(s.clone(), cpu * 2, gpu), constrained(s.clone(), cpu, gpu * 2)] {
                let m = capacity(&wider, &wider.cost_model(), mode);
                prop_assert!(m >= n, "{mode}: {n} players before, {m} after doubling");
            }
        }
    }

    #[test]
    fn closed_form_capacity_matches_search(
        s in shared_scenario(),
        cpu in 2_000u64..50_000,
        gpu in 50u64..CALIBRATED_GPU_CAPACITY,
    ) {
        let s = constrained(s, cpu, gpu);
        for mode in [Mode::Capsule, Mode::Baseline] {
            prop_assert_eq!(capacity(&s, &s.cost_model(), mode), capacity_search(&s, mode));
        }
    }
}

#[test]
fn co_residents_do_not_change_frames() {
    let s = Scenario::from_toml_str(include_str!("../../../scenarios/exhibition.scn")).unwrap();
    for n in [2, 4, 8] {
        check_transparency(&s, n, 40).unwrap();
    }
}

#[test]
fn generated_transparency() {
    run_fixed(24, shared_scenario(), |s| check_transparency(&s, 4, 16)).unwrap();
}
