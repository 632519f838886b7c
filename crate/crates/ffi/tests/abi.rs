use std::ffi::{c_char, CString};
use std::ptr;

use capsule_ffi::*;

const SCENARIO: &str = include_str!("../../../scenarios/cathedral.scn");

fn engine() -> *mut CapsuleEngine {
    let doc = CString::new(SCENARIO).unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(
        unsafe { capsule_engine_new_from_str(doc.as_ptr(), &mut e) },
        CapsuleStatus::Ok
    );
    assert!(!e.is_null());
    e
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { capsule_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n >= 1);
    unsafe { std::ffi::CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn join_tick_and_capacity() {
    let e = engine();
    let (mut p0, mut p1, mut p2) = (u64::MAX, u64::MAX, u64::MAX);
    unsafe {
        assert_eq!(capsule_engine_join(e, &mut p0), CapsuleStatus::Ok);
        assert_eq!(capsule_engine_join(e, &mut p1), CapsuleStatus::Ok);
        // the high-tier profile hosts two players
        assert_eq!(capsule_engine_join(e, &mut p2), CapsuleStatus::CapacityExceeded);
    }
    assert_eq!((p0, p1, p2), (0, 1, u64::MAX));
    assert!(last_error().contains("budget"));

    let name = CString::new("look").unwrap();
    let mut sample = CapsuleSample::default();
    unsafe {
        assert_eq!(
            capsule_engine_input(e, p0, name.as_ptr(), [1u8, 2].as_ptr(), 2),
            CapsuleStatus::Ok
        );
        assert_eq!(
            capsule_engine_input(e, 9, name.as_ptr(), ptr::null(), 0),
            CapsuleStatus::UnknownPlayer
        );
        assert_eq!(capsule_engine_tick(e, &mut sample), CapsuleStatus::Ok);
    }
    assert_eq!(sample.players, 2);
    assert!(sample.tick_model_ms <= 1000.0 / 30.0);

    let (mut d0, mut d1, mut active) = (0, 0, 0);
    unsafe {
        assert_eq!(capsule_engine_frame_digest(e, p0, &mut d0), CapsuleStatus::Ok);
        assert_eq!(capsule_engine_frame_digest(e, p1, &mut d1), CapsuleStatus::Ok);
        assert_eq!(capsule_engine_leave(e, p1), CapsuleStatus::Ok);
        assert_eq!(capsule_engine_leave(e, p1), CapsuleStatus::UnknownPlayer);
        assert_eq!(capsule_engine_active_players(e, &mut active), CapsuleStatus::Ok);
        capsule_engine_free(e);
    }
    assert_ne!(d0, d1);
    assert_eq!(active, 1);
}

#[test]
fn terminate_ends_every_session() {
    let e = engine();
    let mut p = 0;
    let mut ended = 0;
    let mut active = 7;
    let reason = CString::new("gpu reset").unwrap();
    unsafe {
        capsule_engine_join(e, &mut p);
        capsule_engine_join(e, &mut p);
        assert_eq!(
            capsule_engine_terminate(e, reason.as_ptr(), &mut ended),
            CapsuleStatus::Ok
        );
        assert_eq!(capsule_engine_active_players(e, &mut active), CapsuleStatus::Ok);
        assert_eq!(capsule_engine_join(e, &mut p), CapsuleStatus::EngineDown);
        capsule_engine_free(e);
    }
    assert_eq!((ended, active), (2, 0));
}

#[test]
fn bad_arguments() {
    let mut e = ptr::null_mut();
    let junk = CString::new("not = [a scenario").unwrap();
    unsafe {
        assert_eq!(
            capsule_engine_new_from_str(junk.as_ptr(), &mut e),
            CapsuleStatus::InvalidScenario
        );
        assert!(e.is_null());
        assert_eq!(
            capsule_engine_new_from_str(ptr::null(), &mut e),
            CapsuleStatus::NullPointer
        );
        assert_eq!(
            capsule_engine_tick(ptr::null_mut(), ptr::null_mut()),
            CapsuleStatus::NullPointer
        );
        let missing = CString::new("/no/such/file.scn").unwrap();
        assert_eq!(
            capsule_engine_new_from_path(missing.as_ptr(), &mut e),
            CapsuleStatus::InvalidScenario
        );
        capsule_engine_free(ptr::null_mut());
    }
    // a too-small buffer still reports the full length
    let need = unsafe { capsule_last_error(ptr::null_mut(), 0) };
    let mut tiny = [0 as c_char; 4];
    assert_eq!(unsafe { capsule_last_error(tiny.as_mut_ptr(), 4) }, need);
    assert_eq!(tiny[3], 0);
}

#[test]
fn capacity_search_matches_the_library() {
    let exhibition = CString::new(include_str!("../../../scenarios/exhibition.scn")).unwrap();
    let (mut c, mut b) = (0, 0);
    unsafe {
        assert_eq!(
            capsule_capacity_search(exhibition.as_ptr(), CapsuleMode::Capsule, &mut c),
            CapsuleStatus::Ok
        );
        assert_eq!(
            capsule_capacity_search(exhibition.as_ptr(), CapsuleMode::Baseline, &mut b),
            CapsuleStatus::Ok
        );
    }
    assert_eq!((c, b), (9, 4));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/capsule.h");
    for f in [
        "capsule_engine_new_from_str",
        "capsule_engine_new_from_path",
        "capsule_engine_free",
        "capsule_engine_join",
        "capsule_engine_leave",
        "capsule_engine_input",
        "capsule_engine_tick",
        "capsule_engine_frame_digest",
        "capsule_engine_terminate",
        "capsule_engine_active_players",
        "capsule_capacity_search",
        "capsule_last_error",
        "typedef struct CapsuleEngine CapsuleEngine",
        "CAPSULE_STATUS_CAPACITY_EXCEEDED = 4",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
}
