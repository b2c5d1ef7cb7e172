mod common;

use std::time::Duration;

use common::{check_persistence, random_script, run_random_sequence, scripted_session};
use litscope_core::session::{load_snapshot, parse_snapshot, save_snapshot, snapshot_bytes, without_timestamps};
use litscope_core::{ManualClock, SessionState, SessionStore};

#[test]
fn scripted_session_snapshot_is_identical_across_runs() {
    use chrono::TimeZone;
    let a = scripted_session(ManualClock::fixed());
    let later = ManualClock::new(chrono::Utc.with_ymd_and_hms(2026, 6, 1, 12, 0, 0).unwrap());
    let b = scripted_session(later);
    let sa = snapshot_bytes(a.session.state(), a.session.events());
    let sb = snapshot_bytes(b.session.state(), b.session.events());
    assert_ne!(sa, sb, "the clocks differ, so raw snapshots should too");
    let na = serde_json::to_string_pretty(&without_timestamps(&serde_json::from_str::<serde_json::Value>(&sa).unwrap())).unwrap();
    let nb = serde_json::to_string_pretty(&without_timestamps(&serde_json::from_str::<serde_json::Value>(&sb).unwrap())).unwrap();
    assert_eq!(na, nb);
}

#[test]
fn save_load_round_trip_and_byte_stability() {
    let h = scripted_session(ManualClock::fixed());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snapshot.json");
    save_snapshot(&path, h.session.state(), h.session.events()).unwrap();
    let first = std::fs::read(&path).unwrap();
    let loaded = load_snapshot(&path).unwrap();
    assert_eq!(&loaded.state, h.session.state());
    assert_eq!(loaded.events, h.session.events());
    save_snapshot(&path, &loaded.state, &loaded.events).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert!(first.ends_with(b"\n"));
}

#[test]
fn unknown_schema_versions_and_corruption_are_rejected() {
    let h = scripted_session(ManualClock::fixed());
    let bytes = snapshot_bytes(h.session.state(), h.session.events());
    let bumped = bytes.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert_eq!(parse_snapshot(&bumped).unwrap_err().code(), "UnknownSchemaVersion");
    assert_eq!(parse_snapshot("{").unwrap_err().code(), "CorruptSnapshot");
    let mut v: serde_json::Value = serde_json::from_str(&bytes).unwrap();
    v["state"]["last_seq"] = serde_json::json!(9999);
    assert_eq!(parse_snapshot(&v.to_string()).unwrap_err().code(), "CorruptSnapshot");
}

#[test]
fn tampered_chunk_text_fails_the_integrity_check() {
    let h = scripted_session(ManualClock::fixed());
    let bytes = snapshot_bytes(h.session.state(), h.session.events());
    let mut v: serde_json::Value = serde_json::from_str(&bytes).unwrap();
    let chunks = &mut v["state"]["pipelines"]["s1.p1"]["nodes"][2]["output"]["value"]["chunks"];
    chunks[0]["text"] = serde_json::json!("not in the abstract");
    assert_eq!(parse_snapshot(&v.to_string()).unwrap_err().code(), "ChunkIntegrity");
}

#[test]
fn store_log_replays_to_the_live_state() {
    let h = scripted_session(ManualClock::fixed());
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    for e in h.session.events() {
        store.append(h.session.id(), e).unwrap();
    }
    let log = store.read_log(h.session.id()).unwrap();
    assert_eq!(log, h.session.events());
    assert_eq!(&SessionState::replay(&log).unwrap(), h.session.state());
    assert_eq!(store.sessions().unwrap(), vec![h.session.id().clone()]);
    store.write_snapshot(h.session.state(), h.session.events()).unwrap();
    assert!(store.snapshot_path(h.session.id()).is_file());
}

#[test]
fn random_sequences_replay_and_round_trip() {
    for seed in 0..40 {
        let h = run_random_sequence(&random_script(seed, 256), 30).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        check_persistence(&h.session).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn timestamps_follow_the_clock() {
    let h = scripted_session(ManualClock::fixed());
    let ts: Vec<_> = h.session.events().iter().map(|e| e.timestamp).collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    assert!(ts.last().unwrap().signed_duration_since(ts[0]) >= chrono::Duration::from_std(Duration::from_secs(60)).unwrap());
}
