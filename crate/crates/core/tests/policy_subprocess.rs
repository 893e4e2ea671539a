use forge_core::action_space::Action;
use forge_core::policy::{query, ExternalPolicy, Policy, PolicyError, PolicyMode, PolicyRequest};
use forge_core::trajectory::{trajectory_from_actions, ActionSpaceSpec, Trajectory};
use std::time::{Duration, Instant};

fn stub(args: &str) -> String {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/stub_policy.py");
    format!("python3 {path} {args}")
}

fn traj() -> Trajectory {
    trajectory_from_actions(
        ActionSpaceSpec::minecraft(),
        &["keyPress(w)", "keyPress(w)", "mouseClick(left)", "keyPress(s)"],
    )
}

fn table_file(t: &Trajectory) -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    let map: std::collections::BTreeMap<String, String> = t
        .steps
        .iter()
        .map(|s| (s.frame_id.to_string(), s.action.render()))
        .collect();
    std::fs::write(f.path(), serde_json::to_string(&map).unwrap()).unwrap();
    f
}

const T: Duration = Duration::from_secs(10);

#[test]
fn handshake_and_copy_last() {
    let mut p = ExternalPolicy::spawn(&stub(""), T).unwrap();
    let t = traj();
    for i in 0..t.steps.len() {
        let mut req = PolicyRequest::from_history(&t, i, PolicyMode::Act, None);
        req.id = 42 + i as u64;
        let resp = p.respond(&req).unwrap();
        assert_eq!(resp.id, req.id);
        let expect = if i == 0 { Action::no_op() } else { t.steps[i - 1].action.clone() };
        assert_eq!(query(&mut p, &req).unwrap().action, Some(expect));
    }
}

#[test]
fn magic_string_over_the_wire() {
    let t = traj();
    let table = table_file(&t);
    let cmd = stub(&format!("--policy magic --magic GO --table {}", table.path().display()));
    let mut p = ExternalPolicy::spawn(&cmd, T).unwrap();
    let ask = |p: &mut ExternalPolicy, th: &str| {
        let req = PolicyRequest::from_history(&t, 2, PolicyMode::ActWithThought, Some(th.into()));
        query(p, &req).unwrap().action.unwrap()
    };
    assert_eq!(ask(&mut p, "GO left").render(), "mouseClick(left)");
    assert_eq!(ask(&mut p, "hmm").render(), "no_op");
}

#[test]
fn backend_error_keeps_connection() {
    let t = traj();
    let table = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(table.path(), "{\"1\": \"keyPress(w)\"}").unwrap();
    let cmd = stub(&format!("--policy scripted --table {}", table.path().display()));
    let mut p = ExternalPolicy::spawn(&cmd, T).unwrap();
    let r0 = PolicyRequest::from_history(&t, 0, PolicyMode::Act, None);
    assert!(matches!(query(&mut p, &r0), Err(PolicyError::Backend(_))));
    let r1 = PolicyRequest::from_history(&t, 1, PolicyMode::Act, None);
    assert_eq!(query(&mut p, &r1).unwrap().action.unwrap().render(), "keyPress(w)");
}

#[test]
fn garbage_hello_names_bytes() {
    let err = ExternalPolicy::spawn(&stub("--hello garbage"), T).err().unwrap();
    match err {
        PolicyError::Protocol(msg) => assert!(msg.contains("garbage!"), "{msg}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn version_mismatch() {
    let err = ExternalPolicy::spawn(&stub("--hello v2"), T).err().unwrap();
    assert!(matches!(err, PolicyError::VersionMismatch { expected: 1, got: 2 }), "{err}");
}

#[test]
fn silent_hello_times_out() {
    let start = Instant::now();
    let err = ExternalPolicy::spawn(&stub("--hello silent"), Duration::from_millis(300)).err().unwrap();
    assert!(matches!(err, PolicyError::Timeout(_)), "{err}");
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn slow_reply_times_out_then_recovers() {
    let t = traj();
    let mut p = ExternalPolicy::spawn(&stub("--sleep-ms 800 --sleep-first"), Duration::from_millis(300)).unwrap();
    let req = PolicyRequest::from_history(&t, 1, PolicyMode::Act, None);
    let start = Instant::now();
    assert!(matches!(p.respond(&req), Err(PolicyError::Timeout(_))));
    assert!(start.elapsed() < Duration::from_millis(700));
    // wait for the stale reply to arrive, then the next call must skip it
    std::thread::sleep(Duration::from_millis(700));
    let req2 = PolicyRequest::from_history(&t, 3, PolicyMode::Act, None);
    let reply = query(&mut p, &req2).unwrap();
    assert_eq!(reply.action.unwrap().render(), "mouseClick(left)");
}

#[test]
fn non_parsing_reply_is_protocol_error() {
    let t = traj();
    let mut p = ExternalPolicy::spawn(&stub("--garbage-reply"), T).unwrap();
    let req = PolicyRequest::from_history(&t, 1, PolicyMode::Act, None);
    match p.respond(&req) {
        Err(PolicyError::Protocol(msg)) => assert!(msg.contains("this is not json")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn process_exit_is_reported() {
    let t = traj();
    let mut p = ExternalPolicy::spawn(&stub("--die-after 1"), T).unwrap();
    let req = PolicyRequest::from_history(&t, 1, PolicyMode::Act, None);
    query(&mut p, &req).unwrap();
    let err = p.respond(&req).unwrap_err();
    assert!(matches!(err, PolicyError::ProcessExited(_)), "{err}");
}

#[test]
fn missing_command_fails_cleanly() {
    let err = ExternalPolicy::spawn("definitely-not-a-real-binary-xyz", Duration::from_secs(2)).err().unwrap();
    assert!(
        matches!(err, PolicyError::ProcessExited(_) | PolicyError::Spawn(_)),
        "{err}"
    );
}
