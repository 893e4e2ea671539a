//! Policy oracles: a uniform request/response interface, deterministic
//! in-process baselines, and a lockstep subprocess client speaking
//! newline-delimited JSON over stdin/stdout.
//!
//! Wire protocol (one JSON object per line, UTF-8):
//!
//! ```text
//! client -> {"type":"hello","version":1}
//! server -> {"type":"hello","version":1}
//! client -> {"id":7,"mode":"act","instruction":"...","action_space":{...},
//!            "summary":[{"t":0,"thought":"..."}],
//!            "context":[{"t":0,"frame_id":0,"thought":null,"action":"keyPress(w)"}],
//!            "obs":{"frame_id":1}}
//! server -> {"id":7,"action":"keyPress(w)"}
//! ```
//!
//! `act_with_thought` requests add `"thought":"..."`; `generate_thought`
//! responses carry `"thought"` instead of `"action"`. A server that cannot
//! answer replies `{"id":7,"error":"..."}`.

use crate::action_space::{Action, Button, KeyId};
use crate::augment::{derive_seed, rng};
use crate::trajectory::{ActionSpaceSpec, Trajectory};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Act,
    ActWithThought,
    GenerateThought,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsRef {
    pub frame_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub t: usize,
    pub thought: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub t: usize,
    pub frame_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    pub thought: Option<String>,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub id: u64,
    pub mode: PolicyMode,
    pub instruction: String,
    pub action_space: ActionSpaceSpec,
    pub summary: Vec<SummaryEntry>,
    pub context: Vec<ContextEntry>,
    pub obs: ObsRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

impl PolicyRequest {
    /// Request for step `t` of `traj` with thought-free history of all prior steps.
    pub fn from_history(traj: &Trajectory, t: usize, mode: PolicyMode, thought: Option<String>) -> Self {
        let context = traj.steps[..t]
            .iter()
            .map(|s| ContextEntry {
                t: s.t,
                frame_id: s.frame_id,
                features: None,
                thought: None,
                action: s.action.clone(),
            })
            .collect();
        PolicyRequest {
            id: t as u64,
            mode,
            instruction: traj.instruction.clone(),
            action_space: traj.action_space.clone(),
            summary: Vec::new(),
            context,
            obs: ObsRef {
                frame_id: traj.steps[t].frame_id,
                features: None,
            },
            thought,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PolicyResponse {
    pub fn action(id: u64, action: &Action) -> Self {
        Self {
            id,
            action: Some(action.render()),
            ..Self::default()
        }
    }
}

/// A validated reply.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyReply {
    pub action: Option<Action>,
    pub thought: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("policy timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("protocol version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: u32, got: u64 },
    #[error("response id {got} does not match request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("invalid action `{action}`: {reason}")]
    InvalidAction { action: String, reason: String },
    #[error("policy process exited: {0}")]
    ProcessExited(String),
    #[error("cannot start policy process: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("policy backend error: {0}")]
    Backend(String),
    #[error("{policy} does not support mode {mode:?}")]
    Unsupported { policy: String, mode: PolicyMode },
    #[error("bad policy spec `{0}`")]
    BadSpec(String),
}

pub trait Policy {
    fn name(&self) -> String;
    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse, PolicyError>;
}

/// Query a policy and validate the reply against the request.
pub fn query(policy: &mut dyn Policy, req: &PolicyRequest) -> Result<PolicyReply, PolicyError> {
    let resp = policy.respond(req)?;
    if resp.id != req.id {
        return Err(PolicyError::IdMismatch {
            expected: req.id,
            got: resp.id,
        });
    }
    if let Some(err) = resp.error {
        return Err(PolicyError::Backend(err));
    }
    match req.mode {
        PolicyMode::Act | PolicyMode::ActWithThought => {
            let text = resp
                .action
                .ok_or_else(|| PolicyError::Protocol(format!("response {} lacks an action", resp.id)))?;
            let action = Action::parse(&text).map_err(|e| PolicyError::InvalidAction {
                action: text.clone(),
                reason: e.to_string(),
            })?;
            let violations = req.action_space.violations(&action);
            if !violations.is_empty() {
                return Err(PolicyError::InvalidAction {
                    action: text,
                    reason: violations.join("; "),
                });
            }
            Ok(PolicyReply {
                action: Some(action),
                thought: resp.thought,
            })
        }
        PolicyMode::GenerateThought => {
            let thought = resp
                .thought
                .ok_or_else(|| PolicyError::Protocol(format!("response {} lacks a thought", resp.id)))?;
            Ok(PolicyReply {
                action: None,
                thought: Some(thought),
            })
        }
    }
}

fn unsupported(policy: &dyn Policy, req: &PolicyRequest) -> PolicyError {
    PolicyError::Unsupported {
        policy: policy.name(),
        mode: req.mode,
    }
}

/// Repeats the most recent context action; `no_op` on empty history.
#[derive(Clone, Debug, Default)]
pub struct CopyLast;

impl Policy for CopyLast {
    fn name(&self) -> String {
        "copy-last".into()
    }

    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        if req.mode == PolicyMode::GenerateThought {
            return Err(unsupported(self, req));
        }
        let action = req.context.last().map(|c| c.action.clone()).unwrap_or_default();
        Ok(PolicyResponse::action(req.id, &action))
    }
}

/// Looks up the current observation's frame id.
#[derive(Clone, Debug, Default)]
pub struct ScriptedTable {
    pub table: BTreeMap<u64, Action>,
}

impl ScriptedTable {
    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        Self {
            table: ground_truth_table(trajs),
        }
    }
}

impl Policy for ScriptedTable {
    fn name(&self) -> String {
        "scripted-table".into()
    }

    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        if req.mode == PolicyMode::GenerateThought {
            return Err(unsupported(self, req));
        }
        match self.table.get(&req.obs.frame_id) {
            Some(a) => Ok(PolicyResponse::action(req.id, a)),
            None => Err(PolicyError::Backend(format!(
                "no scripted action for frame {}",
                req.obs.frame_id
            ))),
        }
    }
}

/// Returns the ground-truth action for the frame iff the candidate thought
/// contains `token`, else `no_op`.
#[derive(Clone, Debug)]
pub struct MagicString {
    pub table: BTreeMap<u64, Action>,
    pub token: String,
}

impl Policy for MagicString {
    fn name(&self) -> String {
        format!("magic:{}", self.token)
    }

    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        if req.mode == PolicyMode::GenerateThought {
            return Err(unsupported(self, req));
        }
        let unlocked = req.thought.as_deref().is_some_and(|t| t.contains(&self.token));
        let action = match (unlocked, self.table.get(&req.obs.frame_id)) {
            (true, Some(a)) => a.clone(),
            _ => Action::no_op(),
        };
        Ok(PolicyResponse::action(req.id, &action))
    }
}

#[derive(Clone, Debug)]
pub struct AlwaysAction(pub Action);

impl Policy for AlwaysAction {
    fn name(&self) -> String {
        format!("always:{}", self.0)
    }

    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        if req.mode == PolicyMode::GenerateThought {
            return Err(unsupported(self, req));
        }
        Ok(PolicyResponse::action(req.id, &self.0))
    }
}

/// Uniform over `no_op`, single bound keys and single allowed clicks. The draw
/// depends only on the seed, the frame id and the history length.
#[derive(Clone, Debug)]
pub struct UniformRandom {
    pub seed: u64,
}

impl Policy for UniformRandom {
    fn name(&self) -> String {
        format!("random:{}", self.seed)
    }

    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        if req.mode == PolicyMode::GenerateThought {
            return Err(unsupported(self, req));
        }
        let keys: Vec<KeyId> = req.action_space.key_semantics.keys().copied().collect();
        let buttons: Vec<Button> = req.action_space.buttons.iter().copied().collect();
        let n = 1 + keys.len() + buttons.len();
        let mut r = rng(derive_seed(
            derive_seed(self.seed, req.obs.frame_id),
            req.context.len() as u64,
        ));
        let i = r.gen_range(0..n);
        let action = if i == 0 {
            Action::no_op()
        } else if i <= keys.len() {
            Action::key_press([keys[i - 1]]).expect("one key")
        } else {
            Action::click(buttons[i - 1 - keys.len()])
        };
        Ok(PolicyResponse::action(req.id, &action))
    }
}

/// frame_id → action over a set of trajectories (later entries win).
pub fn ground_truth_table(trajs: &[Trajectory]) -> BTreeMap<u64, Action> {
    trajs
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| (s.frame_id, s.action.clone())))
        .collect()
}

/// Subprocess policy. One outstanding request at a time.
pub struct ExternalPolicy {
    command: String,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<Vec<u8>>,
    timeout: Duration,
    next_id: u64,
}

impl ExternalPolicy {
    /// Start `command` under `sh -c` and complete the hello handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, PolicyError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(PolicyError::Spawn)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = Vec::new();
                match reader.read_until(b'\n', &mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        if tx.send(buf).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        let mut policy = Self {
            command: command.to_string(),
            child,
            stdin,
            lines: rx,
            timeout,
            next_id: 0,
        };
        policy.handshake()?;
        Ok(policy)
    }

    fn send(&mut self, line: &str) -> Result<(), PolicyError> {
        let write = self
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.write_all(b"\n"))
            .and_then(|_| self.stdin.flush());
        write.map_err(|e| PolicyError::ProcessExited(format!("{}: {e}", self.command)))
    }

    fn recv(&mut self, deadline: Instant) -> Result<String, PolicyError> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(wait) {
            Ok(bytes) => Ok(String::from_utf8_lossy(&bytes).trim_end().to_string()),
            Err(RecvTimeoutError::Timeout) => Err(PolicyError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "stdout closed".into());
                Err(PolicyError::ProcessExited(format!("{}: {status}", self.command)))
            }
        }
    }

    /// Exchange hello messages; returns the negotiated version.
    pub fn handshake(&mut self) -> Result<u32, PolicyError> {
        let hello = serde_json::json!({"type": "hello", "version": PROTOCOL_VERSION});
        self.send(&hello.to_string())?;
        let line = self.recv(Instant::now() + self.timeout)?;
        let bad = || PolicyError::Protocol(format!("malformed hello: {}", truncate(&line)));
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|_| bad())?;
        if value.get("type").and_then(|t| t.as_str()) != Some("hello") {
            return Err(bad());
        }
        let version = value.get("version").and_then(|v| v.as_u64()).ok_or_else(bad)?;
        if version != PROTOCOL_VERSION as u64 {
            return Err(PolicyError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                got: version,
            });
        }
        Ok(PROTOCOL_VERSION)
    }
}

fn truncate(s: &str) -> String {
    const MAX: usize = 120;
    if s.len() <= MAX {
        s.to_string()
    } else {
        let mut end = MAX;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

impl Policy for ExternalPolicy {
    fn name(&self) -> String {
        format!("cmd:{}", self.command)
    }

    /// Request ids are rewritten to a connection-local counter so that late
    /// replies to timed-out requests can be recognised and skipped.
    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        self.next_id += 1;
        let wire_id = self.next_id;
        let mut wire = req.clone();
        wire.id = wire_id;
        self.send(&serde_json::to_string(&wire).expect("request serializes"))?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let line = self.recv(deadline)?;
            if line.trim().is_empty() {
                continue;
            }
            let mut resp: PolicyResponse = serde_json::from_str(&line).map_err(|_| {
                PolicyError::Protocol(format!("non-parsing line: {}", truncate(&line)))
            })?;
            if resp.id < wire_id {
                log::warn!("skipping stale response id {}", resp.id);
                continue;
            }
            if resp.id != wire_id {
                return Err(PolicyError::IdMismatch {
                    expected: wire_id,
                    got: resp.id,
                });
            }
            resp.id = req.id;
            return Ok(resp);
        }
    }
}

impl Drop for ExternalPolicy {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Serve an in-process policy over the wire protocol until `input` closes.
pub fn serve<R: BufRead, W: Write>(policy: &mut dyn Policy, input: R, mut output: W) -> std::io::Result<()> {
    let hello = serde_json::json!({"type": "hello", "version": PROTOCOL_VERSION});
    writeln!(output, "{hello}")?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                writeln!(output, "{}", serde_json::json!({"id": null, "error": e.to_string()}))?;
                output.flush()?;
                continue;
            }
        };
        if value.get("type").and_then(|t| t.as_str()) == Some("hello") {
            continue;
        }
        let id = value.get("id").and_then(|v| v.as_u64());
        let resp = match serde_json::from_value::<PolicyRequest>(value) {
            Ok(req) => policy.respond(&req).unwrap_or_else(|e| PolicyResponse {
                id: req.id,
                error: Some(e.to_string()),
                ..PolicyResponse::default()
            }),
            Err(e) => {
                writeln!(output, "{}", serde_json::json!({"id": id, "error": e.to_string()}))?;
                output.flush()?;
                continue;
            }
        };
        writeln!(output, "{}", serde_json::to_string(&resp).expect("response serializes"))?;
        output.flush()?;
    }
    Ok(())
}

/// Textual policy selector, e.g. `builtin:copy-last` or `cmd:python3 stub.py`.
///
/// Builtins: `copy-last`, `no-op`, `always:<action>`, `random:<seed>`,
/// `oracle` (ground truth of the dataset at hand), `magic:<token>`, and
/// `seeker` for the toy rollout worlds.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicySpec {
    CopyLast,
    Seeker,
    Always(Action),
    Random(u64),
    Oracle,
    Magic(String),
    Command(String),
}

impl std::str::FromStr for PolicySpec {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PolicyError::BadSpec(s.to_string());
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let cmd = cmd.trim().trim_matches('"');
            return if cmd.is_empty() {
                Err(bad())
            } else {
                Ok(PolicySpec::Command(cmd.to_string()))
            };
        }
        let body = s.strip_prefix("builtin:").ok_or_else(bad)?;
        let (name, arg) = match body.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (body, None),
        };
        match (name, arg) {
            ("copy-last", None) => Ok(PolicySpec::CopyLast),
            ("seeker", None) => Ok(PolicySpec::Seeker),
            ("no-op", None) => Ok(PolicySpec::Always(Action::no_op())),
            ("always", Some(a)) => Action::parse(a).map(PolicySpec::Always).map_err(|_| bad()),
            ("random", Some(seed)) => seed.parse().map(PolicySpec::Random).map_err(|_| bad()),
            ("oracle", None) => Ok(PolicySpec::Oracle),
            ("magic", Some(token)) if !token.is_empty() => Ok(PolicySpec::Magic(token.to_string())),
            _ => Err(bad()),
        }
    }
}

impl PolicySpec {
    /// Instantiate; `ground_truth` backs `oracle` and `magic`.
    pub fn build(&self, ground_truth: &[Trajectory], timeout: Duration) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(match self {
            PolicySpec::CopyLast => Box::new(CopyLast),
            PolicySpec::Seeker => Box::new(crate::harness::Seeker),
            PolicySpec::Always(a) => Box::new(AlwaysAction(a.clone())),
            PolicySpec::Random(seed) => Box::new(UniformRandom { seed: *seed }),
            PolicySpec::Oracle => Box::new(ScriptedTable::from_trajectories(ground_truth)),
            PolicySpec::Magic(token) => Box::new(MagicString {
                table: ground_truth_table(ground_truth),
                token: token.clone(),
            }),
            PolicySpec::Command(cmd) => Box::new(ExternalPolicy::spawn(cmd, timeout)?),
        })
    }
}
