//! Trajectory data model and its line-delimited file format.
//!
//! A trajectory file starts with one header line followed by one line per step:
//!
//! ```text
//! {"type":"header","instruction":"...","action_space":{...},"meta":{...}}
//! {"type":"step","t":0,"frame_id":0,"t_us":0,"thought":"...","action":"keyPress(w)","weight":null}
//! ```

use crate::action_space::{key, Action, Button, KeyId};
use crate::alignment::LagEstimate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

pub const DEFAULT_MOUSE_LIMIT: u32 = 180;

/// Natural-language description of the keys, buttons and mouse range an agent
/// may use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpaceSpec {
    pub key_semantics: BTreeMap<KeyId, String>,
    pub buttons: BTreeSet<Button>,
    pub mouse_limit: u32,
    #[serde(default)]
    pub descriptions_masked: bool,
}

impl Default for ActionSpaceSpec {
    fn default() -> Self {
        Self {
            key_semantics: BTreeMap::new(),
            buttons: BTreeSet::new(),
            mouse_limit: DEFAULT_MOUSE_LIMIT,
            descriptions_masked: false,
        }
    }
}

impl ActionSpaceSpec {
    pub fn new<'a>(
        keys: impl IntoIterator<Item = (&'a str, &'a str)>,
        buttons: impl IntoIterator<Item = Button>,
    ) -> Self {
        Self {
            key_semantics: keys
                .into_iter()
                .map(|(k, d)| (key(k), d.to_string()))
                .collect(),
            buttons: buttons.into_iter().collect(),
            ..Self::default()
        }
    }

    /// Block-world sandbox controls: movement, jumping, inventory, hotbar.
    pub fn minecraft() -> Self {
        let mut spec = Self::new(
            [
                ("w", "Move forward"),
                ("s", "Move backward"),
                ("a", "Strafe left"),
                ("d", "Strafe right"),
                ("e", "Toggle the inventory"),
                ("space", "Jump"),
                ("q", "Drop the held item"),
                ("left.ctrl", "Sprint"),
                ("left.shift", "Sneak"),
            ],
            [Button::Left, Button::Right],
        );
        for n in 1..=9 {
            spec.key_semantics
                .insert(key(&n.to_string()), format!("Select hotbar slot {n}"));
        }
        spec
    }

    /// Arrow-key browser game controls.
    pub fn arrows() -> Self {
        Self::new(
            [
                ("arrowup", "Up"),
                ("arrowdown", "Down"),
                ("arrowleft", "Left"),
                ("arrowright", "Right"),
            ],
            [],
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "minecraft" => Some(Self::minecraft()),
            "arrows" => Some(Self::arrows()),
            _ => None,
        }
    }

    pub fn is_bound(&self, k: KeyId) -> bool {
        self.key_semantics.contains_key(&k)
    }

    /// Prompt-style rendering of the action space.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "* mouseMove(dx, dy) # relative mouse motion, |dx| and |dy| at most {}",
            self.mouse_limit
        );
        if !self.buttons.is_empty() {
            let _ = writeln!(out, "* mouseClick(button)");
            for b in &self.buttons {
                let _ = writeln!(out, "    - {b}");
            }
        }
        if !self.key_semantics.is_empty() {
            let _ = writeln!(out, "* keyPress(keys)");
            for (k, desc) in &self.key_semantics {
                if self.descriptions_masked || desc.is_empty() {
                    let _ = writeln!(out, "    - {k}");
                } else {
                    let _ = writeln!(out, "    - {k} # {desc}");
                }
            }
        }
        let _ = writeln!(out, "* no_op # wait");
        out
    }

    /// Reasons `action` falls outside this space, empty when it conforms.
    pub fn violations(&self, action: &Action) -> Vec<String> {
        let mut out = Vec::new();
        for k in action.keys() {
            if !self.is_bound(*k) {
                out.push(format!("unbound key {k}"));
            }
        }
        for b in action.clicks() {
            if !self.buttons.contains(b) {
                out.push(format!("button {b} not in action space"));
            }
        }
        if let Some((dx, dy)) = action.mouse_delta() {
            let limit = self.mouse_limit as i64;
            if (dx as i64).abs() > limit || (dy as i64).abs() > limit {
                out.push(format!("mouseMove({dx}, {dy}) exceeds mouse limit {limit}"));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub frame_id: u64,
    pub t_us: u64,
    pub thought: Option<String>,
    pub action: Action,
    pub weight: Option<f64>,
}

impl Step {
    pub fn new(t: usize, frame_id: u64, t_us: u64, action: Action) -> Self {
        Self {
            t,
            frame_id,
            t_us,
            thought: None,
            action,
            weight: None,
        }
    }

    pub fn with_thought(mut self, thought: impl Into<String>) -> Self {
        self.thought = Some(thought.into());
        self
    }
}

/// One processing stage applied to a trajectory, with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub params: serde_json::Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub game: String,
    #[serde(default)]
    pub synthetic_boundary: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag: Option<LagEstimate>,
    #[serde(default)]
    pub history: Vec<StageRecord>,
}

impl TrajectoryMeta {
    pub fn record(&mut self, stage: &str, params: serde_json::Value) {
        self.history.push(StageRecord {
            stage: stage.to_string(),
            params,
        });
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub instruction: String,
    pub action_space: ActionSpaceSpec,
    pub steps: Vec<Step>,
    pub meta: TrajectoryMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header {
        instruction: String,
        action_space: ActionSpaceSpec,
        meta: TrajectoryMeta,
    },
    Step {
        t: usize,
        frame_id: u64,
        t_us: u64,
        thought: Option<String>,
        action: Action,
        weight: Option<f64>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryFileError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing header line")]
    MissingHeader,
    #[error("line {line}: unexpected second header")]
    DuplicateHeader { line: usize },
}

impl Trajectory {
    pub fn new(instruction: impl Into<String>, action_space: ActionSpaceSpec, steps: Vec<Step>) -> Self {
        Self {
            instruction: instruction.into(),
            action_space,
            steps,
            meta: TrajectoryMeta::default(),
        }
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }

    pub fn last_index(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn is_boundary(&self, t: usize) -> bool {
        t == 0 || t == self.last_index()
    }

    pub fn thought_count(&self) -> usize {
        self.steps.iter().filter(|s| s.thought.is_some()).count()
    }

    pub fn renumber(&mut self) {
        for (i, s) in self.steps.iter_mut().enumerate() {
            s.t = i;
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Line::Header {
            instruction: self.instruction.clone(),
            action_space: self.action_space.clone(),
            meta: self.meta.clone(),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"));
        for s in &self.steps {
            let line = Line::Step {
                t: s.t,
                frame_id: s.frame_id,
                t_us: s.t_us,
                thought: s.thought.clone(),
                action: s.action.clone(),
                weight: s.weight,
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("step serializes"));
        }
        out
    }

    pub fn from_jsonl(src: &str) -> Result<Trajectory, TrajectoryFileError> {
        let mut traj: Option<Trajectory> = None;
        for (i, raw) in src.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw).map_err(|e| TrajectoryFileError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            match (line, traj.as_mut()) {
                (Line::Header { instruction, action_space, meta }, None) => {
                    traj = Some(Trajectory {
                        instruction,
                        action_space,
                        steps: Vec::new(),
                        meta,
                    });
                }
                (Line::Header { .. }, Some(_)) => {
                    return Err(TrajectoryFileError::DuplicateHeader { line: i + 1 })
                }
                (Line::Step { .. }, None) => return Err(TrajectoryFileError::MissingHeader),
                (Line::Step { t, frame_id, t_us, thought, action, weight }, Some(tr)) => {
                    tr.steps.push(Step {
                        t,
                        frame_id,
                        t_us,
                        thought,
                        action,
                        weight,
                    });
                }
            }
        }
        traj.ok_or(TrajectoryFileError::MissingHeader)
    }
}

/// Build a trajectory from action strings, one step per 100 ms frame.
/// Panics on unparsable strings; meant for fixtures.
pub fn trajectory_from_actions(spec: ActionSpaceSpec, actions: &[&str]) -> Trajectory {
    let steps = actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            Step::new(
                i,
                i as u64,
                i as u64 * 100_000,
                Action::parse(a).unwrap_or_else(|e| panic!("{a}: {e}")),
            )
        })
        .collect();
    Trajectory::new("test", spec, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let mut t = trajectory_from_actions(
            ActionSpaceSpec::minecraft(),
            &["keyPress(w)", "no_op", "mouseMove(3, -4) and mouseClick(left)"],
        );
        t.steps[0].thought = Some("plan: go".into());
        t.steps[1].weight = Some(0.5);
        t.meta.record("build", serde_json::json!({"horizon_us": 3}));
        let text = t.to_jsonl();
        let back = Trajectory::from_jsonl(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_jsonl(), text);
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("{\"type\":\"header\""));
        let step = text.lines().nth(3).unwrap();
        assert_eq!(
            step,
            "{\"type\":\"step\",\"t\":2,\"frame_id\":2,\"t_us\":200000,\"thought\":null,\
             \"action\":\"mouseMove(3, -4) and mouseClick(left)\",\"weight\":null}"
        );
    }

    #[test]
    fn file_errors() {
        assert!(matches!(
            Trajectory::from_jsonl(""),
            Err(TrajectoryFileError::MissingHeader)
        ));
        let t = trajectory_from_actions(ActionSpaceSpec::arrows(), &["no_op"]);
        let text = t.to_jsonl();
        let doubled = format!("{text}{}", text.lines().next().unwrap());
        assert!(matches!(
            Trajectory::from_jsonl(&doubled),
            Err(TrajectoryFileError::DuplicateHeader { line: 3 })
        ));
        let bad = text.replace("no_op", "keyPress(zz)");
        assert!(matches!(
            Trajectory::from_jsonl(&bad),
            Err(TrajectoryFileError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn render_masks_descriptions() {
        let mut spec = ActionSpaceSpec::new([("w", "Move forward")], [Button::Left]);
        assert!(spec.render().contains("    - w # Move forward\n"));
        spec.descriptions_masked = true;
        assert!(spec.render().contains("    - w\n"));
        assert!(!spec.render().contains("Move forward"));
    }

    #[test]
    fn violations_cover_keys_buttons_and_limit() {
        let spec = ActionSpaceSpec::new([("w", "fwd")], [Button::Left]);
        assert!(spec.violations(&Action::parse("keyPress(w)").unwrap()).is_empty());
        assert_eq!(
            spec.violations(&Action::parse("keyPress(x)").unwrap()),
            vec!["unbound key x"]
        );
        assert_eq!(spec.violations(&Action::parse("mouseClick(right)").unwrap()).len(), 1);
        assert_eq!(spec.violations(&Action::parse("mouseMove(200, 0)").unwrap()).len(), 1);
        assert!(spec.violations(&Action::parse("mouseMove(-180, 180)").unwrap()).is_empty());
    }
}
