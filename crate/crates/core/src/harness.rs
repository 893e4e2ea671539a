//! Toy environments, the agent loop, and offline action-prediction metrics.

use crate::action_space::{Action, Button, KeyId};
use crate::augment::{rng, KeyRemap};
use crate::builder::{synthesize_boundary, validate_trajectory};
use crate::memory::{MemoryError, MemoryParams, MemoryState};
use crate::policy::{query, ContextEntry, ObsRef, Policy, PolicyError, PolicyMode, PolicyRequest, PolicyResponse};
use crate::trajectory::{ActionSpaceSpec, Step, Trajectory};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Timestamp spacing of rollout steps.
pub const ROLLOUT_STEP_US: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("action `{action}` outside the environment's action space: {reasons}")]
    OutsideSpace { action: String, reasons: String },
}

pub trait Env {
    fn instruction(&self) -> String;
    fn action_space(&self) -> ActionSpaceSpec;
    /// Compact textual observation.
    fn describe(&self) -> String;
    fn step(&mut self, action: &Action) -> Result<(), EnvError>;
    fn status(&self) -> Status;
}

fn check_space(spec: &ActionSpaceSpec, action: &Action) -> Result<(), EnvError> {
    let v = spec.violations(action);
    if v.is_empty() {
        Ok(())
    } else {
        Err(EnvError::OutsideSpace {
            action: action.render(),
            reasons: v.join("; "),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub x: i64,
    pub y: i64,
    pub radius: i64,
}

/// Move a cursor around a screen and left-click every target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CursorWorld {
    pub screen: (i64, i64),
    pub cursor: (i64, i64),
    pub targets: Vec<Target>,
    pub clicked: Vec<bool>,
    pub mouse_limit: u32,
    pub clicks_used: usize,
    pub click_budget: usize,
}

impl CursorWorld {
    pub fn new(screen: (i64, i64), cursor: (i64, i64), targets: Vec<Target>) -> Self {
        let n = targets.len();
        Self {
            screen,
            cursor,
            targets,
            clicked: vec![false; n],
            mouse_limit: crate::trajectory::DEFAULT_MOUSE_LIMIT,
            clicks_used: 0,
            click_budget: usize::MAX,
        }
    }

    /// 640x480 screen, cursor at the centre, `n` targets of radius 8.
    pub fn random(seed: u64, n: usize) -> Self {
        let mut r = rng(seed);
        let targets = (0..n)
            .map(|_| Target {
                x: r.gen_range(8..632),
                y: r.gen_range(8..472),
                radius: 8,
            })
            .collect();
        Self::new((640, 480), (320, 240), targets)
    }
}

impl Env for CursorWorld {
    fn instruction(&self) -> String {
        "click every target".into()
    }

    fn action_space(&self) -> ActionSpaceSpec {
        ActionSpaceSpec {
            buttons: [Button::Left].into(),
            mouse_limit: self.mouse_limit,
            ..ActionSpaceSpec::default()
        }
    }

    fn describe(&self) -> String {
        let mut s = format!("cursor={},{}", self.cursor.0, self.cursor.1);
        for (t, hit) in self.targets.iter().zip(&self.clicked) {
            let state = if *hit { "hit" } else { "open" };
            s.push_str(&format!(" target={},{},{},{state}", t.x, t.y, t.radius));
        }
        s
    }

    fn step(&mut self, action: &Action) -> Result<(), EnvError> {
        check_space(&self.action_space(), action)?;
        if let Some((dx, dy)) = action.mouse_delta() {
            self.cursor.0 = (self.cursor.0 + dx as i64).clamp(0, self.screen.0 - 1);
            self.cursor.1 = (self.cursor.1 + dy as i64).clamp(0, self.screen.1 - 1);
        }
        if action.clicks().contains(&Button::Left) {
            self.clicks_used += 1;
            let (cx, cy) = self.cursor;
            for (t, hit) in self.targets.iter().zip(self.clicked.iter_mut()) {
                let (dx, dy) = (cx - t.x, cy - t.y);
                if dx * dx + dy * dy <= t.radius * t.radius {
                    *hit = true;
                }
            }
        }
        Ok(())
    }

    fn status(&self) -> Status {
        if self.clicked.iter().all(|&c| c) {
            Status::Success
        } else if self.clicks_used > self.click_budget {
            Status::Failure
        } else {
            Status::Running
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dir {
    Up,
    Down,
    Left,
    Right,
}

impl Dir {
    pub const ORDER: [Dir; 4] = [Dir::Up, Dir::Down, Dir::Left, Dir::Right];

    fn offset(self) -> (i64, i64) {
        match self {
            Dir::Up => (0, -1),
            Dir::Down => (0, 1),
            Dir::Left => (-1, 0),
            Dir::Right => (1, 0),
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Dir::Up => "Move up",
            Dir::Down => "Move down",
            Dir::Left => "Move left",
            Dir::Right => "Move right",
        }
    }
}

/// Walk a grid to a goal cell with direction keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyGridWorld {
    pub size: (i64, i64),
    pub agent: (i64, i64),
    pub goal: (i64, i64),
    pub keymap: BTreeMap<KeyId, Dir>,
    pub walls: BTreeSet<(i64, i64)>,
}

impl KeyGridWorld {
    pub fn wasd() -> BTreeMap<KeyId, Dir> {
        use crate::action_space::key;
        [("w", Dir::Up), ("s", Dir::Down), ("a", Dir::Left), ("d", Dir::Right)]
            .into_iter()
            .map(|(k, d)| (key(k), d))
            .collect()
    }

    pub fn new(size: (i64, i64), agent: (i64, i64), goal: (i64, i64)) -> Self {
        Self {
            size,
            agent,
            goal,
            keymap: Self::wasd(),
            walls: BTreeSet::new(),
        }
    }

    /// 10x10 grid with distinct random start and goal cells.
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let mut cell = || (r.gen_range(0..10), r.gen_range(0..10));
        let agent = cell();
        let mut goal = cell();
        while goal == agent {
            goal = cell();
        }
        Self::new((10, 10), agent, goal)
    }

    pub fn remapped(&self, remap: &KeyRemap) -> Self {
        Self {
            keymap: self.keymap.iter().map(|(k, d)| (remap.apply(*k), *d)).collect(),
            ..self.clone()
        }
    }
}

impl Env for KeyGridWorld {
    fn instruction(&self) -> String {
        "reach the goal cell".into()
    }

    fn action_space(&self) -> ActionSpaceSpec {
        ActionSpaceSpec {
            key_semantics: self
                .keymap
                .iter()
                .map(|(k, d)| (*k, d.description().to_string()))
                .collect(),
            ..ActionSpaceSpec::default()
        }
    }

    fn describe(&self) -> String {
        format!(
            "agent={},{} goal={},{}",
            self.agent.0, self.agent.1, self.goal.0, self.goal.1
        )
    }

    fn step(&mut self, action: &Action) -> Result<(), EnvError> {
        check_space(&self.action_space(), action)?;
        for dir in Dir::ORDER {
            for k in action.keys() {
                if self.keymap.get(k) != Some(&dir) {
                    continue;
                }
                let (ox, oy) = dir.offset();
                let next = (self.agent.0 + ox, self.agent.1 + oy);
                let inside = (0..self.size.0).contains(&next.0) && (0..self.size.1).contains(&next.1);
                if inside && !self.walls.contains(&next) {
                    self.agent = next;
                }
            }
        }
        Ok(())
    }

    fn status(&self) -> Status {
        if self.agent == self.goal {
            Status::Success
        } else {
            Status::Running
        }
    }
}

fn fields(features: &str) -> Vec<(&str, Vec<i64>, Option<&str>)> {
    features
        .split_whitespace()
        .filter_map(|item| {
            let (name, value) = item.split_once('=')?;
            let mut nums = Vec::new();
            let mut tag = None;
            for part in value.split(',') {
                match part.parse() {
                    Ok(n) => nums.push(n),
                    Err(_) => tag = Some(part),
                }
            }
            Some((name, nums, tag))
        })
        .collect()
}

/// Greedy scripted agent for both toy worlds. It reads the observation
/// features: in the cursor world it flies straight to the first open target
/// and clicks on arrival; in the grid world it presses the keys whose
/// descriptions point towards the goal.
#[derive(Clone, Debug, Default)]
pub struct Seeker;

impl Seeker {
    fn cursor_action(f: &[(&str, Vec<i64>, Option<&str>)], limit: i64) -> Option<Action> {
        let (_, cur, _) = f.iter().find(|(n, v, _)| *n == "cursor" && v.len() == 2)?;
        let (_, tgt, _) = f
            .iter()
            .find(|(n, v, tag)| *n == "target" && v.len() == 3 && *tag == Some("open"))?;
        let (dx, dy) = (tgt[0] - cur[0], tgt[1] - cur[1]);
        let step = (dx.clamp(-limit, limit) as i32, dy.clamp(-limit, limit) as i32);
        let arrives = dx.abs() <= limit && dy.abs() <= limit;
        let mv = (step != (0, 0)).then(|| Action::mouse_move(step.0, step.1));
        Some(match (mv, arrives) {
            (Some(m), true) => {
                let mut atoms = m.atoms();
                atoms.extend(Action::click(Button::Left).atoms());
                Action::compound(atoms).expect("move and click combine")
            }
            (Some(m), false) => m,
            (None, _) => Action::click(Button::Left),
        })
    }

    fn grid_action(f: &[(&str, Vec<i64>, Option<&str>)], spec: &ActionSpaceSpec) -> Option<Action> {
        let (_, a, _) = f.iter().find(|(n, v, _)| *n == "agent" && v.len() == 2)?;
        let (_, g, _) = f.iter().find(|(n, v, _)| *n == "goal" && v.len() == 2)?;
        let mut want = Vec::new();
        if g[1] < a[1] {
            want.push(Dir::Up);
        }
        if g[1] > a[1] {
            want.push(Dir::Down);
        }
        if g[0] < a[0] {
            want.push(Dir::Left);
        }
        if g[0] > a[0] {
            want.push(Dir::Right);
        }
        if want.is_empty() {
            return Some(Action::no_op());
        }
        let keys = want
            .iter()
            .map(|d| {
                spec.key_semantics
                    .iter()
                    .find(|(_, desc)| desc.as_str() == d.description())
                    .map(|(k, _)| *k)
            })
            .collect::<Option<Vec<KeyId>>>()?;
        Action::key_press(keys).ok()
    }
}

impl Policy for Seeker {
    fn name(&self) -> String {
        "seeker".into()
    }

    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        let features = req.obs.features.as_deref().unwrap_or("");
        let f = fields(features);
        let action = if features.starts_with("cursor=") {
            Self::cursor_action(&f, req.action_space.mouse_limit as i64)
        } else {
            Self::grid_action(&f, &req.action_space)
        };
        match action {
            Some(a) => Ok(PolicyResponse::action(req.id, &a)),
            None => Err(PolicyError::Backend(format!("seeker cannot act on `{features}`"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("policy failed at step {t}: {source}")]
    Policy {
        t: usize,
        #[source]
        source: PolicyError,
    },
    #[error("environment rejected step {t}: {source}")]
    Env {
        t: usize,
        #[source]
        source: EnvError,
    },
    #[error("memory: {0}")]
    Memory(#[from] MemoryError),
    #[error("episode produced no steps (environment already terminal or max_steps = 0)")]
    EmptyEpisode,
    #[error("empty dataset")]
    EmptyDataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub status: Status,
    pub steps: usize,
    pub max_prompt_tokens: usize,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub metrics: EpisodeMetrics,
    /// Observation text after each step, preceded by the initial one.
    pub states: Vec<String>,
}

/// An aborted episode and everything recorded up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct EpisodeFailure {
    pub partial: Option<Box<Trajectory>>,
    #[source]
    pub error: HarnessError,
}

fn finish(mut traj: Trajectory, partial: bool) -> Trajectory {
    synthesize_boundary(&mut traj);
    if partial {
        traj.meta.record("partial", serde_json::json!({"aborted": true}));
    }
    traj
}

/// Observe, consult memory, ask the policy, act; until the environment
/// finishes or `max_steps` run out.
pub fn run_episode(
    env: &mut dyn Env,
    policy: &mut dyn Policy,
    params: MemoryParams,
    max_steps: usize,
) -> Result<Episode, EpisodeFailure> {
    let fail = |steps: &[Step], env: &dyn Env, error| EpisodeFailure {
        partial: (!steps.is_empty())
            .then(|| Box::new(finish(Trajectory::new(env.instruction(), env.action_space(), steps.to_vec()), true))),
        error,
    };
    let mut memory = MemoryState::new(params).map_err(|e| fail(&[], env, e.into()))?;
    let instruction = env.instruction();
    let spec = env.action_space();
    let mut steps: Vec<Step> = Vec::new();
    let mut states = vec![env.describe()];
    let mut max_tokens = 0;

    for t in 0..max_steps {
        if env.status() != Status::Running {
            break;
        }
        let features = env.describe();
        if let Err(e) = memory.render_prompt(&instruction, &spec) {
            log::debug!("step {t}: {e}; shrinking context");
            memory.budget_fit(&instruction, &spec).map_err(|e| fail(&steps, env, e.into()))?;
        }
        max_tokens = max_tokens.max(memory.render_unchecked(&instruction, &spec).token_count);
        let req = PolicyRequest {
            id: t as u64,
            mode: PolicyMode::Act,
            instruction: instruction.clone(),
            action_space: spec.clone(),
            summary: memory.summary_entries(),
            context: memory.context.iter().cloned().collect(),
            obs: ObsRef {
                frame_id: t as u64,
                features: Some(features.clone()),
            },
            thought: None,
        };
        let reply = query(policy, &req).map_err(|source| fail(&steps, env, HarnessError::Policy { t, source }))?;
        let action = reply.action.unwrap_or_default();
        env.step(&action)
            .map_err(|source| fail(&steps, env, HarnessError::Env { t, source }))?;
        let thought = reply.thought.filter(|s| !s.is_empty());
        memory.push_step(ContextEntry {
            t,
            frame_id: t as u64,
            features: Some(features),
            thought: thought.clone(),
            action: action.clone(),
        });
        let mut step = Step::new(t, t as u64, t as u64 * ROLLOUT_STEP_US, action);
        step.thought = thought;
        steps.push(step);
        states.push(env.describe());
    }
    if steps.is_empty() {
        return Err(fail(&steps, env, HarnessError::EmptyEpisode));
    }
    let mut traj = finish(Trajectory::new(instruction, spec, steps), false);
    traj.meta.game = "rollout".into();
    debug_assert!(validate_trajectory(&traj).ok);
    let status = match env.status() {
        Status::Running => Status::Failure,
        s => s,
    };
    Ok(Episode {
        metrics: EpisodeMetrics {
            success: status == Status::Success,
            status,
            steps: traj.steps.len(),
            max_prompt_tokens: max_tokens,
        },
        trajectory: traj,
        states,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub steps: usize,
    pub accuracy: f64,
    /// Accuracy on steps whose action differs from the previous one.
    pub n_acc: Option<f64>,
    pub repeat_fraction: f64,
    pub acc_repeats: Option<f64>,
    pub change_points: usize,
}

/// Per-step tallies; the step before the first is taken to be `no_op`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub steps: usize,
    pub correct: usize,
    pub repeats: usize,
    pub correct_repeats: usize,
    pub correct_changes: usize,
}

impl EvalCounts {
    pub fn add(&mut self, previous: &Action, truth: &Action, predicted: &Action) {
        let repeat = truth == previous;
        let hit = predicted == truth;
        self.steps += 1;
        self.correct += hit as usize;
        self.repeats += repeat as usize;
        self.correct_repeats += (hit && repeat) as usize;
        self.correct_changes += (hit && !repeat) as usize;
    }

    pub fn report(&self) -> EvalReport {
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let changes = self.steps - self.repeats;
        EvalReport {
            steps: self.steps,
            accuracy: ratio(self.correct, self.steps).unwrap_or(0.0),
            n_acc: ratio(self.correct_changes, changes),
            repeat_fraction: ratio(self.repeats, self.steps).unwrap_or(0.0),
            acc_repeats: ratio(self.correct_repeats, self.repeats),
            change_points: changes,
        }
    }
}

/// Predict every step from its thought-free history and score against the
/// recorded actions.
pub fn eval_offline(policy: &mut dyn Policy, dataset: &[Trajectory]) -> Result<EvalReport, HarnessError> {
    if dataset.iter().all(|t| t.steps.is_empty()) {
        return Err(HarnessError::EmptyDataset);
    }
    let mut counts = EvalCounts::default();
    for traj in dataset {
        let mut previous = Action::no_op();
        for (t, step) in traj.steps.iter().enumerate() {
            let req = PolicyRequest::from_history(traj, t, PolicyMode::Act, None);
            let reply = query(policy, &req).map_err(|source| HarnessError::Policy { t, source })?;
            counts.add(&previous, &step.action, &reply.action.unwrap_or_default());
            previous = step.action.clone();
        }
    }
    Ok(counts.report())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
}

/// Success rate and mean episode length over finished rollouts.
pub fn rollout_report(metrics: &[EpisodeMetrics]) -> RolloutReport {
    let n = metrics.len().max(1) as f64;
    RolloutReport {
        episodes: metrics.len(),
        success_rate: metrics.iter().filter(|m| m.success).count() as f64 / n,
        mean_steps: metrics.iter().map(|m| m.steps as f64).sum::<f64>() / n,
    }
}
