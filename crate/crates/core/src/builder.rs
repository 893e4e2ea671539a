//! Sparse-ReAct trajectory construction from aligned capture bundles.
//!
//! One step per frame interval `[t_j, t_{j+1})`. All device events inside a
//! window merge into a single action; held keys repeat every window until
//! released; empty windows become `no_op`. Transcript segments are then
//! relocated onto the next action they most plausibly explain.

use crate::action_space::{Action, Atom, KeyId};
use crate::alignment::{realign, LagEstimate};
use crate::capture::{CaptureBundle, EventKind, InputEvent, TranscriptSegment};
use crate::trajectory::{ActionSpaceSpec, Step, Trajectory, TrajectoryMeta};
use serde::Serialize;
use std::collections::BTreeSet;

pub const DEFAULT_HORIZON_US: u64 = 3_000_000;
pub const PLAN_PREFIX: &str = "plan: ";
pub const END_SUMMARY: &str = "summary: episode ended";

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutcome {
    pub action: Action,
    pub held: BTreeSet<KeyId>,
    pub warnings: Vec<String>,
}

/// Merge the events of one window into a single action.
pub fn merge_window(events: &[InputEvent], held: &BTreeSet<KeyId>) -> MergeOutcome {
    let mut state = held.clone();
    let mut pressed = BTreeSet::new();
    let mut released = BTreeSet::new();
    let mut clicks = BTreeSet::new();
    let (mut sx, mut sy) = (0i64, 0i64);
    let mut warnings = Vec::new();

    for e in events {
        match e.kind {
            EventKind::KeyDown => {
                if let Some(k) = e.key {
                    pressed.insert(k);
                    state.insert(k);
                }
            }
            EventKind::KeyUp => {
                if let Some(k) = e.key {
                    if state.remove(&k) {
                        released.insert(k);
                    } else {
                        warnings.push(format!("key_up without key_down for {k} at {} us", e.t_us));
                    }
                }
            }
            EventKind::MouseMove => {
                sx += e.dx.unwrap_or(0) as i64;
                sy += e.dy.unwrap_or(0) as i64;
            }
            EventKind::MouseDown => {
                if let Some(b) = e.button {
                    clicks.insert(b);
                }
            }
            EventKind::MouseUp => {}
        }
    }

    let keys: BTreeSet<KeyId> = held
        .iter()
        .filter(|k| !released.contains(*k))
        .chain(pressed.iter())
        .copied()
        .collect();

    let mut atoms = Vec::new();
    if !keys.is_empty() {
        atoms.push(Atom::KeyPress(keys));
    }
    if sx != 0 || sy != 0 {
        let clamp = |v: i64| v.clamp(i32::MIN as i64, i32::MAX as i64) as i32;
        atoms.push(Atom::MouseMove {
            dx: clamp(sx),
            dy: clamp(sy),
        });
    }
    atoms.extend(clicks.into_iter().map(Atom::MouseClick));
    let action = Action::compound(atoms).expect("one atom per kind by construction");
    MergeOutcome {
        action,
        held: state,
        warnings,
    }
}

/// Attach each transcript segment (by its midpoint) to the first non-no_op step
/// starting at or after the midpoint within `horizon_us`, else to the step
/// whose window contains the midpoint.
pub fn relocate_thoughts(steps: &mut [Step], transcripts: &[TranscriptSegment], horizon_us: u64) {
    if steps.is_empty() {
        return;
    }
    let mut attached: Vec<Vec<(u64, usize, &str)>> = vec![Vec::new(); steps.len()];
    for (order, seg) in transcripts.iter().enumerate() {
        let mid = seg.midpoint_us();
        let containing = steps.partition_point(|s| s.t_us <= mid).saturating_sub(1);
        let first_after = steps.partition_point(|s| s.t_us < mid);
        let target = steps[first_after..]
            .iter()
            .take_while(|s| s.t_us <= mid.saturating_add(horizon_us))
            .position(|s| !s.action.is_no_op())
            .map(|p| first_after + p)
            .unwrap_or(containing);
        attached[target].push((mid, order, seg.text.trim()));
    }
    for (step, mut texts) in steps.iter_mut().zip(attached) {
        if texts.is_empty() {
            continue;
        }
        texts.sort();
        let mut parts: Vec<&str> = step.thought.as_deref().into_iter().collect();
        parts.extend(texts.iter().map(|(_, _, t)| *t));
        step.thought = Some(parts.join(" "));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    pub horizon_us: u64,
    pub synthesize_boundary: bool,
    pub action_space: ActionSpaceSpec,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            horizon_us: DEFAULT_HORIZON_US,
            synthesize_boundary: false,
            action_space: ActionSpaceSpec::minecraft(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BuildError {
    #[error("need at least 2 frames to build a trajectory, found {0}")]
    TooFewFrames(usize),
    #[error("boundary thought missing at step {0} (enable boundary synthesis to fill it)")]
    MissingBoundaryThought(usize),
}

/// Fill missing thoughts at the first and last steps with fixed templates.
/// Returns whether anything was inserted.
pub fn synthesize_boundary(traj: &mut Trajectory) -> bool {
    let mut changed = false;
    let last = traj.last_index();
    if let Some(first) = traj.steps.first_mut() {
        if first.thought.is_none() {
            first.thought = Some(format!("{PLAN_PREFIX}{}", traj.instruction));
            changed = true;
        }
    }
    if let Some(end) = traj.steps.get_mut(last) {
        if end.thought.is_none() {
            end.thought = Some(END_SUMMARY.to_string());
            changed = true;
        }
    }
    if changed {
        traj.meta.synthetic_boundary = true;
    }
    changed
}

pub fn check_boundary(traj: &Trajectory) -> Result<(), BuildError> {
    for t in [0, traj.last_index()] {
        if traj.steps.get(t).is_some_and(|s| s.thought.is_none()) {
            return Err(BuildError::MissingBoundaryThought(t));
        }
    }
    Ok(())
}

pub fn build_trajectory(
    bundle: &CaptureBundle,
    lag: &LagEstimate,
    options: &BuildOptions,
) -> Result<Trajectory, BuildError> {
    let frames = &bundle.frames;
    if frames.len() < 2 {
        return Err(BuildError::TooFewFrames(frames.len()));
    }
    let mut events = realign(&bundle.events, lag.delta_us);
    events.sort_by_key(|e| e.t_us);

    let mut held = BTreeSet::new();
    let mut cursor = events.partition_point(|e| e.t_us < frames[0].t_us);
    // Key state entering the first window.
    let prefix = merge_window(&events[..cursor], &held);
    held = prefix.held;
    let mut warnings = prefix.warnings;

    let mut steps = Vec::with_capacity(frames.len() - 1);
    for (t, w) in frames.windows(2).enumerate() {
        let end = cursor + events[cursor..].partition_point(|e| e.t_us < w[1].t_us);
        let merged = merge_window(&events[cursor..end], &held);
        held = merged.held;
        warnings.extend(merged.warnings);
        steps.push(Step::new(t, w[0].frame_id, w[0].t_us, merged.action));
        cursor = end;
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    relocate_thoughts(&mut steps, &bundle.transcripts, options.horizon_us);

    let mut meta = TrajectoryMeta {
        game: bundle.meta.game.clone(),
        lag: Some(lag.clone()),
        ..TrajectoryMeta::default()
    };
    meta.record(
        "build",
        serde_json::json!({
            "horizon_us": options.horizon_us,
            "synthesize_boundary": options.synthesize_boundary,
            "delta_us": lag.delta_us,
            "merge_warnings": warnings.len(),
        }),
    );
    let mut traj = Trajectory {
        instruction: bundle.meta.instruction.clone(),
        action_space: options.action_space.clone(),
        steps,
        meta,
    };
    if options.synthesize_boundary {
        synthesize_boundary(&mut traj);
    }
    check_boundary(&traj)?;
    Ok(traj)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<String>) -> Self {
        Self {
            ok: violations.is_empty(),
            violations,
        }
    }
}

pub fn validate_trajectory(traj: &Trajectory) -> ValidationReport {
    let mut v = Vec::new();
    if traj.steps.is_empty() {
        v.push("trajectory has no steps".to_string());
    }
    if traj.action_space.mouse_limit == 0 {
        v.push("mouse_limit must be positive".to_string());
    }
    let last = traj.last_index();
    for (i, s) in traj.steps.iter().enumerate() {
        if s.t != i {
            v.push(format!("step {i} has index {}", s.t));
        }
        if i > 0 && s.t_us <= traj.steps[i - 1].t_us {
            v.push(format!("step {i}: t_us not increasing"));
        }
        match &s.thought {
            Some(th) if th.trim().is_empty() => v.push(format!("step {i}: empty thought")),
            None if i == 0 || i == last => v.push(format!("step {i}: missing boundary thought")),
            _ => {}
        }
        if let Some(w) = s.weight {
            if !(0.0..=1.0).contains(&w) {
                v.push(format!("step {i}: weight {w} outside [0, 1]"));
            }
        }
        for reason in traj.action_space.violations(&s.action) {
            v.push(format!("step {i}: {reason}"));
        }
    }
    ValidationReport::from_violations(v)
}
