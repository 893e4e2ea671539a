//! Sparse thinking: find the steps an action-only policy gets wrong, keep
//! candidate thoughts only when they make the policy right, merge repeated
//! thoughts and thin reasoning down to a target density.

use crate::action_space::EqualityMode;
use crate::policy::{query, Policy, PolicyError, PolicyMode, PolicyRequest};
use crate::trajectory::Trajectory;
use crate::weighting::run_lengths;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningSet {
    pub s_r: BTreeSet<usize>,
    pub policy_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SparseError {
    #[error("policy failed at step {t}: {source}")]
    Policy {
        t: usize,
        #[source]
        source: PolicyError,
    },
    #[error("candidate for step {0} which is not in the reasoning set")]
    CandidateOutsideSet(usize),
    #[error("candidate for step {0} beyond the trajectory end")]
    CandidateOutOfRange(usize),
    #[error("target density must lie in (0,1], got {0}")]
    InvalidTarget(f64),
}

fn at(t: usize) -> impl FnOnce(PolicyError) -> SparseError {
    move |source| SparseError::Policy { t, source }
}

/// `t` is in the set iff the policy, given only the thought-free history and
/// the current observation, predicts something other than `a_t`.
pub fn locate_reasoning_steps(traj: &Trajectory, policy: &mut dyn Policy) -> Result<ReasoningSet, SparseError> {
    let mut s_r = BTreeSet::new();
    for (t, step) in traj.steps.iter().enumerate() {
        let req = PolicyRequest::from_history(traj, t, PolicyMode::Act, None);
        let reply = query(policy, &req).map_err(at(t))?;
        if reply.action.as_ref() != Some(&step.action) {
            s_r.insert(t);
        }
    }
    Ok(ReasoningSet {
        s_r,
        policy_id: policy.name(),
    })
}

/// Existing thoughts at steps of the reasoning set.
pub fn candidates_from_thoughts(traj: &Trajectory, set: &ReasoningSet) -> BTreeMap<usize, String> {
    set.s_r
        .iter()
        .filter_map(|&t| Some((t, traj.steps.get(t)?.thought.clone()?)))
        .collect()
}

/// Ask a backend to write a candidate for each step of the reasoning set.
pub fn generate_candidates(
    traj: &Trajectory,
    set: &ReasoningSet,
    policy: &mut dyn Policy,
) -> Result<BTreeMap<usize, String>, SparseError> {
    let mut out = BTreeMap::new();
    for &t in set.s_r.iter().filter(|&&t| t < traj.steps.len()) {
        let req = PolicyRequest::from_history(traj, t, PolicyMode::GenerateThought, None);
        let reply = query(policy, &req).map_err(at(t))?;
        out.insert(t, reply.thought.unwrap_or_default());
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RftReport {
    pub candidates: usize,
    pub accepted: BTreeMap<usize, String>,
    pub rejected: Vec<usize>,
    pub acceptance_rate: Option<f64>,
}

/// Rejection filter. Accepted thoughts are written into their steps; rejected
/// steps lose any thought they had, except the first and last steps.
pub fn rft_filter(
    traj: &Trajectory,
    candidates: &BTreeMap<usize, String>,
    set: &ReasoningSet,
    policy: &mut dyn Policy,
) -> Result<(Trajectory, RftReport), SparseError> {
    for &t in candidates.keys() {
        if t >= traj.steps.len() {
            return Err(SparseError::CandidateOutOfRange(t));
        }
        if !set.s_r.contains(&t) {
            return Err(SparseError::CandidateOutsideSet(t));
        }
    }
    let mut out = traj.clone();
    let mut report = RftReport {
        candidates: candidates.len(),
        ..RftReport::default()
    };
    for (&t, thought) in candidates {
        let req = PolicyRequest::from_history(traj, t, PolicyMode::ActWithThought, Some(thought.clone()));
        let reply = query(policy, &req).map_err(at(t))?;
        if reply.action.as_ref() == Some(&traj.steps[t].action) {
            out.steps[t].thought = Some(thought.clone());
            report.accepted.insert(t, thought.clone());
        } else {
            if !traj.is_boundary(t) {
                out.steps[t].thought = None;
            }
            report.rejected.push(t);
        }
    }
    report.acceptance_rate =
        (report.candidates > 0).then(|| report.accepted.len() as f64 / report.candidates as f64);
    out.meta.record(
        "rft",
        serde_json::json!({
            "policy": set.policy_id,
            "candidates": report.candidates,
            "accepted": report.accepted.len(),
        }),
    );
    Ok((out, report))
}

/// Within each maximal run of steps sharing both action and thought text,
/// only the first keeps the thought. The last step always keeps its own.
pub fn consolidate_thoughts(traj: &Trajectory) -> Trajectory {
    let mut out = traj.clone();
    let last = traj.last_index();
    let mut removed = 0usize;
    for t in 1..traj.steps.len() {
        let (prev, cur) = (&traj.steps[t - 1], &traj.steps[t]);
        if t != last && cur.thought.is_some() && cur.thought == prev.thought && cur.action == prev.action {
            out.steps[t].thought = None;
            removed += 1;
        }
    }
    out.meta.record("consolidate", serde_json::json!({"removed": removed}));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub steps: usize,
    pub thoughts_before: usize,
    pub thoughts_after: usize,
    pub target: f64,
    pub achieved: f64,
    /// Smallest density reachable (boundary thoughts only).
    pub floor: f64,
    pub unreachable: bool,
    pub dropped: Vec<usize>,
}

fn density(thoughts: usize, steps: usize) -> f64 {
    if steps == 0 {
        0.0
    } else {
        thoughts as f64 / steps as f64
    }
}

/// Drop thoughts until at most `floor(target * n)` remain. Order: steps
/// outside the reasoning set first, then deeper run positions, then later
/// indices. The first and last steps are never touched.
pub fn control_density(
    traj: &Trajectory,
    set: &ReasoningSet,
    target: f64,
) -> Result<(Trajectory, DensityReport), SparseError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(SparseError::InvalidTarget(target));
    }
    let n = traj.steps.len();
    let depth = run_lengths(traj, EqualityMode::Exact);
    let with_thought: Vec<usize> = (0..n).filter(|&t| traj.steps[t].thought.is_some()).collect();
    let pinned = with_thought.iter().filter(|&&t| traj.is_boundary(t)).count();
    let mut droppable: Vec<usize> = with_thought.iter().copied().filter(|&t| !traj.is_boundary(t)).collect();
    droppable.sort_by_key(|&t| (set.s_r.contains(&t), std::cmp::Reverse(depth[t]), std::cmp::Reverse(t)));

    let max_allowed = (target * n as f64 + 1e-9).floor() as usize;
    let excess = with_thought.len().saturating_sub(max_allowed);
    let mut dropped: Vec<usize> = droppable.into_iter().take(excess).collect();
    let mut out = traj.clone();
    for &t in &dropped {
        out.steps[t].thought = None;
    }
    dropped.sort_unstable();
    let after = with_thought.len() - dropped.len();
    let report = DensityReport {
        steps: n,
        thoughts_before: with_thought.len(),
        thoughts_after: after,
        target,
        achieved: density(after, n),
        floor: density(pinned, n),
        unreachable: after > max_allowed,
        dropped,
    };
    if report.unreachable {
        log::warn!(
            "target density {target} unreachable; keeping {after} boundary thoughts (density {:.4})",
            report.achieved
        );
    }
    out.meta.record(
        "density",
        serde_json::json!({"target": target, "achieved": report.achieved, "dropped": report.dropped.len()}),
    );
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::Action;
    use crate::policy::{AlwaysAction, CopyLast, MagicString, ScriptedTable, ground_truth_table};
    use crate::trajectory::{trajectory_from_actions, ActionSpaceSpec};
    use proptest::prelude::*;

    fn traj(actions: &[&str]) -> Trajectory {
        trajectory_from_actions(ActionSpaceSpec::minecraft(), actions)
    }

    fn set(items: &[usize]) -> ReasoningSet {
        ReasoningSet {
            s_r: items.iter().copied().collect(),
            policy_id: "test".into(),
        }
    }

    const W: &str = "keyPress(w)";
    const S: &str = "keyPress(s)";

    #[test]
    fn locate_copy_last_change_points() {
        let t = traj(&[W, W, S, S, W]);
        let r = locate_reasoning_steps(&t, &mut CopyLast).unwrap();
        assert_eq!(r.s_r, [0, 2, 4].into());
        assert_eq!(r.policy_id, "copy-last");
    }

    #[test]
    fn locate_perfect_and_always_wrong() {
        let t = traj(&[W, S, "mouseClick(left)"]);
        let mut perfect = ScriptedTable::from_trajectories(std::slice::from_ref(&t));
        assert!(locate_reasoning_steps(&t, &mut perfect).unwrap().s_r.is_empty());
        let mut noop = AlwaysAction(Action::no_op());
        assert_eq!(locate_reasoning_steps(&t, &mut noop).unwrap().s_r, [0, 1, 2].into());
    }

    #[test]
    fn locate_reports_failing_step() {
        let t = traj(&[W, S]);
        let mut empty = ScriptedTable::default();
        assert!(matches!(
            locate_reasoning_steps(&t, &mut empty),
            Err(SparseError::Policy { t: 0, .. })
        ));
    }

    fn eight() -> Trajectory {
        traj(&[W, W, W, S, S, W, W, W])
    }

    #[test]
    fn rft_magic_string() {
        let t = eight();
        let mut p = MagicString {
            table: ground_truth_table(std::slice::from_ref(&t)),
            token: "GO".into(),
        };
        let cands: BTreeMap<usize, String> = [(5, "GO left".to_string()), (7, "hmm".to_string())].into();
        let (out, report) = rft_filter(&t, &cands, &set(&[3, 5, 7]), &mut p).unwrap();
        assert_eq!(report.accepted.keys().copied().collect::<Vec<_>>(), [5]);
        assert_eq!(report.rejected, [7]);
        assert_eq!(report.acceptance_rate, Some(0.5));
        assert_eq!(out.steps[5].thought.as_deref(), Some("GO left"));
        assert_eq!(out.steps[7].thought, None);
    }

    #[test]
    fn rft_edge_cases() {
        let t = eight();
        let mut perfect = ScriptedTable::from_trajectories(std::slice::from_ref(&t));
        let (_, r) = rft_filter(&t, &BTreeMap::new(), &set(&[1]), &mut perfect).unwrap();
        assert!(r.accepted.is_empty());
        assert_eq!(r.acceptance_rate, None);

        let cands: BTreeMap<usize, String> = [(1, "a".into()), (3, "b".into())].into();
        let (_, r) = rft_filter(&t, &cands, &set(&[1, 3]), &mut perfect).unwrap();
        assert_eq!(r.accepted.len(), 2);

        assert!(matches!(
            rft_filter(&t, &cands, &set(&[1]), &mut perfect),
            Err(SparseError::CandidateOutsideSet(3))
        ));
    }

    #[test]
    fn rft_keeps_rejected_boundary_thought() {
        let mut t = eight();
        t.steps[0].thought = Some("plan".into());
        let cands: BTreeMap<usize, String> = [(0, "nope".into())].into();
        let (out, r) = rft_filter(&t, &cands, &set(&[0]), &mut AlwaysAction(Action::no_op())).unwrap();
        assert_eq!(r.rejected, [0]);
        assert_eq!(out.steps[0].thought.as_deref(), Some("plan"));
    }

    fn with_thoughts(actions: &[&str], thoughts: &[Option<&str>]) -> Trajectory {
        let mut t = traj(actions);
        for (s, th) in t.steps.iter_mut().zip(thoughts) {
            s.thought = th.map(str::to_string);
        }
        t
    }

    fn thoughts(t: &Trajectory) -> Vec<Option<&str>> {
        t.steps.iter().map(|s| s.thought.as_deref()).collect()
    }

    #[test]
    fn consolidate_examples() {
        let t = with_thoughts(&[W, W, W, S], &[Some("push"), Some("push"), Some("push"), Some("end")]);
        assert_eq!(
            thoughts(&consolidate_thoughts(&t)),
            [Some("push"), None, None, Some("end")]
        );
        let t = with_thoughts(&[W, S], &[Some("push"), Some("push")]);
        assert_eq!(thoughts(&consolidate_thoughts(&t)), [Some("push"), Some("push")]);
        let t = with_thoughts(&[W, W], &[Some("push"), Some("turn")]);
        assert_eq!(thoughts(&consolidate_thoughts(&t)), [Some("push"), Some("turn")]);
        // the final step keeps its thought even inside a run
        let t = with_thoughts(&[W, W, W], &[Some("push"), Some("push"), Some("push")]);
        assert_eq!(thoughts(&consolidate_thoughts(&t)), [Some("push"), None, Some("push")]);
    }

    #[test]
    fn density_examples() {
        let t = with_thoughts(
            &[W, W, W, S, S, W, W, W],
            &[Some("a"), None, Some("b"), None, Some("c"), None, None, Some("d")],
        );
        let (out, r) = control_density(&t, &set(&[3, 5]), 0.25).unwrap();
        assert_eq!(r.thoughts_after, 2);
        assert_eq!(out.thought_count(), 2);
        assert_eq!(r.dropped, [2, 4]);
        assert!(!r.unreachable);
        assert_eq!(r.achieved, 0.25);

        let (out, r) = control_density(&t, &set(&[]), 1.0).unwrap();
        assert_eq!(out.steps, t.steps);
        assert!(r.dropped.is_empty());

        let mut b = traj(&[W; 10]);
        crate::builder::synthesize_boundary(&mut b);
        let (out, r) = control_density(&b, &set(&[]), 0.01).unwrap();
        assert_eq!(out.thought_count(), 2);
        assert!(r.unreachable);
        assert_eq!(r.floor, 0.2);
    }

    #[test]
    fn density_drop_order() {
        // 7 thoughts, run depths [1,2,3,4,1,2,3,1], s_r = {1, 4}
        let t = with_thoughts(
            &[W, W, W, W, S, S, S, W],
            &[Some("0"), Some("1"), Some("2"), Some("3"), Some("4"), Some("5"), None, Some("7")],
        );
        let (_, r) = control_density(&t, &set(&[1, 4]), 0.5).unwrap();
        assert_eq!(r.dropped, [2, 3, 5]);
        let (_, r) = control_density(&t, &set(&[1, 4]), 0.375).unwrap();
        assert_eq!(r.dropped, [1, 2, 3, 5]);
        let (_, r) = control_density(&t, &set(&[1, 4]), 0.25).unwrap();
        assert_eq!(r.dropped, [1, 2, 3, 4, 5]);
    }

    #[test]
    fn density_rejects_bad_target() {
        let t = eight();
        for bad in [0.0, -1.0, 1.5, f64::NAN] {
            assert!(matches!(
                control_density(&t, &set(&[]), bad),
                Err(SparseError::InvalidTarget(_))
            ));
        }
    }

    fn arb_traj() -> impl Strategy<Value = Trajectory> {
        let act = prop_oneof![Just(W), Just(S), Just("no_op")];
        let th = prop_oneof![Just(None), Just(Some("x")), Just(Some("y"))];
        proptest::collection::vec((act, th), 1..30).prop_map(|v| {
            let (a, t): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            with_thoughts(&a, &t)
        })
    }

    proptest! {
        #[test]
        fn copy_last_set_is_change_points(t in arb_traj()) {
            let r = locate_reasoning_steps(&t, &mut CopyLast).unwrap();
            // copy-last answers no_op before any history exists
            let expect: BTreeSet<usize> = (0..t.steps.len())
                .filter(|&i| {
                    let prev = if i == 0 { Action::no_op() } else { t.steps[i - 1].action.clone() };
                    t.steps[i].action != prev
                })
                .collect();
            prop_assert_eq!(r.s_r, expect);
        }

        #[test]
        fn thinning_preserves_actions(t in arb_traj(), target in 0.01f64..=1.0, mask in proptest::collection::btree_set(0usize..30, 0..10)) {
            let s = ReasoningSet { s_r: mask, policy_id: "p".into() };
            for out in [consolidate_thoughts(&t), control_density(&t, &s, target).unwrap().0] {
                prop_assert_eq!(out.steps.len(), t.steps.len());
                for (a, b) in out.steps.iter().zip(&t.steps) {
                    prop_assert_eq!(&a.action, &b.action);
                    prop_assert!(a.thought.is_none() || a.thought == b.thought);
                }
                prop_assert_eq!(out.steps[0].thought.as_ref(), t.steps[0].thought.as_ref());
                prop_assert_eq!(out.steps[t.last_index()].thought.as_ref(), t.steps[t.last_index()].thought.as_ref());
            }
            let (_, r) = control_density(&t, &s, target).unwrap();
            prop_assert!(r.achieved <= target + 1e-12 || (r.unreachable && r.achieved == r.floor));
        }

        #[test]
        fn rft_is_reproducible(t in arb_traj()) {
            let s = locate_reasoning_steps(&t, &mut CopyLast).unwrap();
            let cands = candidates_from_thoughts(&t, &s);
            let mut p = crate::policy::UniformRandom { seed: 3 };
            let a = rft_filter(&t, &cands, &s, &mut p).unwrap();
            let b = rft_filter(&t, &cands, &s, &mut p).unwrap();
            prop_assert_eq!(a.1, b.1);
            prop_assert_eq!(a.0.steps, b.0.steps);
        }
    }
}
