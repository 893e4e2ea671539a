//! Per-step loss weights that decay geometrically over runs of repeated
//! actions, an optional masked prefix, and the drop-all-no-ops baseline.

use crate::action_space::{actions_equal, EqualityMode};
use crate::builder::{check_boundary, BuildError};
use crate::trajectory::Trajectory;
use serde::{Deserialize, Serialize};

pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub gamma: f64,
    pub t_mask: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeightError {
    #[error("gamma outside (0,1): {0}")]
    GammaOutOfRange(f64),
    #[error("dropping no-ops left an empty trajectory")]
    EmptyResult,
    #[error("after dropping no-ops: {0}")]
    Boundary(#[from] BuildError),
}

/// `k[t]` = length of the run of equal actions ending at `t`.
pub fn run_lengths(traj: &Trajectory, mode: EqualityMode) -> Vec<u32> {
    let mut k: Vec<u32> = Vec::with_capacity(traj.steps.len());
    for (t, step) in traj.steps.iter().enumerate() {
        let run = if t > 0 && actions_equal(&step.action, &traj.steps[t - 1].action, mode) {
            k[t - 1] + 1
        } else {
            1
        };
        k.push(run);
    }
    k
}

/// `w[t] = gamma^(k[t]-1)` for `t >= t_mask`, zero before. Run lengths count
/// masked steps too.
pub fn decay_weights(
    traj: &Trajectory,
    gamma: f64,
    t_mask: usize,
    mode: EqualityMode,
) -> Result<WeightVector, WeightError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(WeightError::GammaOutOfRange(gamma));
    }
    let weights = run_lengths(traj, mode)
        .into_iter()
        .enumerate()
        .map(|(t, k)| if t < t_mask { 0.0 } else { gamma.powi(k as i32 - 1) })
        .collect();
    Ok(WeightVector {
        weights,
        gamma,
        t_mask,
    })
}

/// Write weights into the steps and record the stage.
pub fn apply_weights(traj: &mut Trajectory, w: &WeightVector, mode: EqualityMode) {
    for (step, weight) in traj.steps.iter_mut().zip(&w.weights) {
        step.weight = Some(*weight);
    }
    traj.meta.record(
        "weight",
        serde_json::json!({"gamma": w.gamma, "t_mask": w.t_mask, "mode": mode}),
    );
}

/// Remove every no-op step and renumber.
pub fn drop_noops(traj: &Trajectory) -> Result<Trajectory, WeightError> {
    let mut out = traj.clone();
    let before = out.steps.len();
    out.steps.retain(|s| !s.action.is_no_op());
    if out.steps.is_empty() {
        return Err(WeightError::EmptyResult);
    }
    out.renumber();
    out.meta.record(
        "drop_noops",
        serde_json::json!({"removed": before - out.steps.len()}),
    );
    check_boundary(&out)?;
    Ok(out)
}
