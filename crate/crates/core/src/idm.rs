//! Inverse-dynamics samples: predict `a_t` from the frames on either side of
//! it plus a short thought-free history.

use crate::action_space::Action;
use crate::trajectory::Trajectory;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub frame_id: u64,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "idm_sample")]
pub struct IdmSample {
    pub t: usize,
    pub action_space: String,
    pub history: Vec<HistoryItem>,
    pub obs_t: u64,
    pub obs_next: u64,
    pub target: Action,
}

#[derive(Debug, thiserror::Error)]
pub enum IdmError {
    #[error("need at least 2 steps for inverse-dynamics samples, found {0}")]
    TooShort(usize),
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// One sample per step that has a successor frame.
pub fn make_idm_samples(traj: &Trajectory, history_len: usize) -> Result<Vec<IdmSample>, IdmError> {
    let steps = &traj.steps;
    if steps.len() < 2 {
        return Err(IdmError::TooShort(steps.len()));
    }
    let rendered = traj.action_space.render();
    Ok(steps
        .windows(2)
        .enumerate()
        .map(|(t, pair)| IdmSample {
            t,
            action_space: rendered.clone(),
            history: steps[t.saturating_sub(history_len)..t]
                .iter()
                .map(|s| HistoryItem {
                    frame_id: s.frame_id,
                    action: s.action.clone(),
                })
                .collect(),
            obs_t: pair[0].frame_id,
            obs_next: pair[1].frame_id,
            target: pair[0].action.clone(),
        })
        .collect())
}

pub fn samples_to_jsonl(samples: &[IdmSample]) -> String {
    samples
        .iter()
        .map(|s| serde_json::to_string(s).expect("sample serializes") + "\n")
        .collect()
}

pub fn samples_from_jsonl(src: &str) -> Result<Vec<IdmSample>, IdmError> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| IdmError::Malformed { line: i + 1, source }))
        .collect()
}
