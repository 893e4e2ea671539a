//! Recording-lag estimation using the on-screen cursor as a visual anchor.
//!
//! Input events arrive late relative to the frames they belong to. For each
//! candidate lag on a fixed grid, mouse deltas are shifted back, summed per
//! frame interval, and compared with the cursor displacement observed between
//! the two bounding frames through a least-squares scalar gain. The candidate
//! with the smallest mean L1 residual wins; ties go to the smaller lag.

use crate::capture::{CaptureBundle, EventKind, FrameRecord, InputEvent};
use serde::{Deserialize, Serialize};

pub const DEFAULT_DELTA_MAX_US: u64 = 200_000;
pub const DEFAULT_GRID_STEP_US: u64 = 5_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagEstimate {
    /// Events lag frames by this many microseconds.
    pub delta_us: u64,
    pub gain: f64,
    /// Mean per-interval L1 residual in pixels.
    pub score: f64,
    pub intervals_used: usize,
}

impl LagEstimate {
    /// The estimate used when alignment is explicitly bypassed.
    pub fn zero() -> Self {
        Self {
            delta_us: 0,
            gain: 1.0,
            score: 0.0,
            intervals_used: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignParams {
    pub delta_max_us: u64,
    pub grid_step_us: u64,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            delta_max_us: DEFAULT_DELTA_MAX_US,
            grid_step_us: DEFAULT_GRID_STEP_US,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignError {
    #[error("alignment impossible: no usable anchored frame intervals (pass --assume-zero-lag to bypass)")]
    NoUsableIntervals,
    #[error("degenerate gain fit: no mouse motion inside usable intervals for any candidate lag")]
    DegenerateFit,
    #[error("grid step must be positive")]
    InvalidGrid,
}

/// Index of the frame interval `[t_j, t_{j+1})` containing `t`.
pub fn interval_of(frame_times: &[u64], t: i64) -> Option<usize> {
    if frame_times.len() < 2 || t < frame_times[0] as i64 {
        return None;
    }
    let j = frame_times.partition_point(|&ft| ft as i64 <= t) - 1;
    (j + 1 < frame_times.len()).then_some(j)
}

/// Intervals whose two endpoint frames both carry a cursor away from the screen
/// edge, with the observed displacement across each.
fn usable_intervals(frames: &[FrameRecord]) -> Vec<(usize, (f64, f64))> {
    frames
        .windows(2)
        .enumerate()
        .filter_map(|(j, w)| {
            let (a, b) = (&w[0], &w[1]);
            match (a.cursor, b.cursor) {
                (Some(ca), Some(cb)) if !a.cursor_on_edge() && !b.cursor_on_edge() => {
                    Some((j, ((cb.0 - ca.0) as f64, (cb.1 - ca.1) as f64)))
                }
                _ => None,
            }
        })
        .collect()
}

struct Candidate {
    delta_us: u64,
    gain: f64,
    score: f64,
}

fn score_candidate(
    moves: &[(u64, f64, f64)],
    frame_times: &[u64],
    usable: &[(usize, (f64, f64))],
    delta_us: u64,
) -> Option<Candidate> {
    let mut sums = vec![(0.0f64, 0.0f64); frame_times.len() - 1];
    for &(t, dx, dy) in moves {
        if let Some(j) = interval_of(frame_times, t as i64 - delta_us as i64) {
            sums[j].0 += dx;
            sums[j].1 += dy;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(j, (dx, dy)) in usable {
        let (sx, sy) = sums[j];
        num += sx * dx + sy * dy;
        den += sx * sx + sy * sy;
    }
    if den == 0.0 {
        return None;
    }
    let gain = num / den;
    if gain <= 0.0 || !gain.is_finite() {
        return None;
    }
    let total: f64 = usable
        .iter()
        .map(|&(j, (dx, dy))| {
            let (sx, sy) = sums[j];
            (gain * sx - dx).abs() + (gain * sy - dy).abs()
        })
        .sum();
    Some(Candidate {
        delta_us,
        gain,
        score: total / usable.len() as f64,
    })
}

pub fn estimate_lag(
    events: &[InputEvent],
    frames: &[FrameRecord],
    params: AlignParams,
) -> Result<LagEstimate, AlignError> {
    if params.grid_step_us == 0 {
        return Err(AlignError::InvalidGrid);
    }
    let usable = usable_intervals(frames);
    if usable.is_empty() {
        return Err(AlignError::NoUsableIntervals);
    }
    let frame_times: Vec<u64> = frames.iter().map(|f| f.t_us).collect();
    let moves: Vec<(u64, f64, f64)> = events
        .iter()
        .filter(|e| e.kind == EventKind::MouseMove)
        .map(|e| {
            (
                e.t_us,
                e.dx.unwrap_or(0) as f64,
                e.dy.unwrap_or(0) as f64,
            )
        })
        .collect();

    let mut best: Option<Candidate> = None;
    let mut delta = 0u64;
    while delta <= params.delta_max_us {
        if let Some(c) = score_candidate(&moves, &frame_times, &usable, delta) {
            if best.as_ref().is_none_or(|b| c.score < b.score) {
                best = Some(c);
            }
        }
        delta += params.grid_step_us;
    }
    let best = best.ok_or(AlignError::DegenerateFit)?;
    Ok(LagEstimate {
        delta_us: best.delta_us,
        gain: best.gain,
        score: best.score,
        intervals_used: usable.len(),
    })
}

pub fn estimate_bundle_lag(
    bundle: &CaptureBundle,
    params: AlignParams,
) -> Result<LagEstimate, AlignError> {
    estimate_lag(&bundle.events, &bundle.frames, params)
}

/// Shift every event back by `delta_us`, clamping at the session origin.
pub fn realign(events: &[InputEvent], delta_us: u64) -> Vec<InputEvent> {
    events
        .iter()
        .map(|e| InputEvent {
            t_us: e.t_us.saturating_sub(delta_us),
            ..e.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::key;
    use crate::synth::{synth_bundle, SynthConfig};
    use proptest::prelude::*;

    fn cfg(lag_us: u64, gain: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            frames: 120,
            mouse_events: 3_000,
            lag_us,
            gain,
            seed,
            ..SynthConfig::default()
        }
    }

    /// Independent brute-force scorer: re-buckets events by linear scan.
    #[allow(clippy::needless_range_loop)]
    fn oracle_score(b: &CaptureBundle, delta: u64) -> Option<(f64, f64)> {
        let n = b.frames.len() - 1;
        let mut s = vec![(0.0, 0.0); n];
        for e in b.events.iter().filter(|e| e.kind == EventKind::MouseMove) {
            let t = e.t_us as i64 - delta as i64;
            for j in 0..n {
                if t >= b.frames[j].t_us as i64 && t < b.frames[j + 1].t_us as i64 {
                    s[j].0 += e.dx.unwrap() as f64;
                    s[j].1 += e.dy.unwrap() as f64;
                }
            }
        }
        let mut pairs = Vec::new();
        for j in 0..n {
            let (a, c) = (&b.frames[j], &b.frames[j + 1]);
            if let (Some(p), Some(q)) = (a.cursor, c.cursor) {
                if !a.cursor_on_edge() && !c.cursor_on_edge() {
                    pairs.push((s[j], ((q.0 - p.0) as f64, (q.1 - p.1) as f64)));
                }
            }
        }
        let num: f64 = pairs.iter().map(|(s, d)| s.0 * d.0 + s.1 * d.1).sum();
        let den: f64 = pairs.iter().map(|(s, _)| s.0 * s.0 + s.1 * s.1).sum();
        let g = num / den;
        let score = pairs
            .iter()
            .map(|(s, d)| (g * s.0 - d.0).abs() + (g * s.1 - d.1).abs())
            .sum::<f64>()
            / pairs.len() as f64;
        Some((g, score))
    }

    #[test]
    fn recovers_injected_lag_unit_gain() {
        let sb = synth_bundle(&cfg(60_000, 1.0, 7));
        let est = estimate_bundle_lag(&sb.bundle, AlignParams::default()).unwrap();
        assert_eq!(est.delta_us, 60_000);
        assert!((est.gain - 1.0).abs() <= 0.05, "gain {}", est.gain);
        let (g, score) = oracle_score(&sb.bundle, est.delta_us).unwrap();
        assert!((g - est.gain).abs() < 1e-9);
        assert!((score - est.score).abs() < 1e-9);
        // exhaustive grid scoring agrees on the minimizer
        for d in (0..=200_000).step_by(5_000) {
            assert!(oracle_score(&sb.bundle, d).unwrap().1 >= est.score);
        }
    }

    #[test]
    fn zero_lag_fixed_point() {
        let sb = synth_bundle(&cfg(0, 1.0, 3));
        assert_eq!(estimate_bundle_lag(&sb.bundle, AlignParams::default()).unwrap().delta_us, 0);
    }

    #[test]
    fn recovers_high_gain() {
        let sb = synth_bundle(&cfg(30_000, 2.0, 11));
        let est = estimate_bundle_lag(&sb.bundle, AlignParams::default()).unwrap();
        assert_eq!(est.delta_us, 30_000);
        assert!((est.gain - 2.0).abs() <= 0.1, "gain {}", est.gain);
    }

    #[test]
    fn realigned_moves_land_in_their_causal_interval() {
        let sb = synth_bundle(&cfg(120_000, 0.5, 5));
        let est = estimate_bundle_lag(&sb.bundle, AlignParams::default()).unwrap();
        assert_eq!(est.delta_us, 120_000);
        let times: Vec<u64> = sb.bundle.frames.iter().map(|f| f.t_us).collect();
        let realigned = realign(&sb.bundle.events, est.delta_us);
        for (e, truth) in realigned.iter().zip(&sb.true_interval) {
            if e.kind == EventKind::MouseMove {
                assert_eq!(interval_of(&times, e.t_us as i64), *truth);
            }
        }
    }

    #[test]
    fn no_anchors_is_an_error() {
        let mut sb = synth_bundle(&cfg(0, 1.0, 1));
        for f in &mut sb.bundle.frames {
            f.cursor = None;
        }
        assert_eq!(
            estimate_bundle_lag(&sb.bundle, AlignParams::default()),
            Err(AlignError::NoUsableIntervals)
        );
    }

    #[test]
    fn edge_intervals_are_excluded() {
        let mut sb = synth_bundle(&cfg(0, 1.0, 1));
        let w = sb.bundle.frames[0].screen.0 as i64;
        for f in &mut sb.bundle.frames {
            f.cursor = Some((w - 1, 10));
        }
        assert_eq!(
            estimate_bundle_lag(&sb.bundle, AlignParams::default()),
            Err(AlignError::NoUsableIntervals)
        );
    }

    #[test]
    fn no_motion_is_degenerate() {
        let mut sb = synth_bundle(&cfg(0, 1.0, 1));
        sb.bundle.events.retain(|e| e.kind != EventKind::MouseMove);
        assert_eq!(
            estimate_bundle_lag(&sb.bundle, AlignParams::default()),
            Err(AlignError::DegenerateFit)
        );
    }

    #[test]
    fn realign_examples() {
        let events = vec![
            InputEvent::key_down(10_000, key("w")),
            InputEvent::mouse_move(100_000, 1, 1),
        ];
        assert_eq!(realign(&events, 0), events);
        let shifted = realign(&events, 60_000);
        assert_eq!(shifted[0].t_us, 0);
        assert_eq!(shifted[1].t_us, 40_000);
        assert_eq!(shifted[0].kind, EventKind::KeyDown);
    }

    proptest! {
        #[test]
        fn realign_is_monotone_and_idempotent(
            mut times in proptest::collection::vec(0u64..1_000_000, 0..50),
            delta in 0u64..300_000,
        ) {
            times.sort_unstable();
            let events: Vec<InputEvent> =
                times.iter().map(|&t| InputEvent::mouse_move(t, 1, 0)).collect();
            let once = realign(&events, delta);
            prop_assert!(once.windows(2).all(|w| w[0].t_us <= w[1].t_us));
            prop_assert_eq!(realign(&once, 0), once.clone());
            for (a, b) in events.iter().zip(&once) {
                if a.t_us >= delta {
                    prop_assert_eq!(a.t_us - b.t_us, delta);
                } else {
                    prop_assert_eq!(b.t_us, 0);
                }
            }
        }
    }
}
