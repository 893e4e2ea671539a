//! Seeded action-space augmentation: key-binding bijections that carry their
//! semantics along, mouse-sensitivity scaling under a hard cap, and masking of
//! action descriptions.
//!
//! Every augmentation is a pure function of its input and a 64-bit seed. When
//! a batch is processed, trajectory `i` uses `derive_seed(root, i)`, so
//! parallel and serial runs agree.

use crate::action_space::{Action, KeyId};
use crate::trajectory::{ActionSpaceSpec, Trajectory};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const DEFAULT_CAP: u32 = 180;
pub const DEFAULT_K_RANGE: (f64, f64) = (0.25, 4.0);

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-item seed: `splitmix64(root XOR ordinal)`.
pub fn derive_seed(root: u64, ordinal: u64) -> u64 {
    splitmix64(root ^ ordinal)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("remap pool contains reserved key {0}")]
    ReservedKey(KeyId),
    #[error("invalid scaling range [{0}, {1}]: need 0 < k_min <= k_max")]
    InvalidRange(f64, f64),
    #[error("cap must be positive")]
    InvalidCap,
    #[error("p_mask {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("segment length must be positive")]
    InvalidSegment,
}

/// Letters and arrows, minus keys with structural GUI meaning.
pub fn default_pool() -> BTreeSet<KeyId> {
    let reserved = default_reserved();
    KeyId::all()
        .filter(|k| (k.is_letter() || k.is_arrow()) && !reserved.contains(k))
        .collect()
}

pub fn default_reserved() -> BTreeSet<KeyId> {
    KeyId::all()
        .filter(|k| k.is_digit() || matches!(k.name(), "e" | "escape"))
        .collect()
}

/// A bijection over a key pool; keys outside the pool are fixed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRemap {
    pub mapping: BTreeMap<KeyId, KeyId>,
    pub seed: u64,
}

impl KeyRemap {
    /// Uniformly random permutation of `pool`.
    pub fn draw(pool: &BTreeSet<KeyId>, seed: u64) -> Self {
        let from: Vec<KeyId> = pool.iter().copied().collect();
        let mut to = from.clone();
        to.shuffle(&mut rng(seed));
        Self {
            mapping: from.into_iter().zip(to).collect(),
            seed,
        }
    }

    pub fn apply(&self, k: KeyId) -> KeyId {
        self.mapping.get(&k).copied().unwrap_or(k)
    }

    pub fn inverse(&self) -> Self {
        Self {
            mapping: self.mapping.iter().map(|(a, b)| (*b, *a)).collect(),
            seed: self.seed,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().all(|(a, b)| a == b)
    }

    pub fn remap_action(&self, a: &Action) -> Action {
        a.map_keys(|k| self.apply(k))
    }

    pub fn remap_spec(&self, spec: &ActionSpaceSpec) -> ActionSpaceSpec {
        ActionSpaceSpec {
            key_semantics: spec
                .key_semantics
                .iter()
                .map(|(k, d)| (self.apply(*k), d.clone()))
                .collect(),
            ..spec.clone()
        }
    }
}

/// Apply a remap to every action and to the action-space description.
pub fn apply_remap(traj: &Trajectory, remap: &KeyRemap) -> Trajectory {
    let mut out = traj.clone();
    for s in &mut out.steps {
        s.action = remap.remap_action(&s.action);
    }
    out.action_space = remap.remap_spec(&traj.action_space);
    let pairs: Vec<(String, String)> = remap
        .mapping
        .iter()
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    out.meta.record(
        "remap_keys",
        serde_json::json!({"seed": remap.seed, "mapping": pairs}),
    );
    out
}

pub fn remap_keys(
    traj: &Trajectory,
    pool: &BTreeSet<KeyId>,
    reserved: &BTreeSet<KeyId>,
    seed: u64,
) -> Result<(Trajectory, KeyRemap), AugmentError> {
    if let Some(k) = pool.iter().find(|k| reserved.contains(k)) {
        return Err(AugmentError::ReservedKey(*k));
    }
    let remap = KeyRemap::draw(pool, seed);
    Ok((apply_remap(traj, &remap), remap))
}

/// Scale one delta, rounding half away from zero, then clamp to `[-cap, cap]`.
pub fn scale_delta(d: i32, k: f64, cap: u32) -> i32 {
    let cap = cap as f64;
    (k * d as f64).round().clamp(-cap, cap) as i32
}

/// Log-uniform draw from `[k_min, k_max]`.
pub fn draw_scale(rng: &mut impl Rng, k_min: f64, k_max: f64) -> f64 {
    if k_min == k_max {
        k_min
    } else {
        rng.gen_range(k_min.ln()..k_max.ln()).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleParams {
    pub k_min: f64,
    pub k_max: f64,
    pub cap: u32,
    /// Draw a new factor every `segment_len` steps; `None` means once per trajectory.
    pub segment_len: Option<usize>,
}

impl Default for ScaleParams {
    fn default() -> Self {
        Self {
            k_min: DEFAULT_K_RANGE.0,
            k_max: DEFAULT_K_RANGE.1,
            cap: DEFAULT_CAP,
            segment_len: None,
        }
    }
}

/// Multiply every mouse delta by a random factor. The clamp is
/// `min(cap, mouse_limit)` so the result stays inside the action space.
pub fn scale_mouse(
    traj: &Trajectory,
    params: ScaleParams,
    seed: u64,
) -> Result<(Trajectory, Vec<f64>), AugmentError> {
    let ScaleParams { k_min, k_max, cap, segment_len } = params;
    if !(k_min > 0.0 && k_min <= k_max && k_max.is_finite()) {
        return Err(AugmentError::InvalidRange(k_min, k_max));
    }
    if cap == 0 {
        return Err(AugmentError::InvalidCap);
    }
    if segment_len == Some(0) {
        return Err(AugmentError::InvalidSegment);
    }
    let clamp = cap.min(traj.action_space.mouse_limit);
    let seg = segment_len.unwrap_or(usize::MAX);
    let mut rng = rng(seed);
    let mut factors = Vec::new();
    let mut out = traj.clone();
    for (i, s) in out.steps.iter_mut().enumerate() {
        if i % seg == 0 {
            factors.push(draw_scale(&mut rng, k_min, k_max));
        }
        let k = *factors.last().expect("drawn at segment start");
        if let Some((dx, dy)) = s.action.mouse_delta() {
            s.action = s
                .action
                .with_mouse_delta(Some((scale_delta(dx, k, clamp), scale_delta(dy, k, clamp))));
        }
    }
    out.meta.record(
        "scale_mouse",
        serde_json::json!({
            "seed": seed, "k": factors, "k_min": k_min, "k_max": k_max,
            "cap": cap, "segment_len": segment_len,
        }),
    );
    Ok((out, factors))
}

/// With probability `p_mask`, blank every key description and flag the spec.
pub fn mask_action_descriptions(
    spec: &ActionSpaceSpec,
    p_mask: f64,
    seed: u64,
) -> Result<(ActionSpaceSpec, bool), AugmentError> {
    if !(0.0..=1.0).contains(&p_mask) {
        return Err(AugmentError::InvalidProbability(p_mask));
    }
    let masked = rng(seed).gen::<f64>() < p_mask;
    if !masked {
        return Ok((spec.clone(), false));
    }
    let mut out = spec.clone();
    out.descriptions_masked = true;
    for d in out.key_semantics.values_mut() {
        d.clear();
    }
    Ok((out, true))
}

pub fn mask_trajectory_descriptions(
    traj: &Trajectory,
    p_mask: f64,
    seed: u64,
) -> Result<Trajectory, AugmentError> {
    let (spec, masked) = mask_action_descriptions(&traj.action_space, p_mask, seed)?;
    let mut out = traj.clone();
    out.action_space = spec;
    out.meta.record(
        "mask_descriptions",
        serde_json::json!({"seed": seed, "p_mask": p_mask, "masked": masked}),
    );
    Ok(out)
}
