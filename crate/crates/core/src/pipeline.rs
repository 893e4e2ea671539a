//! The full chain from raw capture bundles to training files, driven by a
//! single root seed.

use crate::action_space::{EqualityMode, KeyId};
use crate::alignment::{estimate_bundle_lag, AlignError, AlignParams, LagEstimate};
use crate::augment::{
    default_pool, default_reserved, derive_seed, mask_trajectory_descriptions, remap_keys, scale_mouse,
    AugmentError, ScaleParams, DEFAULT_CAP, DEFAULT_K_RANGE,
};
use crate::builder::{build_trajectory, BuildError, BuildOptions, DEFAULT_HORIZON_US};
use crate::capture::CaptureBundle;
use crate::idm::{make_idm_samples, samples_to_jsonl, IdmError, IdmSample};
use crate::policy::{PolicyError, PolicySpec, DEFAULT_TIMEOUT};
use crate::sparse_thinking::{
    candidates_from_thoughts, consolidate_thoughts, control_density, locate_reasoning_steps, rft_filter,
    SparseError,
};
use crate::trajectory::{ActionSpaceSpec, Trajectory};
use crate::weighting::{apply_weights, decay_weights, WeightError, DEFAULT_GAMMA};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub horizon_us: u64,
    pub synthesize_boundary: bool,
    pub action_space: String,
}

impl Default for BuildSection {
    fn default() -> Self {
        Self {
            horizon_us: DEFAULT_HORIZON_US,
            synthesize_boundary: true,
            action_space: "minecraft".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub delta_max_us: u64,
    pub grid_step_us: u64,
    pub assume_zero_lag: bool,
}

impl Default for AlignSection {
    fn default() -> Self {
        let p = AlignParams::default();
        Self {
            delta_max_us: p.delta_max_us,
            grid_step_us: p.grid_step_us,
            assume_zero_lag: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSection {
    pub gamma: f64,
    pub t_mask: usize,
    pub equality: EqualityMode,
}

impl Default for WeightSection {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            t_mask: 0,
            equality: EqualityMode::Exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub remap: bool,
    /// Key names; empty means the default pool.
    pub pool: Vec<String>,
    pub scale: bool,
    pub k_min: f64,
    pub k_max: f64,
    pub cap: u32,
    pub segment_len: Option<usize>,
    pub p_mask: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            remap: true,
            pool: Vec::new(),
            scale: true,
            k_min: DEFAULT_K_RANGE.0,
            k_max: DEFAULT_K_RANGE.1,
            cap: DEFAULT_CAP,
            segment_len: None,
            p_mask: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsifySection {
    pub policy: String,
    /// Filter the trajectory's own thoughts on the reasoning set.
    pub rft: bool,
    pub consolidate: bool,
    pub target_density: Option<f64>,
}

impl Default for SparsifySection {
    fn default() -> Self {
        Self {
            policy: "builtin:copy-last".into(),
            rft: false,
            consolidate: true,
            target_density: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub root_seed: u64,
    pub align: AlignSection,
    pub build: BuildSection,
    pub weight: WeightSection,
    pub augment: AugmentSection,
    pub sparsify: SparsifySection,
    pub idm_history_len: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bundle {index}: alignment: {source}")]
    Align {
        index: usize,
        #[source]
        source: AlignError,
    },
    #[error("bundle {index}: build: {source}")]
    Build {
        index: usize,
        #[source]
        source: BuildError,
    },
    #[error("bundle {index}: weight: {source}")]
    Weight {
        index: usize,
        #[source]
        source: WeightError,
    },
    #[error("bundle {index}: augment: {source}")]
    Augment {
        index: usize,
        #[source]
        source: AugmentError,
    },
    #[error("bundle {index}: policy: {source}")]
    Policy {
        index: usize,
        #[source]
        source: PolicyError,
    },
    #[error("bundle {index}: sparsify: {source}")]
    Sparse {
        index: usize,
        #[source]
        source: SparseError,
    },
    #[error("bundle {index}: idm: {source}")]
    Idm {
        index: usize,
        #[source]
        source: IdmError,
    },
}

struct Validated {
    spec: ActionSpaceSpec,
    pool: BTreeSet<KeyId>,
    policy: PolicySpec,
    scale: ScaleParams,
}

impl PipelineConfig {
    fn validated(&self) -> Result<Validated, PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let Some(spec) = ActionSpaceSpec::preset(&self.build.action_space) else {
            return bad(format!("unknown action space preset `{}`", self.build.action_space));
        };
        if !(self.weight.gamma > 0.0 && self.weight.gamma < 1.0) {
            return bad(WeightError::GammaOutOfRange(self.weight.gamma).to_string());
        }
        if self.align.grid_step_us == 0 {
            return bad(AlignError::InvalidGrid.to_string());
        }
        let a = &self.augment;
        if !(a.k_min > 0.0 && a.k_min <= a.k_max && a.k_max.is_finite()) {
            return bad(AugmentError::InvalidRange(a.k_min, a.k_max).to_string());
        }
        if a.cap == 0 {
            return bad(AugmentError::InvalidCap.to_string());
        }
        if a.segment_len == Some(0) {
            return bad(AugmentError::InvalidSegment.to_string());
        }
        if !(0.0..=1.0).contains(&a.p_mask) {
            return bad(AugmentError::InvalidProbability(a.p_mask).to_string());
        }
        let pool = if a.pool.is_empty() {
            default_pool()
        } else {
            let mut pool = BTreeSet::new();
            for name in &a.pool {
                match KeyId::parse(name) {
                    Some(k) => pool.insert(k),
                    None => return bad(format!("unknown key `{name}` in remap pool")),
                };
            }
            pool
        };
        if let Some(k) = pool.iter().find(|k| default_reserved().contains(k)) {
            return bad(AugmentError::ReservedKey(*k).to_string());
        }
        if let Some(d) = self.sparsify.target_density {
            if !(d > 0.0 && d <= 1.0) {
                return bad(SparseError::InvalidTarget(d).to_string());
            }
        }
        let policy: PolicySpec = match self.sparsify.policy.parse() {
            Ok(p) => p,
            Err(e) => return bad(PolicyError::to_string(&e)),
        };
        Ok(Validated {
            spec,
            pool,
            policy,
            scale: ScaleParams {
                k_min: a.k_min,
                k_max: a.k_max,
                cap: a.cap,
                segment_len: a.segment_len,
            },
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.validated().map(|_| ())
    }
}

/// Sub-seeds of one trajectory's seed, one per randomized stage.
pub mod stage_seed {
    pub const REMAP: u64 = 1;
    pub const SCALE: u64 = 2;
    pub const MASK: u64 = 3;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub index: usize,
    pub seed: u64,
    pub lag: Option<LagEstimate>,
    pub steps: usize,
    pub reasoning_steps: usize,
    pub rft_accepted: Option<usize>,
    pub thoughts: usize,
    pub idm_samples: usize,
}

#[derive(Clone, Debug, Default)]
pub struct PipelineOutput {
    pub trajectories: Vec<Trajectory>,
    pub idm: Vec<IdmSample>,
    pub reports: Vec<BundleReport>,
}

impl PipelineOutput {
    /// File name → contents. Names are stable so runs can be diffed.
    pub fn files(&self, config: &PipelineConfig) -> BTreeMap<String, String> {
        let mut files = BTreeMap::new();
        for (i, t) in self.trajectories.iter().enumerate() {
            files.insert(format!("traj_{i:04}.jsonl"), t.to_jsonl());
        }
        files.insert("idm.jsonl".into(), samples_to_jsonl(&self.idm));
        let report = serde_json::json!({"config": config, "bundles": self.reports});
        files.insert(
            "report.json".into(),
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        );
        files
    }
}

pub fn run_pipeline(bundles: &[CaptureBundle], config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let v = config.validated()?;
    let mut out = PipelineOutput::default();
    for (index, bundle) in bundles.iter().enumerate() {
        let seed = derive_seed(config.root_seed, index as u64);
        let (traj, report) = run_one(index, seed, bundle, config, &v)?;
        let samples = make_idm_samples(&traj, config.idm_history_len)
            .map_err(|source| PipelineError::Idm { index, source })?;
        out.reports.push(BundleReport {
            idm_samples: samples.len(),
            ..report
        });
        out.idm.extend(samples);
        out.trajectories.push(traj);
    }
    Ok(out)
}

fn run_one(
    index: usize,
    seed: u64,
    bundle: &CaptureBundle,
    config: &PipelineConfig,
    v: &Validated,
) -> Result<(Trajectory, BundleReport), PipelineError> {
    let lag = if config.align.assume_zero_lag {
        LagEstimate::zero()
    } else {
        let params = AlignParams {
            delta_max_us: config.align.delta_max_us,
            grid_step_us: config.align.grid_step_us,
        };
        estimate_bundle_lag(bundle, params).map_err(|source| PipelineError::Align { index, source })?
    };
    log::info!("bundle {index}: lag {} us, gain {:.3}", lag.delta_us, lag.gain);

    let options = BuildOptions {
        horizon_us: config.build.horizon_us,
        synthesize_boundary: config.build.synthesize_boundary,
        action_space: v.spec.clone(),
    };
    let mut traj = build_trajectory(bundle, &lag, &options).map_err(|source| PipelineError::Build { index, source })?;

    let w = &config.weight;
    let weights =
        decay_weights(&traj, w.gamma, w.t_mask, w.equality).map_err(|source| PipelineError::Weight { index, source })?;
    apply_weights(&mut traj, &weights, w.equality);

    let aug = |source| PipelineError::Augment { index, source };
    let a = &config.augment;
    if a.remap {
        traj = remap_keys(&traj, &v.pool, &default_reserved(), derive_seed(seed, stage_seed::REMAP))
            .map_err(aug)?
            .0;
    }
    if a.scale {
        traj = scale_mouse(&traj, v.scale, derive_seed(seed, stage_seed::SCALE))
            .map_err(aug)?
            .0;
    }
    if a.p_mask > 0.0 {
        traj = mask_trajectory_descriptions(&traj, a.p_mask, derive_seed(seed, stage_seed::MASK)).map_err(aug)?;
    }

    let mut policy = v
        .policy
        .build(std::slice::from_ref(&traj), DEFAULT_TIMEOUT)
        .map_err(|source| PipelineError::Policy { index, source })?;
    let sparse = |source| PipelineError::Sparse { index, source };
    let set = locate_reasoning_steps(&traj, policy.as_mut()).map_err(sparse)?;
    let mut rft_accepted = None;
    let s = &config.sparsify;
    if s.rft {
        let candidates = candidates_from_thoughts(&traj, &set);
        let (filtered, report) = rft_filter(&traj, &candidates, &set, policy.as_mut()).map_err(sparse)?;
        rft_accepted = Some(report.accepted.len());
        traj = filtered;
    }
    if s.consolidate {
        traj = consolidate_thoughts(&traj);
    }
    if let Some(target) = s.target_density {
        traj = control_density(&traj, &set, target).map_err(sparse)?.0;
    }

    let report = BundleReport {
        index,
        seed,
        lag: Some(lag),
        steps: traj.steps.len(),
        reasoning_steps: set.s_r.len(),
        rft_accepted,
        thoughts: traj.thought_count(),
        idm_samples: 0,
    };
    Ok((traj, report))
}
