//! `forge`: trajectory data tooling for keyboard/mouse game agents.
//!
//! Reports go to stdout as JSON, logs to stderr. Exit codes: 0 success,
//! 1 validation or stage failure, 2 usage error, 3 policy/protocol failure.

mod config;
mod io;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{load_config, Resolve};
use forge_core::action_space::{EqualityMode, KeyId};
use forge_core::alignment::{estimate_bundle_lag, AlignParams, LagEstimate};
use forge_core::augment::{
    default_reserved, mask_trajectory_descriptions, remap_keys, scale_mouse, ScaleParams,
};
use forge_core::builder::{build_trajectory, validate_trajectory, BuildOptions};
use forge_core::capture::{capture_report, CaptureBundle};
use forge_core::harness::{run_episode, rollout_report, CursorWorld, Env, KeyGridWorld};
use forge_core::idm::{make_idm_samples, samples_to_jsonl};
use forge_core::memory::{simulate, MemoryParams};
use forge_core::pipeline::{run_pipeline, PipelineConfig};
use forge_core::policy::{serve, Policy, PolicyError, PolicySpec};
use forge_core::sparse_thinking::{
    candidates_from_thoughts, consolidate_thoughts, control_density, generate_candidates,
    locate_reasoning_steps, rft_filter, ReasoningSet, SparseError,
};
use forge_core::synth::{synth_bundle, SynthConfig};
use forge_core::trajectory::{ActionSpaceSpec, Trajectory};
use forge_core::weighting::{apply_weights, decay_weights, drop_noops};
use io::{read_text, read_trajectory, write_atomic, write_trajectory};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "forge", version, about = "Trajectory data tooling for keyboard/mouse game agents")]
struct Cli {
    /// TOML file with pipeline parameters; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true, env = "FORGE_SEED")]
    seed: Option<u64>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic capture bundle with a known lag.
    Synth(SynthArgs),
    /// Summarize a capture bundle (event rates, anchors, thought density).
    Inspect {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Estimate the event-to-frame lag of a capture bundle.
    Align(AlignArgs),
    /// Build a trajectory from a capture bundle.
    Build(BuildArgs),
    /// Compute per-step loss weights.
    Weight(WeightArgs),
    /// Action-space augmentation.
    #[command(subcommand)]
    Augment(AugmentCmd),
    /// Locate, filter, consolidate and thin reasoning.
    #[command(subcommand)]
    Sparsify(SparsifyCmd),
    /// Memory simulation.
    #[command(subcommand)]
    Memory(MemoryCmd),
    /// Emit inverse-dynamics samples.
    Idm(IdmArgs),
    /// Run agent episodes in a toy environment.
    Rollout(RolloutArgs),
    /// Offline action-prediction metrics.
    Eval(EvalArgs),
    /// Check trajectory files against the format invariants.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// align → build → weight → augment → sparsify → idm over bundles.
    Pipeline(PipelineArgs),
    /// Serve a builtin policy over the wire protocol on stdin/stdout.
    ServePolicy {
        #[arg(long)]
        policy: String,
        /// Trajectory files backing `oracle`/`magic` policies.
        #[arg(long)]
        dataset: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long, default_value_t = 50_000)]
    frame_interval_us: u64,
    #[arg(long, default_value_t = 10_000)]
    mouse_events: usize,
    #[arg(long, default_value_t = 20)]
    key_holds: usize,
    #[arg(long, default_value_t = 5)]
    clicks: usize,
    #[arg(long, default_value_t = 6)]
    transcripts: usize,
    #[arg(long, default_value_t = 30_000)]
    lag_us: u64,
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    delta_max_us: Option<u64>,
    #[arg(long)]
    grid_step_us: Option<u64>,
    /// Also write the estimate to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Use this lag instead of estimating one.
    #[arg(long, conflicts_with = "assume_zero_lag")]
    lag_us: Option<u64>,
    #[arg(long)]
    assume_zero_lag: bool,
    #[arg(long)]
    horizon_us: Option<u64>,
    /// Action space preset (minecraft, arrows).
    #[arg(long)]
    action_space: Option<String>,
    /// Fail instead of inserting template thoughts at the first/last step.
    #[arg(long)]
    no_boundary_synthesis: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightMode {
    Decay,
    DropNoops,
}

#[derive(Args)]
struct WeightArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "decay")]
    mode: WeightMode,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long)]
    t_mask: Option<usize>,
    /// exact or fuzzy_mouse
    #[arg(long)]
    equality: Option<EqualityMode>,
}

#[derive(Subcommand)]
enum AugmentCmd {
    /// Permute keys inside a pool.
    Remap {
        #[command(flatten)]
        io: InOut,
        /// Comma-separated key names; default is letters and arrows minus e.
        #[arg(long, value_delimiter = ',')]
        pool: Vec<String>,
    },
    /// Scale mouse deltas by a random factor.
    Scale {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        k_min: Option<f64>,
        #[arg(long)]
        k_max: Option<f64>,
        #[arg(long)]
        cap: Option<u32>,
        #[arg(long)]
        segment_len: Option<usize>,
    },
    /// Randomly hide key descriptions.
    MaskDesc {
        #[command(flatten)]
        io: InOut,
        #[arg(long, allow_negative_numbers = true)]
        p_mask: Option<f64>,
    },
}

#[derive(Args)]
struct InOut {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PolicyArgs {
    /// builtin:copy-last | builtin:no-op | builtin:always:<action> |
    /// builtin:random:<seed> | builtin:oracle | builtin:magic:<token> |
    /// builtin:seeker | cmd:<command line>
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    policy_timeout_ms: u64,
}

#[derive(Subcommand)]
enum SparsifyCmd {
    /// Steps where the action-only policy is wrong.
    Locate {
        #[arg(long)]
        traj: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Write the reasoning set here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep candidate thoughts that make the policy reproduce the recorded action.
    Rft {
        #[command(flatten)]
        io: InOut,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Reasoning set from `locate`; computed with the policy when absent.
        #[arg(long)]
        set: Option<PathBuf>,
        /// JSON object step → candidate text; default is the trajectory's own thoughts.
        #[arg(long, conflicts_with = "generate")]
        candidates: Option<PathBuf>,
        /// Ask the policy to write candidates.
        #[arg(long)]
        generate: bool,
    },
    /// Merge repeated identical thoughts.
    Consolidate {
        #[command(flatten)]
        io: InOut,
    },
    /// Drop thoughts down to a target density.
    Densify {
        #[command(flatten)]
        io: InOut,
        #[arg(long, allow_negative_numbers = true)]
        target_density: Option<f64>,
        #[arg(long)]
        set: Option<PathBuf>,
        #[command(flatten)]
        policy: PolicyArgs,
    },
}

#[derive(Subcommand)]
enum MemoryCmd {
    /// Replay a trajectory through memory and record prompt sizes.
    Simulate {
        #[arg(long)]
        traj: PathBuf,
        #[command(flatten)]
        params: MemoryFlags,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct MemoryFlags {
    #[arg(long = "M", alias = "m")]
    m: Option<usize>,
    #[arg(long = "N", alias = "n")]
    n: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    image_cost: Option<usize>,
    #[arg(long)]
    text_cost_divisor: Option<usize>,
}

impl MemoryFlags {
    fn params(&self) -> MemoryParams {
        let d = MemoryParams::default();
        MemoryParams {
            m: self.m.unwrap_or(d.m),
            n: self.n.unwrap_or(d.n),
            budget: self.budget.unwrap_or(d.budget),
            image_cost: self.image_cost.unwrap_or(d.image_cost),
            text_cost_divisor: self.text_cost_divisor.unwrap_or(d.text_cost_divisor),
        }
    }
}

#[derive(Args)]
struct IdmArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvKind {
    Cursor,
    Keygrid,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long, value_enum)]
    env: EnvKind,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 200)]
    max_steps: usize,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Targets per cursor-world episode.
    #[arg(long, default_value_t = 3)]
    targets: usize,
    /// Remap the key-grid keymap with this seed.
    #[arg(long)]
    remap_seed: Option<u64>,
    #[command(flatten)]
    memory: MemoryFlags,
    /// Write each episode's trajectory here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, required = true, num_args = 1..)]
    dataset: Vec<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, required = true, num_args = 1..)]
    bundle: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn fail(message: impl ToString) -> Self {
        Self { code: 1, message: message.to_string() }
    }

    pub fn usage(message: impl ToString) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    pub fn policy(message: impl ToString) -> Self {
        Self { code: 3, message: message.to_string() }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::BadSpec(_) => CliError::usage(e),
            _ => CliError::policy(e),
        }
    }
}

impl From<SparseError> for CliError {
    fn from(e: SparseError) -> Self {
        match e {
            SparseError::Policy { .. } => CliError::policy(e),
            SparseError::InvalidTarget(_) => CliError::usage(e),
            _ => CliError::fail(e),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn emit(report: &impl Serialize) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    // a closed reader (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load_bundle(dir: &Path) -> Result<CaptureBundle> {
    CaptureBundle::load_dir(dir).map_err(|e| CliError::fail(format!("{}: {e}", dir.display())))
}

fn load_set(path: &Path) -> Result<ReasoningSet> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::fail(format!("{}: {e}", path.display())))
}

fn make_policy(args: &PolicyArgs, fallback: &str, ground_truth: &[Trajectory]) -> Result<Box<dyn Policy>> {
    let text = args.policy.as_deref().unwrap_or(fallback);
    let spec: PolicySpec = text.parse()?;
    Ok(spec.build(ground_truth, Duration::from_millis(args.policy_timeout_ms))?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.root_seed);
    log::info!("root seed {seed}");
    match cli.command {
        Command::Synth(a) => cmd_synth(a, seed),
        Command::Inspect { bundle } => {
            emit(&capture_report(&load_bundle(&bundle)?));
            Ok(())
        }
        Command::Align(a) => cmd_align(a, &cfg),
        Command::Build(a) => cmd_build(a, &cfg),
        Command::Weight(a) => cmd_weight(a, &cfg),
        Command::Augment(a) => cmd_augment(a, &cfg, seed),
        Command::Sparsify(a) => cmd_sparsify(a, &cfg),
        Command::Memory(MemoryCmd::Simulate { traj, params, out_dir }) => cmd_memory(&traj, params.params(), &out_dir),
        Command::Idm(a) => {
            let traj = read_trajectory(&a.traj)?;
            let h = a.history_len.resolve(cfg.idm_history_len);
            let samples = make_idm_samples(&traj, h).map_err(CliError::fail)?;
            write_atomic(&a.out, samples_to_jsonl(&samples).as_bytes())?;
            emit(&serde_json::json!({"samples": samples.len(), "history_len": h}));
            Ok(())
        }
        Command::Rollout(a) => cmd_rollout(a, seed),
        Command::Eval(a) => cmd_eval(a),
        Command::Validate { files } => cmd_validate(&files),
        Command::Pipeline(a) => cmd_pipeline(a, cfg, seed),
        Command::ServePolicy { policy, dataset } => {
            let data = dataset.iter().map(|p| read_trajectory(p)).collect::<Result<Vec<_>>>()?;
            let mut p = make_policy(
                &PolicyArgs { policy: Some(policy), policy_timeout_ms: 10_000 },
                "",
                &data,
            )?;
            let stdin = std::io::stdin().lock();
            serve(p.as_mut(), stdin, std::io::stdout().lock()).map_err(CliError::fail)
        }
    }
}

fn cmd_synth(a: SynthArgs, seed: u64) -> Result<()> {
    if !(a.gain > 0.0 && a.gain.is_finite()) {
        return Err(CliError::usage(format!("gain must be positive, got {}", a.gain)));
    }
    let cfg = SynthConfig {
        frames: a.frames,
        frame_interval_us: a.frame_interval_us,
        mouse_events: a.mouse_events,
        key_holds: a.key_holds,
        clicks: a.clicks,
        transcripts: a.transcripts,
        lag_us: a.lag_us,
        gain: a.gain,
        seed,
        ..SynthConfig::default()
    };
    let bundle = synth_bundle(&cfg).bundle;
    io::save_bundle(&bundle, &a.out)?;
    emit(&serde_json::json!({
        "out": a.out, "seed": seed, "events": bundle.events.len(),
        "frames": bundle.frames.len(), "lag_us": a.lag_us, "gain": a.gain,
    }));
    Ok(())
}

fn align_params(delta_max: Option<u64>, step: Option<u64>, cfg: &PipelineConfig) -> Result<AlignParams> {
    let p = AlignParams {
        delta_max_us: delta_max.resolve(cfg.align.delta_max_us),
        grid_step_us: step.resolve(cfg.align.grid_step_us),
    };
    if p.grid_step_us == 0 {
        return Err(CliError::usage("grid step must be positive"));
    }
    Ok(p)
}

fn cmd_align(a: AlignArgs, cfg: &PipelineConfig) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let params = align_params(a.delta_max_us, a.grid_step_us, cfg)?;
    let est = estimate_bundle_lag(&bundle, params).map_err(CliError::fail)?;
    if let Some(out) = &a.out {
        write_atomic(out, (serde_json::to_string_pretty(&est).expect("serializes") + "\n").as_bytes())?;
    }
    emit(&est);
    Ok(())
}

fn preset(name: &str) -> Result<ActionSpaceSpec> {
    ActionSpaceSpec::preset(name).ok_or_else(|| CliError::usage(format!("unknown action space preset `{name}`")))
}

fn cmd_build(a: BuildArgs, cfg: &PipelineConfig) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let lag = if a.assume_zero_lag || cfg.align.assume_zero_lag {
        LagEstimate::zero()
    } else if let Some(d) = a.lag_us {
        LagEstimate { delta_us: d, ..LagEstimate::zero() }
    } else {
        let params = align_params(None, None, cfg)?;
        estimate_bundle_lag(&bundle, params).map_err(CliError::fail)?
    };
    let options = BuildOptions {
        horizon_us: a.horizon_us.resolve(cfg.build.horizon_us),
        synthesize_boundary: !a.no_boundary_synthesis && cfg.build.synthesize_boundary,
        action_space: preset(&a.action_space.resolve(cfg.build.action_space.clone()))?,
    };
    let traj = build_trajectory(&bundle, &lag, &options).map_err(CliError::fail)?;
    write_trajectory(&a.out, &traj)?;
    let report = validate_trajectory(&traj);
    emit(&serde_json::json!({
        "steps": traj.steps.len(), "thoughts": traj.thought_count(),
        "lag": lag, "synthetic_boundary": traj.meta.synthetic_boundary, "validation": report,
    }));
    Ok(())
}

fn cmd_weight(a: WeightArgs, cfg: &PipelineConfig) -> Result<()> {
    let gamma = a.gamma.resolve(cfg.weight.gamma);
    let t_mask = a.t_mask.resolve(cfg.weight.t_mask);
    let mode = a.equality.resolve(cfg.weight.equality);
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(CliError::usage(format!("gamma outside (0,1): {gamma}")));
    }
    let traj = read_trajectory(&a.traj)?;
    match a.mode {
        WeightMode::Decay => {
            let w = decay_weights(&traj, gamma, t_mask, mode).map_err(CliError::usage)?;
            let mut out = traj;
            apply_weights(&mut out, &w, mode);
            write_trajectory(&a.out, &out)?;
            let total: f64 = w.weights.iter().sum();
            emit(&serde_json::json!({
                "steps": w.weights.len(), "gamma": gamma, "t_mask": t_mask,
                "mode": mode, "total_weight": total,
            }));
        }
        WeightMode::DropNoops => {
            let out = drop_noops(&traj).map_err(CliError::fail)?;
            write_trajectory(&a.out, &out)?;
            emit(&serde_json::json!({
                "steps_before": traj.steps.len(), "steps_after": out.steps.len(),
            }));
        }
    }
    Ok(())
}

fn parse_pool(names: &[String]) -> Result<BTreeSet<KeyId>> {
    names
        .iter()
        .map(|n| KeyId::parse(n.trim()).ok_or_else(|| CliError::usage(format!("unknown key `{n}`"))))
        .collect()
}

fn cmd_augment(cmd: AugmentCmd, cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let a = &cfg.augment;
    match cmd {
        AugmentCmd::Remap { io, pool } => {
            let names = if pool.is_empty() { a.pool.clone() } else { pool };
            let pool = if names.is_empty() { forge_core::augment::default_pool() } else { parse_pool(&names)? };
            let traj = read_trajectory(&io.traj)?;
            let (out, remap) = remap_keys(&traj, &pool, &default_reserved(), seed).map_err(CliError::usage)?;
            write_trajectory(&io.out, &out)?;
            let mapping: BTreeMap<String, String> = remap
                .mapping
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            emit(&serde_json::json!({"seed": seed, "mapping": mapping}));
        }
        AugmentCmd::Scale { io, k_min, k_max, cap, segment_len } => {
            let params = ScaleParams {
                k_min: k_min.resolve(a.k_min),
                k_max: k_max.resolve(a.k_max),
                cap: cap.resolve(a.cap),
                segment_len: segment_len.or(a.segment_len),
            };
            let traj = read_trajectory(&io.traj)?;
            let (out, factors) = scale_mouse(&traj, params, seed).map_err(CliError::usage)?;
            write_trajectory(&io.out, &out)?;
            let max = out
                .steps
                .iter()
                .filter_map(|s| s.action.mouse_delta())
                .map(|(dx, dy)| dx.unsigned_abs().max(dy.unsigned_abs()))
                .max()
                .unwrap_or(0);
            emit(&serde_json::json!({"seed": seed, "factors": factors, "max_abs_delta": max}));
        }
        AugmentCmd::MaskDesc { io, p_mask } => {
            let p = p_mask.resolve(a.p_mask);
            let traj = read_trajectory(&io.traj)?;
            let out = mask_trajectory_descriptions(&traj, p, seed).map_err(CliError::usage)?;
            write_trajectory(&io.out, &out)?;
            emit(&serde_json::json!({"seed": seed, "p_mask": p, "masked": out.action_space.descriptions_masked}));
        }
    }
    Ok(())
}

fn cmd_sparsify(cmd: SparsifyCmd, cfg: &PipelineConfig) -> Result<()> {
    let default_policy = cfg.sparsify.policy.clone();
    let obtain_set = |traj: &Trajectory, set: &Option<PathBuf>, policy: &PolicyArgs| -> Result<ReasoningSet> {
        match set {
            Some(p) => load_set(p),
            None => {
                let mut p = make_policy(policy, &default_policy, std::slice::from_ref(traj))?;
                Ok(locate_reasoning_steps(traj, p.as_mut())?)
            }
        }
    };
    match cmd {
        SparsifyCmd::Locate { traj, policy, out } => {
            let traj = read_trajectory(&traj)?;
            let set = obtain_set(&traj, &None, &policy)?;
            if let Some(out) = out {
                write_atomic(&out, (serde_json::to_string(&set).expect("serializes") + "\n").as_bytes())?;
            }
            emit(&serde_json::json!({
                "steps": traj.steps.len(), "reasoning_steps": set.s_r.len(),
                "fraction": set.s_r.len() as f64 / traj.steps.len().max(1) as f64,
                "policy": set.policy_id, "s_r": set.s_r,
            }));
        }
        SparsifyCmd::Rft { io, policy, set, candidates, generate } => {
            let traj = read_trajectory(&io.traj)?;
            let set = obtain_set(&traj, &set, &policy)?;
            let mut p = make_policy(&policy, &default_policy, std::slice::from_ref(&traj))?;
            let cands: BTreeMap<usize, String> = if let Some(path) = candidates {
                serde_json::from_str(&read_text(&path)?)
                    .map_err(|e| CliError::fail(format!("{}: {e}", path.display())))?
            } else if generate {
                generate_candidates(&traj, &set, p.as_mut())?
            } else {
                candidates_from_thoughts(&traj, &set)
            };
            let (out, report) = rft_filter(&traj, &cands, &set, p.as_mut())?;
            write_trajectory(&io.out, &out)?;
            emit(&serde_json::json!({
                "candidates": report.candidates, "accepted": report.accepted.len(),
                "rejected": report.rejected.len(), "acceptance_rate": report.acceptance_rate,
                "accepted_steps": report.accepted.keys().collect::<Vec<_>>(),
                "density": out.thought_count() as f64 / out.steps.len().max(1) as f64,
            }));
        }
        SparsifyCmd::Consolidate { io } => {
            let traj = read_trajectory(&io.traj)?;
            let out = consolidate_thoughts(&traj);
            write_trajectory(&io.out, &out)?;
            emit(&serde_json::json!({
                "thoughts_before": traj.thought_count(), "thoughts_after": out.thought_count(),
                "density": out.thought_count() as f64 / out.steps.len().max(1) as f64,
            }));
        }
        SparsifyCmd::Densify { io, target_density, set, policy } => {
            let target = target_density
                .or(cfg.sparsify.target_density)
                .ok_or_else(|| CliError::usage("--target-density is required"))?;
            if !(target > 0.0 && target <= 1.0) {
                return Err(SparseError::InvalidTarget(target).into());
            }
            let traj = read_trajectory(&io.traj)?;
            let set = obtain_set(&traj, &set, &policy)?;
            let (out, report) = control_density(&traj, &set, target)?;
            write_trajectory(&io.out, &out)?;
            emit(&report);
        }
    }
    Ok(())
}

fn cmd_memory(traj: &Path, params: MemoryParams, out_dir: &Path) -> Result<()> {
    params.validate().map_err(CliError::usage)?;
    let traj = read_trajectory(traj)?;
    let trace = simulate(&traj, params).map_err(|(t, e)| CliError::fail(format!("step {t}: {e}")))?;
    let series = serde_json::json!({
        "params": params, "token_counts": trace.token_counts,
        "context_len": trace.context_len, "summary_len": trace.summary_len,
    });
    write_atomic(
        &out_dir.join("token_counts.json"),
        (serde_json::to_string(&series).expect("serializes") + "\n").as_bytes(),
    )?;
    write_atomic(&out_dir.join("final_prompt.txt"), trace.final_render.text.as_bytes())?;
    emit(&serde_json::json!({
        "steps": trace.token_counts.len(),
        "max_tokens": trace.token_counts.iter().max(),
        "final_tokens": trace.final_render.token_count,
        "budget": params.budget,
    }));
    Ok(())
}

fn cmd_rollout(a: RolloutArgs, seed: u64) -> Result<()> {
    let params = a.memory.params();
    params.validate().map_err(CliError::usage)?;
    let mut metrics = Vec::new();
    let mut episodes = Vec::new();
    for i in 0..a.episodes {
        let ep_seed = forge_core::augment::derive_seed(seed, i as u64);
        let mut env: Box<dyn Env> = match a.env {
            EnvKind::Cursor => Box::new(CursorWorld::random(ep_seed, a.targets)),
            EnvKind::Keygrid => {
                let w = KeyGridWorld::random(ep_seed);
                match a.remap_seed {
                    Some(s) => {
                        let remap = forge_core::augment::KeyRemap::draw(&forge_core::augment::default_pool(), s);
                        Box::new(w.remapped(&remap))
                    }
                    None => Box::new(w),
                }
            }
        };
        let mut policy = make_policy(&a.policy, "builtin:seeker", &[])?;
        let ep = match run_episode(env.as_mut(), policy.as_mut(), params, a.max_steps) {
            Ok(ep) => ep,
            Err(failure) => {
                if let (Some(dir), Some(partial)) = (&a.out_dir, &failure.partial) {
                    write_trajectory(&dir.join(format!("episode_{i:03}.partial.jsonl")), partial)?;
                }
                return Err(match failure.error {
                    forge_core::harness::HarnessError::Policy { .. } => CliError::policy(failure),
                    _ => CliError::fail(failure),
                });
            }
        };
        if let Some(dir) = &a.out_dir {
            write_trajectory(&dir.join(format!("episode_{i:03}.jsonl")), &ep.trajectory)?;
        }
        episodes.push(serde_json::json!({"seed": ep_seed, "metrics": ep.metrics}));
        metrics.push(ep.metrics);
    }
    emit(&serde_json::json!({"summary": rollout_report(&metrics), "episodes": episodes}));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let data = a.dataset.iter().map(|p| read_trajectory(p)).collect::<Result<Vec<_>>>()?;
    let mut policy = make_policy(&a.policy, "builtin:copy-last", &data)?;
    let report = forge_core::harness::eval_offline(policy.as_mut(), &data).map_err(|e| match e {
        forge_core::harness::HarnessError::Policy { .. } => CliError::policy(e),
        _ => CliError::fail(e),
    })?;
    emit(&report);
    Ok(())
}

fn cmd_validate(files: &[PathBuf]) -> Result<()> {
    let mut reports = BTreeMap::new();
    let mut ok = true;
    for f in files {
        let report = match read_trajectory(f) {
            Ok(t) => validate_trajectory(&t),
            Err(e) => forge_core::builder::ValidationReport::from_violations(vec![e.message]),
        };
        ok &= report.ok;
        reports.insert(f.display().to_string(), report);
    }
    emit(&reports);
    if ok {
        Ok(())
    } else {
        Err(CliError::fail("validation failed"))
    }
}

fn cmd_pipeline(a: PipelineArgs, mut cfg: PipelineConfig, seed: u64) -> Result<()> {
    cfg.root_seed = seed;
    cfg.validate().map_err(CliError::usage)?;
    let bundles = a.bundle.iter().map(|b| load_bundle(b)).collect::<Result<Vec<_>>>()?;
    let out = run_pipeline(&bundles, &cfg).map_err(|e| match e {
        forge_core::pipeline::PipelineError::Policy { .. } => CliError::policy(e),
        forge_core::pipeline::PipelineError::Sparse { source: SparseError::Policy { .. }, .. } => CliError::policy(e),
        _ => CliError::fail(e),
    })?;
    let files = out.files(&cfg);
    for (name, contents) in &files {
        write_atomic(&a.out_dir.join(name), contents.as_bytes())?;
    }
    emit(&serde_json::json!({
        "root_seed": seed, "files": files.keys().collect::<Vec<_>>(), "bundles": out.reports,
    }));
    Ok(())
}
