//! Seeded synthetic capture bundles with a known injected recording lag and
//! cursor gain. Used for alignment recovery checks and end-to-end demos.

use crate::action_space::{key, Button, KeyId};
use crate::capture::{CaptureBundle, CaptureMeta, FrameRecord, InputEvent, TranscriptSegment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub frames: usize,
    pub frame_interval_us: u64,
    pub mouse_events: usize,
    /// Number of sequential key holds.
    pub key_holds: usize,
    pub clicks: usize,
    pub transcripts: usize,
    pub keys: Vec<KeyId>,
    pub lag_us: u64,
    pub gain: f64,
    pub screen: (u32, u32),
    pub seed: u64,
    pub instruction: String,
    pub game: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 300,
            frame_interval_us: 50_000,
            mouse_events: 10_000,
            key_holds: 0,
            clicks: 0,
            transcripts: 0,
            keys: ["w", "a", "s", "d", "space"].iter().map(|k| key(k)).collect(),
            lag_us: 0,
            gain: 1.0,
            screen: (1920, 1080),
            seed: 0,
            instruction: "collect wood".to_string(),
            game: "synthetic".to_string(),
        }
    }
}

pub struct SynthBundle {
    pub bundle: CaptureBundle,
    /// For each event (bundle order), the frame interval its true time falls in.
    pub true_interval: Vec<Option<usize>>,
}

const PHRASES: &[&str] = &[
    "head toward the tree line",
    "the path is blocked, go around",
    "grab the item on the left",
    "wait for the gap",
    "turn and check behind",
    "keep moving forward",
];

pub fn synth_bundle(cfg: &SynthConfig) -> SynthBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let duration = cfg.frames.saturating_sub(1) as u64 * cfg.frame_interval_us;
    let frame_times: Vec<u64> = (0..cfg.frames as u64).map(|i| i * cfg.frame_interval_us).collect();
    let (w, h) = (cfg.screen.0 as f64, cfg.screen.1 as f64);
    let center = (w / 2.0, h / 2.0);

    // (true time, event) pairs
    let mut events: Vec<(u64, InputEvent)> = Vec::new();

    let mut move_times: Vec<u64> = (0..cfg.mouse_events)
        .map(|_| rng.gen_range(0..duration.max(1)))
        .collect();
    move_times.sort_unstable();
    let mut pos = center;
    let mut moves = Vec::with_capacity(move_times.len());
    for t in move_times {
        let bias_x = (center.0 - pos.0) / (cfg.gain * 100.0);
        let bias_y = (center.1 - pos.1) / (cfg.gain * 100.0);
        let dx = (rng.gen_range(-12.0..12.0) + bias_x).round() as i32;
        let dy = (rng.gen_range(-12.0..12.0) + bias_y).round() as i32;
        pos.0 += cfg.gain * dx as f64;
        pos.1 += cfg.gain * dy as f64;
        moves.push((t, pos));
        events.push((t, InputEvent::mouse_move(0, dx, dy)));
    }

    // cursor at each frame = position after all moves strictly before it
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut mi = 0;
    let mut current = center;
    for (i, &ft) in frame_times.iter().enumerate() {
        while mi < moves.len() && moves[mi].0 < ft {
            current = moves[mi].1;
            mi += 1;
        }
        let x = current.0.round().clamp(0.0, w - 1.0) as i64;
        let y = current.1.round().clamp(0.0, h - 1.0) as i64;
        frames.push(FrameRecord {
            frame_id: i as u64,
            t_us: ft,
            cursor: Some((x, y)),
            screen: cfg.screen,
        });
    }

    if cfg.key_holds > 0 && !cfg.keys.is_empty() {
        let slot = duration / cfg.key_holds as u64;
        for i in 0..cfg.key_holds as u64 {
            let k = cfg.keys[rng.gen_range(0..cfg.keys.len())];
            let start = i * slot + rng.gen_range(0..slot / 2 + 1);
            let end = (start + rng.gen_range(slot / 8 + 1..slot / 2 + 2)).min((i + 1) * slot);
            events.push((start, InputEvent::key_down(0, k)));
            events.push((end, InputEvent::key_up(0, k)));
        }
    }

    for _ in 0..cfg.clicks {
        let t = rng.gen_range(0..duration.max(1));
        let b = if rng.gen_bool(0.8) { Button::Left } else { Button::Right };
        events.push((t, InputEvent::mouse_down(0, b)));
        events.push((t + 30_000, InputEvent::mouse_up(0, b)));
    }

    for (t, e) in &mut events {
        e.t_us = *t + cfg.lag_us;
    }
    events.sort_by_key(|(_, e)| e.t_us);
    let true_interval = events
        .iter()
        .map(|(t, _)| crate::alignment::interval_of(&frame_times, *t as i64))
        .collect();

    let mut transcripts: Vec<TranscriptSegment> = (0..cfg.transcripts)
        .map(|i| {
            let start = rng.gen_range(0..duration.max(1));
            let len = rng.gen_range(500_000..2_000_000);
            TranscriptSegment {
                t_start_us: start,
                t_end_us: start + len,
                text: format!("{} ({})", PHRASES[rng.gen_range(0..PHRASES.len())], i),
            }
        })
        .collect();
    transcripts.sort_by_key(|s| s.t_start_us);

    SynthBundle {
        bundle: CaptureBundle {
            events: events.into_iter().map(|(_, e)| e).collect(),
            frames,
            transcripts,
            meta: CaptureMeta {
                instruction: cfg.instruction.clone(),
                game: cfg.game.clone(),
                fps_nominal: 1e6 / cfg.frame_interval_us as f64,
            },
        },
        true_interval,
    }
}
