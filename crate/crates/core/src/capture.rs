//! Raw recording bundles: device events, frames with cursor anchors, and
//! think-aloud transcript segments, all on one microsecond session clock.

use crate::action_space::{Button, KeyId};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Minimum transcript density (thoughts per minute) asked of annotators.
pub const THOUGHT_DENSITY_GUIDELINE_PER_MIN: f64 = 3.0;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const FRAMES_FILE: &str = "frames.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    KeyDown,
    KeyUp,
    MouseMove,
    MouseDown,
    MouseUp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEvent {
    pub t_us: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<KeyId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub button: Option<Button>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dy: Option<i32>,
}

impl InputEvent {
    fn bare(t_us: u64, kind: EventKind) -> Self {
        Self {
            t_us,
            kind,
            key: None,
            button: None,
            dx: None,
            dy: None,
        }
    }

    pub fn key_down(t_us: u64, key: KeyId) -> Self {
        Self {
            key: Some(key),
            ..Self::bare(t_us, EventKind::KeyDown)
        }
    }

    pub fn key_up(t_us: u64, key: KeyId) -> Self {
        Self {
            key: Some(key),
            ..Self::bare(t_us, EventKind::KeyUp)
        }
    }

    pub fn mouse_move(t_us: u64, dx: i32, dy: i32) -> Self {
        Self {
            dx: Some(dx),
            dy: Some(dy),
            ..Self::bare(t_us, EventKind::MouseMove)
        }
    }

    pub fn mouse_down(t_us: u64, button: Button) -> Self {
        Self {
            button: Some(button),
            ..Self::bare(t_us, EventKind::MouseDown)
        }
    }

    pub fn mouse_up(t_us: u64, button: Button) -> Self {
        Self {
            button: Some(button),
            ..Self::bare(t_us, EventKind::MouseUp)
        }
    }

    /// Checks that exactly the fields required by `kind` are present.
    pub fn check_fields(&self) -> Result<(), String> {
        let (need_key, need_button, need_delta) = match self.kind {
            EventKind::KeyDown | EventKind::KeyUp => (true, false, false),
            EventKind::MouseDown | EventKind::MouseUp => (false, true, false),
            EventKind::MouseMove => (false, false, true),
        };
        let check = |present: bool, needed: bool, name: &str| -> Result<(), String> {
            match (present, needed) {
                (false, true) => Err(format!("missing required field `{name}`")),
                (true, false) => Err(format!("field `{name}` not allowed for this kind")),
                _ => Ok(()),
            }
        };
        check(self.key.is_some(), need_key, "key")?;
        check(self.button.is_some(), need_button, "button")?;
        check(self.dx.is_some(), need_delta, "dx")?;
        check(self.dy.is_some(), need_delta, "dy")?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub t_us: u64,
    pub cursor: Option<(i64, i64)>,
    pub screen: (u32, u32),
}

impl FrameRecord {
    pub fn cursor_in_bounds(&self) -> bool {
        match self.cursor {
            None => true,
            Some((x, y)) => {
                x >= 0 && y >= 0 && x < self.screen.0 as i64 && y < self.screen.1 as i64
            }
        }
    }

    /// True when the cursor sits on the outermost pixel row or column.
    pub fn cursor_on_edge(&self) -> bool {
        match self.cursor {
            None => false,
            Some((x, y)) => {
                x <= 0
                    || y <= 0
                    || x >= self.screen.0 as i64 - 1
                    || y >= self.screen.1 as i64 - 1
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub t_start_us: u64,
    pub t_end_us: u64,
    pub text: String,
}

impl TranscriptSegment {
    pub fn midpoint_us(&self) -> u64 {
        self.t_start_us + (self.t_end_us - self.t_start_us) / 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub instruction: String,
    pub game: String,
    pub fps_nominal: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureBundle {
    pub events: Vec<InputEvent>,
    pub frames: Vec<FrameRecord>,
    pub transcripts: Vec<TranscriptSegment>,
    pub meta: CaptureMeta,
}

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed record: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: {message}")]
    Invariant {
        file: String,
        line: usize,
        message: String,
    },
    #[error("bundle needs at least 2 frames, found {0}")]
    TooFewFrames(usize),
}

fn invariant(file: &str, line: usize, message: impl Into<String>) -> CaptureError {
    CaptureError::Invariant {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

/// Parse line-delimited records, returning each with its 1-based line number.
fn parse_lines<T: serde::de::DeserializeOwned>(
    src: &str,
    file: &str,
) -> Result<Vec<(usize, T)>, CaptureError> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| CaptureError::Malformed {
            file: file.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

fn check_events(events: &[(usize, InputEvent)], file: &str) -> Result<(), CaptureError> {
    let mut last = 0u64;
    for (line, e) in events {
        e.check_fields().map_err(|m| invariant(file, *line, m))?;
        if e.t_us < last {
            return Err(invariant(file, *line, format!("non-monotone timestamp at line {line}")));
        }
        last = e.t_us;
    }
    Ok(())
}

fn check_frames(frames: &[(usize, FrameRecord)], file: &str) -> Result<(), CaptureError> {
    for (i, (line, f)) in frames.iter().enumerate() {
        if i > 0 {
            let prev = &frames[i - 1].1;
            if f.frame_id <= prev.frame_id {
                return Err(invariant(file, *line, "frame_id not strictly increasing"));
            }
            if f.t_us <= prev.t_us {
                return Err(invariant(file, *line, format!("non-monotone timestamp at line {line}")));
            }
        }
        if !f.cursor_in_bounds() {
            let (x, y) = f.cursor.unwrap_or_default();
            return Err(invariant(
                file,
                *line,
                format!(
                    "cursor out of bounds: ({x},{y}) on {}x{} screen",
                    f.screen.0, f.screen.1
                ),
            ));
        }
    }
    if frames.len() < 2 {
        return Err(CaptureError::TooFewFrames(frames.len()));
    }
    Ok(())
}

fn check_transcripts(segs: &[(usize, TranscriptSegment)], file: &str) -> Result<(), CaptureError> {
    let mut last = 0u64;
    for (line, s) in segs {
        if s.t_start_us > s.t_end_us {
            return Err(invariant(file, *line, "t_start_us after t_end_us"));
        }
        if s.text.trim().is_empty() {
            return Err(invariant(file, *line, "empty transcript text"));
        }
        if s.t_start_us < last {
            return Err(invariant(file, *line, "segments not sorted by t_start_us"));
        }
        last = s.t_start_us;
    }
    Ok(())
}

fn numbered<T: Clone>(items: &[T]) -> Vec<(usize, T)> {
    items.iter().cloned().enumerate().map(|(i, x)| (i + 1, x)).collect()
}

impl CaptureBundle {
    /// Parse and validate a bundle from in-memory sources.
    pub fn parse(
        events_src: &str,
        frames_src: &str,
        transcript_src: &str,
        meta_src: &str,
    ) -> Result<CaptureBundle, CaptureError> {
        let events = parse_lines::<InputEvent>(events_src, EVENTS_FILE)?;
        let frames = parse_lines::<FrameRecord>(frames_src, FRAMES_FILE)?;
        let transcripts = parse_lines::<TranscriptSegment>(transcript_src, TRANSCRIPT_FILE)?;
        let meta: CaptureMeta =
            serde_json::from_str(meta_src).map_err(|e| CaptureError::Malformed {
                file: META_FILE.to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
        check_events(&events, EVENTS_FILE)?;
        check_frames(&frames, FRAMES_FILE)?;
        check_transcripts(&transcripts, TRANSCRIPT_FILE)?;
        Ok(CaptureBundle {
            events: events.into_iter().map(|(_, e)| e).collect(),
            frames: frames.into_iter().map(|(_, f)| f).collect(),
            transcripts: transcripts.into_iter().map(|(_, s)| s).collect(),
            meta,
        })
    }

    /// Re-check every invariant of an in-memory bundle. Line numbers in errors
    /// are 1-based record positions.
    pub fn validate(&self) -> Result<(), CaptureError> {
        check_events(&numbered(&self.events), EVENTS_FILE)?;
        check_frames(&numbered(&self.frames), FRAMES_FILE)?;
        check_transcripts(&numbered(&self.transcripts), TRANSCRIPT_FILE)
    }

    pub fn events_jsonl(&self) -> String {
        to_jsonl(&self.events)
    }

    pub fn frames_jsonl(&self) -> String {
        to_jsonl(&self.frames)
    }

    pub fn transcript_jsonl(&self) -> String {
        to_jsonl(&self.transcripts)
    }

    pub fn meta_json(&self) -> String {
        serde_json::to_string(&self.meta).expect("meta serializes") + "\n"
    }

    /// Load `events.jsonl`, `frames.jsonl`, `transcript.jsonl` and `meta.json`
    /// from one directory.
    pub fn load_dir(dir: &Path) -> Result<CaptureBundle, CaptureError> {
        load_capture_bundle(
            &dir.join(EVENTS_FILE),
            &dir.join(FRAMES_FILE),
            &dir.join(TRANSCRIPT_FILE),
            &dir.join(META_FILE),
        )
    }

    pub fn save_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(EVENTS_FILE), self.events_jsonl())?;
        std::fs::write(dir.join(FRAMES_FILE), self.frames_jsonl())?;
        std::fs::write(dir.join(TRANSCRIPT_FILE), self.transcript_jsonl())?;
        std::fs::write(dir.join(META_FILE), self.meta_json())
    }

    pub fn duration_us(&self) -> u64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t_us - a.t_us,
            _ => 0,
        }
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        let _ = writeln!(out, "{}", serde_json::to_string(item).expect("record serializes"));
    }
    out
}

fn read(path: &Path) -> Result<String, CaptureError> {
    std::fs::read_to_string(path).map_err(|source| CaptureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_capture_bundle(
    event_path: &Path,
    frame_path: &Path,
    transcript_path: &Path,
    meta_path: &Path,
) -> Result<CaptureBundle, CaptureError> {
    CaptureBundle::parse(
        &read(event_path)?,
        &read(frame_path)?,
        &read(transcript_path)?,
        &read(meta_path)?,
    )
}

/// Load only an events file (used when realigning outside a full bundle).
pub fn load_events(path: &Path) -> Result<Vec<InputEvent>, CaptureError> {
    let events = parse_lines::<InputEvent>(&read(path)?, EVENTS_FILE)?;
    check_events(&events, EVENTS_FILE)?;
    Ok(events.into_iter().map(|(_, e)| e).collect())
}

pub fn load_frames(path: &Path) -> Result<Vec<FrameRecord>, CaptureError> {
    let frames = parse_lines::<FrameRecord>(&read(path)?, FRAMES_FILE)?;
    check_frames(&frames, FRAMES_FILE)?;
    Ok(frames.into_iter().map(|(_, f)| f).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaptureReport {
    pub duration_s: f64,
    pub frame_count: usize,
    pub event_count: usize,
    /// Event counts per one-second bin, starting at the first frame.
    pub event_rate_histogram: Vec<u64>,
    pub anchor_fraction: f64,
    pub transcript_segments: usize,
    pub thoughts_per_minute: f64,
    pub below_density_guideline: bool,
    pub warnings: Vec<String>,
}

pub fn capture_report(bundle: &CaptureBundle) -> CaptureReport {
    let duration_us = bundle.duration_us();
    let origin = bundle.frames.first().map(|f| f.t_us).unwrap_or(0);
    let bins = (duration_us / 1_000_000 + 1) as usize;
    let mut histogram = vec![0u64; bins];
    for e in &bundle.events {
        let bin = (e.t_us.saturating_sub(origin) / 1_000_000) as usize;
        histogram[bin.min(bins - 1)] += 1;
    }

    let anchored = bundle.frames.iter().filter(|f| f.cursor.is_some()).count();
    let anchor_fraction = if bundle.frames.is_empty() {
        0.0
    } else {
        anchored as f64 / bundle.frames.len() as f64
    };

    let minutes = duration_us as f64 / 60_000_000.0;
    let density = if minutes > 0.0 {
        bundle.transcripts.len() as f64 / minutes
    } else {
        0.0
    };

    let mut warnings = Vec::new();
    if anchored == 0 {
        warnings.push("no cursor anchors: lag alignment impossible without --assume-zero-lag".into());
    }
    let below = density < THOUGHT_DENSITY_GUIDELINE_PER_MIN;
    if below {
        warnings.push(format!(
            "transcript density {density:.2}/min below guideline of {THOUGHT_DENSITY_GUIDELINE_PER_MIN}/min"
        ));
    }

    CaptureReport {
        duration_s: duration_us as f64 / 1e6,
        frame_count: bundle.frames.len(),
        event_count: bundle.events.len(),
        event_rate_histogram: histogram,
        anchor_fraction,
        transcript_segments: bundle.transcripts.len(),
        thoughts_per_minute: density,
        below_density_guideline: below,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::key;

    const META: &str = r#"{"instruction":"chop a tree","game":"minecraft","fps_nominal":20}"#;

    fn toy() -> (String, String, String) {
        let events = [
            r#"{"t_us":0,"kind":"key_down","key":"w"}"#,
            r#"{"t_us":10000,"kind":"mouse_move","dx":3,"dy":-2}"#,
            r#"{"t_us":20000,"kind":"mouse_down","button":"left"}"#,
            r#"{"t_us":30000,"kind":"mouse_up","button":"left"}"#,
            r#"{"t_us":60000,"kind":"key_up","key":"w"}"#,
        ]
        .join("\n");
        let frames = [
            r#"{"frame_id":0,"t_us":0,"cursor":[100,100],"screen":[1920,1080]}"#,
            r#"{"frame_id":1,"t_us":50000,"cursor":null,"screen":[1920,1080]}"#,
            r#"{"frame_id":2,"t_us":100000,"cursor":[103,98],"screen":[1920,1080]}"#,
        ]
        .join("\n");
        let transcript = r#"{"t_start_us":0,"t_end_us":40000,"text":"walk to the tree"}"#.to_string();
        (events, frames, transcript)
    }

    #[test]
    fn toy_bundle_counts() {
        let (e, f, t) = toy();
        let b = CaptureBundle::parse(&e, &f, &t, META).unwrap();
        assert_eq!(b.frames.len(), 3);
        assert_eq!(b.events.len(), 5);
        assert_eq!(b.events[0].key, Some(key("w")));
        assert_eq!(b.frames[2].cursor, Some((103, 98)));
    }

    #[test]
    fn serialization_reproduces_bundle() {
        let (e, f, t) = toy();
        let b = CaptureBundle::parse(&e, &f, &t, META).unwrap();
        let again = CaptureBundle::parse(
            &b.events_jsonl(),
            &b.frames_jsonl(),
            &b.transcript_jsonl(),
            &b.meta_json(),
        )
        .unwrap();
        assert_eq!(again, b);
        assert_eq!(again.events_jsonl(), b.events_jsonl());
    }

    #[test]
    fn non_monotone_event_time() {
        let events = "{\"t_us\":5,\"kind\":\"mouse_move\",\"dx\":1,\"dy\":1}\n\
                      {\"t_us\":4,\"kind\":\"mouse_move\",\"dx\":1,\"dy\":1}";
        let (_, f, t) = toy();
        let err = CaptureBundle::parse(events, &f, &t, META).unwrap_err();
        assert!(err.to_string().contains("non-monotone timestamp at line 2"), "{err}");
    }

    #[test]
    fn cursor_out_of_bounds() {
        let frames = "{\"frame_id\":0,\"t_us\":0,\"cursor\":[2000,10],\"screen\":[1920,1080]}\n\
                      {\"frame_id\":1,\"t_us\":5,\"cursor\":null,\"screen\":[1920,1080]}";
        let (e, _, t) = toy();
        let err = CaptureBundle::parse(&e, frames, &t, META).unwrap_err();
        assert!(err.to_string().contains("cursor out of bounds"), "{err}");
    }

    #[test]
    fn malformed_and_missing_fields_report_lines() {
        let (_, f, t) = toy();
        let err = CaptureBundle::parse("{\"t_us\":0,\"kind\":\"key_down\"}\n", &f, &t, META)
            .unwrap_err();
        assert!(matches!(err, CaptureError::Invariant { line: 1, .. }));
        assert!(err.to_string().contains("missing required field `key`"));

        let err = CaptureBundle::parse("\n{not json}", &f, &t, META).unwrap_err();
        assert!(matches!(err, CaptureError::Malformed { line: 2, .. }), "{err}");

        let err = CaptureBundle::parse(
            r#"{"t_us":0,"kind":"key_down","key":"nope"}"#,
            &f,
            &t,
            META,
        )
        .unwrap_err();
        assert!(matches!(err, CaptureError::Malformed { .. }));
    }

    #[test]
    fn single_frame_rejected() {
        let (e, _, t) = toy();
        let frames = r#"{"frame_id":0,"t_us":0,"cursor":null,"screen":[10,10]}"#;
        assert!(matches!(
            CaptureBundle::parse(&e, frames, &t, META),
            Err(CaptureError::TooFewFrames(1))
        ));
    }

    fn bundle_with(duration_s: u64, segments: usize, cursor: Option<(i64, i64)>) -> CaptureBundle {
        let frames = (0..=duration_s)
            .map(|i| FrameRecord {
                frame_id: i,
                t_us: i * 1_000_000,
                cursor,
                screen: (1920, 1080),
            })
            .collect();
        let transcripts = (0..segments as u64)
            .map(|i| TranscriptSegment {
                t_start_us: i * 1_000_000,
                t_end_us: i * 1_000_000 + 500_000,
                text: format!("thought {i}"),
            })
            .collect();
        CaptureBundle {
            events: vec![InputEvent::key_down(1_500_000, key("w"))],
            frames,
            transcripts,
            meta: serde_json::from_str(META).unwrap(),
        }
    }

    #[test]
    fn density_below_guideline() {
        let r = capture_report(&bundle_with(60, 2, Some((5, 5))));
        assert_eq!(r.thoughts_per_minute, 2.0);
        assert!(r.below_density_guideline);
        assert_eq!(r.anchor_fraction, 1.0);
        assert_eq!(r.event_rate_histogram.len(), 61);
        assert_eq!(r.event_rate_histogram[1], 1);
    }

    #[test]
    fn density_above_guideline() {
        let r = capture_report(&bundle_with(120, 8, Some((5, 5))));
        assert_eq!(r.thoughts_per_minute, 4.0);
        assert!(!r.below_density_guideline);
    }

    #[test]
    fn no_anchors_warns() {
        let r = capture_report(&bundle_with(60, 3, None));
        assert_eq!(r.anchor_fraction, 0.0);
        assert!(r.warnings.iter().any(|w| w.contains("alignment impossible")));
    }
}
