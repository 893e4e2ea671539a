//! File helpers. Every output is written to a temporary file in the target
//! directory and renamed into place.

use crate::CliError;
use forge_core::capture::{CaptureBundle, EVENTS_FILE, FRAMES_FILE, META_FILE, TRANSCRIPT_FILE};
use forge_core::trajectory::Trajectory;
use std::io::Write;
use std::path::Path;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::fail(format!("{}: {e}", path.display())))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    Trajectory::from_jsonl(&read_text(path)?).map_err(|e| CliError::fail(format!("{}: {e}", path.display())))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::fail(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    write_atomic(path, traj.to_jsonl().as_bytes())
}

pub fn save_bundle(bundle: &CaptureBundle, dir: &Path) -> Result<(), CliError> {
    write_atomic(&dir.join(EVENTS_FILE), bundle.events_jsonl().as_bytes())?;
    write_atomic(&dir.join(FRAMES_FILE), bundle.frames_jsonl().as_bytes())?;
    write_atomic(&dir.join(TRANSCRIPT_FILE), bundle.transcript_jsonl().as_bytes())?;
    write_atomic(&dir.join(META_FILE), bundle.meta_json().as_bytes())
}
