pub mod adapt;
pub mod adapt_async;
pub mod eval;
pub mod gen;
pub mod plot;
pub mod pretrain;

use anyhow::Context;
use std::path::Path;
use vio_core::seqio::{load_image16, load_sequence, LoadedSequence};

/// A stream source is either a sequence directory or a text file (or
/// named pipe) of `frame-path,speed,timestamp` records, one per line.
pub fn load_stream_source(path: &Path) -> anyhow::Result<LoadedSequence> {
    if path.is_dir() {
        return Ok(load_sequence(path)?);
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading stream records from {}", path.display()))?;
    let mut frames = Vec::new();
    let mut speeds = Vec::new();
    let mut timestamps = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        anyhow::ensure!(
            parts.len() == 3,
            "{} line {}: expected 'frame-path,speed,timestamp'",
            path.display(),
            lineno + 1
        );
        frames.push(load_image16(Path::new(parts[0].trim()))?);
        speeds.push(parts[1].trim().parse::<f64>().with_context(|| {
            format!("{} line {}: bad speed", path.display(), lineno + 1)
        })?);
        timestamps.push(parts[2].trim().parse::<f64>().with_context(|| {
            format!("{} line {}: bad timestamp", path.display(), lineno + 1)
        })?);
    }
    Ok(LoadedSequence {
        frames,
        timestamps,
        speeds,
        gt_poses: None,
        domain_tag: "stream".into(),
    })
}
