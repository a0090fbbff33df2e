//! `vio plot`: top-down trajectory overlays from pose files, or loss
//! traces from a step log, as standalone SVG.

use crate::svg::{line_plot, Polyline};
use crate::Common;
use anyhow::bail;
use std::path::Path;
use vio_core::seqio::load_poses;

pub fn run(
    _common: &Common,
    gt: Option<&Path>,
    est: Option<&Path>,
    log: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let svg = match (gt, est, log) {
        (_, _, Some(log_path)) => loss_plot(log_path)?,
        (Some(_), _, _) | (_, Some(_), _) => trajectory_plot(gt, est)?,
        _ => bail!("nothing to plot: pass --gt/--est pose files or --log"),
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, svg)?;
    println!("{}", serde_json::json!({ "out": out.display().to_string() }));
    Ok(())
}

fn trajectory_plot(gt: Option<&Path>, est: Option<&Path>) -> anyhow::Result<String> {
    let mut lines = Vec::new();
    let mut add = |path: &Path, label: &'static str, color: &'static str| -> anyhow::Result<()> {
        let poses = load_poses(path)?;
        lines.push(Polyline {
            label,
            color,
            points: poses
                .iter()
                .map(|p| (p.translation[0], p.translation[2]))
                .collect(),
        });
        Ok(())
    };
    if let Some(p) = gt {
        add(p, "ground truth", "#1f77b4")?;
    }
    if let Some(p) = est {
        add(p, "estimate", "#d62728")?;
    }
    Ok(line_plot(&lines, "x [m]", "z [m]"))
}

fn loss_plot(log_path: &Path) -> anyhow::Result<String> {
    let text = std::fs::read_to_string(log_path)?;
    let mut points = Vec::new();
    let mut step = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)?;
        if let Some(trace) = v.get("loss_trace").and_then(|t| t.as_array()) {
            if !trace.is_empty() {
                let mean: f64 = trace.iter().filter_map(|x| x.as_f64()).sum::<f64>()
                    / trace.len() as f64;
                points.push((step as f64, mean));
                step += 1;
            }
        }
    }
    if points.is_empty() {
        bail!("log contains no loss traces");
    }
    Ok(line_plot(
        &[Polyline {
            label: "batch loss",
            color: "#2ca02c",
            points,
        }],
        "adapt step",
        "loss",
    ))
}
