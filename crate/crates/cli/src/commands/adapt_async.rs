//! `vio adapt-async`: the predictor/learner split over one stream.
//! `sim` mode runs on a deterministic virtual clock with a scripted
//! learner cost; `wall` mode runs the learner on a real thread.

use crate::Common;
use anyhow::bail;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use vio_core::adapter::OnlineAdapter;
use vio_core::checkpoint::save_model;
use vio_core::replay::Buffer;
use vio_core::runtime::{run_async_sim, run_async_threaded, AsyncRunReport};
use vio_core::seqio::save_poses;

#[derive(Serialize)]
struct EstimateRecord {
    timestamp: f64,
    weights_version: u64,
    pose: [f64; 12],
}

pub fn run(
    common: &Common,
    ckpt: &Path,
    data: &Path,
    out: &Path,
    mode: &str,
    cost_periods: f64,
) -> anyhow::Result<()> {
    let cfg = common.load_config()?;
    let cam = cfg.camera()?;
    let seq = super::load_stream_source(data)?;
    let params = vio_core::checkpoint::load_model(ckpt)?;
    let buffer = Buffer::new(cfg.buffer.capacity, cfg.buffer.threshold);
    let mut adapter = OnlineAdapter::new(params, buffer, cam, cfg.adapter_config(), common.seed)?;
    adapter.set_domain_tag(&seq.domain_tag.clone());

    let min_dist = cfg.adapter.min_drive_dist;
    let (report, engine): (AsyncRunReport, OnlineAdapter) = match mode {
        "sim" => {
            // Frame period from the stream itself (median timestamp gap).
            let mut gaps: Vec<f64> = seq.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
            gaps.sort_by(|a, b| a.partial_cmp(b).expect("finite timestamps"));
            let period = gaps.get(gaps.len() / 2).copied().unwrap_or(0.1);
            let cost = cost_periods * period;
            let r = run_async_sim(&mut adapter, &cfg.async_config(), min_dist, &seq, |_| cost)?;
            (r, adapter)
        }
        "wall" => run_async_threaded(adapter, &cfg.async_config(), min_dist, &seq)?,
        other => bail!("unknown mode {other:?} (expected 'sim' or 'wall')"),
    };

    std::fs::create_dir_all(out)?;
    let mut log = std::io::BufWriter::new(std::fs::File::create(out.join("log.jsonl"))?);
    for e in &report.estimates {
        let rec = EstimateRecord {
            timestamp: e.timestamp,
            weights_version: e.weights_version,
            pose: e.vo.to_mat34(),
        };
        writeln!(log, "{}", serde_json::to_string(&rec)?)?;
    }
    log.flush()?;
    save_poses(&out.join("poses_est.txt"), report.trajectory.poses())?;
    save_model(engine.params(), &out.join("model.ckpt"))?;

    println!(
        "{}",
        serde_json::json!({
            "mode": mode,
            "gated_frames": report.gated_frames,
            "estimates": report.estimates.len(),
            "dropped_frames": report.drop_count,
            "completed_updates": report.completed_updates,
            "publications": report.publications.len(),
            "out": out.display().to_string(),
        })
    );
    Ok(())
}
