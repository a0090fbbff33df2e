//! `vio adapt`: synchronous online continual learning over a sequence
//! list, with a checkpoint, step log, and estimated trajectory after
//! each sequence. The replay buffer carries over between sequences.

use crate::Common;
use anyhow::Context;
use std::io::Write;
use std::path::{Path, PathBuf};
use vio_core::adapter::{run_sync, OnlineAdapter, StepLogRecord};
use vio_core::checkpoint::save_model;
use vio_core::replay::Buffer;
use vio_core::seqio::{load_sequence, save_poses};

pub fn run(
    common: &Common,
    ckpt: &Path,
    data: &[PathBuf],
    out: &Path,
    replay_n: Option<usize>,
    cycles: Option<usize>,
    buffer_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let cfg = common.load_config()?;
    let cam = cfg.camera()?;
    let mut adapter_cfg = cfg.adapter_config();
    if let Some(n) = replay_n {
        adapter_cfg.replay_n = n;
    }
    if let Some(c) = cycles {
        adapter_cfg.cycles = c;
    }

    let params = vio_core::checkpoint::load_model(ckpt)?;
    let buffer = match &buffer_dir {
        Some(dir) if dir.exists() && dir.read_dir()?.next().is_some() => {
            Buffer::load_dir(dir, cfg.buffer.capacity, cfg.buffer.threshold)?
        }
        _ => Buffer::new(cfg.buffer.capacity, cfg.buffer.threshold),
    };
    let mut adapter = OnlineAdapter::new(params, buffer, cam, adapter_cfg, common.seed)?;
    if let Some(dir) = &buffer_dir {
        std::fs::create_dir_all(dir)?;
        adapter.set_persist_dir(Some(dir.clone()));
    }

    for (i, seq_path) in data.iter().enumerate() {
        let seq = load_sequence(seq_path)
            .with_context(|| format!("loading sequence {}", seq_path.display()))?;
        let name = seq_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("seq{i}"));
        let step_dir = out.join(format!("{i:02}-{name}"));
        std::fs::create_dir_all(&step_dir)?;

        let (trajectory, reports) = run_sync(&mut adapter, &seq)?;

        let mut log = std::io::BufWriter::new(std::fs::File::create(step_dir.join("log.jsonl"))?);
        for report in &reports {
            writeln!(log, "{}", serde_json::to_string(&StepLogRecord::from_report(report))?)?;
        }
        log.flush()?;
        save_poses(&step_dir.join("poses_est.txt"), trajectory.poses())?;
        save_model(adapter.params(), &step_dir.join("model.ckpt"))?;

        let adapted = reports.iter().filter(|r| !r.loss_trace.is_empty()).count();
        let admitted = reports
            .iter()
            .filter(|r| r.admission.as_ref().map_or(false, |a| a.admitted))
            .count();
        println!(
            "{}",
            serde_json::json!({
                "sequence": name,
                "frames": reports.len(),
                "adapt_steps": adapted,
                "buffer_admissions": admitted,
                "buffer_len": adapter.buffer().len(),
                "out": step_dir.display().to_string(),
            })
        );
    }
    Ok(())
}
