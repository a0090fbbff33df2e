//! `vio eval`: forward-only evaluation of checkpoints on sequences.
//! Emits the error matrix as CSV plus a JSON summary; an optional
//! protocol file adds adaptation/retention scores.

use crate::Common;
use anyhow::Context;
use std::io::Write;
use std::path::{Path, PathBuf};
use vio_core::evaluation::{aq_rq, forgetting_matrix, AqRqProtocol};
use vio_core::seqio::load_sequence;

pub fn run(
    common: &Common,
    ckpts: &[PathBuf],
    seqs: &[PathBuf],
    out: &Path,
    protocol: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = common.load_config()?;
    let checkpoints: Vec<_> = ckpts
        .iter()
        .map(|p| vio_core::checkpoint::load_model(p).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<_>>()?;
    let sequences: Vec<_> = seqs
        .iter()
        .map(|p| load_sequence(p).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<_>>()?;

    let mut report = forgetting_matrix(
        &checkpoints,
        &sequences,
        &cfg.evaluation.segment_lengths,
        cfg.evaluation.stride,
        cfg.adapter.min_drive_dist,
    )?;

    if let Some(proto_path) = protocol {
        let proto: AqRqProtocol = serde_json::from_str(
            &std::fs::read_to_string(proto_path)
                .with_context(|| format!("reading protocol {}", proto_path.display()))?,
        )?;
        report.summary = Some(aq_rq(&report.matrix, &proto)?);
    }

    std::fs::create_dir_all(out)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(out.join("matrix.csv"))?);
    writeln!(csv, "checkpoint,sequence,ckpt_path,seq_path,t_err_percent,r_err_deg_per_m")?;
    for (row, per_seq) in report.matrix.iter().enumerate() {
        for (col, cell) in per_seq.iter().enumerate() {
            writeln!(
                csv,
                "{row},{col},{},{},{},{}",
                ckpts[row].display(),
                seqs[col].display(),
                cell.t_err,
                cell.r_err
            )?;
        }
    }
    csv.flush()?;
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    println!(
        "{}",
        serde_json::json!({
            "rows": report.matrix.len(),
            "cols": seqs.len(),
            "summary": report.summary,
            "out": out.display().to_string(),
        })
    );
    Ok(())
}
