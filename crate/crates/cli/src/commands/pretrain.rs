//! `vio pretrain`: offline source-domain training from scratch.

use crate::Common;
use std::path::Path;
use vio_core::adapter::pretrain;
use vio_core::checkpoint::save_model;
use vio_core::model::ModelParams;
use vio_core::seqio::load_sequence;

pub fn run(common: &Common, data: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = common.load_config()?;
    let cam = cfg.camera()?;
    let seq = load_sequence(data)?;
    let mut params = ModelParams::init(common.seed);
    let losses = pretrain(
        &mut params,
        &seq,
        &cam,
        &cfg.loss_weights(),
        cfg.pretrain.epochs,
        cfg.pretrain.batch_size,
        cfg.pretrain.lr,
        cfg.adapter.min_drive_dist,
        common.seed,
    )?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_model(&params, out)?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": out.display().to_string(),
            "epochs": losses.len(),
            "epoch_losses": losses,
        })
    );
    Ok(())
}
