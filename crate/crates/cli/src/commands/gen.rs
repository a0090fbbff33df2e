//! `vio gen`: render the two-domain dataset (train + holdout per
//! domain) into the shared sequence-directory layout.

use crate::Common;
use anyhow::Context;
use std::path::Path;
use vio_core::world::{make_domain_pair, render_sequence, save_rendered, TrajectorySpec};

pub fn run(common: &Common, out: &Path) -> anyhow::Result<()> {
    let cfg = common.load_config()?;
    let cam = cfg.camera()?;
    std::fs::create_dir_all(out)?;
    // Keep the dataset self-documenting.
    cfg.save(&out.join("config_used.toml"))?;
    let (dom_a, dom_b) = make_domain_pair(cfg.gen.domain_seed);
    let g = &cfg.gen;

    let jobs = [
        ("a-train", &dom_a, g.speed_a, g.train_frames, 1u64),
        ("a-holdout", &dom_a, g.speed_a, g.holdout_frames, 2),
        ("b-train", &dom_b, g.speed_b, g.train_frames, 3),
        ("b-holdout", &dom_b, g.speed_b, g.holdout_frames, 4),
    ];
    for (name, domain, speed, frames, salt) in jobs {
        let traj = TrajectorySpec::cruise(
            frames,
            g.dt,
            speed,
            g.yaw_amplitude,
            common.seed.wrapping_mul(16) + salt,
        );
        let seq = render_sequence(domain, &traj, &cam)
            .with_context(|| format!("rendering {name}"))?;
        let dir = out.join(name);
        std::fs::create_dir_all(&dir)?;
        save_rendered(&dir, &seq, domain)?;
        println!(
            "{}",
            serde_json::json!({
                "sequence": name,
                "frames": seq.frames.len(),
                "path": dir.display().to_string(),
            })
        );
    }
    Ok(())
}
