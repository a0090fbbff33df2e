//! Shared fixtures for the criterion benches.

use vio_core::seqio::LoadedSequence;
use vio_core::world::{make_domain_pair, render_sequence, TrajectorySpec};
use vio_core::Camera;

/// Render a short default-camera sequence once per bench process.
pub fn bench_sequence(n: usize) -> LoadedSequence {
    let cam = Camera::default_synthetic();
    let (dom_a, _) = make_domain_pair(1);
    let traj = TrajectorySpec::cruise(n, 0.2, 1.5, 0.02, 5);
    let seq = render_sequence(&dom_a, &traj, &cam).expect("render");
    LoadedSequence {
        frames: seq.frames,
        timestamps: seq.timestamps,
        speeds: seq.speeds,
        gt_poses: Some(seq.gt_poses),
        domain_tag: "bench".into(),
    }
}
