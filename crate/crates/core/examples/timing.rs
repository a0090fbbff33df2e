use std::time::Instant;
use vio_core::adapter::{run_sync, AdapterConfig, OnlineAdapter};
use vio_core::geometry::Camera;
use vio_core::model::ModelParams;
use vio_core::replay::Buffer;
use vio_core::seqio::LoadedSequence;
use vio_core::world::{make_domain_pair, render_sequence, TrajectorySpec};

fn main() {
    let cam = Camera::default_synthetic();
    let (a, _b) = make_domain_pair(1);
    let t0 = Instant::now();
    let traj = TrajectorySpec::cruise(40, 0.2, 1.5, 0.05, 3);
    let seq = render_sequence(&a, &traj, &cam).unwrap();
    println!("render 40 frames: {:?}", t0.elapsed());

    let loaded = LoadedSequence {
        frames: seq.frames.clone(),
        timestamps: seq.timestamps.clone(),
        speeds: seq.speeds.clone(),
        gt_poses: Some(seq.gt_poses.clone()),
        domain_tag: "a".into(),
    };

    let params = ModelParams::init(0);
    let mut adapter = OnlineAdapter::new(
        params.clone(),
        Buffer::new(100, 0.95),
        cam,
        AdapterConfig::default(),
        7,
    )
    .unwrap();
    let t1 = Instant::now();
    let (_traj, reports) = run_sync(&mut adapter, &loaded).unwrap();
    let n_adapt = reports.iter().filter(|r| !r.loss_trace.is_empty()).count();
    println!(
        "adapt {} frames (c=5, batch up to 3): {:?} -> {:?}/frame",
        n_adapt,
        t1.elapsed(),
        t1.elapsed() / n_adapt as u32
    );

    // pretrain pace: batch of 4, one step
    let t2 = Instant::now();
    let mut p2 = ModelParams::init(1);
    let losses = vio_core::adapter::pretrain(
        &mut p2, &loaded, &cam, &Default::default(), 1, 4, 1e-3, 0.2, 5,
    )
    .unwrap();
    println!("pretrain 1 epoch over {} frames: {:?} (loss {:?})", 40, t2.elapsed(), losses);
}
