//! Scratch protocol driver used while tuning domain/trainer defaults.
//! Prints per-seed errors for the pretrain -> adapt -> evaluate loop.

use std::time::Instant;
use vio_core::adapter::{pretrain, run_sync, AdapterConfig, OnlineAdapter};
use vio_core::geometry::se3_exp;
use vio_core::model::pose_forward;
use vio_core::evaluation::evaluate_checkpoint;
use vio_core::geometry::Camera;
use vio_core::model::ModelParams;
use vio_core::replay::Buffer;
use vio_core::seqio::LoadedSequence;
use vio_core::world::{make_domain_pair, render_sequence, DomainSpec, TrajectorySpec};

fn rendered(domain: &DomainSpec, cam: &Camera, n: usize, speed: f64, seed: u64, tag: &str) -> LoadedSequence {
    let traj = TrajectorySpec::cruise(n, 0.2, speed, 0.02, seed);
    let seq = render_sequence(domain, &traj, cam).unwrap();
    LoadedSequence {
        frames: seq.frames,
        timestamps: seq.timestamps,
        speeds: seq.speeds,
        gt_poses: Some(seq.gt_poses),
        domain_tag: tag.into(),
    }
}

fn diagnose(params: &ModelParams, seq: &LoadedSequence, name: &str) {
    // Direction/magnitude quality of raw pair predictions on gated pairs.
    let gt = seq.gt_poses.as_ref().unwrap();
    let mut cos_sum = 0.0;
    let mut norm_ratio = 0.0;
    let mut n = 0.0;
    let mut depth_mean = 0.0;
    let stride = 1usize; // every frame passes the 0.2 m gate at these speeds
    let mut i = stride;
    while i < seq.frames.len() {
        let twist = pose_forward(params, &seq.frames[i - stride], &seq.frames[i]).unwrap();
        let est = se3_exp(&twist);
        let true_rel = gt[i].inverse().compose(&gt[i - stride]);
        let (ev, tv) = (est.translation, true_rel.translation);
        let dot: f64 = ev.iter().zip(&tv).map(|(a, b)| a * b).sum();
        let en = ev.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tn = tv.iter().map(|v| v * v).sum::<f64>().sqrt();
        if en > 1e-9 && tn > 1e-9 {
            cos_sum += dot / en / tn;
            norm_ratio += en / tn;
            n += 1.0;
        }
        i += 7;
    }
    let d = vio_core::model::depth_forward(params, &seq.frames[0]).unwrap();
    let dm: f32 = d.values().data().iter().sum::<f32>() / d.values().numel() as f32;
    depth_mean += dm as f64;
    println!(
        "    diag {name}: dir-cos {:.3}, |v|/|gt| {:.3}, mean depth {:.1} m",
        cos_sum / n,
        norm_ratio / n,
        depth_mean
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(12);
    let adapt_lr: f32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let seed_base: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);

    let cam = Camera::default_synthetic();
    let (dom_a, dom_b) = make_domain_pair(0);
    let lengths = [10.0, 20.0, 30.0, 40.0];

    let a_train = rendered(&dom_a, &cam, 300, 1.5, 100, "a");
    let a_hold = rendered(&dom_a, &cam, 150, 1.5, 101, "a");
    let b_train = rendered(&dom_b, &cam, 300, 3.0, 200, "b");
    let b_hold = rendered(&dom_b, &cam, 150, 3.0, 201, "b");
    println!("sequences rendered");

    for seed in seed_base..seed_base + seeds {
        let t0 = Instant::now();
        let mut params = ModelParams::init(seed);
        let losses = pretrain(
            &mut params, &a_train, &cam, &Default::default(), epochs, 4, 1e-3, 0.2, seed,
        )
        .unwrap();
        diagnose(&params, &a_hold, "A");
        diagnose(&params, &b_hold, "B");
        let pre_b = evaluate_checkpoint(&params, &b_hold, &lengths, 1, 0.2).unwrap();
        let pre_a = evaluate_checkpoint(&params, &a_hold, &lengths, 1, 0.2).unwrap();
        println!(
            "seed {seed}: pretrain {:?} loss {:.4}->{:.4} | baseline t_err A {:.2}% B {:.2}% (r {:.3} / {:.3})",
            t0.elapsed(),
            losses[0],
            losses[losses.len() - 1],
            pre_a.t_err,
            pre_b.t_err,
            pre_a.r_err,
            pre_b.r_err
        );

        let mut variants = vec![
            ("N2c5", 2usize, 5usize),
            ("N0c5", 0, 5),
            ("N2c1", 2, 1),
        ];
        for (name, n, c) in variants.drain(..) {
            let t1 = Instant::now();
            let mut cfg = AdapterConfig {
                replay_n: n,
                cycles: c,
                ..AdapterConfig::default()
            };
            cfg.adam.lr = adapt_lr;
            let mut adapter =
                OnlineAdapter::new(params.clone(), Buffer::new(100, 0.95), cam, cfg, seed).unwrap();
            run_sync(&mut adapter, &b_train).unwrap();
            let adapted = adapter.into_params();
            let post_b = evaluate_checkpoint(&adapted, &b_hold, &lengths, 1, 0.2).unwrap();
            let post_a = evaluate_checkpoint(&adapted, &a_hold, &lengths, 1, 0.2).unwrap();
            println!(
                "  {name}: adapt {:?} | t_err B {:.2}% (vs {:.2}) A {:.2}% (vs {:.2}) | dA {:+.2} ",
                t1.elapsed(),
                post_b.t_err,
                pre_b.t_err,
                post_a.t_err,
                pre_a.t_err,
                post_a.t_err - pre_a.t_err
            );
        }
    }
}
