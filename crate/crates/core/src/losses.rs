//! The unsupervised adaptation loss: photometric reprojection,
//! edge-aware smoothness, and velocity supervision, combined as
//! `L = L_pr + gamma * L_sm + lambda * L_vel`.
//!
//! Photometric error per pixel is `0.85 * (1 - SSIM)/2 + 0.15 * L1`,
//! taking the per-pixel minimum over the two warped neighbors (each
//! restricted to its validity mask) and averaging over pixels covered by
//! at least one neighbor. SSIM uses a 3x3 average-pool window with
//! C1 = 0.01^2, C2 = 0.03^2. Smoothness acts on mean-normalized
//! disparity with first-order, edge-weighted differences. Velocity
//! supervision penalizes `| ||v|| - speed * dt |` and is what pins the
//! metric scale.

use crate::error::{Error, Result};
use crate::geometry::{inverse_warp, pose_inverse_nodes, se3_exp_nodes, Camera};
use crate::graph::{Graph, NodeId};
use crate::model::{depth_forward_graph, pose_forward_graph, BoundModel};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

const SSIM_C1: f32 = 0.01 * 0.01;
const SSIM_C2: f32 = 0.03 * 0.03;
const SSIM_WEIGHT: f32 = 0.85;

/// Weights of the smoothness and velocity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma: f32,
    pub lambda: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 0.001,
            lambda: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || self.lambda < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Three consecutive frames with the inertial readings of both adjacent
/// pairs. `images[1]` is the center frame whose depth is predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatchItem {
    pub images: [Tensor; 3],
    /// Speed (m/s) over the (t-2, t-1) and (t-1, t) intervals.
    pub speeds: [f64; 2],
    /// Time gaps (s) of the same intervals.
    pub dts: [f64; 2],
}

impl TripletBatchItem {
    pub fn new(images: [Tensor; 3], speeds: [f64; 2], dts: [f64; 2]) -> Result<Self> {
        let shape = images[0].shape().to_vec();
        if images.iter().any(|i| i.shape() != shape) {
            return Err(Error::ShapeMismatch {
                op: "triplet",
                lhs: shape,
                rhs: images[1].shape().to_vec(),
            });
        }
        if speeds.iter().any(|&s| s < 0.0) || dts.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidConfig(
                "triplet needs speeds >= 0 and dt > 0".into(),
            ));
        }
        Ok(TripletBatchItem {
            images,
            speeds,
            dts,
        })
    }
}

/// Mean over the channel axis: `[H, W, C] -> [H, W]`.
fn channel_mean(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    let (h, w, c) = (s[0], s[1], s[2]);
    if c == 1 {
        return g.reshape(x, &[h, w]);
    }
    let flat = g.reshape(x, &[h * w, c])?;
    let ones = g.constant(Tensor::full(&[c, 1], 1.0 / c as f32));
    let m = g.matmul(flat, ones)?;
    g.reshape(m, &[h, w])
}

/// Per-pixel SSIM between two images, 3x3 mean pooling, same-size output.
fn ssim_map(g: &mut Graph, x: NodeId, y: NodeId) -> Result<NodeId> {
    let mu_x = g.avg_pool2d(x, 3, 1, true)?;
    let mu_y = g.avg_pool2d(y, 3, 1, true)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let e_xx = g.avg_pool2d(xx, 3, 1, true)?;
    let e_yy = g.avg_pool2d(yy, 3, 1, true)?;
    let e_xy = g.avg_pool2d(xy, 3, 1, true)?;
    let mu_xx = g.mul(mu_x, mu_x)?;
    let mu_yy = g.mul(mu_y, mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let sigma_x = g.sub(e_xx, mu_xx)?;
    let sigma_y = g.sub(e_yy, mu_yy)?;
    let sigma_xy = g.sub(e_xy, mu_xy)?;

    let two_mu = g.scale(mu_xy, 2.0)?;
    let n1 = g.offset(two_mu, SSIM_C1)?;
    let two_sxy = g.scale(sigma_xy, 2.0)?;
    let n2 = g.offset(two_sxy, SSIM_C2)?;
    let num = g.mul(n1, n2)?;

    let mu_sum = g.add(mu_xx, mu_yy)?;
    let d1 = g.offset(mu_sum, SSIM_C1)?;
    let sigma_sum = g.add(sigma_x, sigma_y)?;
    let d2 = g.offset(sigma_sum, SSIM_C2)?;
    let den = g.mul(d1, d2)?;
    g.div(num, den)
}

/// Photometric error map of one warped source against the center image:
/// `[H, W]` after averaging channels.
fn photometric_error_map(g: &mut Graph, center: NodeId, warped: NodeId) -> Result<NodeId> {
    let diff = g.sub(center, warped)?;
    let l1 = g.abs(diff)?;
    let ssim = ssim_map(g, center, warped)?;
    let one_minus = {
        let n = g.neg(ssim)?;
        g.offset(n, 1.0)?
    };
    let dssim = g.scale(one_minus, SSIM_WEIGHT * 0.5)?;
    let l1_w = g.scale(l1, 1.0 - SSIM_WEIGHT)?;
    let pe = g.add(dssim, l1_w)?;
    channel_mean(g, pe)
}

/// Min-reprojection photometric loss over two warped neighbors.
///
/// Each error map is restricted to its validity mask; where both are
/// valid the per-pixel minimum is taken, and the result is averaged over
/// pixels valid in at least one neighbor. Errors if no pixel is valid.
pub fn photometric_loss(
    g: &mut Graph,
    center: NodeId,
    warped_prev: NodeId,
    warped_next: NodeId,
    mask_prev: NodeId,
    mask_next: NodeId,
) -> Result<NodeId> {
    let pe_prev = photometric_error_map(g, center, warped_prev)?;
    let pe_next = photometric_error_map(g, center, warped_next)?;

    let both = g.mul(mask_prev, mask_next)?;
    let min_pe = g.minimum(pe_prev, pe_next)?;
    let both_term = g.mul(both, min_pe)?;

    let not_next = {
        let n = g.neg(mask_next)?;
        g.offset(n, 1.0)?
    };
    let only_prev = g.mul(mask_prev, not_next)?;
    let prev_term = g.mul(only_prev, pe_prev)?;

    let not_prev = {
        let n = g.neg(mask_prev)?;
        g.offset(n, 1.0)?
    };
    let only_next = g.mul(mask_next, not_prev)?;
    let next_term = g.mul(only_next, pe_next)?;

    let sum_masked = {
        let a = g.add(both_term, prev_term)?;
        g.add(a, next_term)?
    };

    // union = m_p + m_n - m_p*m_n
    let mask_sum = g.add(mask_prev, mask_next)?;
    let union = g.sub(mask_sum, both)?;
    let n_valid = g.value(union).sum_f64();
    if n_valid < 0.5 {
        return Err(Error::NoValidPixels);
    }
    let total = g.sum(sum_masked)?;
    let count = g.sum(union)?;
    g.div(total, count)
}

/// Edge-aware first-order smoothness on mean-normalized disparity.
pub fn smoothness_loss(g: &mut Graph, depth: NodeId, image: NodeId) -> Result<NodeId> {
    let s = g.shape(depth).to_vec();
    let (h, w) = (s[0], s[1]);
    let one = g.scalar(1.0);
    let disp = g.div(one, depth)?;
    let mean_disp = g.mean(disp)?;
    let norm = g.div(disp, mean_disp)?;

    let right = g.slice(norm, &[0, 1], &[h, w - 1])?;
    let left = g.slice(norm, &[0, 0], &[h, w - 1])?;
    let dx = g.sub(right, left)?;
    let dx = g.abs(dx)?;
    let down = g.slice(norm, &[1, 0], &[h - 1, w])?;
    let up = g.slice(norm, &[0, 0], &[h - 1, w])?;
    let dy = g.sub(down, up)?;
    let dy = g.abs(dy)?;

    let c = g.shape(image)[2];
    let img_right = g.slice(image, &[0, 1, 0], &[h, w - 1, c])?;
    let img_left = g.slice(image, &[0, 0, 0], &[h, w - 1, c])?;
    let ix = g.sub(img_right, img_left)?;
    let ix = g.abs(ix)?;
    let ix = channel_mean(g, ix)?;
    let img_down = g.slice(image, &[1, 0, 0], &[h - 1, w, c])?;
    let img_up = g.slice(image, &[0, 0, 0], &[h - 1, w, c])?;
    let iy = g.sub(img_down, img_up)?;
    let iy = g.abs(iy)?;
    let iy = channel_mean(g, iy)?;

    let wx = {
        let n = g.neg(ix)?;
        g.exp(n)?
    };
    let wy = {
        let n = g.neg(iy)?;
        g.exp(n)?
    };
    let tx = g.mul(dx, wx)?;
    let ty = g.mul(dy, wy)?;
    let mx = g.mean(tx)?;
    let my = g.mean(ty)?;
    g.add(mx, my)
}

/// `| ||v||_2 - speed * dt |` for one predicted twist.
pub fn velocity_loss(g: &mut Graph, twist: NodeId, speed: f64, dt: f64) -> Result<NodeId> {
    if dt <= 0.0 || speed < 0.0 {
        return Err(Error::InvalidConfig(
            "velocity loss needs dt > 0 and speed >= 0".into(),
        ));
    }
    let v = g.slice(twist, &[3], &[3])?;
    let vv = g.mul(v, v)?;
    let sq = g.sum(vv)?;
    let sq_eps = g.offset(sq, 1e-12)?;
    let norm = g.sqrt(sq_eps)?;
    let target = g.scalar((speed * dt) as f32);
    let diff = g.sub(norm, target)?;
    g.abs(diff)
}

/// `L = L_pr + gamma * L_sm + lambda * L_vel`.
pub fn total_loss(
    g: &mut Graph,
    l_pr: NodeId,
    l_sm: NodeId,
    l_vel: NodeId,
    w: &LossWeights,
) -> Result<NodeId> {
    for &term in &[l_pr, l_sm, l_vel] {
        if !g.value(term).is_all_finite() {
            return Err(Error::NonFinite { op: "total_loss" });
        }
    }
    let sm = g.scale(l_sm, w.gamma)?;
    let vel = g.scale(l_vel, w.lambda)?;
    let a = g.add(l_pr, sm)?;
    g.add(a, vel)
}

/// Everything the adaptation step needs from one triplet.
pub struct TripletLossNodes {
    pub loss: NodeId,
    /// Twist of the (t-1, t) pair: the odometry output.
    pub twist_next: NodeId,
    /// Twist of the (t-2, t-1) pair.
    pub twist_prev: NodeId,
    /// Depth of the center frame.
    pub depth: NodeId,
}

/// Full loss graph for one triplet: depth of the center frame, motions
/// to both neighbors, inverse warps, and the three-term loss.
pub fn triplet_loss(
    g: &mut Graph,
    model: &BoundModel,
    item: &TripletBatchItem,
    cam: &Camera,
    weights: &LossWeights,
) -> Result<TripletLossNodes> {
    weights.validate()?;
    let prev = g.leaf(item.images[0].clone(), false);
    let center = g.leaf(item.images[1].clone(), false);
    let next = g.leaf(item.images[2].clone(), false);

    let depth = depth_forward_graph(g, model, center)?;
    let twist_prev = pose_forward_graph(g, model, prev, center)?;
    let twist_next = pose_forward_graph(g, model, center, next)?;

    // Warp the older neighbor with the inverse of O_{t-2 -> t-1}
    // (center-frame points into the t-2 frame), the newer one with
    // O_{t-1 -> t} directly.
    let pose_prev_fwd = se3_exp_nodes(g, twist_prev)?;
    let pose_prev = pose_inverse_nodes(g, &pose_prev_fwd)?;
    let pose_next = se3_exp_nodes(g, twist_next)?;
    let (warped_prev, mask_prev) = inverse_warp(g, prev, depth, &pose_prev, cam)?;
    let (warped_next, mask_next) = inverse_warp(g, next, depth, &pose_next, cam)?;

    let l_pr = photometric_loss(g, center, warped_prev, warped_next, mask_prev, mask_next)?;
    let l_sm = smoothness_loss(g, depth, center)?;
    let v_prev = velocity_loss(g, twist_prev, item.speeds[0], item.dts[0])?;
    let v_next = velocity_loss(g, twist_next, item.speeds[1], item.dts[1])?;
    let v_sum = g.add(v_prev, v_next)?;
    let l_vel = g.scale(v_sum, 0.5)?;

    let loss = total_loss(g, l_pr, l_sm, l_vel, weights)?;
    Ok(TripletLossNodes {
        loss,
        twist_next,
        twist_prev,
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_img(seed: u64, h: usize, w: usize, c: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::rand_uniform(&[h, w, c], 0.05, 0.95, &mut rng)
    }

    fn full_mask(g: &mut Graph, h: usize, w: usize) -> NodeId {
        g.constant(Tensor::full(&[h, w], 1.0))
    }

    #[test]
    fn identical_images_give_zero_photometric_loss() {
        let mut g = Graph::new();
        let img = rand_img(1, 10, 12, 3);
        let c = g.constant(img.clone());
        let wp = g.constant(img.clone());
        let wn = g.constant(img);
        let mp = full_mask(&mut g, 10, 12);
        let mn = full_mask(&mut g, 10, 12);
        let l = photometric_loss(&mut g, c, wp, wn, mp, mn).unwrap();
        assert!(g.value(l).item().abs() < 1e-6);
    }

    #[test]
    fn min_reprojection_ignores_a_garbage_source() {
        let mut g = Graph::new();
        let img = rand_img(2, 10, 12, 3);
        let c = g.constant(img.clone());
        let wp = g.constant(img.clone());
        let garbage = rand_img(3, 10, 12, 3);
        let wn = g.constant(garbage);
        let mp = full_mask(&mut g, 10, 12);
        let mn = full_mask(&mut g, 10, 12);
        let l = photometric_loss(&mut g, c, wp, wn, mp, mn).unwrap();
        assert!(g.value(l).item().abs() < 1e-6, "loss {}", g.value(l).item());
    }

    #[test]
    fn photometric_errors_when_no_pixel_is_valid() {
        let mut g = Graph::new();
        let img = rand_img(4, 8, 8, 3);
        let c = g.constant(img.clone());
        let wp = g.constant(img.clone());
        let wn = g.constant(img);
        let zero = g.constant(Tensor::zeros(&[8, 8]));
        assert!(matches!(
            photometric_loss(&mut g, c, wp, wn, zero, zero),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn constant_depth_has_zero_smoothness() {
        let mut g = Graph::new();
        let depth = g.constant(Tensor::full(&[8, 10], 4.0));
        let img = g.constant(rand_img(5, 8, 10, 3));
        let l = smoothness_loss(&mut g, depth, img).unwrap();
        assert!(g.value(l).item().abs() < 1e-7);
    }

    #[test]
    fn disparity_ramp_matches_closed_form() {
        // disparity(x) = c0 + c1*x on a constant image. The normalized
        // disparity gradient is c1 / mean(disp) everywhere, the y term
        // vanishes, and the edge weights are 1.
        let (h, w) = (6usize, 9usize);
        let (c0, c1) = (0.5f64, 0.01f64);
        let mut depth_data = Vec::new();
        let mut mean_disp = 0.0f64;
        for _y in 0..h {
            for x in 0..w {
                let disp = c0 + c1 * x as f64;
                mean_disp += disp;
                depth_data.push((1.0 / disp) as f32);
            }
        }
        mean_disp /= (h * w) as f64;
        let expected = c1 / mean_disp;

        let mut g = Graph::new();
        let depth = g.constant(Tensor::new(vec![h, w], depth_data).unwrap());
        let img = g.constant(Tensor::full(&[h, w, 3], 0.5));
        let l = smoothness_loss(&mut g, depth, img).unwrap();
        let got = g.value(l).item() as f64;
        assert!(
            (got - expected).abs() < 1e-4 * expected,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn sharper_edges_reduce_smoothness_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let depth_t = Tensor::rand_uniform(&[8, 10], 2.0, 6.0, &mut rng);
        let img_soft = rand_img(7, 8, 10, 3);
        let img_sharp = img_soft.map(|v| ((v - 0.5) * 5.0 + 0.5).clamp(0.0, 1.0));

        let mut g = Graph::new();
        let depth = g.constant(depth_t.clone());
        let soft = g.constant(img_soft);
        let l_soft = smoothness_loss(&mut g, depth, soft).unwrap();
        let depth2 = g.constant(depth_t);
        let sharp = g.constant(img_sharp);
        let l_sharp = smoothness_loss(&mut g, depth2, sharp).unwrap();
        assert!(g.value(l_sharp).item() < g.value(l_soft).item());
    }

    #[test]
    fn velocity_loss_values() {
        let mut g = Graph::new();
        // ||v|| = 0.2 exactly matches speed * dt = 2.0 * 0.1.
        let t1 = g.constant(Tensor::new(vec![6], vec![0.0, 0.0, 0.0, 0.2, 0.0, 0.0]).unwrap());
        let l1 = velocity_loss(&mut g, t1, 2.0, 0.1).unwrap();
        assert!(g.value(l1).item().abs() < 1e-6);

        // ||v|| = 0.3 against 0.2 -> 0.1.
        let t2 = g.constant(Tensor::new(vec![6], vec![0.0, 0.0, 0.0, 0.0, 0.3, 0.0]).unwrap());
        let l2 = velocity_loss(&mut g, t2, 2.0, 0.1).unwrap();
        assert!((g.value(l2).item() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights::default();
        let mut g = Graph::new();
        let pr = g.scalar(1.0);
        let sm = g.scalar(2.0);
        let vel = g.scalar(3.0);
        let l = total_loss(&mut g, pr, sm, vel, &w).unwrap();
        assert!((g.value(l).item() - 1.152).abs() < 1e-6);

        let z = g.scalar(0.0);
        let lz = total_loss(&mut g, z, z, z, &w).unwrap();
        assert_eq!(g.value(lz).item(), 0.0);

        let w0 = LossWeights {
            gamma: 0.0,
            lambda: 0.0,
        };
        let l0 = total_loss(&mut g, pr, sm, vel, &w0).unwrap();
        assert_eq!(g.value(l0).item(), 1.0);
    }

    #[test]
    fn total_loss_is_linear_in_each_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            use rand::Rng;
            let (a, b, c) = (
                rng.gen_range(0.0..2.0f32),
                rng.gen_range(0.0..2.0f32),
                rng.gen_range(0.0..2.0f32),
            );
            let w = LossWeights {
                gamma: rng.gen_range(0.0..0.5),
                lambda: rng.gen_range(0.0..0.5),
            };
            let mut g = Graph::new();
            let pr = g.scalar(a);
            let sm = g.scalar(b);
            let vel = g.scalar(c);
            let l = total_loss(&mut g, pr, sm, vel, &w).unwrap();
            let want = a + w.gamma * b + w.lambda * c;
            assert!((g.value(l).item() - want).abs() < 1e-6);
        }
    }

    #[test]
    fn all_terms_are_non_negative() {
        for seed in 0..10 {
            let mut g = Graph::new();
            let c = g.constant(rand_img(seed, 8, 8, 3));
            let wp = g.constant(rand_img(seed + 1, 8, 8, 3));
            let wn = g.constant(rand_img(seed + 2, 8, 8, 3));
            let mp = full_mask(&mut g, 8, 8);
            let mn = full_mask(&mut g, 8, 8);
            let pr = photometric_loss(&mut g, c, wp, wn, mp, mn).unwrap();
            assert!(g.value(pr).item() >= 0.0);

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let depth = g.constant(Tensor::rand_uniform(&[8, 8], 1.0, 9.0, &mut rng));
            let img = g.constant(rand_img(seed + 3, 8, 8, 3));
            let sm = smoothness_loss(&mut g, depth, img).unwrap();
            assert!(g.value(sm).item() >= 0.0);

            let tw = g.constant(Tensor::rand_uniform(&[6], -0.5, 0.5, &mut rng));
            let vel = velocity_loss(&mut g, tw, 1.0, 0.1).unwrap();
            assert!(g.value(vel).item() >= 0.0);
        }
    }
}
