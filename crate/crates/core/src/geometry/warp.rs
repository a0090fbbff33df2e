//! Differentiable inverse warping on the autodiff graph.
//!
//! Each target pixel is backprojected with its depth, moved by the
//! target-to-source pose, projected into the source image, and sampled
//! bilinearly. Samples falling outside the source contribute zero and
//! are masked out rather than clamped.

use super::{Camera, Pose};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// A pose as graph nodes: rotation `[3,3]` and translation `[3]`.
/// Built either from a twist (differentiable) or from a constant pose.
#[derive(Debug, Clone, Copy)]
pub struct PoseNodes {
    pub rotation: NodeId,
    pub translation: NodeId,
}

/// Exponential map over graph nodes. `twist` is a `[6]` tensor laid out
/// `[omega, v]`; the rotation follows Rodrigues with the
/// `2 sin^2(theta/2)` form of `(1 - cos)/theta^2`, which stays exact
/// down to theta = 0 once `theta^2` is floored at 1e-24.
pub fn se3_exp_nodes(g: &mut Graph, twist: NodeId) -> Result<PoseNodes> {
    if g.shape(twist) != [6] {
        return Err(Error::ShapeMismatch {
            op: "se3_exp_nodes",
            lhs: g.shape(twist).to_vec(),
            rhs: vec![6],
        });
    }
    let omega = g.slice(twist, &[0], &[3])?;
    let v = g.slice(twist, &[3], &[3])?;

    let om_sq = g.mul(omega, omega)?;
    let theta_sq_raw = g.sum(om_sq)?;
    let theta_sq = g.offset(theta_sq_raw, 1e-24)?;
    let theta = g.sqrt(theta_sq)?;

    let sin_theta = g.sin(theta)?;
    let a = g.div(sin_theta, theta)?;
    let half = g.scale(theta, 0.5)?;
    let sin_half = g.sin(half)?;
    let sin_half_sq = g.mul(sin_half, sin_half)?;
    let two_sh = g.scale(sin_half_sq, 2.0)?;
    let b = g.div(two_sh, theta_sq)?;

    let wx = g.slice(omega, &[0], &[1])?;
    let wy = g.slice(omega, &[1], &[1])?;
    let wz = g.slice(omega, &[2], &[1])?;
    let nwx = g.neg(wx)?;
    let nwy = g.neg(wy)?;
    let nwz = g.neg(wz)?;
    let zero = g.constant(Tensor::zeros(&[1]));
    let k_flat = g.concat(&[zero, nwz, wy, wz, zero, nwx, nwy, wx, zero], 0)?;
    let k = g.reshape(k_flat, &[3, 3])?;
    let k2 = g.matmul(k, k)?;

    let eye = g.constant(Tensor::new(
        vec![3, 3],
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    )?);
    let ak = g.mul(k, a)?;
    let bk2 = g.mul(k2, b)?;
    let r_partial = g.add(eye, ak)?;
    let rotation = g.add(r_partial, bk2)?;

    Ok(PoseNodes {
        rotation,
        translation: v,
    })
}

/// Group inverse on graph nodes: `R' = R^T`, `t' = -R^T t`.
pub fn pose_inverse_nodes(g: &mut Graph, pose: &PoseNodes) -> Result<PoseNodes> {
    let r_t = g.transpose2(pose.rotation)?;
    let t_col = g.reshape(pose.translation, &[3, 1])?;
    let rt_t = g.matmul(r_t, t_col)?;
    let neg = g.neg(rt_t)?;
    let translation = g.reshape(neg, &[3])?;
    Ok(PoseNodes {
        rotation: r_t,
        translation,
    })
}

/// Constant pose as graph nodes (no gradient).
pub fn pose_nodes_const(g: &mut Graph, pose: &Pose) -> PoseNodes {
    let mut r = Vec::with_capacity(9);
    for row in &pose.rotation {
        for &v in row {
            r.push(v as f32);
        }
    }
    let t: Vec<f32> = pose.translation.iter().map(|&v| v as f32).collect();
    PoseNodes {
        rotation: g.constant(Tensor::new(vec![3, 3], r).expect("rotation shape")),
        translation: g.constant(Tensor::new(vec![3], t).expect("translation shape")),
    }
}

/// Warp `source` into the target frame: for every target pixel,
/// backproject with `target_depth`, transform by `pose` (target frame to
/// source frame), project, and sample. Returns `(warped, valid_mask)`
/// with the warped image zeroed where the mask is zero.
///
/// Differentiable w.r.t. the source image, the depth, and any twist
/// behind `pose`. The mask carries no gradient.
pub fn inverse_warp(
    g: &mut Graph,
    source: NodeId,
    target_depth: NodeId,
    pose: &PoseNodes,
    cam: &Camera,
) -> Result<(NodeId, NodeId)> {
    let src_shape = g.shape(source).to_vec();
    let dep_shape = g.shape(target_depth).to_vec();
    if src_shape.len() != 3 || dep_shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "inverse_warp",
            lhs: src_shape,
            rhs: dep_shape,
        });
    }
    let (h, w, c) = (src_shape[0], src_shape[1], src_shape[2]);
    if dep_shape != [h, w] || h != cam.height || w != cam.width {
        return Err(Error::ShapeMismatch {
            op: "inverse_warp",
            lhs: src_shape,
            rhs: dep_shape,
        });
    }
    if g.value(target_depth).data().iter().any(|&d| d <= 0.0) {
        return Err(Error::NonPositiveDepth);
    }

    // Backproject: P = depth * ((u-cx)/fx, (v-cy)/fy, 1).
    let mut dir_x = Vec::with_capacity(h * w);
    let mut dir_y = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            dir_x.push(((x as f64 - cam.cx) / cam.fx) as f32);
            dir_y.push(((y as f64 - cam.cy) / cam.fy) as f32);
        }
    }
    let dir_x = g.constant(Tensor::new(vec![h, w], dir_x)?);
    let dir_y = g.constant(Tensor::new(vec![h, w], dir_y)?);
    let px = g.mul(target_depth, dir_x)?;
    let py = g.mul(target_depth, dir_y)?;
    let n = h * w;
    let px = g.reshape(px, &[n, 1])?;
    let py = g.reshape(py, &[n, 1])?;
    let pz = g.reshape(target_depth, &[n, 1])?;
    let points = g.concat(&[px, py, pz], 1)?;

    // Row-vector transform: P_src = P * R^T + t.
    let r_t = g.transpose2(pose.rotation)?;
    let rotated = g.matmul(points, r_t)?;
    let moved = g.add(rotated, pose.translation)?;

    let sx = g.slice(moved, &[0, 0], &[n, 1])?;
    let sy = g.slice(moved, &[0, 1], &[n, 1])?;
    let sz = g.slice(moved, &[0, 2], &[n, 1])?;
    // Points at or behind the camera plane project nowhere; the depth
    // clamp keeps the division finite and the positivity mask below
    // removes them.
    let sz_safe = g.clamp(sz, 1e-3, 1e6)?;
    let z_positive: Vec<f32> = g
        .value(sz)
        .data()
        .iter()
        .map(|&z| if z > 1e-3 { 1.0 } else { 0.0 })
        .collect();

    let xu = g.div(sx, sz_safe)?;
    let yv = g.div(sy, sz_safe)?;
    let u = {
        let f = g.scale(xu, cam.fx as f32)?;
        g.offset(f, cam.cx as f32)?
    };
    let v = {
        let f = g.scale(yv, cam.fy as f32)?;
        g.offset(f, cam.cy as f32)?
    };
    let coords_flat = g.concat(&[u, v], 1)?;
    let coords = g.reshape(coords_flat, &[h, w, 2])?;

    let warped_raw = g.grid_sample(source, coords)?;
    let bounds_mask = g.in_bounds_mask(coords, h, w)?;
    let z_mask = g.constant(Tensor::new(vec![h, w], z_positive)?);
    let mask = g.mul(bounds_mask, z_mask)?;

    // Zero out invalid pixels exactly (bilinear taps near the border can
    // otherwise leak partial values).
    let mask_hw1 = g.reshape(mask, &[h, w, 1])?;
    let mask_c = if c == 1 {
        mask_hw1
    } else {
        let copies = vec![mask_hw1; c];
        g.concat(&copies, 2)?
    };
    let warped = g.mul(warped_raw, mask_c)?;
    Ok((warped, mask))
}

/// Plain-tensor warp for inference and tests: builds a throwaway graph
/// over constants.
pub fn warp_image(
    source: &Tensor,
    target_depth: &Tensor,
    pose: &Pose,
    cam: &Camera,
) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let src = g.constant(source.clone());
    let dep = g.constant(target_depth.clone());
    let pn = pose_nodes_const(&mut g, pose);
    let (warped, mask) = inverse_warp(&mut g, src, dep, &pn, cam)?;
    Ok((g.value(warped).clone(), g.value(mask).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};

    fn smooth_image(h: usize, w: usize, c: usize) -> Tensor {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = 0.5
                        + 0.25 * ((x as f32) * 0.21 + ch as f32).sin()
                        + 0.2 * ((y as f32) * 0.17 - 0.3 * ch as f32).cos();
                    data.push(0.5 + 0.4 * (v - 0.5));
                }
            }
        }
        Tensor::new(vec![h, w, c], data).unwrap()
    }

    #[test]
    fn identity_pose_reproduces_source() {
        let cam = Camera::new(60.0, 60.0, 15.5, 11.5, 32, 24).unwrap();
        let img = smooth_image(24, 32, 3);
        let depth = Tensor::full(&[24, 32], 5.0);
        let (warped, mask) = warp_image(&img, &depth, &Pose::identity(), &cam).unwrap();
        assert!(mask.data().iter().all(|&m| m == 1.0));
        for (a, b) in warped.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn graph_exp_matches_f64_exp() {
        let tw = Twist {
            omega: [0.21, -0.4, 0.13],
            v: [0.6, -0.2, 0.05],
        };
        let mut g = Graph::new();
        let t6: Vec<f32> = tw.to_vec6().iter().map(|&v| v as f32).collect();
        let node = g.constant(Tensor::new(vec![6], t6).unwrap());
        let pn = se3_exp_nodes(&mut g, node).unwrap();
        let ref_pose = se3_exp(&tw);
        let r = g.value(pn.rotation).data();
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (r[i * 3 + j] - ref_pose.rotation[i][j] as f32).abs() < 1e-6,
                    "rotation ({i},{j})"
                );
            }
        }
        let t = g.value(pn.translation).data();
        for i in 0..3 {
            assert!((t[i] - ref_pose.translation[i] as f32).abs() < 1e-7);
        }
    }

    #[test]
    fn graph_exp_zero_twist_is_identity() {
        let mut g = Graph::new();
        let node = g.constant(Tensor::zeros(&[6]));
        let pn = se3_exp_nodes(&mut g, node).unwrap();
        let r = g.value(pn.rotation).data();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r[i * 3 + j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pure_x_translation_shifts_by_fx_tx_over_depth() {
        // fx * tx / d = 60 * 0.5 / 10 = 3 pixels, landing on integer
        // coordinates so sampling is exact.
        let cam = Camera::new(60.0, 60.0, 15.5, 11.5, 32, 24).unwrap();
        let img = smooth_image(24, 32, 1);
        let depth = Tensor::full(&[24, 32], 10.0);
        let pose = Pose {
            rotation: Pose::identity().rotation,
            translation: [0.5, 0.0, 0.0],
        };
        let (warped, mask) = warp_image(&img, &depth, &pose, &cam).unwrap();
        for y in 0..24usize {
            for x in 0..32usize {
                if mask.data()[y * 32 + x] == 1.0 {
                    let expect = img.data()[y * 32 + (x + 3)];
                    let got = warped.data()[y * 32 + x];
                    assert!((got - expect).abs() < 1e-4, "pixel ({x},{y})");
                }
            }
        }
        // The three rightmost columns sample outside the source.
        assert_eq!(mask.data()[0 * 32 + 31], 0.0);
        assert_eq!(mask.data()[0 * 32 + 29], 0.0);
        assert_eq!(mask.data()[0 * 32 + 28], 1.0);
    }

    #[test]
    fn warp_roundtrip_restores_image() {
        let cam = Camera::new(60.0, 60.0, 15.5, 11.5, 32, 24).unwrap();
        let img = smooth_image(24, 32, 3);
        let depth = Tensor::full(&[24, 32], 8.0);
        let tw = Twist {
            omega: [0.0, 0.02, 0.0],
            v: [0.25, 0.0, 0.0],
        };
        let pose = se3_exp(&tw);
        let (once, mask1) = warp_image(&img, &depth, &pose, &cam).unwrap();
        let (twice, mask2) = warp_image(&once, &depth, &pose.inverse(), &cam).unwrap();
        let mut err = 0.0f64;
        let mut count = 0usize;
        for y in 0..24usize {
            for x in 0..32usize {
                // Valid both ways; also require the intermediate pixel the
                // second warp reads from to be valid in the first warp.
                if mask1.data()[y * 32 + x] == 1.0 && mask2.data()[y * 32 + x] == 1.0 {
                    for ch in 0..3 {
                        let i = (y * 32 + x) * 3 + ch;
                        if once.data()[i] != 0.0 {
                            err += (twice.data()[i] - img.data()[i]).abs() as f64;
                            count += 1;
                        }
                    }
                }
            }
        }
        assert!(count > 500, "too few valid pixels: {count}");
        let mean_err = err / count as f64;
        assert!(mean_err < 2e-2, "roundtrip error {mean_err}");
    }

    #[test]
    fn non_positive_depth_is_rejected() {
        let cam = Camera::new(60.0, 60.0, 15.5, 11.5, 32, 24).unwrap();
        let img = smooth_image(24, 32, 1);
        let mut depth = Tensor::full(&[24, 32], 4.0);
        depth.data_mut()[5] = 0.0;
        assert!(matches!(
            warp_image(&img, &depth, &Pose::identity(), &cam),
            Err(Error::NonPositiveDepth)
        ));
    }
}
