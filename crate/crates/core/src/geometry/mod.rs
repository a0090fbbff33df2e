//! Rigid-body transforms, the pinhole camera, and differentiable
//! inverse warping.
//!
//! Pose math is carried in f64 so trajectory-level identities hold to
//! tight tolerances; the warp in [`warp`] builds f32 graph nodes on top
//! of the same conventions. The pose `O_{a->b}` maps points expressed in
//! camera frame `a` into camera frame `b`.

mod warp;

pub use warp::{
    inverse_warp, pose_inverse_nodes, pose_nodes_const, se3_exp_nodes, warp_image, PoseNodes,
};

use crate::error::{Error, Result};

/// Rotation (3x3, orthonormal, det +1) plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

/// Axis-angle rotation (radians) and translation (meters). The
/// translation is decoupled from the rotation: `se3_exp` uses it
/// directly, with no V-matrix coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: [f64; 3],
    pub v: [f64; 3],
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            omega: [0.0; 3],
            v: [0.0; 3],
        }
    }

    /// Layout used by the pose network head: `[omega, v]`.
    pub fn from_vec6(x: [f64; 6]) -> Self {
        Twist {
            omega: [x[0], x[1], x[2]],
            v: [x[3], x[4], x[5]],
        }
    }

    pub fn to_vec6(&self) -> [f64; 6] {
        [
            self.omega[0],
            self.omega[1],
            self.omega[2],
            self.v[0],
            self.v[1],
            self.v[2],
        ]
    }

    pub fn translation_norm(&self) -> f64 {
        (self.v[0] * self.v[0] + self.v[1] * self.v[1] + self.v[2] * self.v[2]).sqrt()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let p = Pose {
            rotation,
            translation,
        };
        p.validate()?;
        Ok(p)
    }

    /// Orthonormality and orientation check at 1e-6.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::InvalidPose(format!(
                        "R^T R deviates from identity at ({i},{j}) by {:e}",
                        (dot - want).abs()
                    )));
                }
            }
        }
        if (det3(r) - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidPose(format!("det(R) = {}", det3(r))));
        }
        Ok(())
    }

    /// Group composition: `(a.compose(b))(p) = a(b(p))`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| self.rotation[i][k] * other.rotation[k][j]).sum();
            }
        }
        let mut t = [0.0; 3];
        for i in 0..3 {
            t[i] = self.translation[i]
                + (0..3)
                    .map(|k| self.rotation[i][k] * other.translation[k])
                    .sum::<f64>();
        }
        Pose {
            rotation: r,
            translation: t,
        }
    }

    pub fn inverse(&self) -> Pose {
        let mut rt = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rt[i][j] = self.rotation[j][i];
            }
        }
        let mut t = [0.0; 3];
        for i in 0..3 {
            t[i] = -(0..3).map(|k| rt[i][k] * self.translation[k]).sum::<f64>();
        }
        Pose {
            rotation: rt,
            translation: t,
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.translation[i]
                + (0..3).map(|k| self.rotation[i][k] * p[k]).sum::<f64>();
        }
        out
    }

    /// Rotation angle in radians. Uses `atan2` of the skew norm against
    /// the trace term, which stays accurate near zero where plain
    /// `acos((tr-1)/2)` amplifies rounding to ~1e-8.
    pub fn rotation_angle(&self) -> f64 {
        let r = &self.rotation;
        let s = {
            let x = r[2][1] - r[1][2];
            let y = r[0][2] - r[2][0];
            let z = r[1][0] - r[0][1];
            0.5 * (x * x + y * y + z * z).sqrt()
        };
        let c = ((r[0][0] + r[1][1] + r[2][2]) - 1.0) / 2.0;
        s.atan2(c)
    }

    pub fn translation_norm(&self) -> f64 {
        let t = &self.translation;
        (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt()
    }

    /// Row-major 3x4 flattening used by pose files and step logs.
    pub fn to_mat34(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 4 + j] = self.rotation[i][j];
            }
            out[i * 4 + 3] = self.translation[i];
        }
        out
    }

    pub fn from_mat34(m: &[f64; 12]) -> Result<Self> {
        let rotation = [
            [m[0], m[1], m[2]],
            [m[4], m[5], m[6]],
            [m[8], m[9], m[10]],
        ];
        Pose::new(rotation, [m[3], m[7], m[11]])
    }
}

fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Exponential map with decoupled translation: Rodrigues rotation from
/// `omega`, translation equal to `v`. Small angles take the series path.
pub fn se3_exp(t: &Twist) -> Pose {
    Pose {
        rotation: rodrigues(t.omega),
        translation: t.v,
    }
}

/// Rodrigues formula `R = I + a K + b K^2` with `a = sin(theta)/theta`
/// and `b = (1 - cos(theta))/theta^2` evaluated by series below 1e-8.
pub fn rodrigues(omega: [f64; 3]) -> [[f64; 3]; 3] {
    let theta_sq = omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2];
    let theta = theta_sq.sqrt();
    let (a, b) = if theta < 1e-8 {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        let half_sin = (theta / 2.0).sin();
        (theta.sin() / theta, 2.0 * half_sin * half_sin / theta_sq)
    };
    let k = [
        [0.0, -omega[2], omega[1]],
        [omega[2], 0.0, -omega[0]],
        [-omega[1], omega[0], 0.0],
    ];
    let mut k2 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k2[i][j] = (0..3).map(|l| k[i][l] * k[l][j]).sum();
        }
    }
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidConfig("focal lengths must be positive".into()));
        }
        if cx < 0.0 || cx >= width as f64 || cy < 0.0 || cy >= height as f64 {
            return Err(Error::InvalidConfig(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Defaults used by the synthetic sequences: 64x48, f = 60 px,
    /// principal point at the pixel-grid center.
    pub fn default_synthetic() -> Self {
        Camera {
            fx: 60.0,
            fy: 60.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
        }
    }

    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        [
            depth * (u - self.cx) / self.fx,
            depth * (v - self.cy) / self.fy,
            depth,
        ]
    }

    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }
}
