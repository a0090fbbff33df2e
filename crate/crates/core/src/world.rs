//! Deterministic multi-domain sequence generator.
//!
//! The scene is a corridor of vertical, fronto-parallel textured strips:
//! the world x-axis is tiled with panels of fixed width, each panel at
//! one of the depths in `depth_layout` (cycling), plus an infinite
//! backstop plane behind everything. The camera slides along +x looking
//! toward +z with a gentle yaw oscillation, which gives strong parallax,
//! piecewise-constant ground-truth depth, and exact ground-truth poses.
//!
//! Textures are per-panel sums of a few low-frequency sinusoids, so
//! frames stay band-limited and bilinear resampling is nearly exact —
//! the property every photometric-consistency test builds on. Rendered
//! frames are quantized to the 16-bit grid of the PNG container so that
//! save/load roundtrips are bit-exact.

use crate::error::{Error, Result};
use crate::geometry::{rodrigues, Camera, Pose};
use crate::seqio;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const STRIP_WIDTH: f64 = 4.0;
const SINUSOIDS_PER_TEXTURE: usize = 4;
const TEXTURE_AMPLITUDE: f32 = 0.38;
/// Yaw beyond this would point pixel rays away from the strip planes.
const MAX_YAW: f64 = 0.45;

/// Appearance and geometry of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub tag: String,
    pub texture_seed: u64,
    /// Spatial frequency multiplier of the panel textures.
    pub texture_scale: f64,
    /// Per-channel gain applied after texturing.
    pub gain: [f64; 3],
    /// Per-channel offset applied after the gain.
    pub offset: [f64; 3],
    pub noise_sigma: f64,
    /// Panel depths in meters, cycled along the corridor.
    pub depth_layout: Vec<f64>,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth_layout.is_empty()
            || self
                .depth_layout
                .iter()
                .any(|&d| !(0.5..=50.0).contains(&d))
        {
            return Err(Error::InvalidConfig(
                "panel depths must lie in [0.5, 50] m".into(),
            ));
        }
        if self.gain.iter().any(|&g| g <= 0.0) {
            return Err(Error::InvalidConfig("gains must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    fn backstop_depth(&self) -> f64 {
        1.3 * self
            .depth_layout
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Camera motion script: the camera translates along world +x at
/// `speed_profile` and yaws per `yaw_rate_profile`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub n_frames: usize,
    pub dt: f64,
    pub speed_profile: Vec<f64>,
    pub yaw_rate_profile: Vec<f64>,
    pub seed: u64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 3 {
            return Err(Error::InvalidConfig("need at least 3 frames".into()));
        }
        if self.speed_profile.len() != self.n_frames
            || self.yaw_rate_profile.len() != self.n_frames
        {
            return Err(Error::InvalidConfig(
                "profiles must have one entry per frame".into(),
            ));
        }
        if self.dt <= 0.0 || self.speed_profile.iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidConfig(
                "dt must be positive and speeds >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Steady forward motion with mild seeded speed jitter and a slow
    /// yaw oscillation.
    pub fn cruise(n_frames: usize, dt: f64, speed: f64, yaw_amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a7e);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let period: f64 = rng.gen_range(30.0..50.0);
        let speed_profile = (0..n_frames)
            .map(|_| speed * rng.gen_range(0.9..1.1))
            .collect();
        let yaw_rate_profile = (0..n_frames)
            .map(|i| yaw_amplitude * (std::f64::consts::TAU * i as f64 / period + phase).sin())
            .collect();
        TrajectorySpec {
            n_frames,
            dt,
            speed_profile,
            yaw_rate_profile,
            seed,
        }
    }
}

/// Everything a rendered sequence carries.
#[derive(Debug, Clone)]
pub struct RenderedSequence {
    pub frames: Vec<Tensor>,
    /// Camera-to-world pose per frame.
    pub gt_poses: Vec<Pose>,
    pub gt_depths: Vec<Tensor>,
    /// Forward-looking speed: `speeds[i] * dt` is the distance covered
    /// between frames `i` and `i+1` (the last entry repeats).
    pub speeds: Vec<f64>,
    pub timestamps: Vec<f64>,
}

struct Texture {
    // per channel: (amplitude, freq_x, freq_y, phase)
    waves: [[(f32, f32, f32, f32); SINUSOIDS_PER_TEXTURE]; 3],
}

impl Texture {
    fn generate(seed: u64, panel: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(panel));
        let mut waves = [[(0.0f32, 0.0f32, 0.0f32, 0.0f32); SINUSOIDS_PER_TEXTURE]; 3];
        for channel in waves.iter_mut() {
            let mut remaining = TEXTURE_AMPLITUDE;
            for (k, wave) in channel.iter_mut().enumerate() {
                let amp = if k + 1 == SINUSOIDS_PER_TEXTURE {
                    remaining
                } else {
                    let a = rng.gen_range(0.3..0.7) * remaining;
                    remaining -= a;
                    a
                };
                let freq = rng.gen_range(0.4..1.6) * scale as f32;
                let dir: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
                let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
                *wave = (amp, freq * dir.cos(), freq * dir.sin(), phase);
            }
        }
        Texture { waves }
    }

    #[inline]
    fn sample(&self, x: f64, y: f64, channel: usize) -> f32 {
        let mut v = 0.5f32;
        for &(amp, wx, wy, phase) in &self.waves[channel] {
            v += amp * (wx * x as f32 + wy * y as f32 + phase).sin();
        }
        v
    }
}

/// Panel index along the corridor for a world x coordinate.
fn panel_of(x: f64) -> i64 {
    (x / STRIP_WIDTH).floor() as i64
}

/// Cast one world-space ray against the corridor; returns the hit
/// (panel texture index, world point, camera-frame depth).
fn cast_ray(
    domain: &DomainSpec,
    origin: [f64; 3],
    dir: [f64; 3],
    cam_z_axis: [f64; 3],
) -> Option<(usize, [f64; 3], f64)> {
    if dir[2] <= 1e-6 {
        return None;
    }
    let m = domain.depth_layout.len();
    let mut best: Option<(usize, [f64; 3], f64)> = None;
    for (j, &plane_z) in domain.depth_layout.iter().enumerate() {
        let t = (plane_z - origin[2]) / dir[2];
        if t <= 0.0 {
            continue;
        }
        let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], plane_z];
        let panel = panel_of(p[0]);
        if (panel.rem_euclid(m as i64)) as usize != j {
            continue;
        }
        let rel = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
        let depth = rel[0] * cam_z_axis[0] + rel[1] * cam_z_axis[1] + rel[2] * cam_z_axis[2];
        if depth <= 0.0 {
            continue;
        }
        if best.map_or(true, |(_, _, d)| depth < d) {
            best = Some((j, p, depth));
        }
    }
    if best.is_none() {
        // Backstop plane: always hit for dir.z > 0.
        let plane_z = domain.backstop_depth();
        let t = (plane_z - origin[2]) / dir[2];
        let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], plane_z];
        let rel = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
        let depth = rel[0] * cam_z_axis[0] + rel[1] * cam_z_axis[1] + rel[2] * cam_z_axis[2];
        best = Some((m, p, depth));
    }
    best
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; both uniforms strictly inside (0, 1).
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Render a full sequence with exact ground truth.
pub fn render_sequence(
    domain: &DomainSpec,
    traj: &TrajectorySpec,
    cam: &Camera,
) -> Result<RenderedSequence> {
    domain.validate()?;
    traj.validate()?;

    // Integrate the trajectory.
    let mut gt_poses = Vec::with_capacity(traj.n_frames);
    let mut position = [0.0f64, 0.0, 0.0];
    let mut yaw = 0.0f64;
    let min_depth = domain
        .depth_layout
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    for i in 0..traj.n_frames {
        if yaw.abs() > MAX_YAW || position[2] > min_depth - 1.0 {
            return Err(Error::TrajectoryOutOfBounds { frame: i });
        }
        let rotation = rodrigues([0.0, yaw, 0.0]);
        gt_poses.push(Pose {
            rotation,
            translation: position,
        });
        position[0] += traj.speed_profile[i] * traj.dt;
        yaw += traj.yaw_rate_profile[i] * traj.dt;
    }

    let m = domain.depth_layout.len();
    let textures: Vec<Texture> = (0..=m)
        .map(|j| Texture::generate(domain.texture_seed, j as u64, domain.texture_scale))
        .collect();

    let mut frames = Vec::with_capacity(traj.n_frames);
    let mut gt_depths = Vec::with_capacity(traj.n_frames);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(domain.texture_seed ^ traj.seed ^ 0xAB);
    for pose in &gt_poses {
        let r = &pose.rotation;
        let cam_z = [r[0][2], r[1][2], r[2][2]];
        let mut img = Vec::with_capacity(cam.height * cam.width * 3);
        let mut dep = Vec::with_capacity(cam.height * cam.width);
        for v in 0..cam.height {
            for u in 0..cam.width {
                let d_cam = [
                    (u as f64 - cam.cx) / cam.fx,
                    (v as f64 - cam.cy) / cam.fy,
                    1.0,
                ];
                let d_world = [
                    r[0][0] * d_cam[0] + r[0][1] * d_cam[1] + r[0][2] * d_cam[2],
                    r[1][0] * d_cam[0] + r[1][1] * d_cam[1] + r[1][2] * d_cam[2],
                    r[2][0] * d_cam[0] + r[2][1] * d_cam[1] + r[2][2] * d_cam[2],
                ];
                let hit = cast_ray(domain, pose.translation, d_world, cam_z);
                let Some((tex_idx, p, depth)) = hit else {
                    return Err(Error::TrajectoryOutOfBounds { frame: frames.len() });
                };
                dep.push(depth as f32);
                for ch in 0..3 {
                    let t = textures[tex_idx].sample(p[0], p[1], ch);
                    let mut val = domain.gain[ch] as f32 * t + domain.offset[ch] as f32;
                    if domain.noise_sigma > 0.0 {
                        val += (domain.noise_sigma * gaussian(&mut noise_rng)) as f32;
                    }
                    img.push(val.clamp(0.0, 1.0));
                }
            }
        }
        frames.push(seqio::quantize16(&Tensor::new(
            vec![cam.height, cam.width, 3],
            img,
        )?));
        gt_depths.push(Tensor::new(vec![cam.height, cam.width], dep)?);
    }

    // Forward-looking speeds so that speeds[i] * dt equals the distance
    // between consecutive ground-truth positions exactly.
    let mut speeds: Vec<f64> = (0..traj.n_frames - 1)
        .map(|i| {
            let a = &gt_poses[i].translation;
            let b = &gt_poses[i + 1].translation;
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
                / traj.dt
        })
        .collect();
    speeds.push(*speeds.last().expect("n_frames >= 3"));
    let timestamps = (0..traj.n_frames).map(|i| i as f64 * traj.dt).collect();

    Ok(RenderedSequence {
        frames,
        gt_poses,
        gt_depths,
        speeds,
        timestamps,
    })
}

/// A source/target domain pair with a fixed, documented gap: different
/// panel textures (seed and spatial scale), a darker per-channel
/// photometric transfer, and a different depth layout.
pub fn make_domain_pair(seed: u64) -> (DomainSpec, DomainSpec) {
    let a = DomainSpec {
        tag: "domain-a".into(),
        texture_seed: seed * 2 + 1,
        texture_scale: 1.0,
        gain: [1.0, 1.0, 1.0],
        offset: [0.0, 0.0, 0.0],
        noise_sigma: 0.0,
        depth_layout: vec![6.0, 9.5, 13.0, 7.5, 11.0],
    };
    let b = DomainSpec {
        tag: "domain-b".into(),
        texture_seed: seed * 2 + 2,
        texture_scale: 1.4,
        gain: [0.62, 0.66, 0.72],
        offset: [0.05, 0.05, 0.08],
        noise_sigma: 0.0,
        depth_layout: vec![4.5, 12.0, 7.0, 14.5, 9.0],
    };
    (a, b)
}

/// Write a rendered sequence in the shared directory layout.
pub fn save_rendered(
    dir: &std::path::Path,
    seq: &RenderedSequence,
    domain: &DomainSpec,
) -> Result<()> {
    seqio::save_sequence(dir, &seq.frames, &seq.timestamps, &seq.speeds, Some(&seq.gt_poses))?;
    std::fs::write(
        dir.join("domain.json"),
        serde_json::to_string_pretty(domain)?,
    )?;
    Ok(())
}
