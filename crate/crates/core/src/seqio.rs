//! Sequence directory I/O.
//!
//! Layout:
//!
//! ```text
//! <seq>/frames/%06d.png   16-bit RGB, values quantized to v/65535
//! <seq>/poses_gt.txt      12 numbers per line, row-major 3x4, camera-to-world
//! <seq>/speeds.csv        header "timestamp,speed", one row per frame
//! <seq>/domain.json       free-form generator metadata (optional)
//! ```
//!
//! Floats in the text files use Rust's shortest-roundtrip formatting, so
//! save/load is exact.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::tensor::Tensor;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Quantize a `[H, W, 3]` tensor in [0, 1] to 16-bit and write a PNG.
pub fn save_image16(img: &Tensor, path: &Path) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::ShapeMismatch {
            op: "save_image16",
            lhs: s.to_vec(),
            rhs: vec![0, 0, 3],
        });
    }
    let (h, w) = (s[0] as u32, s[1] as u32);
    let data: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(w, h, data)
            .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
    image::DynamicImage::ImageRgb16(buf)
        .save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_image16(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.into_rgb16();
    let (w, h) = img.dimensions();
    let data: Vec<f32> = img.as_raw().iter().map(|&v| v as f32 / 65535.0).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

/// Round a tensor to the 16-bit grid used by the PNG container, making
/// later save/load roundtrips bit-exact.
pub fn quantize16(img: &Tensor) -> Tensor {
    img.map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0)
}

/// A sequence in memory: frames with timestamps and speeds, plus ground
/// truth when available.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub frames: Vec<Tensor>,
    pub timestamps: Vec<f64>,
    pub speeds: Vec<f64>,
    pub gt_poses: Option<Vec<Pose>>,
    pub domain_tag: String,
}

pub fn save_sequence(
    dir: &Path,
    frames: &[Tensor],
    timestamps: &[f64],
    speeds: &[f64],
    gt_poses: Option<&[Pose]>,
) -> Result<()> {
    assert_eq!(frames.len(), timestamps.len());
    assert_eq!(frames.len(), speeds.len());
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    for (i, frame) in frames.iter().enumerate() {
        save_image16(frame, &frames_dir.join(format!("{i:06}.png")))?;
    }
    let mut w = BufWriter::new(fs::File::create(dir.join("speeds.csv"))?);
    writeln!(w, "timestamp,speed")?;
    for (t, s) in timestamps.iter().zip(speeds) {
        writeln!(w, "{t},{s}")?;
    }
    w.flush()?;
    if let Some(poses) = gt_poses {
        assert_eq!(poses.len(), frames.len());
        let mut w = BufWriter::new(fs::File::create(dir.join("poses_gt.txt"))?);
        for p in poses {
            let m = p.to_mat34();
            let line: Vec<String> = m.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn load_sequence(dir: &Path) -> Result<LoadedSequence> {
    let frames_dir = dir.join("frames");
    let mut frame_files: Vec<_> = fs::read_dir(&frames_dir)
        .map_err(|_| Error::Parse {
            file: frames_dir.display().to_string(),
            line: 0,
            msg: "missing frames directory".into(),
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map_or(false, |e| e == "png"))
        .collect();
    frame_files.sort();
    let frames: Vec<Tensor> = frame_files
        .iter()
        .map(|p| load_image16(p))
        .collect::<Result<_>>()?;

    let speeds_path = dir.join("speeds.csv");
    if !speeds_path.exists() {
        return Err(Error::MissingSpeeds(format!(
            "{} has no speeds.csv",
            dir.display()
        )));
    }
    let mut timestamps = Vec::new();
    let mut speeds = Vec::new();
    let reader = BufReader::new(fs::File::open(&speeds_path)?);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            continue; // header
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                file: speeds_path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 'timestamp,speed', got {} fields", parts.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Parse {
                file: speeds_path.display().to_string(),
                line: lineno + 1,
                msg: format!("bad number {s:?}"),
            })
        };
        timestamps.push(parse(parts[0])?);
        speeds.push(parse(parts[1])?);
    }
    if timestamps.len() != frames.len() {
        return Err(Error::Parse {
            file: speeds_path.display().to_string(),
            line: 0,
            msg: format!(
                "{} speed rows for {} frames",
                timestamps.len(),
                frames.len()
            ),
        });
    }

    let poses_path = dir.join("poses_gt.txt");
    let gt_poses = if poses_path.exists() {
        Some(load_poses(&poses_path)?)
    } else {
        None
    };

    let domain_tag = read_domain_tag(dir);
    Ok(LoadedSequence {
        frames,
        timestamps,
        speeds,
        gt_poses,
        domain_tag,
    })
}

pub fn load_poses(path: &Path) -> Result<Vec<Pose>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut poses = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                file: path.display().to_string(),
                line: lineno + 1,
                msg: "bad number".into(),
            })?;
        if nums.len() != 12 {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 12 numbers per pose, got {}", nums.len()),
            });
        }
        let mut m = [0.0; 12];
        m.copy_from_slice(&nums);
        poses.push(Pose::from_mat34(&m).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(poses)
}

pub fn save_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in poses {
        let m = p.to_mat34();
        let line: Vec<String> = m.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

fn read_domain_tag(dir: &Path) -> String {
    let fallback = || {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".into())
    };
    let Ok(text) = fs::read_to_string(dir.join("domain.json")) else {
        return fallback();
    };
    serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("tag").and_then(|t| t.as_str()).map(String::from))
        .unwrap_or_else(fallback)
}
