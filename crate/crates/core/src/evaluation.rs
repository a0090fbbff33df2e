//! Trajectory error metrics and continual-learning reports.
//!
//! Errors follow the segment protocol: for every start frame (stride
//! configurable) and every segment length, the end frame is found by
//! arclength along the ground truth, the relative-pose discrepancy over
//! the segment is measured, and the translational part is reported as a
//! percentage of the segment length while the rotational part is
//! degrees per meter. Trajectories are origin-aligned before evaluation;
//! there is no scale alignment, so metric-scale errors stay visible.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::model::ModelParams;
use crate::seqio::LoadedSequence;
use serde::{Deserialize, Serialize};

/// Timestamped absolute poses (camera-to-world).
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    timestamps: Vec<f64>,
    poses: Vec<Pose>,
}

impl TrajectoryRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(timestamps: Vec<f64>, poses: Vec<Pose>) -> Result<Self> {
        let mut t = TrajectoryRecord::new();
        for (ts, p) in timestamps.into_iter().zip(poses) {
            t.push(ts, p)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, timestamp: f64, pose: Pose) -> Result<()> {
        if let Some(&last) = self.timestamps.last() {
            if timestamp <= last {
                return Err(Error::NonMonotoneTimestamp {
                    prev: last,
                    next: timestamp,
                });
            }
        }
        self.timestamps.push(timestamp);
        self.poses.push(pose);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    /// Remap so the first pose is the identity.
    pub fn origin_aligned(&self) -> TrajectoryRecord {
        let Some(first) = self.poses.first() else {
            return self.clone();
        };
        let inv = first.inverse();
        TrajectoryRecord {
            timestamps: self.timestamps.clone(),
            poses: self.poses.iter().map(|p| inv.compose(p)).collect(),
        }
    }

    /// Restrict both records to their common timestamps (exact match).
    pub fn intersect(a: &TrajectoryRecord, b: &TrajectoryRecord) -> (TrajectoryRecord, TrajectoryRecord) {
        let set: std::collections::HashSet<u64> =
            b.timestamps.iter().map(|t| t.to_bits()).collect();
        let mut ra = TrajectoryRecord::new();
        let mut keep = std::collections::HashSet::new();
        for (i, t) in a.timestamps.iter().enumerate() {
            if set.contains(&t.to_bits()) {
                ra.push(*t, a.poses[i]).expect("sorted input");
                keep.insert(t.to_bits());
            }
        }
        let mut rb = TrajectoryRecord::new();
        for (i, t) in b.timestamps.iter().enumerate() {
            if keep.contains(&t.to_bits()) {
                rb.push(*t, b.poses[i]).expect("sorted input");
            }
        }
        (ra, rb)
    }
}

/// Mean segment errors with the per-length breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentErrors {
    /// Translation error in percent of segment length.
    pub t_err: f64,
    /// Rotation error in degrees per meter.
    pub r_err: f64,
    /// (length, t_err, r_err, n_segments) per requested length.
    pub per_length: Vec<(f64, f64, f64, usize)>,
}

/// Segment-based odometry errors of `est` against `gt`.
///
/// Both records must cover identical timestamps. Every `stride`-th frame
/// is a segment start; segment ends are located by ground-truth
/// arclength. Fails when no requested length fits the trajectory.
pub fn kitti_errors(
    gt: &TrajectoryRecord,
    est: &TrajectoryRecord,
    segment_lengths: &[f64],
    stride: usize,
) -> Result<SegmentErrors> {
    assert!(stride >= 1);
    if gt.len() != est.len() || gt.timestamps != est.timestamps {
        return Err(Error::InvalidConfig(
            "trajectories must cover identical timestamps".into(),
        ));
    }
    if gt.len() < 2 {
        return Err(Error::TrajectoryTooShort);
    }
    let gt = gt.origin_aligned();
    let est = est.origin_aligned();

    let n = gt.len();
    let mut arclen = vec![0.0f64; n];
    for i in 1..n {
        let a = &gt.poses[i - 1].translation;
        let b = &gt.poses[i].translation;
        let d = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
        arclen[i] = arclen[i - 1] + d;
    }

    let mut acc: Vec<(f64, f64, usize)> = segment_lengths.iter().map(|_| (0.0, 0.0, 0)).collect();
    let mut start = 0usize;
    while start < n {
        for (li, &len) in segment_lengths.iter().enumerate() {
            let target = arclen[start] + len;
            let Some(end) = (start + 1..n).find(|&j| arclen[j] >= target - 1e-9) else {
                continue;
            };
            let rel_gt = gt.poses[start].inverse().compose(&gt.poses[end]);
            let rel_est = est.poses[start].inverse().compose(&est.poses[end]);
            let err = rel_est.inverse().compose(&rel_gt);
            acc[li].0 += err.translation_norm() / len * 100.0;
            acc[li].1 += err.rotation_angle().to_degrees() / len;
            acc[li].2 += 1;
        }
        start += stride;
    }

    let mut per_length = Vec::new();
    let (mut t_sum, mut r_sum, mut count) = (0.0, 0.0, 0usize);
    for (li, &len) in segment_lengths.iter().enumerate() {
        let (t, r, c) = acc[li];
        if c > 0 {
            per_length.push((len, t / c as f64, r / c as f64, c));
            t_sum += t;
            r_sum += r;
            count += c;
        }
    }
    if count == 0 {
        return Err(Error::TrajectoryTooShort);
    }
    Ok(SegmentErrors {
        t_err: t_sum / count as f64,
        r_err: r_sum / count as f64,
        per_length,
    })
}

/// Forward-only evaluation of one checkpoint on one sequence.
pub fn evaluate_checkpoint(
    params: &ModelParams,
    seq: &LoadedSequence,
    segment_lengths: &[f64],
    stride: usize,
    min_drive_dist: f64,
) -> Result<SegmentErrors> {
    let gt_poses = seq.gt_poses.as_ref().ok_or(Error::InvalidConfig(
        "sequence has no ground-truth poses".into(),
    ))?;
    let gt_full = TrajectoryRecord::from_parts(seq.timestamps.clone(), gt_poses.clone())?;
    let est = crate::adapter::infer_trajectory(params, seq, min_drive_dist)?;
    let (gt_m, est_m) = TrajectoryRecord::intersect(&gt_full, &est);
    kitti_errors(&gt_m, &est_m, segment_lengths, stride)
}

/// Continual-learning report: each checkpoint evaluated on each
/// sequence, optionally summarized by adaptation/retention scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinualReport {
    /// `matrix[row][col]` = checkpoint `row` evaluated on sequence `col`.
    pub matrix: Vec<Vec<SegmentErrors>>,
    pub summary: Option<AqRq>,
}

/// Adaptation / retention quality scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AqRq {
    pub aq_trans: f64,
    pub aq_rot: f64,
    pub rq_trans: f64,
    pub rq_rot: f64,
}

/// Which matrix cells feed AQ/RQ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AqRqProtocol {
    /// Row holding the unadapted source model (the error ceiling).
    pub ceiling_row: usize,
    /// (row, col) of each first-visit cell.
    pub first_visits: Vec<(usize, usize)>,
    /// (col, row_with_intermediate, row_without_intermediate) per
    /// revisited sequence.
    pub revisits: Vec<(usize, usize, usize)>,
}

/// Fill the matrix: rows are checkpoints in adaptation order (row 0 is
/// conventionally the unadapted source model), columns are sequences.
pub fn forgetting_matrix(
    checkpoints: &[ModelParams],
    sequences: &[LoadedSequence],
    segment_lengths: &[f64],
    stride: usize,
    min_drive_dist: f64,
) -> Result<ContinualReport> {
    if checkpoints.is_empty() {
        return Err(Error::MissingCheckpoint { step: 0 });
    }
    let mut matrix = Vec::with_capacity(checkpoints.len());
    for params in checkpoints {
        let mut row = Vec::with_capacity(sequences.len());
        for seq in sequences {
            row.push(evaluate_checkpoint(
                params,
                seq,
                segment_lengths,
                stride,
                min_drive_dist,
            )?);
        }
        matrix.push(row);
    }
    Ok(ContinualReport {
        matrix,
        summary: None,
    })
}

/// Adaptation quality: one minus the mean first-visit error relative to
/// the unadapted ceiling (each ratio clamped to [0, 1]). Retention
/// quality: mean over revisited sequences of (error without the
/// intermediate domain minus error with it); positive means the
/// intermediate visit helped retention.
pub fn aq_rq(matrix: &[Vec<SegmentErrors>], protocol: &AqRqProtocol) -> Result<AqRq> {
    let cell = |row: usize, col: usize| -> Result<&SegmentErrors> {
        matrix
            .get(row)
            .and_then(|r| r.get(col))
            .ok_or(Error::MissingCell { row, col })
    };
    let mut aq = [0.0f64; 2];
    if protocol.first_visits.is_empty() {
        return Err(Error::InvalidConfig("protocol has no first visits".into()));
    }
    for &(row, col) in &protocol.first_visits {
        let e = cell(row, col)?;
        let ceil = cell(protocol.ceiling_row, col)?;
        let ratio = |err: f64, ceiling: f64| {
            if ceiling <= 0.0 {
                if err <= 0.0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                (err / ceiling).clamp(0.0, 1.0)
            }
        };
        aq[0] += ratio(e.t_err, ceil.t_err);
        aq[1] += ratio(e.r_err, ceil.r_err);
    }
    let n = protocol.first_visits.len() as f64;
    let aq_trans = 1.0 - aq[0] / n;
    let aq_rot = 1.0 - aq[1] / n;

    let mut rq = [0.0f64; 2];
    for &(col, row_with, row_without) in &protocol.revisits {
        let with = cell(row_with, col)?;
        let without = cell(row_without, col)?;
        rq[0] += without.t_err - with.t_err;
        rq[1] += without.r_err - with.r_err;
    }
    let m = protocol.revisits.len().max(1) as f64;
    Ok(AqRq {
        aq_trans,
        aq_rot,
        rq_trans: rq[0] / m,
        rq_rot: rq[1] / m,
    })
}
