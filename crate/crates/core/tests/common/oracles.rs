//! Brute-force reference implementations used to cross-check the
//! library: an O(n^2) replay-buffer model and a quadratic segment-error
//! evaluator built on nalgebra rather than the library's own pose math.

use nalgebra::{Matrix3, Vector3};
use vio_core::geometry::Pose;
use vio_core::model::FeatureVector;

/// Exhaustive replay-buffer model: full similarity matrix on every
/// decision, both self-term conventions for the eviction argmax.
pub struct BufOracle {
    pub capacity: usize,
    pub threshold: f32,
    pub entries: Vec<(u64, Vec<f32>)>,
    next_id: u64,
}

pub struct OracleReport {
    pub admitted: bool,
    pub max_sim: Option<f32>,
    pub evicted_id: Option<u64>,
}

impl BufOracle {
    pub fn new(capacity: usize, threshold: f32) -> Self {
        BufOracle {
            capacity,
            threshold,
            entries: Vec::new(),
            next_id: 0,
        }
    }

    fn cos(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn insert(&mut self, feature: &FeatureVector) -> OracleReport {
        let f = feature.values().to_vec();
        let max_sim = self
            .entries
            .iter()
            .map(|(_, e)| Self::cos(e, &f))
            .fold(None, |acc: Option<f32>, v| Some(acc.map_or(v, |a| a.max(v))));
        let admitted = max_sim.map_or(true, |s| s < self.threshold);
        let mut evicted_id = None;
        if admitted {
            self.entries.push((self.next_id, f));
            self.next_id += 1;
            if self.entries.len() > self.capacity {
                let n = self.entries.len();
                let row_sum = |i: usize, include_self: bool| -> f64 {
                    (0..n)
                        .filter(|&j| include_self || j != i)
                        .map(|j| Self::cos(&self.entries[i].1, &self.entries[j].1) as f64)
                        .sum()
                };
                let argmax = |include_self: bool| -> usize {
                    let mut best = 0;
                    let mut best_v = f64::NEG_INFINITY;
                    for i in 0..n {
                        let v = row_sum(i, include_self);
                        if v > best_v {
                            best_v = v;
                            best = i;
                        }
                    }
                    best
                };
                let without = argmax(false);
                let with = argmax(true);
                // The self term adds 1 to every row, so the argmax must
                // agree — up to f32 normalization noise: stored features
                // are unit-norm only to a few ulps, so rows whose sums
                // are within ~1e-5 are genuine ties and either winner is
                // acceptable.
                if without != with {
                    let gap = (row_sum(without, false) - row_sum(with, false)).abs();
                    assert!(
                        gap < 1e-5,
                        "self-term convention changed the eviction argmax \
                         (row-sum gap {gap:.3e})"
                    );
                }
                evicted_id = Some(self.entries[without].0);
                self.entries.remove(without);
            }
        }
        OracleReport {
            admitted,
            max_sim,
            evicted_id,
        }
    }
}

// ---- independent segment-error evaluator ----

fn to_na(p: &Pose) -> (Matrix3<f64>, Vector3<f64>) {
    let r = Matrix3::from_iterator(
        (0..3).flat_map(|j| (0..3).map(move |i| p.rotation[i][j])),
    );
    let t = Vector3::new(p.translation[0], p.translation[1], p.translation[2]);
    (r, t)
}

/// Mean segment errors `(t_err_percent, r_err_deg_per_m)` computed with
/// nalgebra matrix algebra and a linear-scan arclength search.
pub fn segment_errors_reference(
    gt: &[Pose],
    est: &[Pose],
    lengths: &[f64],
    stride: usize,
) -> Option<(f64, f64)> {
    assert_eq!(gt.len(), est.len());
    let n = gt.len();
    let mut arclen = vec![0.0f64; n];
    for i in 1..n {
        let d: f64 = (0..3)
            .map(|k| (gt[i].translation[k] - gt[i - 1].translation[k]).powi(2))
            .sum();
        arclen[i] = arclen[i - 1] + d.sqrt();
    }
    let rel = |poses: &[Pose], i: usize, j: usize| -> (Matrix3<f64>, Vector3<f64>) {
        let (ri, ti) = to_na(&poses[i]);
        let (rj, tj) = to_na(&poses[j]);
        // inv(T_i) * T_j
        let r = ri.transpose() * rj;
        let t = ri.transpose() * (tj - ti);
        (r, t)
    };
    let mut t_errs = Vec::new();
    let mut r_errs = Vec::new();
    let mut start = 0;
    while start < n {
        for &len in lengths {
            let target = arclen[start] + len;
            let mut end = None;
            for j in start + 1..n {
                if arclen[j] >= target - 1e-12 {
                    end = Some(j);
                    break;
                }
            }
            let Some(end) = end else { continue };
            let (rg, tg) = rel(gt, start, end);
            let (re, te) = rel(est, start, end);
            // inv(rel_est) * rel_gt
            let r_err = re.transpose() * rg;
            let t_err = re.transpose() * (tg - te);
            let angle = ((r_err.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            t_errs.push(t_err.norm() / len * 100.0);
            r_errs.push(angle.to_degrees() / len);
        }
        start += stride;
    }
    if t_errs.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some((mean(&t_errs), mean(&r_errs)))
}
