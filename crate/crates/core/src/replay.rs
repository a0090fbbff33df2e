//! Fixed-size, diversity-maximizing replay buffer.
//!
//! Admission: a new sample enters only if its maximum cosine similarity
//! against everything already stored is strictly below the threshold.
//! Eviction: when admission overflows the capacity, the sample with the
//! largest summed similarity to all others — the least diverse one, the
//! newcomer included — is removed. Ties evict the oldest id. Row sums
//! exclude the self term, which shifts every row by the same constant
//! and leaves the argmax unchanged.
//!
//! On-disk layout (optional persistence):
//!
//! ```text
//! <root>/<id>/frame0.png ... frame2.png   16-bit PNG triplet
//! <root>/<id>/meta.json                   speeds, dts, feature, tag, id
//! ```

use crate::error::{Error, Result};
use crate::losses::TripletBatchItem;
use crate::model::FeatureVector;
use crate::seqio;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Dot product of two unit-norm feature vectors.
pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> f32 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x * y)
        .sum()
}

/// One stored triplet with its feature and provenance.
#[derive(Debug, Clone)]
pub struct ReplaySample {
    pub item: TripletBatchItem,
    /// Feature of the triplet's newest image.
    pub feature: FeatureVector,
    pub id: u64,
    pub domain_tag: String,
}

/// What `maybe_add` did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionReport {
    pub admitted: bool,
    /// Max cosine similarity against the buffer before the attempt;
    /// `None` for an empty buffer (admission always passes).
    pub max_sim: Option<f32>,
    pub evicted_id: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Buffer {
    capacity: usize,
    threshold: f32,
    samples: Vec<ReplaySample>,
    next_id: u64,
}

impl Buffer {
    pub fn new(capacity: usize, threshold: f32) -> Self {
        assert!(capacity >= 1, "capacity must be at least 1");
        Buffer {
            capacity,
            threshold,
            samples: Vec::new(),
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn samples(&self) -> &[ReplaySample] {
        &self.samples
    }

    /// Max cosine similarity of `f` against the stored samples; `None`
    /// when the buffer is empty.
    pub fn max_similarity(&self, f: &FeatureVector) -> Option<f32> {
        self.samples
            .iter()
            .map(|s| cosine_similarity(&s.feature, f))
            .fold(None, |acc: Option<f32>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            })
    }

    /// Admission plus (if needed) diversity-maximizing eviction.
    pub fn maybe_add(
        &mut self,
        item: TripletBatchItem,
        feature: FeatureVector,
        domain_tag: &str,
    ) -> AdmissionReport {
        let max_sim = self.max_similarity(&feature);
        let admitted = max_sim.map_or(true, |s| s < self.threshold);
        let mut evicted_id = None;
        if admitted {
            let sample = ReplaySample {
                item,
                feature,
                id: self.next_id,
                domain_tag: domain_tag.to_string(),
            };
            self.next_id += 1;
            self.samples.push(sample);
            if self.samples.len() > self.capacity {
                let idx = self.eviction_index();
                evicted_id = Some(self.samples[idx].id);
                self.samples.remove(idx);
            }
        }
        AdmissionReport {
            admitted,
            max_sim,
            evicted_id,
        }
    }

    /// Index of the sample with the largest sum of pairwise similarities
    /// to all other samples (self term excluded). Ties keep the earliest
    /// index, i.e. the oldest id.
    fn eviction_index(&self) -> usize {
        let n = self.samples.len();
        let mut best = 0usize;
        let mut best_sum = f64::NEG_INFINITY;
        for i in 0..n {
            let mut sum = 0.0f64;
            for j in 0..n {
                if i != j {
                    sum += cosine_similarity(&self.samples[i].feature, &self.samples[j].feature)
                        as f64;
                }
            }
            if sum > best_sum {
                best_sum = sum;
                best = i;
            }
        }
        best
    }

    /// Uniform draw of `min(n, eligible)` distinct samples, optionally
    /// excluding one id (the sample admitted in the current step).
    pub fn sample_batch<R: Rng>(
        &self,
        n: usize,
        exclude: Option<u64>,
        rng: &mut R,
    ) -> Vec<&ReplaySample> {
        let mut indices: Vec<usize> = (0..self.samples.len())
            .filter(|&i| Some(self.samples[i].id) != exclude)
            .collect();
        let take = n.min(indices.len());
        let (chosen, _) = indices.partial_shuffle(rng, take);
        chosen.iter().map(|&i| &self.samples[i]).collect()
    }

    // ---- persistence ----

    /// Write one admitted sample's directory.
    pub fn persist_sample(root: &Path, sample: &ReplaySample) -> Result<()> {
        let dir = root.join(sample.id.to_string());
        fs::create_dir_all(&dir)?;
        for (i, img) in sample.item.images.iter().enumerate() {
            seqio::save_image16(img, &dir.join(format!("frame{i}.png")))?;
        }
        let meta = SampleMeta {
            id: sample.id,
            domain_tag: sample.domain_tag.clone(),
            speeds: sample.item.speeds,
            dts: sample.item.dts,
            feature: sample.feature.values().to_vec(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Drop one evicted sample's directory.
    pub fn remove_persisted(root: &Path, id: u64) -> Result<()> {
        let dir = root.join(id.to_string());
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        Ok(())
    }

    /// Mirror the full buffer content into `root` (used at run end).
    pub fn save_dir(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root)?;
        // Clear stale sample dirs first.
        for entry in fs::read_dir(root)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                fs::remove_dir_all(entry.path())?;
            }
        }
        for s in &self.samples {
            Self::persist_sample(root, s)?;
        }
        Ok(())
    }

    /// Rebuild a buffer from a directory written by [`Buffer::save_dir`].
    pub fn load_dir(root: &Path, capacity: usize, threshold: f32) -> Result<Buffer> {
        let mut samples = Vec::new();
        for entry in fs::read_dir(root)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let dir = entry.path();
            let meta: SampleMeta =
                serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
            let mut images = Vec::with_capacity(3);
            for i in 0..3 {
                images.push(seqio::load_image16(&dir.join(format!("frame{i}.png")))?);
            }
            let images: [crate::tensor::Tensor; 3] = images
                .try_into()
                .map_err(|_| Error::Checkpoint("triplet image count".into()))?;
            samples.push(ReplaySample {
                item: TripletBatchItem::new(images, meta.speeds, meta.dts)?,
                feature: FeatureVector::from_unit(meta.feature)?,
                id: meta.id,
                domain_tag: meta.domain_tag,
            });
        }
        if samples.len() > capacity {
            return Err(Error::InvalidConfig(format!(
                "stored buffer has {} samples but capacity is {capacity}",
                samples.len()
            )));
        }
        samples.sort_by_key(|s| s.id);
        let next_id = samples.last().map_or(0, |s| s.id + 1);
        Ok(Buffer {
            capacity,
            threshold,
            samples,
            next_id,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    id: u64,
    domain_tag: String,
    speeds: [f64; 2],
    dts: [f64; 2],
    feature: Vec<f32>,
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Checkpoint(format!("json: {e}"))
    }
}
