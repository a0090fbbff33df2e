//! The synchronous online continual-learning loop.
//!
//! Every accepted frame runs the same steps: assemble the triplet of the
//! three newest accepted frames, offer it to the replay buffer, draw and
//! augment replay samples, then run `cycles` forward/backward passes on
//! the combined batch updating only the decoder groups, and emit the
//! motion of the newest pair from the final pass as the odometry output.
//!
//! Frames are gated by driven distance: a frame is accepted once the
//! integrated speed covers `min_drive_dist` since the last accepted one.
//! A non-finite loss rolls the decoders and optimizer state back to the
//! pre-step snapshot and the step reports itself as rolled back.

use crate::error::{Error, Result};
use crate::evaluation::TrajectoryRecord;
use crate::geometry::{se3_exp, Camera, Pose, Twist};
use crate::graph::Graph;
use crate::losses::{triplet_loss, LossWeights, TripletBatchItem};
use crate::model::{bind, pose_forward, DepthMap, ModelParams};
use crate::optim::{Adam, AdamConfig, GroupGrads};
use crate::replay::{AdmissionReport, Buffer};
use crate::seqio::LoadedSequence;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Color-jitter ranges for replay augmentation. A `(1, 1)` (or `(0, 0)`
/// for hue) range is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub brightness: (f32, f32),
    pub contrast: (f32, f32),
    pub saturation: (f32, f32),
    /// Shift as a fraction of the hue circle.
    pub hue: (f32, f32),
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            brightness: (0.8, 1.2),
            contrast: (0.8, 1.2),
            saturation: (0.8, 1.2),
            hue: (-0.05, 0.05),
        }
    }
}

impl AugmentRanges {
    pub const IDENTITY: AugmentRanges = AugmentRanges {
        brightness: (1.0, 1.0),
        contrast: (1.0, 1.0),
        saturation: (1.0, 1.0),
        hue: (0.0, 0.0),
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Replay samples per update batch (N); the batch holds 1 + N items.
    pub replay_n: usize,
    /// Backpropagation iterations per frame (c).
    pub cycles: usize,
    /// Driven-distance gate in meters.
    pub min_drive_dist: f64,
    pub weights: LossWeights,
    pub augment: AugmentRanges,
    pub adam: AdamConfig,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            replay_n: 2,
            cycles: 5,
            min_drive_dist: 0.2,
            weights: LossWeights::default(),
            augment: AugmentRanges::default(),
            // The online loop takes few steps per frame; it needs a
            // hotter learning rate than the optimizer's generic default.
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles < 1 {
            return Err(Error::InvalidConfig("cycles must be >= 1".into()));
        }
        if self.min_drive_dist < 0.0 {
            return Err(Error::InvalidConfig("min_drive_dist must be >= 0".into()));
        }
        self.weights.validate()
    }
}

/// One stream element: an image with its forward-looking speed.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub image: Tensor,
    /// Speed (m/s) over the interval starting at this frame.
    pub speed: f64,
    pub timestamp: f64,
}

/// Distance-based frame gate.
#[derive(Debug, Clone, Default)]
pub struct FrameGate {
    last: Option<(f64, f64)>, // (timestamp, speed) of the previous frame
    accumulated: f64,
    any_accepted: bool,
}

impl FrameGate {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `Some(distance_since_last_accepted)` when the frame is
    /// accepted. The first frame is always accepted at distance zero.
    pub fn gate_frame(&mut self, f: &FrameInput, min_drive_dist: f64) -> Result<Option<f64>> {
        if let Some((prev_ts, prev_speed)) = self.last {
            if f.timestamp <= prev_ts {
                return Err(Error::NonMonotoneTimestamp {
                    prev: prev_ts,
                    next: f.timestamp,
                });
            }
            self.accumulated += prev_speed * (f.timestamp - prev_ts);
        }
        self.last = Some((f.timestamp, f.speed));
        if !self.any_accepted {
            self.any_accepted = true;
            self.accumulated = 0.0;
            return Ok(Some(0.0));
        }
        // Nanometer slack so accumulated float steps that should land
        // exactly on the threshold do not miss it.
        if self.accumulated >= min_drive_dist - 1e-9 {
            let d = self.accumulated;
            self.accumulated = 0.0;
            return Ok(Some(d));
        }
        Ok(None)
    }
}

/// Rolling window of the last accepted frames, producing triplets.
#[derive(Debug, Clone, Default)]
pub(crate) struct TripletAssembler {
    // (image, timestamp, distance from the previous accepted frame)
    window: Vec<(Tensor, f64, f64)>,
}

impl TripletAssembler {
    /// Push an accepted frame; returns a triplet once three are present.
    pub(crate) fn push(&mut self, image: Tensor, timestamp: f64, dist: f64) -> Option<TripletBatchItem> {
        self.window.push((image, timestamp, dist));
        if self.window.len() > 3 {
            self.window.remove(0);
        }
        if self.window.len() < 3 {
            return None;
        }
        let w = &self.window;
        let dt01 = w[1].1 - w[0].1;
        let dt12 = w[2].1 - w[1].1;
        let item = TripletBatchItem::new(
            [w[0].0.clone(), w[1].0.clone(), w[2].0.clone()],
            [w[1].2 / dt01, w[2].2 / dt12],
            [dt01, dt12],
        )
        .ok()?;
        Some(item)
    }
}

/// Jitter one triplet: a single parameter tuple is drawn and applied
/// identically to all three images; outputs are clamped to [0, 1].
pub fn augment_replay<R: Rng>(
    item: &TripletBatchItem,
    ranges: &AugmentRanges,
    rng: &mut R,
) -> TripletBatchItem {
    let draw = |rng: &mut R, (lo, hi): (f32, f32)| if lo < hi { rng.gen_range(lo..hi) } else { lo };
    let brightness = draw(rng, ranges.brightness);
    let contrast = draw(rng, ranges.contrast);
    let saturation = draw(rng, ranges.saturation);
    let hue = draw(rng, ranges.hue);

    let images = [
        jitter_image(&item.images[0], brightness, contrast, saturation, hue),
        jitter_image(&item.images[1], brightness, contrast, saturation, hue),
        jitter_image(&item.images[2], brightness, contrast, saturation, hue),
    ];
    TripletBatchItem {
        images,
        speeds: item.speeds,
        dts: item.dts,
    }
}

fn jitter_image(img: &Tensor, brightness: f32, contrast: f32, saturation: f32, hue: f32) -> Tensor {
    let mut out = img.clone();
    if brightness != 1.0 {
        for v in out.data_mut() {
            *v *= brightness;
        }
    }
    if contrast != 1.0 {
        // Pivot on the mean luma of the image.
        let mut mean = 0.0f64;
        for px in out.data().chunks_exact(3) {
            mean += (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) as f64;
        }
        let mean = (mean / (out.numel() / 3) as f64) as f32;
        for v in out.data_mut() {
            *v = (*v - mean) * contrast + mean;
        }
    }
    if saturation != 1.0 {
        for px in out.data_mut().chunks_exact_mut(3) {
            let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            for v in px {
                *v = gray + (*v - gray) * saturation;
            }
        }
    }
    if hue != 0.0 {
        // Rotate the chroma plane of the YIQ representation.
        let angle = hue * std::f32::consts::TAU;
        let (sin, cos) = angle.sin_cos();
        for px in out.data_mut().chunks_exact_mut(3) {
            let (r, g, b) = (px[0], px[1], px[2]);
            let y = 0.299 * r + 0.587 * g + 0.114 * b;
            let i = 0.596 * r - 0.274 * g - 0.322 * b;
            let q = 0.211 * r - 0.523 * g + 0.312 * b;
            let i2 = cos * i - sin * q;
            let q2 = sin * i + cos * q;
            px[0] = y + 0.956 * i2 + 0.621 * q2;
            px[1] = y - 0.272 * i2 - 0.647 * q2;
            px[2] = y - 1.106 * i2 + 1.703 * q2;
        }
    }
    if brightness != 1.0 || contrast != 1.0 || saturation != 1.0 || hue != 0.0 {
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// What one processed frame produced.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub timestamp: f64,
    /// Whether the frame passed the distance gate.
    pub accepted: bool,
    /// Accepted but no triplet available yet.
    pub warm_up: bool,
    /// Odometry estimate: motion of the (t-1, t) pair.
    pub vo: Option<Pose>,
    pub loss_trace: Vec<f32>,
    pub admission: Option<AdmissionReport>,
    pub depth: Option<DepthMap>,
    pub rolled_back: bool,
    pub batch_len: usize,
}

impl StepReport {
    fn skipped(timestamp: f64) -> Self {
        StepReport {
            timestamp,
            accepted: false,
            warm_up: false,
            vo: None,
            loss_trace: Vec::new(),
            admission: None,
            depth: None,
            rolled_back: false,
            batch_len: 0,
        }
    }
}

/// JSON step log line (one per stream frame).
#[derive(Debug, Serialize, Deserialize)]
pub struct StepLogRecord {
    pub timestamp: f64,
    pub accepted: bool,
    pub warm_up: bool,
    pub rolled_back: bool,
    pub loss_trace: Vec<f32>,
    pub admission: Option<AdmissionReport>,
    /// Row-major 3x4 of the emitted relative pose.
    pub pose: Option<[f64; 12]>,
}

impl StepLogRecord {
    pub fn from_report(r: &StepReport) -> Self {
        StepLogRecord {
            timestamp: r.timestamp,
            accepted: r.accepted,
            warm_up: r.warm_up,
            rolled_back: r.rolled_back,
            loss_trace: r.loss_trace.clone(),
            admission: r.admission.clone(),
            pose: r.vo.as_ref().map(|p| p.to_mat34()),
        }
    }
}

pub struct OnlineAdapter {
    params: ModelParams,
    adam: Adam,
    buffer: Buffer,
    cam: Camera,
    config: AdapterConfig,
    rng: ChaCha8Rng,
    gate: FrameGate,
    assembler: TripletAssembler,
    domain_tag: String,
    persist_dir: Option<PathBuf>,
}

impl OnlineAdapter {
    /// Freezes the encoders of `params`: online updates touch decoders
    /// only.
    pub fn new(
        mut params: ModelParams,
        buffer: Buffer,
        cam: Camera,
        config: AdapterConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        params.freeze_encoders();
        let adam = Adam::new(config.adam);
        Ok(OnlineAdapter {
            params,
            adam,
            buffer,
            cam,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            gate: FrameGate::new(),
            assembler: TripletAssembler::default(),
            domain_tag: String::from("unknown"),
            persist_dir: None,
        })
    }

    pub fn set_domain_tag(&mut self, tag: &str) {
        self.domain_tag = tag.to_string();
    }

    /// Mirror buffer admissions/evictions into a directory.
    pub fn set_persist_dir(&mut self, dir: Option<PathBuf>) {
        self.persist_dir = dir;
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn buffer(&self) -> &Buffer {
        &self.buffer
    }

    pub fn into_parts(self) -> (ModelParams, Buffer) {
        (self.params, self.buffer)
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    /// Reset the gate and triplet window (new sequence, same weights).
    pub fn reset_stream(&mut self) {
        self.gate = FrameGate::new();
        self.assembler = TripletAssembler::default();
    }

    /// Gate, assemble, and (when a triplet is ready) adapt on one frame.
    pub fn process_frame(&mut self, frame: FrameInput) -> Result<StepReport> {
        let Some(dist) = self.gate.gate_frame(&frame, self.config.min_drive_dist)? else {
            return Ok(StepReport::skipped(frame.timestamp));
        };
        let item = self.assembler.push(frame.image, frame.timestamp, dist);
        match item {
            None => Ok(StepReport {
                timestamp: frame.timestamp,
                accepted: true,
                warm_up: true,
                vo: None,
                loss_trace: Vec::new(),
                admission: None,
                depth: None,
                rolled_back: false,
                batch_len: 0,
            }),
            Some(item) => self.adapt_on_triplet(item, frame.timestamp),
        }
    }

    /// Steps (2)-(7) for a ready triplet.
    pub fn adapt_on_triplet(
        &mut self,
        item: TripletBatchItem,
        timestamp: f64,
    ) -> Result<StepReport> {
        // (2) replay-buffer admission, before any sampling.
        let feature = crate::model::extract_feature(&self.params, &item.images[2])?;
        let admission = self
            .buffer
            .maybe_add(item.clone(), feature, &self.domain_tag);
        if let Some(dir) = &self.persist_dir {
            if admission.admitted {
                let new_id = self.buffer.samples().iter().map(|s| s.id).max();
                if let Some(id) = new_id {
                    if Some(id) != admission.evicted_id {
                        if let Some(s) = self.buffer.samples().iter().find(|s| s.id == id) {
                            Buffer::persist_sample(dir, s)?;
                        }
                    }
                }
                if let Some(evicted) = admission.evicted_id {
                    Buffer::remove_persisted(dir, evicted)?;
                }
            }
        }

        // (3) batch: the current triplet plus N augmented replay samples.
        // The sample admitted in this step never replays into its own
        // update.
        let exclude = if admission.admitted {
            self.buffer.samples().iter().map(|s| s.id).max()
        } else {
            None
        };
        let replay_items: Vec<TripletBatchItem> = {
            let drawn = self
                .buffer
                .sample_batch(self.config.replay_n, exclude, &mut self.rng);
            drawn.iter().map(|s| s.item.clone()).collect()
        };
        let mut batch = Vec::with_capacity(1 + replay_items.len());
        batch.push(item);
        for r in &replay_items {
            batch.push(augment_replay(r, &self.config.augment, &mut self.rng));
        }

        // (4)-(6) c update cycles on the fixed batch.
        let snapshot = (self.params.clone(), self.adam.clone());
        let mut loss_trace = Vec::with_capacity(self.config.cycles);
        let mut final_twist: Option<Twist> = None;
        let mut final_depth: Option<DepthMap> = None;
        let mut rolled_back = false;
        for _ in 0..self.config.cycles {
            match self.one_cycle(&batch) {
                Ok((loss, twist, depth)) => {
                    loss_trace.push(loss);
                    final_twist = Some(twist);
                    final_depth = Some(depth);
                }
                Err(Error::NonFinite { .. }) | Err(Error::NonPositiveDepth) => {
                    self.params = snapshot.0;
                    self.adam = snapshot.1;
                    rolled_back = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        // (7) odometry output from the final iteration; after a rollback
        // the restored weights produce it instead.
        let (vo, depth) = if rolled_back {
            let twist = pose_forward(&self.params, &batch[0].images[1], &batch[0].images[2])?;
            (Some(se3_exp(&twist)), None)
        } else {
            (final_twist.map(|t| se3_exp(&t)), final_depth)
        };

        Ok(StepReport {
            timestamp,
            accepted: true,
            warm_up: false,
            vo,
            loss_trace,
            admission: Some(admission),
            depth,
            rolled_back,
            batch_len: batch.len(),
        })
    }

    /// One forward/backward/update pass over the batch. Returns the
    /// batch loss, plus the current item's newest-pair twist and depth
    /// from this forward pass.
    fn one_cycle(&mut self, batch: &[TripletBatchItem]) -> Result<(f32, Twist, DepthMap)> {
        let mut g = Graph::new();
        let bound = bind(&mut g, &self.params);
        let mut losses = Vec::with_capacity(batch.len());
        let mut current_outputs = None;
        for (i, item) in batch.iter().enumerate() {
            let nodes = triplet_loss(&mut g, &bound, item, &self.cam, &self.config.weights)?;
            losses.push(nodes.loss);
            if i == 0 {
                current_outputs = Some((nodes.twist_next, nodes.depth));
            }
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = g.add(total, l)?;
        }
        let batch_loss = g.scale(total, 1.0 / batch.len() as f32)?;
        let loss_value = g.forward(batch_loss)?.item();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite { op: "batch_loss" });
        }

        let grads = g.backward(batch_loss)?;
        let mut group_grads: Vec<GroupGrads> = self
            .params
            .groups()
            .iter()
            .map(|gr| vec![None; gr.tensors.len()])
            .collect();
        for (leaf, gi, ti) in bound.trainable_leaves(&self.params) {
            if let Some(grad) = grads.get(&leaf) {
                group_grads[gi][ti] = Some(grad.clone());
            }
        }
        let (twist_node, depth_node) = current_outputs.expect("batch is non-empty");
        let twist_vals = g.value(twist_node).data().to_vec();
        let depth_tensor = g.value(depth_node).clone();
        drop(g);

        let mut groups = self.params.groups_mut();
        self.adam.step(&mut groups, &group_grads)?;
        // A diverged update leaves non-finite parameters; surface it here
        // so the step rolls back instead of poisoning the next forward.
        for group in self.params.groups() {
            if group.trainable && group.tensors.iter().any(|t| !t.is_all_finite()) {
                return Err(Error::NonFinite { op: "optimizer_step" });
            }
        }

        let twist = Twist::from_vec6([
            twist_vals[0] as f64,
            twist_vals[1] as f64,
            twist_vals[2] as f64,
            twist_vals[3] as f64,
            twist_vals[4] as f64,
            twist_vals[5] as f64,
        ]);
        Ok((loss_value, twist, DepthMap::new(depth_tensor)?))
    }
}

/// Drive an adapter over a loaded sequence. Returns the per-frame
/// reports and the odometry trajectory (one absolute pose per accepted
/// frame from the second onward, origin at the second accepted frame).
pub fn run_sync(
    adapter: &mut OnlineAdapter,
    seq: &LoadedSequence,
) -> Result<(TrajectoryRecord, Vec<StepReport>)> {
    adapter.set_domain_tag(&seq.domain_tag.clone());
    adapter.reset_stream();
    let mut reports = Vec::with_capacity(seq.frames.len());
    let mut traj = TrajectoryRecord::new();
    let mut absolute = Pose::identity();
    let mut accepted_count = 0usize;
    for i in 0..seq.frames.len() {
        let report = adapter.process_frame(FrameInput {
            image: seq.frames[i].clone(),
            speed: seq.speeds[i],
            timestamp: seq.timestamps[i],
        })?;
        if report.accepted {
            accepted_count += 1;
            if accepted_count == 2 {
                traj.push(report.timestamp, absolute)?;
            }
            if let Some(vo) = &report.vo {
                absolute = absolute.compose(&vo.inverse());
                traj.push(report.timestamp, absolute)?;
            }
        }
        reports.push(report);
    }
    Ok((traj, reports))
}

/// Forward-only odometry over a sequence: gate frames, run the pose
/// network on consecutive accepted pairs, chain the motions. No weights
/// change. The trajectory starts at identity on the first accepted
/// frame.
pub fn infer_trajectory(
    params: &ModelParams,
    seq: &LoadedSequence,
    min_drive_dist: f64,
) -> Result<TrajectoryRecord> {
    let mut gate = FrameGate::new();
    let mut traj = TrajectoryRecord::new();
    let mut prev: Option<Tensor> = None;
    let mut absolute = Pose::identity();
    for i in 0..seq.frames.len() {
        let f = FrameInput {
            image: seq.frames[i].clone(),
            speed: seq.speeds[i],
            timestamp: seq.timestamps[i],
        };
        if gate.gate_frame(&f, min_drive_dist)?.is_none() {
            continue;
        }
        if let Some(prev_img) = prev.replace(f.image.clone()) {
            let twist = pose_forward(params, &prev_img, &f.image)?;
            let vo = se3_exp(&twist);
            absolute = absolute.compose(&vo.inverse());
            traj.push(f.timestamp, absolute)?;
        } else {
            traj.push(f.timestamp, absolute)?;
        }
    }
    Ok(traj)
}

/// Offline source-domain training: every parameter group trainable,
/// shuffled triplet batches, one optimizer step per batch. Returns the
/// mean loss per epoch.
///
/// The first quarter of the epochs run with the velocity term off. The
/// photometric term fixes the motion direction (and, through the depth
/// prior, the rough scale) first; switching velocity supervision on too
/// early inflates the translation norm along whatever direction the
/// fresh network happens to point, a local minimum the photometric
/// gradient cannot always undo.
pub fn pretrain(
    params: &mut ModelParams,
    seq: &LoadedSequence,
    cam: &Camera,
    weights: &LossWeights,
    epochs: usize,
    batch_size: usize,
    lr: f32,
    min_drive_dist: f64,
    seed: u64,
) -> Result<Vec<f32>> {
    assert!(batch_size >= 1);
    let mut gate = FrameGate::new();
    let mut assembler = TripletAssembler::default();
    let mut triplets = Vec::new();
    for i in 0..seq.frames.len() {
        let f = FrameInput {
            image: seq.frames[i].clone(),
            speed: seq.speeds[i],
            timestamp: seq.timestamps[i],
        };
        if let Some(dist) = gate.gate_frame(&f, min_drive_dist)? {
            if let Some(item) = assembler.push(f.image, f.timestamp, dist) {
                triplets.push(item);
            }
        }
    }
    if triplets.is_empty() {
        return Err(Error::InvalidConfig(
            "sequence too short to form any triplet".into(),
        ));
    }

    let mut adam = Adam::new(AdamConfig {
        lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epoch_losses = Vec::with_capacity(epochs);
    let warmup_epochs = epochs / 4;
    for epoch in 0..epochs {
        let weights = if epoch < warmup_epochs {
            LossWeights {
                gamma: weights.gamma,
                lambda: 0.0,
            }
        } else {
            *weights
        };
        let weights = &weights;
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let mut g = Graph::new();
            let bound = bind(&mut g, params);
            let mut losses = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let nodes = triplet_loss(&mut g, &bound, &triplets[idx], cam, weights)?;
                losses.push(nodes.loss);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = g.add(total, l)?;
            }
            let batch_loss = g.scale(total, 1.0 / chunk.len() as f32)?;
            let loss_value = g.forward(batch_loss)?.item();
            let grads = g.backward(batch_loss)?;
            let mut group_grads: Vec<GroupGrads> = params
                .groups()
                .iter()
                .map(|gr| vec![None; gr.tensors.len()])
                .collect();
            for (leaf, gi, ti) in bound.trainable_leaves(params) {
                if let Some(grad) = grads.get(&leaf) {
                    group_grads[gi][ti] = Some(grad.clone());
                }
            }
            drop(g);
            let mut groups = params.groups_mut();
            adam.step(&mut groups, &group_grads)?;
            epoch_loss += loss_value as f64;
            batches += 1;
        }
        epoch_losses.push((epoch_loss / batches as f64) as f32);
    }
    Ok(epoch_losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64, speed: f64) -> FrameInput {
        FrameInput {
            image: Tensor::full(&[16, 16, 3], 0.5),
            speed,
            timestamp: t,
        }
    }

    #[test]
    fn gate_accepts_every_frame_at_high_speed() {
        let mut gate = FrameGate::new();
        for i in 0..5 {
            let f = frame(i as f64 * 0.1, 10.0);
            assert!(gate.gate_frame(&f, 0.2).unwrap().is_some(), "frame {i}");
        }
    }

    #[test]
    fn gate_accepts_only_first_frame_at_zero_speed() {
        let mut gate = FrameGate::new();
        assert!(gate.gate_frame(&frame(0.0, 0.0), 0.2).unwrap().is_some());
        for i in 1..10 {
            assert!(gate
                .gate_frame(&frame(i as f64 * 0.1, 0.0), 0.2)
                .unwrap()
                .is_none());
        }
    }

    #[test]
    fn gate_accepts_every_second_frame_at_threshold_speed() {
        // 1 m/s, 0.1 s spacing, 0.2 m threshold.
        let mut gate = FrameGate::new();
        let mut pattern = Vec::new();
        for i in 0..9 {
            let accepted = gate
                .gate_frame(&frame(i as f64 * 0.1, 1.0), 0.2)
                .unwrap()
                .is_some();
            pattern.push(accepted);
        }
        assert_eq!(
            pattern,
            vec![true, false, true, false, true, false, true, false, true]
        );
    }

    #[test]
    fn gate_rejects_non_monotone_timestamps() {
        let mut gate = FrameGate::new();
        gate.gate_frame(&frame(1.0, 1.0), 0.2).unwrap();
        assert!(matches!(
            gate.gate_frame(&frame(1.0, 1.0), 0.2),
            Err(Error::NonMonotoneTimestamp { .. })
        ));
    }

    #[test]
    fn identity_augmentation_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::rand_uniform(&[8, 8, 3], 0.0, 1.0, &mut rng);
        let item = TripletBatchItem::new(
            [img.clone(), img.clone(), img],
            [1.0, 1.0],
            [0.1, 0.1],
        )
        .unwrap();
        let out = augment_replay(&item, &AugmentRanges::IDENTITY, &mut rng);
        for (a, b) in out.images.iter().zip(&item.images) {
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(out.speeds, item.speeds);
        assert_eq!(out.dts, item.dts);
    }

    #[test]
    fn brightness_scales_a_constant_image() {
        let img = Tensor::full(&[4, 4, 3], 0.5);
        let out = jitter_image(&img, 1.2, 1.0, 1.0, 0.0);
        for &v in out.data() {
            assert!((v - 0.6).abs() < 1e-6);
        }
    }

    #[test]
    fn augmented_images_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wild = AugmentRanges {
            brightness: (0.3, 2.0),
            contrast: (0.3, 2.0),
            saturation: (0.0, 2.5),
            hue: (-0.5, 0.5),
        };
        for _ in 0..1000 {
            let img = Tensor::rand_uniform(&[4, 4, 3], 0.0, 1.0, &mut rng);
            let item = TripletBatchItem::new(
                [img.clone(), img.clone(), img],
                [1.0, 1.0],
                [0.1, 0.1],
            )
            .unwrap();
            let out = augment_replay(&item, &wild, &mut rng);
            for i in &out.images {
                assert!(i.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn one_jitter_tuple_is_shared_across_the_triplet() {
        // Identical input frames must stay identical after augmentation.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Tensor::rand_uniform(&[6, 6, 3], 0.1, 0.9, &mut rng);
        let item = TripletBatchItem::new(
            [img.clone(), img.clone(), img],
            [1.0, 1.0],
            [0.1, 0.1],
        )
        .unwrap();
        let out = augment_replay(&item, &AugmentRanges::default(), &mut rng);
        assert_eq!(out.images[0].data(), out.images[1].data());
        assert_eq!(out.images[1].data(), out.images[2].data());
    }
}
