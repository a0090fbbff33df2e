//! Asynchronous predictor/learner runtime.
//!
//! The predictor serves a pose estimate for every gated frame from an
//! immutable weight snapshot and never waits for training. The learner
//! consumes triplets from a depth-1, latest-wins mailbox — an update
//! that outlasts the frame period simply drops the frames that arrived
//! meanwhile — and publishes a fresh snapshot every `publish_every`
//! completed updates, plus a final one at stream end if updates are
//! pending. Snapshot swaps are whole-`Arc` replacements, so a reader
//! always sees one consistent version.
//!
//! Two drivers share these semantics: a deterministic single-threaded
//! simulation on a virtual clock (scripted update costs, reproducible
//! drop accounting) and a two-thread wall-clock runtime. Virtual-time
//! tie-breaks are fixed: at equal times a learner completion becomes
//! visible before the arriving frame, and the learner may start work no
//! later than the final frame's timestamp ("in-flight" work finishes;
//! whatever is still in the mailbox afterwards counts as dropped).

use crate::adapter::{FrameGate, OnlineAdapter, TripletAssembler};
use crate::error::{Error, Result};
use crate::evaluation::TrajectoryRecord;
use crate::geometry::{se3_exp, Pose};
use crate::losses::TripletBatchItem;
use crate::model::{pose_forward, ModelParams};
use crate::seqio::LoadedSequence;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};

/// Mailbox capacity is fixed at one frame: newer work overwrites older
/// work, which is counted as dropped.
pub const MAILBOX_DEPTH: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsyncConfig {
    /// Publish a snapshot every this many completed update batches (K).
    pub publish_every: u64,
}

impl Default for AsyncConfig {
    fn default() -> Self {
        AsyncConfig { publish_every: 1 }
    }
}

impl AsyncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.publish_every < 1 {
            return Err(Error::InvalidConfig("publish_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// An immutable published weight set.
#[derive(Debug, Clone)]
pub struct WeightSnapshot<S> {
    pub state: S,
    pub version: u64,
    pub digest: [u8; 32],
}

/// The slow/fast split: the learner side adapts on triplets, the
/// predictor side estimates motion from a snapshot. Implemented by the
/// real online adapter and by lightweight test doubles.
pub trait AdaptEngine: Send {
    type Snapshot: Clone + Send + Sync + 'static;

    fn adapt(&mut self, item: &TripletBatchItem, timestamp: f64) -> Result<()>;
    fn snapshot(&self) -> Self::Snapshot;
    fn digest(snapshot: &Self::Snapshot) -> [u8; 32];
    fn predict(snapshot: &Self::Snapshot, prev: &Tensor, cur: &Tensor) -> Result<Pose>;
}

impl AdaptEngine for OnlineAdapter {
    type Snapshot = Arc<ModelParams>;

    fn adapt(&mut self, item: &TripletBatchItem, timestamp: f64) -> Result<()> {
        self.adapt_on_triplet(item.clone(), timestamp)?;
        Ok(())
    }

    fn snapshot(&self) -> Arc<ModelParams> {
        Arc::new(self.params().clone())
    }

    fn digest(snapshot: &Arc<ModelParams>) -> [u8; 32] {
        crate::checkpoint::model_digest(snapshot)
    }

    fn predict(snapshot: &Arc<ModelParams>, prev: &Tensor, cur: &Tensor) -> Result<Pose> {
        let twist = pose_forward(snapshot, prev, cur)?;
        Ok(se3_exp(&twist))
    }
}

/// One predictor output.
#[derive(Debug, Clone)]
pub struct PredictorOutput {
    pub timestamp: f64,
    /// Relative pose of the newest gated pair; identity for the first
    /// gated frame (no pair yet).
    pub vo: Pose,
    pub weights_version: u64,
}

/// Full accounting of an asynchronous run.
#[derive(Debug, Clone)]
pub struct AsyncRunReport {
    /// Composed absolute poses, one per gated frame after the first.
    pub trajectory: TrajectoryRecord,
    /// One estimate per gated frame.
    pub estimates: Vec<PredictorOutput>,
    pub gated_frames: usize,
    pub drop_count: u64,
    pub completed_updates: u64,
    /// (version, digest) per publication, in publication order.
    pub publications: Vec<(u64, [u8; 32])>,
}

// ---- deterministic simulated-clock driver ----

/// Run the predictor/learner split on a virtual clock. `update_cost`
/// maps the 1-based update index to its virtual duration in seconds.
pub fn run_async_sim<E: AdaptEngine>(
    engine: &mut E,
    cfg: &AsyncConfig,
    min_drive_dist: f64,
    seq: &LoadedSequence,
    mut update_cost: impl FnMut(u64) -> f64,
) -> Result<AsyncRunReport> {
    cfg.validate()?;
    let mut gate = FrameGate::new();
    let mut assembler = TripletAssembler::default();

    let mut current: WeightSnapshot<E::Snapshot> = {
        let s = engine.snapshot();
        let digest = E::digest(&s);
        WeightSnapshot {
            state: s,
            version: 0,
            digest,
        }
    };
    // Publications that exist but only become visible at their time.
    let mut pending_visible: Vec<(f64, WeightSnapshot<E::Snapshot>)> = Vec::new();
    let mut publications = Vec::new();
    let mut next_version = 1u64;

    let mut mailbox: Option<(f64, TripletBatchItem)> = None;
    let mut drops = 0u64;
    let mut learner_free_at = f64::NEG_INFINITY;
    let mut updates = 0u64;
    let mut since_publish = 0u64;

    let mut estimates: Vec<PredictorOutput> = Vec::new();
    let mut trajectory = TrajectoryRecord::new();
    let mut absolute = Pose::identity();
    let mut prev_image: Option<Tensor> = None;
    let mut gated = 0usize;

    // Start every unit of work the learner can begin by `horizon`.
    macro_rules! drain_learner {
        ($horizon:expr) => {
            while let Some((arrived, _)) = mailbox {
                let start = learner_free_at.max(arrived);
                if start > $horizon {
                    break;
                }
                let (_, item) = mailbox.take().expect("checked above");
                engine.adapt(&item, start)?;
                updates += 1;
                since_publish += 1;
                let cost = update_cost(updates);
                learner_free_at = start + cost;
                if since_publish == cfg.publish_every {
                    since_publish = 0;
                    let state = engine.snapshot();
                    let digest = E::digest(&state);
                    let snap = WeightSnapshot {
                        state,
                        version: next_version,
                        digest,
                    };
                    next_version += 1;
                    publications.push((snap.version, snap.digest));
                    pending_visible.push((learner_free_at, snap));
                }
            }
        };
    }

    let mut last_ts = None;
    for i in 0..seq.frames.len() {
        let ts = seq.timestamps[i];
        last_ts = Some(ts);
        // Learner activity up to (and including) this instant, then the
        // publications it made visible. Completion precedes arrival.
        drain_learner!(ts);
        while let Some(pos) = pending_visible.iter().position(|(t, _)| *t <= ts) {
            let (_, snap) = pending_visible.remove(pos);
            debug_assert!(snap.version > current.version);
            current = snap;
        }

        let frame = crate::adapter::FrameInput {
            image: seq.frames[i].clone(),
            speed: seq.speeds[i],
            timestamp: ts,
        };
        let Some(dist) = gate.gate_frame(&frame, min_drive_dist)? else {
            continue;
        };
        gated += 1;

        // Predictor: never blocks, uses the currently visible snapshot.
        let vo = match &prev_image {
            Some(prev) => E::predict(&current.state, prev, &frame.image)?,
            None => Pose::identity(),
        };
        if prev_image.is_some() {
            absolute = absolute.compose(&vo.inverse());
            trajectory.push(ts, absolute)?;
        }
        estimates.push(PredictorOutput {
            timestamp: ts,
            vo,
            weights_version: current.version,
        });
        prev_image = Some(frame.image.clone());

        // Forward the assembled triplet to the learner mailbox.
        if let Some(item) = assembler.push(frame.image, ts, dist) {
            if mailbox.replace((ts, item)).is_some() {
                drops += 1;
            }
        }
    }

    // Stream end: the learner may still start work that arrived by the
    // final timestamp; afterwards, leftover mailbox content is dropped
    // and a trailing snapshot covers any unpublished updates.
    if let Some(end) = last_ts {
        drain_learner!(end);
    }
    if mailbox.take().is_some() {
        drops += 1;
    }
    if since_publish > 0 {
        let state = engine.snapshot();
        let digest = E::digest(&state);
        publications.push((next_version, digest));
    }

    Ok(AsyncRunReport {
        trajectory,
        estimates,
        gated_frames: gated,
        drop_count: drops,
        completed_updates: updates,
        publications,
    })
}

// ---- wall-clock driver ----

struct MailboxInner {
    slot: Option<(f64, TripletBatchItem)>,
    closed: bool,
}

struct Mailbox {
    inner: Mutex<MailboxInner>,
    ready: Condvar,
    drops: AtomicU64,
}

impl Mailbox {
    fn new() -> Self {
        Mailbox {
            inner: Mutex::new(MailboxInner {
                slot: None,
                closed: false,
            }),
            ready: Condvar::new(),
            drops: AtomicU64::new(0),
        }
    }

    fn put(&self, ts: f64, item: TripletBatchItem) {
        let mut inner = self.inner.lock().expect("mailbox poisoned");
        if inner.slot.replace((ts, item)).is_some() {
            self.drops.fetch_add(1, Ordering::Relaxed);
        }
        self.ready.notify_one();
    }

    fn close(&self) {
        self.inner.lock().expect("mailbox poisoned").closed = true;
        self.ready.notify_one();
    }

    /// Latest work item, or `None` once closed and empty.
    fn take_latest(&self) -> Option<(f64, TripletBatchItem)> {
        let mut inner = self.inner.lock().expect("mailbox poisoned");
        loop {
            if let Some(work) = inner.slot.take() {
                return Some(work);
            }
            if inner.closed {
                return None;
            }
            inner = self.ready.wait(inner).expect("mailbox poisoned");
        }
    }
}

/// Run the split on OS threads (caller thread = predictor). Timing is
/// wall-clock and therefore not reproducible; accounting semantics match
/// the simulated driver.
pub fn run_async_threaded<E: AdaptEngine + 'static>(
    engine: E,
    cfg: &AsyncConfig,
    min_drive_dist: f64,
    seq: &LoadedSequence,
) -> Result<(AsyncRunReport, E)> {
    cfg.validate()?;
    let initial = {
        let s = engine.snapshot();
        let digest = E::digest(&s);
        Arc::new(WeightSnapshot {
            state: s,
            version: 0,
            digest,
        })
    };
    let cell: Arc<RwLock<Arc<WeightSnapshot<E::Snapshot>>>> = Arc::new(RwLock::new(initial));
    let mailbox = Arc::new(Mailbox::new());

    let learner_cell = Arc::clone(&cell);
    let learner_mailbox = Arc::clone(&mailbox);
    let publish_every = cfg.publish_every;
    let learner = std::thread::spawn(move || -> Result<(u64, Vec<(u64, [u8; 32])>, E)> {
        let mut engine = engine;
        let mut updates = 0u64;
        let mut since_publish = 0u64;
        let mut next_version = 1u64;
        let mut publications = Vec::new();
        fn publish<E: AdaptEngine>(
            engine: &E,
            next_version: &mut u64,
            publications: &mut Vec<(u64, [u8; 32])>,
            cell: &RwLock<Arc<WeightSnapshot<E::Snapshot>>>,
        ) {
            let state = engine.snapshot();
            let digest = E::digest(&state);
            let snap = Arc::new(WeightSnapshot {
                state,
                version: *next_version,
                digest,
            });
            *next_version += 1;
            publications.push((snap.version, snap.digest));
            *cell.write().expect("snapshot cell poisoned") = snap;
        }
        while let Some((ts, item)) = learner_mailbox.take_latest() {
            engine.adapt(&item, ts)?;
            updates += 1;
            since_publish += 1;
            if since_publish == publish_every {
                since_publish = 0;
                publish(&engine, &mut next_version, &mut publications, &learner_cell);
            }
        }
        if since_publish > 0 {
            publish(&engine, &mut next_version, &mut publications, &learner_cell);
        }
        Ok((updates, publications, engine))
    });

    let mut gate = FrameGate::new();
    let mut assembler = TripletAssembler::default();
    let mut estimates = Vec::new();
    let mut trajectory = TrajectoryRecord::new();
    let mut absolute = Pose::identity();
    let mut prev_image: Option<Tensor> = None;
    let mut gated = 0usize;
    let mut last_version = 0u64;

    for i in 0..seq.frames.len() {
        let frame = crate::adapter::FrameInput {
            image: seq.frames[i].clone(),
            speed: seq.speeds[i],
            timestamp: seq.timestamps[i],
        };
        let dist = match gate.gate_frame(&frame, min_drive_dist) {
            Ok(Some(d)) => d,
            Ok(None) => continue,
            Err(e) => {
                mailbox.close();
                let _ = learner.join();
                return Err(e);
            }
        };
        gated += 1;
        let snap = Arc::clone(&cell.read().expect("snapshot cell poisoned"));
        debug_assert!(snap.version >= last_version, "versions must not regress");
        last_version = snap.version;
        let vo = match &prev_image {
            Some(prev) => E::predict(&snap.state, prev, &frame.image)?,
            None => Pose::identity(),
        };
        if prev_image.is_some() {
            absolute = absolute.compose(&vo.inverse());
            trajectory.push(frame.timestamp, absolute)?;
        }
        estimates.push(PredictorOutput {
            timestamp: frame.timestamp,
            vo,
            weights_version: snap.version,
        });
        prev_image = Some(frame.image.clone());
        if let Some(item) = assembler.push(frame.image, frame.timestamp, dist) {
            mailbox.put(frame.timestamp, item);
        }
    }

    // Leftover mailbox content at close counts as dropped, matching the
    // simulated driver.
    let leftover = {
        let mut inner = mailbox.inner.lock().expect("mailbox poisoned");
        let left = inner.slot.take().is_some();
        inner.closed = true;
        left
    };
    mailbox.ready.notify_one();
    let (completed_updates, publications, engine) = learner
        .join()
        .map_err(|_| Error::InvalidConfig("learner thread panicked".into()))??;

    Ok((
        AsyncRunReport {
            trajectory,
            estimates,
            gated_frames: gated,
            drop_count: mailbox.drops.load(Ordering::Relaxed) + leftover as u64,
            completed_updates,
            publications,
        },
        engine,
    ))
}
