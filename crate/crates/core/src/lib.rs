//! Online continual learning for visual-inertial odometry, desk scale.
//!
//! An image stream plus inertial speed readings drive a pair of small
//! networks (depth and ego-motion), which keep training during inference
//! with an unsupervised photometric/smoothness/velocity loss. A
//! fixed-size, diversity-maximizing replay buffer mitigates catastrophic
//! forgetting, and an asynchronous predictor/learner runtime decouples
//! odometry output from the (slower) weight updates. A synthetic
//! multi-domain sequence generator and a segment-based trajectory error
//! suite close the loop for end-to-end evaluation.

pub mod adapter;
pub mod checkpoint;
pub mod losses;
pub mod replay;
pub mod runtime;
pub mod world;
pub mod seqio;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod graph;
mod kernels;
pub mod model;
pub mod optim;
pub mod tensor;

pub use adapter::{AdapterConfig, AugmentRanges, FrameInput, OnlineAdapter, StepReport};
pub use error::{Error, Result};
pub use evaluation::{AqRq, AqRqProtocol, ContinualReport, SegmentErrors, TrajectoryRecord};
pub use geometry::{Camera, Pose, Twist};
pub use graph::{Graph, NodeId, Op};
pub use losses::{LossWeights, TripletBatchItem};
pub use model::{DepthMap, DepthNet, FeatureVector, ModelParams, PoseNet};
pub use optim::{Adam, AdamConfig, ParamGroup};
pub use replay::{AdmissionReport, Buffer, ReplaySample};
pub use runtime::{AdaptEngine, AsyncConfig, AsyncRunReport, WeightSnapshot};
pub use tensor::Tensor;
pub use world::{DomainSpec, TrajectorySpec};
