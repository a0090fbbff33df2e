//! Depth and ego-motion networks, plus the image features used by the
//! replay buffer.
//!
//! Both networks share the same small layout: a three-layer stride-2
//! conv encoder and a lightweight decoder. The split into encoder and
//! decoder parameter groups is what the online phase relies on: only
//! decoders keep training during inference, so the encoder features that
//! index the replay buffer stay fixed.
//!
//! Depth head: `depth = 1 / (min_disp + (max_disp - min_disp) * sigmoid(x))`
//! with a [0.1, 100] m depth range. Motion head: a 6-vector twist
//! `[omega, v]`. The output head scale combined with the damped
//! final-layer init keeps fresh networks near identity motion, while
//! keeping metric-scale translations (tenths of meters between gated
//! frames) reachable within a few hundred optimizer steps.

use crate::error::{Error, Result};
use crate::geometry::Twist;
use crate::graph::{Graph, NodeId};
use crate::optim::ParamGroup;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ENCODER_CHANNELS: [usize; 3] = [8, 16, 32];
/// Length of a replay feature vector: the final encoder channel count.
pub const FEATURE_LEN: usize = 32;
pub const DEPTH_MIN: f32 = 0.1;
pub const DEPTH_MAX: f32 = 100.0;
const LEAKY_SLOPE: f32 = 0.1;
/// Output head scaling: raw head outputs of O(1) map to tenths of
/// meters / radians.
const TWIST_SCALE: f32 = 0.5;
/// Final-layer damping for both heads: motion starts near identity and
/// disparity starts near its bias.
const POSE_HEAD_INIT: f32 = 0.1;
/// Disparity head bias init: sigma(-4.7) = 0.009 puts the initial
/// depth near 10 m, inside the scene's working range, instead of the
/// 0.2 m that a zero bias would give. Without this the photometric
/// term sees meaningless warps until the bias has crawled there.
const DISPARITY_BIAS_INIT: f32 = -4.7;

/// Depth network: predicts a dense depth map from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthNet {
    pub encoder: ParamGroup,
    pub decoder: ParamGroup,
}

/// Motion network: predicts a twist from a channel-concatenated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseNet {
    pub encoder: ParamGroup,
    pub decoder: ParamGroup,
}

/// The full learnable state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub depth: DepthNet,
    pub pose: PoseNet,
}

/// L2-normalized image feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    /// Normalize a raw vector to unit length.
    pub fn from_raw(mut values: Vec<f32>) -> Result<Self> {
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidConfig(
                "feature vector has zero or non-finite norm".into(),
            ));
        }
        let inv = (1.0 / norm) as f32;
        for v in &mut values {
            *v *= inv;
        }
        Ok(FeatureVector(values))
    }

    /// Wrap values that are already unit-norm (e.g. read back from disk)
    /// without renormalizing, so roundtrips stay bit-exact.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let norm: f64 = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        if (norm.sqrt() - 1.0).abs() > 1e-4 {
            return Err(Error::InvalidConfig(format!(
                "feature vector norm {} is not 1",
                norm.sqrt()
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt() as f32
    }
}

/// Per-pixel positive depth in meters, shape `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Tensor,
}

impl DepthMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "depth_map",
                lhs: values.shape().to_vec(),
                rhs: vec![],
            });
        }
        if values.data().iter().any(|&d| d <= 0.0) {
            return Err(Error::NonPositiveDepth);
        }
        Ok(DepthMap { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }
}

fn he_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

fn conv_group<R: Rng>(name: &str, channels: &[(usize, usize)], rng: &mut R) -> ParamGroup {
    let mut tensors = Vec::new();
    for &(cin, cout) in channels {
        tensors.push(he_uniform(&[3, 3, cin, cout], 9 * cin, rng));
        // Small nonzero biases so features are not invariant to a global
        // gain on the input.
        tensors.push(Tensor::rand_uniform(&[cout], -0.05, 0.05, rng));
    }
    ParamGroup::new(name, tensors, true)
}

impl ModelParams {
    /// Fresh random parameters; everything trainable.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = ENCODER_CHANNELS;
        let depth_encoder = conv_group("depth.encoder", &[(3, c1), (c1, c2), (c2, c3)], &mut rng);
        let mut depth_decoder =
            conv_group("depth.decoder", &[(c3, c2), (c2, c1), (c1, 1)], &mut rng);
        // Damped head weights keep early depth near the bias-set
        // operating point instead of saturating the sigmoid.
        depth_decoder.tensors[4] = depth_decoder.tensors[4].map(|w| w * POSE_HEAD_INIT);
        depth_decoder.tensors[5] = Tensor::full(&[1], DISPARITY_BIAS_INIT);
        let pose_encoder = conv_group("pose.encoder", &[(6, c1), (c1, c2), (c2, c3)], &mut rng);

        let mut dec = Vec::new();
        dec.push(he_uniform(&[c3, c3], c3, &mut rng));
        dec.push(Tensor::rand_uniform(&[c3], -0.05, 0.05, &mut rng));
        let head = he_uniform(&[c3, 6], c3, &mut rng).map(|w| w * POSE_HEAD_INIT);
        dec.push(head);
        dec.push(Tensor::zeros(&[6]));
        let pose_decoder = ParamGroup::new("pose.decoder", dec, true);

        ModelParams {
            depth: DepthNet {
                encoder: depth_encoder,
                decoder: depth_decoder,
            },
            pose: PoseNet {
                encoder: pose_encoder,
                decoder: pose_decoder,
            },
        }
    }

    /// Mark both encoders frozen. Their tensors are left untouched by the
    /// optimizer from here on.
    pub fn freeze_encoders(&mut self) {
        self.depth.encoder.trainable = false;
        self.pose.encoder.trainable = false;
    }

    /// Groups in checkpoint order.
    pub fn groups(&self) -> [&ParamGroup; 4] {
        [
            &self.depth.encoder,
            &self.depth.decoder,
            &self.pose.encoder,
            &self.pose.decoder,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut ParamGroup; 4] {
        [
            &mut self.depth.encoder,
            &mut self.depth.decoder,
            &mut self.pose.encoder,
            &mut self.pose.decoder,
        ]
    }

    pub fn from_groups(mut groups: Vec<ParamGroup>) -> Result<Self> {
        let mut take = |name: &str| -> Result<ParamGroup> {
            let idx = groups
                .iter()
                .position(|g| g.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing group {name}")))?;
            Ok(groups.swap_remove(idx))
        };
        let depth_encoder = take("depth.encoder")?;
        let depth_decoder = take("depth.decoder")?;
        let pose_encoder = take("pose.encoder")?;
        let pose_decoder = take("pose.decoder")?;
        Ok(ModelParams {
            depth: DepthNet {
                encoder: depth_encoder,
                decoder: depth_decoder,
            },
            pose: PoseNet {
                encoder: pose_encoder,
                decoder: pose_decoder,
            },
        })
    }
}

/// Leaf bindings of all four groups in one graph. Leaves for trainable
/// groups carry gradients; frozen groups bind as constants.
pub struct BoundModel {
    pub depth_encoder: Vec<NodeId>,
    pub depth_decoder: Vec<NodeId>,
    pub pose_encoder: Vec<NodeId>,
    pub pose_decoder: Vec<NodeId>,
}

impl BoundModel {
    pub fn trainable_leaves(&self, params: &ModelParams) -> Vec<(NodeId, usize, usize)> {
        let groups = params.groups();
        let bound = [
            &self.depth_encoder,
            &self.depth_decoder,
            &self.pose_encoder,
            &self.pose_decoder,
        ];
        let mut out = Vec::new();
        for (gi, (group, ids)) in groups.iter().zip(bound).enumerate() {
            if group.trainable {
                for (ti, &id) in ids.iter().enumerate() {
                    out.push((id, gi, ti));
                }
            }
        }
        out
    }
}

/// Bind parameters as graph leaves, honoring each group's trainable flag.
pub fn bind(g: &mut Graph, params: &ModelParams) -> BoundModel {
    bind_with(g, params, |group| group.trainable)
}

/// Bind with gradients disabled everywhere (inference / feature paths).
pub fn bind_frozen(g: &mut Graph, params: &ModelParams) -> BoundModel {
    bind_with(g, params, |_| false)
}

fn bind_with(g: &mut Graph, params: &ModelParams, grad: impl Fn(&ParamGroup) -> bool) -> BoundModel {
    let mut bind_group = |group: &ParamGroup| -> Vec<NodeId> {
        let rg = grad(group);
        group
            .tensors
            .iter()
            .map(|t| g.leaf(t.clone(), rg))
            .collect()
    };
    BoundModel {
        depth_encoder: bind_group(&params.depth.encoder),
        depth_decoder: bind_group(&params.depth.decoder),
        pose_encoder: bind_group(&params.pose.encoder),
        pose_decoder: bind_group(&params.pose.decoder),
    }
}

fn conv_block(
    g: &mut Graph,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    stride: usize,
    activate: bool,
) -> Result<NodeId> {
    let c = g.conv2d(x, w, stride)?;
    let cb = g.add(c, b)?;
    if activate {
        g.leaky_relu(cb, LEAKY_SLOPE)
    } else {
        Ok(cb)
    }
}

fn check_image(g: &Graph, img: NodeId) -> Result<(usize, usize)> {
    let s = g.shape(img);
    if s.len() != 3 || s[2] != 3 || s[0] % 8 != 0 || s[1] % 8 != 0 || s[0] < 16 || s[1] < 16 {
        return Err(Error::ShapeMismatch {
            op: "model_input",
            lhs: s.to_vec(),
            rhs: vec![0, 0, 3],
        });
    }
    Ok((s[0], s[1]))
}

fn encoder_graph(g: &mut Graph, weights: &[NodeId], input: NodeId) -> Result<NodeId> {
    let l1 = conv_block(g, input, weights[0], weights[1], 2, true)?;
    let l2 = conv_block(g, l1, weights[2], weights[3], 2, true)?;
    conv_block(g, l2, weights[4], weights[5], 2, true)
}

/// Dense depth for `img`; output shape equals the input `[H, W]`.
pub fn depth_forward_graph(g: &mut Graph, model: &BoundModel, img: NodeId) -> Result<NodeId> {
    let (h, w) = check_image(g, img)?;
    let bottleneck = encoder_graph(g, &model.depth_encoder, img)?;
    let d = &model.depth_decoder;
    let u1 = g.upsample2x(bottleneck)?;
    let l1 = conv_block(g, u1, d[0], d[1], 1, true)?;
    let u2 = g.upsample2x(l1)?;
    let l2 = conv_block(g, u2, d[2], d[3], 1, true)?;
    let u3 = g.upsample2x(l2)?;
    let head = conv_block(g, u3, d[4], d[5], 1, false)?;
    let sig = g.sigmoid(head)?;
    // disparity in [1/DEPTH_MAX, 1/DEPTH_MIN], depth = 1/disparity
    let min_disp = 1.0 / DEPTH_MAX;
    let max_disp = 1.0 / DEPTH_MIN;
    let scaled = g.scale(sig, max_disp - min_disp)?;
    let disp = g.offset(scaled, min_disp)?;
    let one = g.scalar(1.0);
    let depth = g.div(one, disp)?;
    g.reshape(depth, &[h, w])
}

/// Twist `[omega, v]` (shape `[6]`) for the motion from the frame of
/// `img_a` to the frame of `img_b`.
pub fn pose_forward_graph(
    g: &mut Graph,
    model: &BoundModel,
    img_a: NodeId,
    img_b: NodeId,
) -> Result<NodeId> {
    let (ha, wa) = check_image(g, img_a)?;
    let (hb, wb) = check_image(g, img_b)?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::ShapeMismatch {
            op: "pose_forward",
            lhs: g.shape(img_a).to_vec(),
            rhs: g.shape(img_b).to_vec(),
        });
    }
    let pair = g.concat(&[img_a, img_b], 2)?;
    let bottleneck = encoder_graph(g, &model.pose_encoder, pair)?;
    let pooled = global_avg_pool(g, bottleneck)?;
    let d = &model.pose_decoder;
    let h1 = g.matmul(pooled, d[0])?;
    let h1b = g.add(h1, d[1])?;
    let h1a = g.leaky_relu(h1b, LEAKY_SLOPE)?;
    let h2 = g.matmul(h1a, d[2])?;
    let h2b = g.add(h2, d[3])?;
    let out = g.scale(h2b, TWIST_SCALE)?;
    g.reshape(out, &[6])
}

/// `[H, W, C] -> [1, C]` average over the spatial grid.
fn global_avg_pool(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    let (h, w, c) = (s[0], s[1], s[2]);
    let flat = g.reshape(x, &[h * w, c])?;
    let ones = g.constant(Tensor::full(&[1, h * w], 1.0 / (h * w) as f32));
    g.matmul(ones, flat)
}

/// Raw (unnormalized) pooled encoder activation as a graph node `[1, C]`.
pub fn encoder_feature_graph(g: &mut Graph, model: &BoundModel, img: NodeId) -> Result<NodeId> {
    check_image(g, img)?;
    let bottleneck = encoder_graph(g, &model.depth_encoder, img)?;
    global_avg_pool(g, bottleneck)
}

/// Dense depth map prediction.
pub fn depth_forward(params: &ModelParams, img: &Tensor) -> Result<DepthMap> {
    let mut g = Graph::new();
    let model = bind_frozen(&mut g, params);
    let input = g.constant(img.clone());
    let depth = depth_forward_graph(&mut g, &model, input)?;
    DepthMap::new(g.value(depth).clone())
}

/// Twist prediction for an image pair.
pub fn pose_forward(params: &ModelParams, img_a: &Tensor, img_b: &Tensor) -> Result<Twist> {
    let mut g = Graph::new();
    let model = bind_frozen(&mut g, params);
    let a = g.constant(img_a.clone());
    let b = g.constant(img_b.clone());
    let twist = pose_forward_graph(&mut g, &model, a, b)?;
    let v = g.value(twist).data();
    Ok(Twist::from_vec6([
        v[0] as f64,
        v[1] as f64,
        v[2] as f64,
        v[3] as f64,
        v[4] as f64,
        v[5] as f64,
    ]))
}

/// Replay-buffer feature: global-average-pooled final depth-encoder
/// activation, L2-normalized. Computed with gradients disabled.
pub fn extract_feature(params: &ModelParams, img: &Tensor) -> Result<FeatureVector> {
    let mut g = Graph::new();
    let model = bind_frozen(&mut g, params);
    let input = g.constant(img.clone());
    let feat = encoder_feature_graph(&mut g, &model, input)?;
    FeatureVector::from_raw(g.value(feat).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::rand_uniform(&[h, w, 3], 0.0, 1.0, &mut rng)
    }

    #[test]
    fn depth_stays_in_range_and_keeps_shape() {
        for seed in 0..10 {
            let params = ModelParams::init(seed);
            let img = image(seed + 50, 24, 32);
            let depth = depth_forward(&params, &img).unwrap();
            assert_eq!(depth.values().shape(), &[24, 32]);
            for &d in depth.values().data() {
                assert!((DEPTH_MIN..=DEPTH_MAX).contains(&d), "depth {d}");
            }
        }
    }

    #[test]
    fn depth_positivity_fuzz() {
        // Random parameters and random inputs; positivity must be
        // unconditional.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..1000 {
            let params = ModelParams::init(case);
            let img = Tensor::rand_uniform(&[16, 16, 3], 0.0, 1.0, &mut rng);
            let depth = depth_forward(&params, &img).unwrap();
            assert!(depth.values().data().iter().all(|&d| d > 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = ModelParams::init(3);
        let img = image(7, 16, 16);
        let d1 = depth_forward(&params, &img).unwrap();
        let d2 = depth_forward(&params, &img).unwrap();
        assert!(d1
            .values()
            .data()
            .iter()
            .zip(d2.values().data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn pose_output_is_finite_six_vector() {
        let params = ModelParams::init(11);
        let a = image(1, 16, 16);
        let b = image(2, 16, 16);
        let t = pose_forward(&params, &a, &b).unwrap();
        let v6 = t.to_vec6();
        assert_eq!(v6.len(), 6);
        assert!(v6.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pose_rejects_mismatched_pairs() {
        let params = ModelParams::init(11);
        let a = image(1, 16, 16);
        let b = image(2, 24, 16);
        assert!(pose_forward(&params, &a, &b).is_err());
    }

    #[test]
    fn wrong_image_size_is_an_error() {
        let params = ModelParams::init(11);
        let img = image(1, 18, 20);
        assert!(depth_forward(&params, &img).is_err());
    }

    #[test]
    fn features_are_unit_norm_and_deterministic() {
        let params = ModelParams::init(5);
        let img = image(9, 24, 32);
        let f1 = extract_feature(&params, &img).unwrap();
        let f2 = extract_feature(&params, &img).unwrap();
        assert!((f1.norm() - 1.0).abs() < 1e-6);
        assert_eq!(f1.values().len(), FEATURE_LEN);
        assert!(f1
            .values()
            .iter()
            .zip(f2.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn brightness_change_moves_the_feature() {
        let params = ModelParams::init(5);
        let img = image(9, 24, 32);
        let dimmed = img.map(|v| v * 0.5);
        let f = extract_feature(&params, &img).unwrap();
        let fd = extract_feature(&params, &dimmed).unwrap();
        let cos: f32 = f
            .values()
            .iter()
            .zip(fd.values())
            .map(|(a, b)| a * b)
            .sum();
        assert!(cos < 1.0 - 1e-4, "cosine {cos}");
    }

    #[test]
    fn freeze_marks_encoders_only() {
        let mut params = ModelParams::init(1);
        params.freeze_encoders();
        assert!(!params.depth.encoder.trainable);
        assert!(!params.pose.encoder.trainable);
        assert!(params.depth.decoder.trainable);
        assert!(params.pose.decoder.trainable);
    }

    #[test]
    fn groups_roundtrip_by_name() {
        let params = ModelParams::init(2);
        let groups: Vec<ParamGroup> = params.groups().iter().map(|g| (*g).clone()).collect();
        let back = ModelParams::from_groups(groups).unwrap();
        assert_eq!(params, back);
    }
}
