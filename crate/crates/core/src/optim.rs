//! Parameter groups and the Adam optimizer.
//!
//! Parameters are partitioned into named groups so encoders can stay
//! frozen while decoders keep training: a frozen group is left
//! bit-identical by [`Adam::step`] no matter what gradients are supplied
//! for it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// A named set of parameter tensors that are updated (or frozen) together.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub tensors: Vec<Tensor>,
    pub trainable: bool,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, tensors: Vec<Tensor>, trainable: bool) -> Self {
        ParamGroup {
            name: name.into(),
            tensors,
            trainable,
        }
    }
}

/// Per-group gradients, parallel to `ParamGroup::tensors`. `None` means
/// no gradient reached that tensor.
pub type GroupGrads = Vec<Option<Tensor>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state: first/second moment estimates per tensor, plus the shared
/// timestep. Moment buffers are allocated lazily on the first step so the
/// state can outlive changes in which groups receive gradients.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<Vec<Option<(Tensor, Tensor)>>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// One Adam update over `groups` with `grads[i][j]` the gradient of
    /// `groups[i].tensors[j]`. Frozen groups are not touched. The
    /// timestep advances once per call.
    pub fn step(&mut self, groups: &mut [&mut ParamGroup], grads: &[GroupGrads]) -> Result<()> {
        assert_eq!(groups.len(), grads.len(), "group/grad arity");
        if self.moments.len() < groups.len() {
            self.moments.resize(groups.len(), Vec::new());
        }
        self.t += 1;
        let t = self.t as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (gi, group) in groups.iter_mut().enumerate() {
            if !group.trainable {
                continue;
            }
            let slots = &mut self.moments[gi];
            if slots.len() < group.tensors.len() {
                slots.resize(group.tensors.len(), None);
            }
            for (ti, param) in group.tensors.iter_mut().enumerate() {
                let Some(grad) = grads[gi].get(ti).and_then(|g| g.as_ref()) else {
                    continue;
                };
                if grad.shape() != param.shape() {
                    return Err(Error::GradShapeMismatch {
                        name: group.name.clone(),
                        param: param.shape().to_vec(),
                        grad: grad.shape().to_vec(),
                    });
                }
                let (m, v) = slots[ti].get_or_insert_with(|| {
                    (Tensor::zeros(param.shape()), Tensor::zeros(param.shape()))
                });
                let pd = param.data_mut();
                let md = m.data_mut();
                let vd = v.data_mut();
                for i in 0..pd.len() {
                    let g = grad.data()[i];
                    md[i] = beta1 * md[i] + (1.0 - beta1) * g;
                    vd[i] = beta2 * vd[i] + (1.0 - beta2) * g * g;
                    let m_hat = md[i] / bc1;
                    let v_hat = vd[i] / bc2;
                    pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
