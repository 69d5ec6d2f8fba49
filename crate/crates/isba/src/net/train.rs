//! Gradient-descent training: one video per optimization step, videos
//! shuffled each epoch with the seeded generator.
//!
//! Arithmetic is always evaluated in f64. The 32-bit precision mode
//! emulates single-precision storage by rounding every persistent tensor
//! through f32 after initialization and after each optimizer step; since
//! checkpoints store 32-bit values, a model trained this way round-trips
//! through its checkpoint bit-exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSequence;
use crate::targets::SoftLabelSequence;

use super::model::{ModelConfig, TrainedModel};
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.epochs < 1 {
            return Err(NetError::InvalidConfig {
                field: "epochs",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NetError::InvalidConfig {
                field: "learning_rate",
                reason: format!("must be a positive real, got {}", self.learning_rate),
            });
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

enum Optimizer {
    Sgd,
    Adam { slots: Vec<AdamSlot>, t: u64 },
}

impl Optimizer {
    fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd,
            OptimizerKind::Adam => Self::Adam {
                slots: Vec::new(),
                t: 0,
            },
        }
    }

    fn step(&mut self, model: &mut TrainedModel, lr: f64) {
        match self {
            Self::Sgd => model.visit_tensors(&mut |_, _, vals, grad| {
                if let Some(g) = grad {
                    for (v, gv) in vals.iter_mut().zip(g.iter()) {
                        *v -= lr * gv;
                    }
                }
            }),
            Self::Adam { slots, t } => {
                *t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(*t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(*t as i32);
                let mut index = 0;
                model.visit_tensors(&mut |_, _, vals, grad| {
                    let Some(g) = grad else { return };
                    if slots.len() == index {
                        slots.push(AdamSlot {
                            m: vec![0.0; vals.len()],
                            v: vec![0.0; vals.len()],
                        });
                    }
                    let slot = &mut slots[index];
                    index += 1;
                    for i in 0..vals.len() {
                        slot.m[i] = ADAM_BETA1 * slot.m[i] + (1.0 - ADAM_BETA1) * g[i];
                        slot.v[i] = ADAM_BETA2 * slot.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let m_hat = slot.m[i] / bc1;
                        let v_hat = slot.v[i] / bc2;
                        vals[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                });
            }
        }
    }
}

fn round_state_to_f32(model: &mut TrainedModel) {
    model.visit_tensors(&mut |_, _, vals, _| {
        for v in vals.iter_mut() {
            *v = *v as f32 as f64;
        }
    });
}

fn fit(
    model: &mut TrainedModel,
    data: &[(FeatureSequence, SoftLabelSequence)],
    tc: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), NetError> {
    let mut optimizer = Optimizer::new(tc.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..tc.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for (step, &vi) in order.iter().enumerate() {
            let (features, target) = &data[vi];
            model.zero_grads();
            let loss = model.loss_and_grad(features, target)?;
            if !loss.is_finite() {
                return Err(NetError::NanLoss { epoch, step });
            }
            optimizer.step(model, tc.learning_rate);
            if tc.precision == Precision::F32 {
                round_state_to_f32(model);
            }
            epoch_loss += loss;
        }
        model.push_epoch_loss(epoch_loss / data.len() as f64);
    }
    Ok(())
}

/// Train a fresh model of the given architecture on (features, soft target)
/// pairs. Deterministic given `(config, data, tc)`.
pub fn train(
    config: &ModelConfig,
    data: &[(FeatureSequence, SoftLabelSequence)],
    tc: &TrainConfig,
) -> Result<TrainedModel, NetError> {
    config.validate()?;
    tc.validate()?;
    if data.is_empty() {
        return Err(NetError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut model = TrainedModel::init_with_rng(config.clone(), &mut rng)?;
    if tc.precision == Precision::F32 {
        round_state_to_f32(&mut model);
    }
    fit(&mut model, data, tc, &mut rng)?;
    Ok(model)
}

/// Continue training an existing model for `tc.epochs` more epochs (fresh
/// optimizer state, shuffles drawn from `tc.seed`).
pub fn train_more(
    model: &mut TrainedModel,
    data: &[(FeatureSequence, SoftLabelSequence)],
    tc: &TrainConfig,
) -> Result<(), NetError> {
    tc.validate()?;
    if data.is_empty() {
        return Err(NetError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    fit(model, data, tc, &mut rng)
}
