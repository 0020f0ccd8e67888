use std::collections::BTreeMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderGrads, EncoderWeights, SimilarityConfig};
use crate::encoder::{CLS_BIAS_TENSOR, CLS_WEIGHT_TENSOR, EMBEDDING_TENSOR, MLM_WEIGHT_TENSOR, PROJ_BIAS_TENSOR, PROJ_WEIGHT_TENSOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup over `warmup_proportion` of the steps, then linear decay to 0.
    #[default]
    WarmupLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_proportion: f64,
    pub schedule: LrSchedule,
    /// Similarity scale for the contrastive objective.
    pub scale: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self::retrieval()
    }
}

impl HyperParams {
    /// Retrieval fine-tuning: 1 epoch, batch 32, learning rate 2e-5.
    pub fn retrieval() -> Self {
        Self {
            batch_size: 32,
            epochs: 1,
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_proportion: 0.1,
            schedule: LrSchedule::WarmupLinear,
            scale: SimilarityConfig::default().scale,
            seed: 0,
        }
    }

    /// Continued MLM pre-training: 60 epochs, batch 128, peak learning rate
    /// 5e-4, weight decay 0.01, 6% warmup then linear decay.
    pub fn pretraining() -> Self {
        Self {
            batch_size: 128,
            epochs: 60,
            learning_rate: 5e-4,
            warmup_proportion: 0.06,
            ..Self::retrieval()
        }
    }

    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            scale: self.scale,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.warmup_proportion) {
            return bad(format!("warmup_proportion must lie in [0, 1], got {}", self.warmup_proportion));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay < 0.0 {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        self.similarity().validate()
    }

    /// Learning-rate multiplier for the 0-based `step` out of `total` steps.
    pub fn lr_factor(&self, step: u64, total: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::WarmupLinear => {
                let total = total.max(1) as f64;
                let warmup = (self.warmup_proportion * total).floor();
                let s = step as f64;
                if s < warmup {
                    s / warmup.max(1.0)
                } else {
                    ((total - s) / (total - warmup).max(1.0)).max(0.0)
                }
            }
        }
    }
}

/// Adam moments per named tensor plus the global step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One tensor handed to [`adam_step`].
pub struct NamedParam<'a, T> {
    pub name: &'a str,
    pub values: &'a mut [T],
    pub grads: &'a [T],
}

/// One Adam update with bias correction and decoupled weight decay
/// (`p ← p·(1 − lr·wd)` before the moment step). The learning rate follows
/// `hp.schedule` over `total_steps`. Returns the learning rate used.
///
/// Non-finite gradients abort the step before any parameter is touched.
pub fn adam_step<T: Float>(
    params: &mut [NamedParam<'_, T>],
    state: &mut OptimizerState,
    hp: &HyperParams,
    total_steps: u64,
) -> Result<f64> {
    for p in params.iter() {
        if p.values.len() != p.grads.len() {
            return Err(Error::Training {
                tensor: p.name.to_string(),
                message: format!("{} values but {} gradients", p.values.len(), p.grads.len()),
            });
        }
        if let Some(i) = p.grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training {
                tensor: p.name.to_string(),
                message: format!("non-finite gradient at index {i}"),
            });
        }
        if let Some((m, _)) = state.moments.get(p.name) {
            if m.len() != p.values.len() {
                return Err(Error::Training {
                    tensor: p.name.to_string(),
                    message: "optimizer state shape does not match the parameter".into(),
                });
            }
        }
    }
    let lr = hp.learning_rate * hp.lr_factor(state.step, total_steps);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let decay = 1.0 - lr * hp.weight_decay;
    for p in params.iter_mut() {
        let (m, v) = state
            .moments
            .entry(p.name.to_string())
            .or_insert_with(|| (vec![0.0; p.values.len()], vec![0.0; p.values.len()]));
        for i in 0..p.values.len() {
            let g = p.grads[i].to_f64().expect("finite gradient");
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let x = p.values[i].to_f64().expect("finite parameter");
            let x = x * decay - lr * mhat / (vhat.sqrt() + hp.eps);
            p.values[i] = T::from(x).expect("float cast");
        }
    }
    Ok(lr)
}

/// Which parameter groups of the encoder a training phase updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Embedding,
    Projection,
    MlmTransform,
    Classifier,
}

/// Applies [`adam_step`] to the selected groups of an encoder.
pub fn adam_step_encoder<T: Float>(
    w: &mut EncoderWeights<T>,
    g: &EncoderGrads<T>,
    groups: &[ParamGroup],
    state: &mut OptimizerState,
    hp: &HyperParams,
    total_steps: u64,
) -> Result<f64> {
    let mut cls_bias = [w.cls_bias];
    let cls_bias_grad = [g.cls_bias];
    let mut params: Vec<NamedParam<'_, T>> = Vec::new();
    let EncoderWeights {
        embedding,
        proj_weight,
        proj_bias,
        mlm_weight,
        cls_weight,
        ..
    } = w;
    let has = |g: ParamGroup| groups.contains(&g);
    if has(ParamGroup::Embedding) {
        params.push(NamedParam {
            name: EMBEDDING_TENSOR,
            values: embedding.as_mut_slice(),
            grads: g.embedding.as_slice(),
        });
    }
    if has(ParamGroup::Projection) {
        params.push(NamedParam {
            name: PROJ_WEIGHT_TENSOR,
            values: proj_weight.as_mut_slice(),
            grads: g.proj_weight.as_slice(),
        });
        params.push(NamedParam {
            name: PROJ_BIAS_TENSOR,
            values: proj_bias.as_mut_slice(),
            grads: &g.proj_bias,
        });
    }
    if has(ParamGroup::MlmTransform) {
        params.push(NamedParam {
            name: MLM_WEIGHT_TENSOR,
            values: mlm_weight.as_mut_slice(),
            grads: g.mlm_weight.as_slice(),
        });
    }
    if has(ParamGroup::Classifier) {
        params.push(NamedParam {
            name: CLS_WEIGHT_TENSOR,
            values: cls_weight.as_mut_slice(),
            grads: &g.cls_weight,
        });
        params.push(NamedParam {
            name: CLS_BIAS_TENSOR,
            values: &mut cls_bias,
            grads: &cls_bias_grad,
        });
    }
    let lr = adam_step(&mut params, state, hp, total_steps)?;
    drop(params);
    w.cls_bias = cls_bias[0];
    Ok(lr)
}
