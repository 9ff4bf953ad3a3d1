use std::collections::HashSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{encode, EncodedPair, EncoderConfig};
use super::loss::{batch_gradient, batch_loss, Gradient};
use super::model::{ModelConfig, RewardModel};
use super::RewardError;
use crate::assessment::PoolAssessment;
use crate::types::{CandidatePool, ConversationSession, SessionRef};

/// How pools are grouped into gradient steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// One step per pool, pools shuffled each epoch from the training seed.
    #[default]
    PerPool,
    /// One step per epoch on the mean gradient of all pools.
    FullEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: u32,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub batching: Batching,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            learning_rate: 1e-2,
            epochs: 10,
            warmup_fraction: 0.1,
            seed: 0,
            batching: Batching::PerPool,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(RewardError::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RewardError::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(RewardError::Config(format!(
                "warmup_fraction must be in [0, 1], got {}",
                self.warmup_fraction
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step` (0-based) of `total` steps: linear warmup over
/// `ceil(warmup_fraction · total)` steps, then cosine decay towards zero.
pub fn scheduled_lr(base: f64, step: usize, total: usize, warmup_fraction: f64) -> f64 {
    let warmup = (warmup_fraction * total as f64).ceil() as usize;
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let decay_steps = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / decay_steps as f64).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}

/// One labelled pool together with its session.
#[derive(Debug, Clone, Copy)]
pub struct TrainingExample<'a> {
    pub session: &'a ConversationSession,
    pub pool: &'a CandidatePool,
    pub assessment: &'a PoolAssessment,
}

/// Encoded candidates of one pool, listed best-first by assigned rank.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPool {
    pub session_ref: SessionRef,
    pub pairs: Vec<EncodedPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean loss per pool; entry 0 is measured before the first update.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub pools_used: usize,
    pub pools_skipped: usize,
}

/// Validates and encodes examples, returned sorted by session reference.
pub fn encode_examples(
    examples: &[TrainingExample<'_>],
    encoder: &EncoderConfig,
) -> Result<Vec<EncodedPool>, RewardError> {
    let mut seen = HashSet::new();
    for ex in examples {
        let sref = ex.pool.session_ref();
        if ex.session.session_ref() != sref {
            return Err(RewardError::Example(sref, format!("session is {}", ex.session.session_ref())));
        }
        ex.assessment.validate_against(ex.pool)?;
        if !seen.insert(sref.clone()) {
            return Err(RewardError::Example(sref, "duplicate pool".into()));
        }
    }
    let mut pools: Vec<EncodedPool> = examples
        .par_iter()
        .map(|ex| EncodedPool {
            session_ref: ex.pool.session_ref(),
            pairs: ex
                .assessment
                .rank_order()
                .into_iter()
                .map(|i| encode(&ex.pool.candidates()[i], ex.session, encoder))
                .collect(),
        })
        .collect();
    pools.sort_by(|a, b| a.session_ref.cmp(&b.session_ref));
    Ok(pools)
}

/// Trains a freshly initialized model (seeded by `config.seed`).
pub fn train(
    examples: &[TrainingExample<'_>],
    model_config: &ModelConfig,
    config: &TrainingConfig,
) -> Result<(RewardModel, TrainingReport), RewardError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(RewardError::EmptyTrainingSet);
    }
    let model = RewardModel::initialize(model_config, config.seed)?;
    let pools = encode_examples(examples, &model_config.encoder)?;
    train_encoded(model, &pools, config)
}

/// Trains `model` in place on pre-encoded pools. Pools with fewer than two
/// candidates carry no ranking signal and are skipped.
pub fn train_encoded(
    mut model: RewardModel,
    pools: &[EncodedPool],
    config: &TrainingConfig,
) -> Result<(RewardModel, TrainingReport), RewardError> {
    config.validate()?;
    if pools.is_empty() {
        return Err(RewardError::EmptyTrainingSet);
    }
    let mut seen = HashSet::new();
    for p in pools {
        if !seen.insert(&p.session_ref) {
            return Err(RewardError::Example(p.session_ref.clone(), "duplicate pool".into()));
        }
    }
    let mut ordered: Vec<&EncodedPool> = pools.iter().filter(|p| p.pairs.len() >= 2).collect();
    let skipped = pools.len() - ordered.len();
    if ordered.is_empty() {
        return Err(RewardError::EmptyTrainingSet);
    }
    ordered.sort_by(|a, b| a.session_ref.cmp(&b.session_ref));
    let batch: Vec<&[EncodedPair]> = ordered.iter().map(|p| p.pairs.as_slice()).collect();

    let mean_loss = |m: &RewardModel| batch_loss(m, &batch, config.margin).map(|l| l / batch.len() as f64);

    let steps_per_epoch = match config.batching {
        Batching::PerPool => batch.len(),
        Batching::FullEpoch => 1,
    };
    let total = steps_per_epoch * config.epochs as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut losses = vec![mean_loss(&model)?];
    let mut step = 0;
    for epoch in 0..config.epochs {
        match config.batching {
            Batching::PerPool => {
                let mut order: Vec<usize> = (0..batch.len()).collect();
                order.shuffle(&mut rng);
                for i in order {
                    let (_, g) = batch_gradient(&model, &batch[i..=i], config.margin)?;
                    let lr = scheduled_lr(config.learning_rate, step, total, config.warmup_fraction);
                    apply(&mut model, &g, lr);
                    step += 1;
                }
            }
            Batching::FullEpoch => {
                let (_, g) = batch_gradient(&model, &batch, config.margin)?;
                let lr = scheduled_lr(config.learning_rate, step, total, config.warmup_fraction);
                apply(&mut model, &g, lr / batch.len() as f64);
                step += 1;
            }
        }
        let loss = mean_loss(&model)?;
        log::debug!("epoch {} loss {loss:.6}", epoch + 1);
        losses.push(loss);
    }

    let meta = model.metadata_mut();
    meta.seed = config.seed;
    meta.margin = config.margin;
    meta.epochs = config.epochs;
    Ok((model, TrainingReport { epoch_losses: losses, steps: step, pools_used: batch.len(), pools_skipped: skipped }))
}

fn round_f32(x: f64) -> f64 {
    f64::from(x as f32)
}

/// `θ ← θ − lr·g`, rounded back to f32-representable values.
fn apply(model: &mut RewardModel, g: &Gradient, lr: f64) {
    let h = model.hidden();
    let (b1, w2, b2) = (model.b1_offset(), model.w2_offset(), model.b2_offset());
    let params = model.params_mut();
    for (f, row) in &g.w1_rows {
        for (p, d) in params[f * h..(f + 1) * h].iter_mut().zip(row) {
            *p = round_f32(*p - lr * d);
        }
    }
    for (p, d) in params[b1..w2].iter_mut().zip(&g.b1) {
        *p = round_f32(*p - lr * d);
    }
    for (p, d) in params[w2..b2].iter_mut().zip(&g.w2) {
        *p = round_f32(*p - lr * d);
    }
    params[b2] = round_f32(params[b2] - lr * g.b2);
}
