use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{encode, EncodedPair, EncoderConfig};
use super::RewardError;
use crate::types::{ConversationSession, ReformulationCandidate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub margin: f64,
    pub epochs: u32,
}

/// One-hidden-layer scorer `r = w2 · tanh(W1 x + b1) + b2`.
///
/// Parameters live in one flat vector laid out as
/// `[W1 (input_dim × hidden, one row of `hidden` weights per input feature) | b1 | w2 | b2]`.
/// Values are kept representable as f32 so a checkpoint stores them exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    encoder: EncoderConfig,
    input_dim: usize,
    hidden: usize,
    params: Vec<f64>,
    metadata: ModelMetadata,
}

pub fn parameter_count(input_dim: usize, hidden: usize) -> usize {
    input_dim * hidden + hidden + hidden + 1
}

impl RewardModel {
    /// `W1` uniform in `±1/√input_dim`, everything else zero.
    pub fn initialize(config: &ModelConfig, seed: u64) -> Result<Self, RewardError> {
        config.encoder.validate().map_err(RewardError::Config)?;
        if config.hidden == 0 {
            return Err(RewardError::Config("hidden size must be positive".into()));
        }
        let input_dim = config.encoder.dimension();
        let hidden = config.hidden;
        let mut params = vec![0.0; parameter_count(input_dim, hidden)];
        let bound = 1.0 / (input_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut params[..input_dim * hidden] {
            *w = f64::from(rng.gen_range(-bound..bound) as f32);
        }
        Ok(Self {
            encoder: config.encoder.clone(),
            input_dim,
            hidden,
            params,
            metadata: ModelMetadata { seed, margin: 0.0, epochs: 0 },
        })
    }

    /// Builds a model from explicit parameters (layout as above).
    pub fn from_parameters(
        encoder: EncoderConfig,
        input_dim: usize,
        hidden: usize,
        params: Vec<f64>,
        metadata: ModelMetadata,
    ) -> Result<Self, RewardError> {
        let expected = parameter_count(input_dim, hidden);
        if params.len() != expected {
            return Err(RewardError::Config(format!(
                "expected {expected} parameters for {input_dim}x{hidden}, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(RewardError::Config("non-finite parameter".into()));
        }
        Ok(Self { encoder, input_dim, hidden, params, metadata })
    }

    pub fn encoder(&self) -> &EncoderConfig {
        &self.encoder
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub(crate) fn metadata_mut(&mut self) -> &mut ModelMetadata {
        &mut self.metadata
    }

    pub(crate) fn b1_offset(&self) -> usize {
        self.input_dim * self.hidden
    }

    pub(crate) fn w2_offset(&self) -> usize {
        self.b1_offset() + self.hidden
    }

    pub(crate) fn b2_offset(&self) -> usize {
        self.w2_offset() + self.hidden
    }

    pub(crate) fn check_dim(&self, pair: &EncodedPair) -> Result<(), RewardError> {
        if pair.dim() != self.input_dim {
            return Err(RewardError::InputDimension { expected: self.input_dim, actual: pair.dim() });
        }
        Ok(())
    }

    /// Score and hidden activations `tanh(W1 x + b1)`.
    pub(crate) fn forward(&self, pair: &EncodedPair) -> (f64, Vec<f64>) {
        let h = self.hidden;
        let mut pre = self.params[self.b1_offset()..self.w2_offset()].to_vec();
        for (f, x) in pair.iter() {
            let row = &self.params[f * h..(f + 1) * h];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += x * w;
            }
        }
        let act: Vec<f64> = pre.into_iter().map(f64::tanh).collect();
        let w2 = &self.params[self.w2_offset()..self.b2_offset()];
        let r = act.iter().zip(w2).map(|(a, w)| a * w).sum::<f64>() + self.params[self.b2_offset()];
        (r, act)
    }

    pub fn score(&self, pair: &EncodedPair) -> Result<f64, RewardError> {
        self.check_dim(pair)?;
        Ok(self.forward(pair).0)
    }

    pub fn encode(&self, candidate: &ReformulationCandidate, session: &ConversationSession) -> EncodedPair {
        encode(candidate, session, &self.encoder)
    }

    pub fn score_candidate(
        &self,
        candidate: &ReformulationCandidate,
        session: &ConversationSession,
    ) -> Result<f64, RewardError> {
        self.score(&self.encode(candidate, session))
    }
}
