//! Dual corruption: the encoder sees an 80/10/10-masked sequence, the
//! decoder a more aggressively masked one whose mask set relates to the
//! encoder's according to the configured strategy.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::vocab::{is_structural, MASK_ID, NUM_RESERVED};

/// What happened to an encoder-masked position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Replaced with [MASK].
    Mask,
    /// Replaced with a uniformly random non-structural token.
    Random,
    /// Left unchanged (still predicted).
    Keep,
}

/// How the decoder mask set relates to the encoder's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskingStrategy {
    /// Decoder masks everything the encoder masked plus fresh positions.
    Inclusive,
    /// Decoder masks are drawn entirely outside the encoder's, at the
    /// combined rate.
    Exclusive,
    /// Decoder masks are drawn independently of the encoder's, at the
    /// combined rate.
    FullyRandom,
}

/// One pre-training unit: the original sequence and both corrupted views.
#[derive(Debug, Clone)]
pub struct MaskedSample {
    pub tokens: Vec<u32>,
    pub enc_tokens: Vec<u32>,
    pub dec_tokens: Vec<u32>,
    /// Sorted encoder-masked positions.
    pub enc_mask: Vec<usize>,
    /// Sorted decoder-masked positions.
    pub dec_mask: Vec<usize>,
    /// Replacement mode per encoder-masked position, aligned with `enc_mask`.
    pub enc_modes: Vec<MaskMode>,
}

/// Count rule shared by both masking passes: round-half-up of
/// rate x candidates, at least 1 whenever the rate is positive.
fn mask_count(rate: f64, candidates: usize) -> usize {
    if rate <= 0.0 || candidates == 0 {
        return 0;
    }
    ((rate * candidates as f64 + 0.5).floor() as usize).max(1)
}

fn maskable_positions(tokens: &[u32]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| !is_structural(t))
        .map(|(p, _)| p)
        .collect()
}

/// Sample `count` positions without replacement, returned sorted.
fn sample_positions(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(count <= pool.len());
    let mut pool = pool.to_vec();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.random_range(0..pool.len());
        chosen.push(pool.swap_remove(i));
    }
    chosen.sort_unstable();
    chosen
}

/// 80/10/10 encoder corruption at rate `alpha` over maskable (non-structural)
/// positions. Every selected position enters the loss set regardless of its
/// replacement mode.
pub fn mask_for_encoder(
    tokens: &[u32],
    alpha: f64,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u32>, Vec<usize>, Vec<MaskMode>)> {
    if alpha < 0.0 || alpha > 1.0 {
        return Err(ModelError::InvalidConfig(format!("encoder mask rate {alpha} outside [0, 1]")));
    }
    let maskable = maskable_positions(tokens);
    if alpha == 0.0 {
        return Ok((tokens.to_vec(), Vec::new(), Vec::new()));
    }
    if maskable.is_empty() {
        return Err(ModelError::NoMaskablePositions);
    }
    let count = mask_count(alpha, maskable.len());
    let positions = sample_positions(&maskable, count, rng);

    let mut corrupted = tokens.to_vec();
    let mut modes = Vec::with_capacity(positions.len());
    for &p in &positions {
        let roll: f64 = rng.random();
        let mode = if roll < 0.8 {
            corrupted[p] = MASK_ID;
            MaskMode::Mask
        } else if roll < 0.9 {
            corrupted[p] = rng.random_range(NUM_RESERVED..vocab_size as u32);
            MaskMode::Random
        } else {
            MaskMode::Keep
        };
        modes.push(mode);
    }
    Ok((corrupted, positions, modes))
}

/// Decoder corruption. The decoder input starts from the original sequence
/// and every decoder-masked position becomes a pure [MASK] (no 80/10/10).
pub fn mask_for_decoder(
    tokens: &[u32],
    enc_mask: &[usize],
    alpha: f64,
    beta: f64,
    strategy: MaskingStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u32>, Vec<usize>)> {
    let maskable = maskable_positions(tokens);
    if maskable.is_empty() {
        return Err(ModelError::NoMaskablePositions);
    }
    let outside: Vec<usize> = maskable
        .iter()
        .copied()
        .filter(|p| !enc_mask.contains(p))
        .collect();

    let mut dec_mask = match strategy {
        MaskingStrategy::Inclusive => {
            let extra = mask_count(beta, maskable.len());
            if extra > outside.len() {
                return Err(ModelError::MaskRateExceedsAvailable {
                    requested: extra,
                    available: outside.len(),
                });
            }
            let mut all = enc_mask.to_vec();
            all.extend(sample_positions(&outside, extra, rng));
            all
        }
        MaskingStrategy::Exclusive => {
            let count = mask_count(alpha + beta, maskable.len());
            if count > outside.len() {
                return Err(ModelError::MaskRateExceedsAvailable {
                    requested: count,
                    available: outside.len(),
                });
            }
            sample_positions(&outside, count, rng)
        }
        MaskingStrategy::FullyRandom => {
            let count = mask_count(alpha + beta, maskable.len());
            if count > maskable.len() {
                return Err(ModelError::MaskRateExceedsAvailable {
                    requested: count,
                    available: maskable.len(),
                });
            }
            sample_positions(&maskable, count, rng)
        }
    };
    dec_mask.sort_unstable();

    let mut corrupted = tokens.to_vec();
    for &p in &dec_mask {
        corrupted[p] = MASK_ID;
    }
    Ok((corrupted, dec_mask))
}

impl MaskedSample {
    /// Apply both corruption passes to one prepared sequence.
    pub fn generate(
        tokens: &[u32],
        alpha: f64,
        beta: f64,
        strategy: MaskingStrategy,
        vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<MaskedSample> {
        let (enc_tokens, enc_mask, enc_modes) = mask_for_encoder(tokens, alpha, vocab_size, rng)?;
        let (dec_tokens, dec_mask) =
            mask_for_decoder(tokens, &enc_mask, alpha, beta, strategy, rng)?;
        Ok(MaskedSample {
            tokens: tokens.to_vec(),
            enc_tokens,
            dec_tokens,
            enc_mask,
            dec_mask,
            enc_modes,
        })
    }
}
