//! Masked-digit training-sample generation.
//!
//! A text model learns action strings auto-regressively, so later digits can
//! be predicted by continuing the numeric pattern instead of looking at the
//! image. The countermeasure: train with a conditioning copy of the target
//! string whose digit characters are randomly masked. Only digits are ever
//! masked; spaces and signs keep the token structure intact. The loss target
//! stays the true digits — this module only produces the pair.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::codec::{encode_text, quantize, ActionChunk, ActionText, CodecConfig, CodecError};
use crate::mix_seed;
use crate::prompt::{build_prompt, ImageLayout, PromptBundle, PromptError};
use crate::sim::Episode;

/// Default mask character: visually distinct and absent from valid action text.
pub const DEFAULT_MASK_CHAR: char = '#';

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("mask probability must be in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("mask char {0:?} must not be a digit, space, or minus sign")]
    InvalidMaskChar(char),
    #[error("episode has {len} steps, need at least horizon {horizon}")]
    EpisodeTooShort { len: usize, horizon: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-character mask probability, mask character, and generator seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub p: f64,
    pub mask_char: char,
    pub seed: u64,
}

impl MaskConfig {
    pub fn new(p: f64, mask_char: char, seed: u64) -> Result<Self, AugmentError> {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(AugmentError::InvalidProbability(p));
        }
        if mask_char.is_ascii_digit() || mask_char == ' ' || mask_char == '-' || mask_char == '\u{2212}'
        {
            return Err(AugmentError::InvalidMaskChar(mask_char));
        }
        Ok(Self { p, mask_char, seed })
    }

    pub fn with_probability(p: f64, seed: u64) -> Result<Self, AugmentError> {
        Self::new(p, DEFAULT_MASK_CHAR, seed)
    }
}

/// One supervised pair: the prompt, the true action string, and the masked
/// conditioning copy.
///
/// `masked_text` always has the same length and the same space positions as
/// `target_text`; every difference is the mask character.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub prompt: PromptBundle,
    pub image_paths: Vec<String>,
    pub target_text: ActionText,
    pub masked_text: String,
}

/// Replace each digit character with the mask character, independently with
/// probability `p`. Deterministic given the seed; non-digits pass through.
pub fn mask_action_text(text: &str, cfg: &MaskConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    text.chars()
        .map(|c| {
            if c.is_ascii_digit() && rng.random::<f64>() < cfg.p {
                cfg.mask_char
            } else {
                c
            }
        })
        .collect()
}

/// Sliding-window sample construction over one episode, stride 1.
///
/// Window `k` targets the quantized text of actions `k .. k + H`; its mask
/// seed is derived from the base seed and `k` so samples are independently
/// reproducible.
pub fn make_training_samples(
    episode: &Episode,
    cfg: &CodecConfig,
    mask: &MaskConfig,
) -> Result<Vec<TrainingSample>, AugmentError> {
    let len = episode.steps.len();
    if len < cfg.horizon {
        return Err(AugmentError::EpisodeTooShort {
            len,
            horizon: cfg.horizon,
        });
    }
    let mut samples = Vec::with_capacity(len - cfg.horizon + 1);
    for start in 0..=len - cfg.horizon {
        let rows: Vec<Vec<f64>> = episode.steps[start..start + cfg.horizon]
            .iter()
            .map(|s| s.action.clone())
            .collect();
        let chunk = ActionChunk::from_rows(&rows)?;
        let target_text = encode_text(&quantize(&chunk, cfg)?);
        let window_mask = MaskConfig {
            seed: mix_seed(mask.seed, start as u64),
            ..*mask
        };
        let masked_text = mask_action_text(target_text.as_str(), &window_mask);
        let prompt = build_prompt(cfg, &episode.instruction, Vec::new(), ImageLayout::Separate)?;
        samples.push(TrainingSample {
            prompt,
            image_paths: Vec::new(),
            target_text,
            masked_text,
        });
    }
    Ok(samples)
}

#[derive(Serialize)]
struct SampleLine<'a> {
    instruction: &'a str,
    images: &'a [String],
    target_text: &'a str,
    masked_text: &'a str,
}

/// Export samples as JSONL with keys `instruction`, `images`, `target_text`,
/// `masked_text`.
pub fn write_samples<W: Write>(mut w: W, samples: &[TrainingSample]) -> Result<(), AugmentError> {
    for sample in samples {
        let line = SampleLine {
            instruction: &sample.prompt.instruction,
            images: &sample.image_paths,
            target_text: sample.target_text.as_str(),
            masked_text: &sample.masked_text,
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
