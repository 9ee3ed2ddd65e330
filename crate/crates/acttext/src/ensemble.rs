//! Temporal ensembling over overlapping chunk predictions.
//!
//! Each inference step emits a chunk covering the next `H` timesteps, so at
//! timestep `t` there are up to `n` live predictions for the current action:
//! row 0 of the chunk emitted at `t`, row 1 of the chunk emitted at `t - 1`,
//! and so on. The executed action is their plain element-wise mean, taken in
//! continuous (dequantized) space.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::ActionChunk;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("ensemble size n must satisfy 1 <= n <= horizon ({horizon}), got {n}")]
    InvalidWindow { n: usize, horizon: usize },
    #[error("push timestep {t} is not after the last emit timestep {last}")]
    NonIncreasingTimestep { t: u64, last: u64 },
    #[error("chunk horizon {got} does not match buffer horizon {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("chunk dims {got} does not match buffer dims {expected}")]
    DimsMismatch { expected: usize, got: usize },
    #[error("no stored prediction covers timestep {t}")]
    NoCoveringEntry { t: u64 },
}

/// Number of overlapping predictions to average. `n = 1` disables
/// ensembling (each step executes row 0 of the freshest chunk).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: usize,
}

impl EnsembleConfig {
    pub fn new(n: usize, horizon: usize) -> Result<Self, EnsembleError> {
        if n < 1 || n > horizon {
            return Err(EnsembleError::InvalidWindow { n, horizon });
        }
        Ok(Self { n })
    }
}

/// Ring of the last `n` emitted chunks with their emission timesteps.
///
/// Retained entries always satisfy `current - emit < horizon`; anything
/// older cannot cover the current timestep. Single-writer: one control loop
/// owns a buffer.
#[derive(Debug, Clone)]
pub struct EnsembleBuffer {
    entries: VecDeque<(u64, ActionChunk)>,
    n: usize,
    horizon: usize,
    dims: usize,
}

impl EnsembleBuffer {
    pub fn new(n: usize, horizon: usize, dims: usize) -> Result<Self, EnsembleError> {
        EnsembleConfig::new(n, horizon)?;
        Ok(Self {
            entries: VecDeque::with_capacity(n),
            n,
            horizon,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Append a chunk emitted at timestep `t`, evicting entries that can no
    /// longer cover the present and anything beyond capacity.
    pub fn push(&mut self, chunk: ActionChunk, t: u64) -> Result<(), EnsembleError> {
        if let Some(&(last, _)) = self.entries.back() {
            if t <= last {
                return Err(EnsembleError::NonIncreasingTimestep { t, last });
            }
        }
        if chunk.horizon() != self.horizon {
            return Err(EnsembleError::HorizonMismatch {
                expected: self.horizon,
                got: chunk.horizon(),
            });
        }
        if chunk.dims() != self.dims {
            return Err(EnsembleError::DimsMismatch {
                expected: self.dims,
                got: chunk.dims(),
            });
        }
        self.entries.push_back((t, chunk));
        let horizon = self.horizon as u64;
        while let Some(&(emit, _)) = self.entries.front() {
            if t - emit >= horizon {
                self.entries.pop_front();
            } else {
                break;
            }
        }
        while self.entries.len() > self.n {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Mean of every stored prediction that covers timestep `t`.
    ///
    /// Entry `(emit, chunk)` covers `t` when `emit <= t < emit + horizon`;
    /// it contributes row `t - emit`. Equal weights.
    pub fn current_action(&self, t: u64) -> Result<Vec<f64>, EnsembleError> {
        let horizon = self.horizon as u64;
        let mut sum = vec![0.0; self.dims];
        let mut count = 0usize;
        for (emit, chunk) in &self.entries {
            if *emit <= t && t - emit < horizon {
                let row = chunk.row((t - emit) as usize);
                for (acc, &x) in sum.iter_mut().zip(row) {
                    *acc += x;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(EnsembleError::NoCoveringEntry { t });
        }
        for acc in &mut sum {
            *acc /= count as f64;
        }
        Ok(sum)
    }

    /// Drop all stored predictions (episode boundary).
    pub fn reset(&mut self) {
        self.entries.clear();
    }
}
