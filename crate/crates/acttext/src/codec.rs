//! Bidirectional conversion between continuous action chunks and the
//! integer text a language model emits.
//!
//! A chunk of `H` timesteps with `D` action dimensions passes through three
//! representations: continuous matrix -> integer matrix in `[0, B]` ->
//! space-separated decimal string, and back. Quantization is per-dimension
//! min/max normalization onto the integer grid; parsing is deliberately
//! tolerant because the string comes from a generative model.
//!
//! Rounding is nearest integer with ties away from zero (`f64::round`),
//! which is deterministic and platform-independent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bounds expansion applied when a dataset dimension is constant, so that
/// `lo < hi` always holds and the constant maps near the middle of the grid.
pub const CONSTANT_DIM_EPSILON: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Construction and shape errors for codec types and operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("dims must be at least 1")]
    ZeroDims,
    #[error("resolution must be at least 2, got {0}")]
    ResolutionTooSmall(u32),
    #[error("expected {expected} bounds pairs, got {got}")]
    BoundsCount { expected: usize, got: usize },
    #[error("dimension {dim}: bounds ({lo}, {hi}) must be finite with lo < hi")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },
    #[error("chunk shape {got_h}x{got_d} does not match config {horizon}x{dims}")]
    ShapeMismatch {
        horizon: usize,
        dims: usize,
        got_h: usize,
        got_d: usize,
    },
    #[error("non-finite value at timestep {row}, dimension {dim}")]
    NonFinite { row: usize, dim: usize },
    #[error("rows have inconsistent lengths")]
    RaggedRows,
    #[error("data length {len} is not a multiple of dims {dims}")]
    BadFlatLength { len: usize, dims: usize },
    #[error("quantized value {value} at timestep {row}, dimension {dim} exceeds resolution {resolution}")]
    ValueOutOfRange {
        row: usize,
        dim: usize,
        value: u32,
        resolution: u32,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("chunk {index} has {got} dims, expected {expected}")]
    DimMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("padding_fraction must be finite and >= 0, got {0}")]
    InvalidPadding(f64),
    #[error("invalid bounds document: {0}")]
    BadDocument(String),
}

/// Why a model output string failed to parse into a quantized chunk.
///
/// The variant decides the harness fallback; the payload pinpoints the
/// offending token for reports.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected {expected} tokens, got {got}")]
    TokenCountMismatch { expected: usize, got: usize },
    #[error("token {index} ({token:?}) is not an optionally-signed decimal integer")]
    NonNumericToken { index: usize, token: String },
    #[error("output contained no tokens")]
    EmptyOutput,
}

/// Discriminant-only view of [`ParseError`], for counting failures by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseErrorKind {
    TokenCountMismatch,
    NonNumericToken,
    EmptyOutput,
}

impl ParseError {
    pub fn kind(&self) -> ParseErrorKind {
        match self {
            ParseError::TokenCountMismatch { .. } => ParseErrorKind::TokenCountMismatch,
            ParseError::NonNumericToken { .. } => ParseErrorKind::NonNumericToken,
            ParseError::EmptyOutput => ParseErrorKind::EmptyOutput,
        }
    }
}

// ---------------------------------------------------------------------------
// CodecConfig
// ---------------------------------------------------------------------------

/// Quantization contract shared by the prompt, the codec, and every policy.
///
/// `horizon` (H) timesteps per chunk, `dims` (D) action dimensions,
/// `resolution` (B) as the top of the integer range `[0, B]`, and one
/// `(lo, hi)` pair per dimension in raw action units.
///
/// Serializes to the bounds document:
/// `{"horizon": H, "dims": D, "resolution": B, "bounds": [[lo, hi], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub horizon: usize,
    pub dims: usize,
    pub resolution: u32,
    pub bounds: Vec<(f64, f64)>,
}

impl CodecConfig {
    pub fn new(
        horizon: usize,
        dims: usize,
        resolution: u32,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self, CodecError> {
        let cfg = Self {
            horizon,
            dims,
            resolution,
            bounds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every invariant; deserialized configs must pass through here.
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.horizon < 1 {
            return Err(CodecError::ZeroHorizon);
        }
        if self.dims < 1 {
            return Err(CodecError::ZeroDims);
        }
        if self.resolution < 2 {
            return Err(CodecError::ResolutionTooSmall(self.resolution));
        }
        if self.bounds.len() != self.dims {
            return Err(CodecError::BoundsCount {
                expected: self.dims,
                got: self.bounds.len(),
            });
        }
        for (dim, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(CodecError::InvalidBounds { dim, lo, hi });
            }
        }
        Ok(())
    }

    /// Number of integers one chunk serializes to.
    pub fn tokens_per_chunk(&self) -> usize {
        self.horizon * self.dims
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self, CodecError> {
        let cfg: Self =
            serde_json::from_str(s).map_err(|e| CodecError::BadDocument(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn check_shape(&self, horizon: usize, dims: usize) -> Result<(), CodecError> {
        if horizon != self.horizon || dims != self.dims {
            return Err(CodecError::ShapeMismatch {
                horizon: self.horizon,
                dims: self.dims,
                got_h: horizon,
                got_d: dims,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// ActionChunk / QuantizedChunk / ActionText
// ---------------------------------------------------------------------------

/// `H x D` matrix of continuous actions in raw units, stored timestep-major.
///
/// Every entry is finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    horizon: usize,
    dims: usize,
    data: Vec<f64>,
}

impl ActionChunk {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CodecError> {
        if rows.is_empty() {
            return Err(CodecError::ZeroHorizon);
        }
        let dims = rows[0].len();
        if dims == 0 {
            return Err(CodecError::ZeroDims);
        }
        let mut data = Vec::with_capacity(rows.len() * dims);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != dims {
                return Err(CodecError::RaggedRows);
            }
            for (d, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(CodecError::NonFinite { row: t, dim: d });
                }
                data.push(x);
            }
        }
        Ok(Self {
            horizon: rows.len(),
            dims,
            data,
        })
    }

    /// Build from a timestep-major flat buffer.
    pub fn from_flat(dims: usize, data: Vec<f64>) -> Result<Self, CodecError> {
        if dims == 0 {
            return Err(CodecError::ZeroDims);
        }
        if data.is_empty() || !data.len().is_multiple_of(dims) {
            return Err(CodecError::BadFlatLength {
                len: data.len(),
                dims,
            });
        }
        for (i, &x) in data.iter().enumerate() {
            if !x.is_finite() {
                return Err(CodecError::NonFinite {
                    row: i / dims,
                    dim: i % dims,
                });
            }
        }
        Ok(Self {
            horizon: data.len() / dims,
            dims,
            data,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dims)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// `H x D` matrix of integers in `[0, resolution]`, timestep-major.
///
/// `clamped` records whether producing this chunk (by quantization or by
/// parsing) had to pull any value back into range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedChunk {
    horizon: usize,
    dims: usize,
    values: Vec<u32>,
    clamped: bool,
}

impl QuantizedChunk {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn clamped(&self) -> bool {
        self.clamped
    }

    pub fn row(&self, t: usize) -> &[u32] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }
}

/// Exactly `H * D` base-10 unsigned integers separated by single spaces.
///
/// No other characters: no sign, no leading zeros (except a literal `0`),
/// no leading or trailing whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionText(String);

impl ActionText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl std::fmt::Display for ActionText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for ActionText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Per-dimension `(lo, hi)` from the min/max of a demonstration set, padded
/// outward by `padding_fraction` of the observed span.
///
/// A constant dimension is widened by [`CONSTANT_DIM_EPSILON`] on each side.
pub fn fit_bounds(
    dataset: &[ActionChunk],
    padding_fraction: f64,
) -> Result<Vec<(f64, f64)>, CodecError> {
    if dataset.is_empty() {
        return Err(CodecError::EmptyDataset);
    }
    if !padding_fraction.is_finite() || padding_fraction < 0.0 {
        return Err(CodecError::InvalidPadding(padding_fraction));
    }
    let dims = dataset[0].dims();
    for (index, chunk) in dataset.iter().enumerate() {
        if chunk.dims() != dims {
            return Err(CodecError::DimMismatch {
                index,
                expected: dims,
                got: chunk.dims(),
            });
        }
    }
    let mut bounds = Vec::with_capacity(dims);
    for d in 0..dims {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for chunk in dataset {
            for row in chunk.rows() {
                lo = lo.min(row[d]);
                hi = hi.max(row[d]);
            }
        }
        let span = hi - lo;
        if span == 0.0 {
            bounds.push((lo - CONSTANT_DIM_EPSILON, hi + CONSTANT_DIM_EPSILON));
        } else {
            bounds.push((lo - padding_fraction * span, hi + padding_fraction * span));
        }
    }
    Ok(bounds)
}

/// Map each entry onto the integer grid: `round((x - lo) / (hi - lo) * B)`,
/// clamped into `[0, B]`. The clamped flag is set iff clamping changed a value.
pub fn quantize(chunk: &ActionChunk, cfg: &CodecConfig) -> Result<QuantizedChunk, CodecError> {
    cfg.check_shape(chunk.horizon(), chunk.dims())?;
    let b = f64::from(cfg.resolution);
    let mut values = Vec::with_capacity(chunk.horizon() * chunk.dims());
    let mut clamped = false;
    for row in chunk.rows() {
        for (d, &x) in row.iter().enumerate() {
            let (lo, hi) = cfg.bounds[d];
            let raw = ((x - lo) / (hi - lo) * b).round();
            let v = raw.clamp(0.0, b);
            if v != raw {
                clamped = true;
            }
            values.push(v as u32);
        }
    }
    Ok(QuantizedChunk {
        horizon: chunk.horizon(),
        dims: chunk.dims(),
        values,
        clamped,
    })
}

/// Inverse of [`quantize`]: `lo + (v / B) * (hi - lo)` per entry.
pub fn dequantize(q: &QuantizedChunk, cfg: &CodecConfig) -> Result<ActionChunk, CodecError> {
    cfg.check_shape(q.horizon(), q.dims())?;
    let b = f64::from(cfg.resolution);
    let mut data = Vec::with_capacity(q.values.len());
    for (i, &v) in q.values.iter().enumerate() {
        if v > cfg.resolution {
            return Err(CodecError::ValueOutOfRange {
                row: i / q.dims,
                dim: i % q.dims,
                value: v,
                resolution: cfg.resolution,
            });
        }
        let (lo, hi) = cfg.bounds[i % q.dims];
        data.push(lo + (f64::from(v) / b) * (hi - lo));
    }
    Ok(ActionChunk {
        horizon: q.horizon,
        dims: q.dims,
        data,
    })
}

/// Serialize timestep-major with single spaces and no other characters.
pub fn encode_text(q: &QuantizedChunk) -> ActionText {
    let mut out = String::with_capacity(q.values.len() * 4);
    for (i, v) in q.values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&v.to_string());
    }
    ActionText(out)
}

/// Parse arbitrary model output into a quantized chunk.
///
/// Tolerant tokenization: splits on any whitespace run and ignores leading
/// and trailing whitespace. A token may carry one leading `-` (ASCII) or
/// `−` (U+2212); out-of-range values are clamped into `[0, B]` with the
/// clamped flag set. Exactly `H * D` numeric tokens are required.
pub fn parse_text(s: &str, cfg: &CodecConfig) -> Result<QuantizedChunk, ParseError> {
    let tokens: Vec<&str> = s.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(ParseError::EmptyOutput);
    }
    let expected = cfg.tokens_per_chunk();
    if tokens.len() != expected {
        return Err(ParseError::TokenCountMismatch {
            expected,
            got: tokens.len(),
        });
    }
    let b = u64::from(cfg.resolution);
    let mut values = Vec::with_capacity(expected);
    let mut clamped = false;
    for (index, tok) in tokens.iter().enumerate() {
        let (negative, digits) = match tok.strip_prefix(['-', '\u{2212}']) {
            Some(rest) => (true, rest),
            None => (false, *tok),
        };
        if digits.is_empty() || !digits.bytes().all(|c| c.is_ascii_digit()) {
            return Err(ParseError::NonNumericToken {
                index,
                token: (*tok).to_string(),
            });
        }
        // Saturating magnitude parse: anything longer than 19 significant
        // digits is already far beyond any valid resolution.
        let significant = digits.trim_start_matches('0');
        let magnitude: u64 = if significant.is_empty() {
            0
        } else if significant.len() > 19 {
            u64::MAX
        } else {
            significant.parse().expect("all-digit token of checked length")
        };
        let value = if negative && magnitude > 0 {
            clamped = true;
            0
        } else if magnitude > b {
            clamped = true;
            cfg.resolution
        } else {
            magnitude as u32
        };
        values.push(value);
    }
    Ok(QuantizedChunk {
        horizon: cfg.horizon,
        dims: cfg.dims,
        values,
        clamped,
    })
}
