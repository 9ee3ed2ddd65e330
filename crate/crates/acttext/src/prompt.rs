//! Prompt construction: the fixed system-prompt template, task instruction,
//! and image handling (separate inputs or one tiled composite).
//!
//! The system prompt is the contract the model was trained against, so it
//! is rendered byte-for-byte from one template; nothing about it is
//! configurable except the three integers substituted into it.

use image::RgbImage;
use thiserror::Error;

use crate::codec::CodecConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("instruction must not be empty")]
    EmptyInstruction,
    #[error("tiling requires at least one image")]
    NoImages,
    #[error("loading image: {0}")]
    ImageLoad(String),
}

/// Load an image file (PNG or anything else the decoder recognizes) as an
/// 8-bit RGB buffer.
pub fn load_image(path: &std::path::Path) -> Result<RgbImage, PromptError> {
    let img = image::open(path).map_err(|e| PromptError::ImageLoad(e.to_string()))?;
    Ok(img.to_rgb8())
}

/// How multiple camera views are handed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageLayout {
    /// Each image is its own input entity.
    Separate,
    /// All images are concatenated into a single composite image.
    Tiled,
}

/// Everything one model call consumes: system prompt, instruction, images.
#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub system_prompt: String,
    pub instruction: String,
    pub images: Vec<RgbImage>,
    pub layout: ImageLayout,
}

/// Render the system prompt for a chunk of `horizon` timesteps with `dims`
/// action dimensions on the integer range `[0, resolution]`.
///
/// The dash in `(0 - B each)` is a plain hyphen-minus with single spaces
/// around it; the whole prompt is ASCII.
pub fn build_system_prompt(horizon: usize, dims: usize, resolution: u32) -> String {
    format!(
        "Analyze the input image and predict robot actions for the next {horizon} timesteps. \
         Each action has {dims} dimensions. \
         Output a single sequence of {count} integers (0 - {resolution} each), \
         representing the {horizon} timesteps sequentially. \
         Provide only space-separated numbers. Nothing else.",
        count = horizon * dims,
    )
}

/// Concatenate images horizontally, left to right in input order.
///
/// Shorter images are bottom-padded with black; the output is
/// `sum(widths) x max(heights)`.
pub fn tile_images(images: &[RgbImage]) -> Result<RgbImage, PromptError> {
    if images.is_empty() {
        return Err(PromptError::NoImages);
    }
    let width: u32 = images.iter().map(|img| img.width()).sum();
    let height: u32 = images.iter().map(|img| img.height()).max().unwrap_or(0);
    let mut out = RgbImage::new(width, height);
    let mut x_off = 0;
    for img in images {
        for (x, y, pixel) in img.enumerate_pixels() {
            out.put_pixel(x_off + x, y, *pixel);
        }
        x_off += img.width();
    }
    Ok(out)
}

/// Assemble the full prompt bundle, tiling the images when asked to.
///
/// The instruction is trimmed of surrounding whitespace and otherwise kept
/// verbatim.
pub fn build_prompt(
    cfg: &CodecConfig,
    instruction: &str,
    images: Vec<RgbImage>,
    layout: ImageLayout,
) -> Result<PromptBundle, PromptError> {
    let instruction = instruction.trim();
    if instruction.is_empty() {
        return Err(PromptError::EmptyInstruction);
    }
    let images = match layout {
        ImageLayout::Separate => images,
        ImageLayout::Tiled => vec![tile_images(&images)?],
    };
    Ok(PromptBundle {
        system_prompt: build_system_prompt(cfg.horizon, cfg.dims, cfg.resolution),
        instruction: instruction.to_string(),
        images,
        layout,
    })
}
