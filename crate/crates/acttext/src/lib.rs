//! Robot actions as plain integer text.
//!
//! A vision-language model that can only emit text can still drive a robot:
//! quantize each action dimension to an integer range, ask the model for a
//! space-separated string of `H * D` integers, parse what comes back, and
//! average the overlapping chunk predictions. This crate packages that whole
//! loop so it can be exercised end to end without fine-tuning a model:
//!
//! - [`codec`] — continuous chunk ⇄ integer grid ⇄ action text, with a
//!   parser hardened against arbitrary model output
//! - [`prompt`] — the fixed system-prompt template and image tiling
//! - [`ensemble`] — temporal ensembling over overlapping chunk predictions
//! - [`augment`] — masked-digit training-sample generation
//! - [`sim`] — deterministic toy environments with scripted controllers
//! - [`policy`] — text-emitting policies: scripted oracle, nearest-neighbor
//!   stand-in with a corruption model, and a remote chat-completion client
//! - [`harness`] — closed-loop evaluation, ablation grids, and reports

pub mod augment;
pub mod codec;
pub mod ensemble;
pub mod harness;
pub mod policy;
pub mod prompt;
pub mod sim;

mod seed;

pub use seed::mix_seed;
