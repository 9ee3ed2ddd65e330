//! Network front end for the integer-text action pipeline.
//!
//! [`gateway`] exposes the full loop — prompt, remote model call, parse,
//! ensemble — as an HTTP action-streaming service for robot-side clients.
//! [`stub`] is a scripted chat-completion server so everything can be tested
//! hermetically. [`server`] holds the shared spawn/shutdown plumbing.

pub mod gateway;
pub mod server;
pub mod stub;

pub use gateway::{serve_gateway, ActRequest, ActResponse, GatewayConfig};
pub use server::RunningServer;
pub use stub::{serve_stub, StubConfig, StubHandle};
