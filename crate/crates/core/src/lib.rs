//! Event-camera reinforcement learning core.
//!
//! Everything here is allocation-only compute: a ray-cast renderer producing
//! log-intensity frames, the frame-difference event emulator, the two
//! step-based environments, the convolutional Q-network with exact backprop
//! and Adam, and the Double DQN training loop. File formats, networking and
//! timing live in the `evrl` crate.
#![no_std]
#![deny(missing_docs)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod env;
mod error;
pub mod event;
pub mod math;
pub mod qnet;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
