//! Eye-on-hand dynamic grasping: pose filtering, tracking-loss recovery and a
//! seeded simulation harness.

pub mod control;
pub mod ekf;
pub mod error;
pub mod geometry;
pub mod grasp;
pub mod harness;
pub mod perception;
pub mod reward;
pub mod world;

pub use error::{Error, Result};
