//! Evaluation harness for temporal compositionality in generated videos.

pub mod analysis;
pub mod annotation;
pub mod assertion;
pub mod cache;
pub mod config;
pub mod consistency;
pub mod corpus;
pub mod error;
pub mod pipeline;
pub mod providers;
pub mod synthesis;
pub mod verifier;
pub mod video_io;

pub use error::{Error, Result};
