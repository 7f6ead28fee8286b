//! Training-free video reasoning segmentation from multimodal LLM attention.
//!
//! The crate is `no_std` and only needs `alloc`. It turns per-layer attention
//! tensors into grounding maps (vision-aware attention rollout), refines them
//! with object/background and video/frame fusion, converts them into coarse
//! masks or point prompts for a promptable video segmenter, scores the
//! resulting mask tracklets against the attention field, and evaluates mask
//! sequences with region similarity (J) and contour accuracy (F).
//!
//! File formats, the segmenter wire protocol and the command-line tool live in
//! the `decaf` crate.

#![no_std]

extern crate alloc;

pub mod coarse;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod mask;
pub mod metrics;
pub mod rle;
pub mod rollout;
pub mod sampling;
pub mod segmenter;
pub mod stack;
pub mod tracklet;

pub use error::{Error, Result};
pub use grid::{Grid, GroundingMap, Normalization};
pub use mask::{CellMask, Mask};
pub use stack::{AttentionStack, Modality, PromptKind};
