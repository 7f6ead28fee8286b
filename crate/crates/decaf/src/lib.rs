//! Files, processes and command-line plumbing around [`decaf_core`].
//!
//! * [`dump`]: attention-dump and grounding-map containers (JSON sidecar + f32 LE blob)
//! * [`manifest`]: the per-video manifest tying dumps together
//! * [`fuse`]: manifest to fused grounding map
//! * [`protocol`], [`client`], [`server`]: the NDJSON segmenter protocol
//! * [`segment`], [`results`]: the prompting pipeline and its results file
//! * [`eval`]: J/F evaluation over result and ground-truth directories
//! * [`synth`]: synthetic label videos and attention dumps for end-to-end checks

pub mod client;
pub mod config;
pub mod conformance;
pub mod dump;
pub mod eval;
pub mod frames;
pub mod fuse;
pub mod manifest;
pub mod par;
pub mod protocol;
pub mod results;
pub mod segment;
pub mod server;
pub mod synth;

pub use decaf_core as core;
