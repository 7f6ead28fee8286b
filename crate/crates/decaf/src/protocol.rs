//! NDJSON messages exchanged with a segmenter process (format_version 1).
//!
//! One JSON object per line. See `docs/protocol.md`.

use decaf_core::mask::Mask;
use decaf_core::rle::{self, Rle};
use decaf_core::segmenter::{FrameMask, Point};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Client to segmenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Init {
        format_version: u32,
        /// Frames locator understood by the segmenter, usually a directory.
        frames: String,
        num_frames: usize,
        height: usize,
        width: usize,
    },
    Prompt {
        frame: usize,
        /// `[x, y]` pixel coordinates.
        points: Vec<[u32; 2]>,
        /// Point labels, `1` = foreground. Omitted means all foreground.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<u8>>,
    },
    Propagate {
        frames: Vec<usize>,
    },
}

/// Segmenter to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Response {
    Ready {
        format_version: u32,
        num_frames: usize,
        height: usize,
        width: usize,
    },
    Mask {
        frame: usize,
        rle: RleJson,
        confidence: f64,
    },
    Done,
    Error {
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleJson {
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

impl From<Rle> for RleJson {
    fn from(r: Rle) -> Self {
        Self {
            size: r.size,
            counts: r.counts,
        }
    }
}

impl From<RleJson> for Rle {
    fn from(r: RleJson) -> Self {
        Self {
            size: r.size,
            counts: r.counts,
        }
    }
}

impl RleJson {
    pub fn encode(mask: &Mask) -> Self {
        rle::encode(mask).into()
    }

    pub fn decode(&self) -> decaf_core::Result<Mask> {
        rle::decode(&self.clone().into())
    }
}

/// Error codes used by the bundled oracle server.
pub mod codes {
    pub const UNSUPPORTED_VERSION: &str = "unsupported_version";
    pub const BAD_REQUEST: &str = "bad_request";
    pub const STATE: &str = "invalid_state";
    pub const OUT_OF_BOUNDS: &str = "out_of_bounds";
    pub const FRAMES_UNREADABLE: &str = "frames_unreadable";
    pub const DIMS_MISMATCH: &str = "dims_mismatch";
}

pub fn points_to_wire(points: &[Point]) -> Vec<[u32; 2]> {
    points.iter().map(|p| [p.x, p.y]).collect()
}

pub fn points_from_wire(points: &[[u32; 2]]) -> Vec<Point> {
    points.iter().map(|&[x, y]| Point { x, y }).collect()
}

pub fn mask_message(fm: &FrameMask) -> Response {
    Response::Mask {
        frame: fm.frame,
        rle: RleJson::encode(&fm.mask),
        confidence: fm.confidence,
    }
}

/// Serializes one message as a line without the trailing newline.
pub fn to_line<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages always serialize")
}
