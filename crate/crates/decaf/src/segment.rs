//! Grounding map + segmenter process to a results file.

use std::path::Path;

use decaf_core::segmenter::{Segmenter, SegmenterError, VideoDims};
use decaf_core::tracklet::{run_prompting, PromptingError};

use crate::client::{ChildTransport, InProcessTransport, SegmenterClient, VideoMeta, HANDSHAKE_TIMEOUT};
use crate::dump::{read_map, DumpError, MapFile};
use crate::results::{ResultsFile, SegmentEcho};

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error(transparent)]
    Map(#[from] DumpError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("frames directory {0} does not exist")]
    MissingFrames(String),
    #[error("segmenter session failed to start: {0}")]
    Handshake(SegmenterError),
    #[error(transparent)]
    Prompting(#[from] PromptingError),
}

pub fn video_dims(map: &MapFile) -> VideoDims {
    VideoDims {
        frames: map.video.original_frame_count,
        height: map.video.frame_size[0],
        width: map.video.frame_size[1],
    }
}

/// Runs the prompting pipeline against an already-open segmenter session.
pub fn segment_with(map: &MapFile, seg: &mut dyn Segmenter, echo: SegmentEcho) -> Result<ResultsFile, SegmentError> {
    let outcome = run_prompting(&map.map, &map.video.sampled_frame_indices, seg, &echo.prompting())?;
    for w in &outcome.warnings {
        log::warn!("{}: {w}", map.video.video_id);
    }
    log::info!(
        "{}: {} candidates, {} objects",
        map.video.video_id,
        outcome.candidates.len(),
        outcome.objects.len()
    );
    Ok(ResultsFile::new(&map.video, echo, &outcome))
}

/// Reads `echo.map`, launches `echo.segmenter` and runs the pipeline.
pub fn run_segment(echo: SegmentEcho) -> Result<ResultsFile, SegmentError> {
    echo.prompting()
        .validate()
        .map_err(|e| SegmentError::Config(e.to_string()))?;
    if !Path::new(&echo.frames).is_dir() {
        return Err(SegmentError::MissingFrames(echo.frames.clone()));
    }
    let map = read_map(Path::new(&echo.map))?;
    let transport = ChildTransport::spawn(&echo.segmenter).map_err(SegmentError::Handshake)?;
    let meta = VideoMeta {
        frames: echo.frames.clone(),
        dims: video_dims(&map),
    };
    let mut client = SegmenterClient::start(transport, &meta, HANDSHAKE_TIMEOUT).map_err(SegmentError::Handshake)?;
    segment_with(&map, &mut client, echo)
}

/// Same as [`run_segment`] with the oracle server in-process instead of a child.
pub fn run_segment_in_process(echo: SegmentEcho) -> Result<ResultsFile, SegmentError> {
    echo.prompting()
        .validate()
        .map_err(|e| SegmentError::Config(e.to_string()))?;
    let map = read_map(Path::new(&echo.map))?;
    segment_map_in_process(&map, echo)
}

pub fn segment_map_in_process(map: &MapFile, echo: SegmentEcho) -> Result<ResultsFile, SegmentError> {
    let meta = VideoMeta {
        frames: echo.frames.clone(),
        dims: video_dims(map),
    };
    let mut client =
        SegmenterClient::start(InProcessTransport::new(), &meta, HANDSHAKE_TIMEOUT).map_err(SegmentError::Handshake)?;
    segment_with(map, &mut client, echo)
}
