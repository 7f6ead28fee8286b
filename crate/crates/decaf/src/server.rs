//! Protocol server backed by the label-video oracle segmenter.

use std::io::{self, BufRead, Write};
use std::path::Path;

use decaf_core::segmenter::{OracleSegmenter, Segmenter, SegmenterError};

use crate::frames::read_label_video;
use crate::protocol::{codes, mask_message, points_from_wire, to_line, Request, Response, PROTOCOL_VERSION};

#[derive(Debug, Default)]
pub struct OracleServer {
    session: Option<OracleSegmenter>,
}

fn error(code: &str, message: impl Into<String>) -> Response {
    Response::Error {
        code: code.into(),
        message: message.into(),
    }
}

fn segmenter_error(e: SegmenterError) -> Response {
    match e {
        SegmenterError::PointOutOfBounds { .. } | SegmenterError::FrameOutOfBounds { .. } => {
            error(codes::OUT_OF_BOUNDS, e.to_string())
        }
        SegmenterError::State(m) => error(codes::STATE, m),
        other => error(codes::BAD_REQUEST, other.to_string()),
    }
}

impl OracleServer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replies to one request line. Blank lines get no reply.
    pub fn handle_line(&mut self, line: &str) -> Vec<Response> {
        if line.trim().is_empty() {
            return Vec::new();
        }
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => vec![error(codes::BAD_REQUEST, format!("malformed request: {e}"))],
        }
    }

    pub fn handle(&mut self, req: Request) -> Vec<Response> {
        match req {
            Request::Init {
                format_version,
                frames,
                num_frames,
                height,
                width,
            } => {
                if format_version != PROTOCOL_VERSION {
                    return vec![error(
                        codes::UNSUPPORTED_VERSION,
                        format!("format_version {format_version} is not supported, expected {PROTOCOL_VERSION}"),
                    )];
                }
                let labels = match read_label_video(Path::new(&frames)) {
                    Ok(l) => l,
                    Err(e) => return vec![error(codes::FRAMES_UNREADABLE, e.to_string())],
                };
                let d = labels.dims();
                if (d.frames, d.height, d.width) != (num_frames, height, width) {
                    return vec![error(
                        codes::DIMS_MISMATCH,
                        format!(
                            "frames are {}x{}x{}, init announced {num_frames}x{height}x{width}",
                            d.frames, d.height, d.width
                        ),
                    )];
                }
                self.session = Some(OracleSegmenter::new(labels));
                vec![Response::Ready {
                    format_version: PROTOCOL_VERSION,
                    num_frames: d.frames,
                    height: d.height,
                    width: d.width,
                }]
            }
            Request::Prompt { frame, points, labels } => {
                let Some(seg) = self.session.as_mut() else {
                    return vec![error(codes::STATE, "prompt before init")];
                };
                if points.is_empty() {
                    return vec![error(codes::BAD_REQUEST, "prompt without points")];
                }
                if let Some(labels) = labels {
                    if labels.len() != points.len() || labels.iter().any(|&l| l != 1) {
                        return vec![error(
                            codes::BAD_REQUEST,
                            "labels must be 1 (foreground) for every point",
                        )];
                    }
                }
                match seg.prompt(frame, &points_from_wire(&points)) {
                    Ok(fm) => vec![mask_message(&fm)],
                    Err(e) => vec![segmenter_error(e)],
                }
            }
            Request::Propagate { frames } => {
                let Some(seg) = self.session.as_mut() else {
                    return vec![error(codes::STATE, "propagate before init")];
                };
                match seg.propagate(&frames) {
                    Ok(masks) => masks
                        .iter()
                        .map(mask_message)
                        .chain([Response::Done])
                        .collect(),
                    Err(e) => vec![segmenter_error(e)],
                }
            }
        }
    }

    /// Serves requests until end of input.
    pub fn serve(&mut self, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
        for line in input.lines() {
            let line = line?;
            for resp in self.handle_line(&line) {
                writeln!(output, "{}", to_line(&resp))?;
            }
            output.flush()?;
        }
        Ok(())
    }
}
