//! Promptable video segmenter interface and a deterministic label-video oracle.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::Mask;

/// Foreground point prompt in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

/// Segmenter output for one frame. `confidence` is the segmenter's own mask quality score.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMask {
    pub frame: usize,
    pub mask: Mask,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VideoDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SegmenterError {
    #[error("point ({x}, {y}) outside {width}x{height} frame")]
    PointOutOfBounds {
        x: u32,
        y: u32,
        width: usize,
        height: usize,
    },
    #[error("frame {frame} outside video of {frames} frames")]
    FrameOutOfBounds { frame: usize, frames: usize },
    #[error("invalid session state: {0}")]
    State(String),
    #[error("segmenter error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("timed out waiting for the segmenter")]
    Timeout,
}

/// A point-promptable video segmenter.
///
/// A session is prompted on one frame, then propagated over a list of frames.
/// Prompting again before propagating replaces the pending prompt.
pub trait Segmenter {
    fn dims(&self) -> VideoDims;

    fn prompt(&mut self, frame: usize, points: &[Point]) -> Result<FrameMask, SegmenterError>;

    /// One mask per requested frame, in request order. Returns the session to idle.
    fn propagate(&mut self, frames: &[usize]) -> Result<Vec<FrameMask>, SegmenterError>;
}

pub fn check_prompt(dims: VideoDims, frame: usize, points: &[Point]) -> Result<(), SegmenterError> {
    if frame >= dims.frames {
        return Err(SegmenterError::FrameOutOfBounds {
            frame,
            frames: dims.frames,
        });
    }
    if points.is_empty() {
        return Err(SegmenterError::Protocol("prompt without points".into()));
    }
    for p in points {
        if p.x as usize >= dims.width || p.y as usize >= dims.height {
            return Err(SegmenterError::PointOutOfBounds {
                x: p.x,
                y: p.y,
                width: dims.width,
                height: dims.height,
            });
        }
    }
    Ok(())
}

/// Per-frame region labels: `0` is background, any other value a region id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVideo {
    height: usize,
    width: usize,
    frames: Vec<Vec<u8>>,
}

impl LabelVideo {
    pub fn new(height: usize, width: usize, frames: Vec<Vec<u8>>) -> Result<Self> {
        if frames.is_empty() || height == 0 || width == 0 {
            return Err(Error::Shape("label video is empty".into()));
        }
        if let Some(t) = frames.iter().position(|f| f.len() != height * width) {
            return Err(Error::Shape(alloc::format!(
                "label frame {t} does not have {height}x{width} pixels"
            )));
        }
        Ok(Self {
            height,
            width,
            frames,
        })
    }

    pub fn dims(&self) -> VideoDims {
        VideoDims {
            frames: self.frames.len(),
            height: self.height,
            width: self.width,
        }
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        &self.frames[t]
    }

    #[inline]
    pub fn label(&self, t: usize, y: usize, x: usize) -> u8 {
        self.frames[t][y * self.width + x]
    }

    /// Mask of all pixels carrying `id` in frame `t`.
    pub fn region_mask(&self, t: usize, id: u8) -> Mask {
        Mask::from_fn(self.height, self.width, |y, x| self.label(t, y, x) == id)
    }

    /// 4-connected component of equal labels containing `(y, x)`.
    pub fn component(&self, t: usize, y: usize, x: usize) -> Mask {
        let id = self.label(t, y, x);
        let mut mask = Mask::empty(self.height, self.width);
        let mut queue = VecDeque::from([(y, x)]);
        mask.set(y, x, true);
        while let Some((cy, cx)) = queue.pop_front() {
            let mut visit = |ny: usize, nx: usize| {
                if !mask.get(ny, nx) && self.label(t, ny, nx) == id {
                    mask.set(ny, nx, true);
                    queue.push_back((ny, nx));
                }
            };
            if cy > 0 {
                visit(cy - 1, cx);
            }
            if cy + 1 < self.height {
                visit(cy + 1, cx);
            }
            if cx > 0 {
                visit(cy, cx - 1);
            }
            if cx + 1 < self.width {
                visit(cy, cx + 1);
            }
        }
        mask
    }
}

/// Segments a labelled synthetic video exactly.
///
/// A prompt returns the connected region under the point(s) with confidence
/// 1, or an empty mask with confidence 0 on background. Propagation follows
/// the prompted region ids through the requested frames.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    labels: LabelVideo,
    prompted: Option<Vec<u8>>,
}

impl OracleSegmenter {
    pub fn new(labels: LabelVideo) -> Self {
        Self {
            labels,
            prompted: None,
        }
    }

    pub fn labels(&self) -> &LabelVideo {
        &self.labels
    }

    pub fn is_prompted(&self) -> bool {
        self.prompted.is_some()
    }

    pub fn reset(&mut self) {
        self.prompted = None;
    }
}

impl Segmenter for OracleSegmenter {
    fn dims(&self) -> VideoDims {
        self.labels.dims()
    }

    fn prompt(&mut self, frame: usize, points: &[Point]) -> Result<FrameMask, SegmenterError> {
        check_prompt(self.dims(), frame, points)?;
        let mut mask = Mask::empty(self.labels.height, self.labels.width);
        let mut ids = Vec::new();
        for p in points {
            let (y, x) = (p.y as usize, p.x as usize);
            let id = self.labels.label(frame, y, x);
            if id == 0 {
                continue;
            }
            mask.union_with(&self.labels.component(frame, y, x))
                .expect("same dims");
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let confidence = if ids.is_empty() { 0.0 } else { 1.0 };
        self.prompted = Some(ids);
        Ok(FrameMask {
            frame,
            mask,
            confidence,
        })
    }

    fn propagate(&mut self, frames: &[usize]) -> Result<Vec<FrameMask>, SegmenterError> {
        let dims = self.dims();
        let ids = self
            .prompted
            .take()
            .ok_or_else(|| SegmenterError::State("propagate before prompt".into()))?;
        if let Some(&frame) = frames.iter().find(|&&f| f >= dims.frames) {
            return Err(SegmenterError::FrameOutOfBounds {
                frame,
                frames: dims.frames,
            });
        }
        Ok(frames
            .iter()
            .map(|&t| {
                let mask = Mask::from_fn(dims.height, dims.width, |y, x| {
                    let l = self.labels.label(t, y, x);
                    l != 0 && ids.contains(&l)
                });
                let confidence = if mask.is_empty() { 0.0 } else { 1.0 };
                FrameMask {
                    frame: t,
                    mask,
                    confidence,
                }
            })
            .collect())
    }
}

/// Synthetic label video: square regions moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingSquare {
    pub id: u8,
    pub size: usize,
    pub start: (i64, i64),
    pub velocity: (i64, i64),
    /// Frames `[first, last]` in which the region is visible.
    pub visible: (usize, usize),
}

impl MovingSquare {
    pub fn origin(&self, t: usize) -> (i64, i64) {
        (
            self.start.0 + self.velocity.0 * t as i64,
            self.start.1 + self.velocity.1 * t as i64,
        )
    }

    pub fn contains(&self, t: usize, y: usize, x: usize) -> bool {
        if t < self.visible.0 || t > self.visible.1 {
            return false;
        }
        let (oy, ox) = self.origin(t);
        let (y, x) = (y as i64, x as i64);
        y >= oy && y < oy + self.size as i64 && x >= ox && x < ox + self.size as i64
    }
}

/// Renders squares in order; later squares paint over earlier ones.
pub fn render_label_video(
    frames: usize,
    height: usize,
    width: usize,
    squares: &[MovingSquare],
) -> LabelVideo {
    let data = (0..frames)
        .map(|t| {
            let mut f = vec![0u8; height * width];
            for sq in squares {
                for y in 0..height {
                    for x in 0..width {
                        if sq.contains(t, y, x) {
                            f[y * width + x] = sq.id;
                        }
                    }
                }
            }
            f
        })
        .collect();
    LabelVideo::new(height, width, data).expect("non-empty render")
}
