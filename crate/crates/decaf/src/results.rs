//! Results file written by `decaf segment`.

use std::fs;
use std::path::{Path, PathBuf};

use decaf_core::mask::Mask;
use decaf_core::tracklet::{CandidateRecord, PointQuery, PromptingConfig, PromptingOutcome, TrackletFate, TrackletScores};
use serde::{Deserialize, Serialize};

use crate::dump::VideoInfo;
use crate::protocol::RleJson;

pub const RESULTS_VERSION: u32 = 1;

/// Effective configuration of a segment run. Loadable as a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEcho {
    pub map: String,
    pub frames: String,
    pub segmenter: String,
    pub tau_pq: f64,
    pub tau_trk: f64,
    pub nms_iou: f64,
    pub dedup_iou: f64,
}

impl SegmentEcho {
    pub fn prompting(&self) -> PromptingConfig {
        PromptingConfig {
            tau_pq: self.tau_pq,
            tau_trk: self.tau_trk,
            nms_iou: self.nms_iou,
            dedup_iou: self.dedup_iou,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedJson {
    /// Original video frame index.
    pub frame: usize,
    pub sampled_position: usize,
    /// Token cell `[y, x]`.
    pub cell: [usize; 2],
    /// Prompt pixel `[x, y]`.
    pub point: [u32; 2],
    pub attn: f64,
}

impl SeedJson {
    fn new(q: &PointQuery, sampled: &[usize]) -> Self {
        Self {
            frame: sampled[q.frame],
            sampled_position: q.frame,
            cell: [q.cell.0, q.cell.1],
            point: [q.pixel.1, q.pixel.0],
            attn: q.attn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoresJson {
    pub attn: f64,
    pub sam: f64,
    pub object: f64,
    pub consistency_raw: f64,
    pub consistency: f64,
    pub combined: f64,
}

impl From<TrackletScores> for ScoresJson {
    fn from(s: TrackletScores) -> Self {
        Self {
            attn: s.attn,
            sam: s.sam,
            object: s.object,
            consistency_raw: s.consistency.raw,
            consistency: s.consistency.clamped,
            combined: s.combined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FateJson {
    DroppedAtPrompt { by: usize },
    SuppressedInFrame { by: usize },
    SuppressedByNms { by: usize },
    BelowThreshold,
    Selected,
}

impl From<TrackletFate> for FateJson {
    fn from(f: TrackletFate) -> Self {
        match f {
            TrackletFate::DroppedAtPrompt { by } => Self::DroppedAtPrompt { by },
            TrackletFate::SuppressedInFrame { by } => Self::SuppressedInFrame { by },
            TrackletFate::SuppressedByNms { by } => Self::SuppressedByNms { by },
            TrackletFate::BelowThreshold => Self::BelowThreshold,
            TrackletFate::Selected => Self::Selected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateJson {
    pub id: usize,
    pub seed: SeedJson,
    pub sam: f64,
    pub object: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoresJson>,
    pub fate: FateJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectJson {
    pub candidate: usize,
    pub seed: SeedJson,
    pub scores: ScoresJson,
    /// One mask per video frame.
    pub masks: Vec<RleJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsFile {
    pub format_version: u32,
    pub video_id: String,
    pub frame_count: usize,
    pub frame_size: [usize; 2],
    pub sampled_frame_indices: Vec<usize>,
    pub config: SegmentEcho,
    pub objects: Vec<ObjectJson>,
    pub union: Vec<RleJson>,
    pub candidates: Vec<CandidateJson>,
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ResultsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid results file: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn masks_json(masks: &[Mask]) -> Vec<RleJson> {
    masks.iter().map(RleJson::encode).collect()
}

impl ResultsFile {
    pub fn new(video: &VideoInfo, config: SegmentEcho, outcome: &PromptingOutcome) -> Self {
        let sampled = &video.sampled_frame_indices;
        let candidate = |(id, c): (usize, &CandidateRecord)| CandidateJson {
            id,
            seed: SeedJson::new(&c.seed, sampled),
            sam: c.sam,
            object: c.object,
            scores: c.scores.map(Into::into),
            fate: c.fate.into(),
        };
        Self {
            format_version: RESULTS_VERSION,
            video_id: video.video_id.clone(),
            frame_count: video.original_frame_count,
            frame_size: video.frame_size,
            sampled_frame_indices: sampled.clone(),
            config,
            objects: outcome
                .objects
                .iter()
                .map(|o| ObjectJson {
                    candidate: o.candidate,
                    seed: SeedJson::new(&o.seed, sampled),
                    scores: o.scores.into(),
                    masks: masks_json(&o.masks),
                })
                .collect(),
            union: masks_json(&outcome.union),
            candidates: outcome.candidates.iter().enumerate().map(candidate).collect(),
            warnings: outcome.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results always serialize");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), ResultsError> {
        fs::write(path, self.to_json()).map_err(|source| ResultsError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ResultsError> {
        let bytes = fs::read(path).map_err(|source| ResultsError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|source| ResultsError::Json {
            path: path.to_owned(),
            source,
        })
    }

    /// Decoded object masks, `objects[k][t]`.
    pub fn object_masks(&self, path: &Path) -> Result<Vec<Vec<Mask>>, ResultsError> {
        let [h, w] = self.frame_size;
        self.objects
            .iter()
            .map(|o| {
                if o.masks.len() != self.frame_count {
                    return Err(ResultsError::Invalid {
                        path: path.to_owned(),
                        message: format!(
                            "object {} has {} masks for {} frames",
                            o.candidate,
                            o.masks.len(),
                            self.frame_count
                        ),
                    });
                }
                o.masks
                    .iter()
                    .map(|r| {
                        let m = r.decode().map_err(|e| ResultsError::Invalid {
                            path: path.to_owned(),
                            message: e.to_string(),
                        })?;
                        if m.dims() != (h, w) {
                            return Err(ResultsError::Invalid {
                                path: path.to_owned(),
                                message: format!("mask of {}x{} in a {h}x{w} video", m.height(), m.width()),
                            });
                        }
                        Ok(m)
                    })
                    .collect()
            })
            .collect()
    }
}
