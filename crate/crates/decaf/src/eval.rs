//! Evaluation of results files against ground-truth label PNGs.
//!
//! Ground truth: `<gt_dir>/<video_id>/*.png`, nonzero pixel = object id.
//! Predictions: `<pred_dir>/<video_id>.json` results files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use decaf_core::metrics::{evaluate_sequence, summarize, EvalReport, ObjectMode, ObjectSequences};
use serde::Serialize;

use crate::frames::{objects_from_labels, read_label_frames, FramesError};
use crate::par::par_map;
use crate::results::{ResultsError, ResultsFile};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Frames(#[from] FramesError),
    #[error(transparent)]
    Results(#[from] ResultsError),
    #[error("no ground-truth videos under {0}")]
    NoGroundTruth(PathBuf),
    #[error("{0}")]
    Metrics(#[from] decaf_core::Error),
    #[error("{video_id}: {message}")]
    Mismatch { video_id: String, message: String },
}

/// Video ids (subdirectory names) under `gt_dir`, sorted.
pub fn ground_truth_ids(gt_dir: &Path) -> Result<Vec<String>, EvalError> {
    let io = |source| EvalError::Io {
        path: gt_dir.to_owned(),
        source,
    };
    let mut ids = Vec::new();
    for e in fs::read_dir(gt_dir).map_err(io)? {
        let e = e.map_err(io)?;
        if e.file_type().map_err(io)?.is_dir() {
            ids.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(EvalError::NoGroundTruth(gt_dir.to_owned()));
    }
    Ok(ids)
}

pub fn load_ground_truth(dir: &Path) -> Result<ObjectSequences, EvalError> {
    let (h, w, frames) = read_label_frames(dir)?;
    Ok(objects_from_labels(h, w, &frames))
}

fn check_shapes(video_id: &str, pred: &ResultsFile, frames: usize, dims: Option<(usize, usize)>) -> Result<(), EvalError> {
    let mismatch = |message| {
        Err(EvalError::Mismatch {
            video_id: video_id.into(),
            message,
        })
    };
    if pred.video_id != video_id {
        return mismatch(format!("results file names video {:?}", pred.video_id));
    }
    if pred.frame_count != frames {
        return mismatch(format!(
            "prediction has {} frames, ground truth {frames}",
            pred.frame_count
        ));
    }
    if let Some((h, w)) = dims {
        if pred.frame_size != [h, w] {
            return mismatch(format!(
                "prediction frames are {}x{}, ground truth {h}x{w}",
                pred.frame_size[0], pred.frame_size[1]
            ));
        }
    }
    Ok(())
}

fn eval_one(
    id: &str,
    pred_dir: &Path,
    gt_dir: &Path,
    mode: ObjectMode,
) -> Result<decaf_core::metrics::SequenceScore, EvalError> {
    let (h, w, frames) = read_label_frames(&gt_dir.join(id))?;
    let gt = objects_from_labels(h, w, &frames);
    let path = pred_dir.join(format!("{id}.json"));
    let pred = ResultsFile::read(&path)?;
    check_shapes(id, &pred, frames.len(), Some((h, w)))?;
    let masks = pred.object_masks(&path)?;
    if gt.is_empty() && masks.is_empty() {
        // nothing on either side: every frame is an empty-empty match
        let empty = vec![vec![decaf_core::mask::Mask::empty(h, w); frames.len()]];
        return Ok(evaluate_sequence(&empty, &empty, mode)?);
    }
    Ok(evaluate_sequence(&masks, &gt, mode)?)
}

/// Scores every ground-truth video; all predictions must exist.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, mode: ObjectMode, jobs: usize) -> Result<EvalReport, EvalError> {
    let ids = ground_truth_ids(gt_dir)?;
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !pred_dir.join(format!("{id}.json")).is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(decaf_core::Error::MissingPredictions(missing).into());
    }
    let scores = par_map(&ids, jobs, |id| eval_one(id, pred_dir, gt_dir, mode));
    let mut per_sequence = BTreeMap::new();
    for (id, s) in ids.into_iter().zip(scores) {
        per_sequence.insert(id, s?);
    }
    Ok(summarize(per_sequence))
}

#[derive(Serialize)]
struct ScoresJson {
    j: f64,
    f: f64,
    jf: f64,
}

#[derive(Serialize)]
struct SequenceJson {
    j: f64,
    f: f64,
    jf: f64,
    frames: usize,
    objects: usize,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    mode: &'a str,
    global: ScoresJson,
    frame_count: usize,
    sequences: BTreeMap<&'a str, SequenceJson>,
}

pub fn mode_name(mode: ObjectMode) -> &'static str {
    match mode {
        ObjectMode::Union => "union",
        ObjectMode::PerObject => "per_object",
    }
}

pub fn report_json(report: &EvalReport, mode: ObjectMode) -> String {
    let g = report.global;
    let doc = ReportJson {
        mode: mode_name(mode),
        global: ScoresJson {
            j: g.j,
            f: g.f,
            jf: g.jf,
        },
        frame_count: report.frame_count,
        sequences: report
            .per_sequence
            .iter()
            .map(|(id, s)| {
                (
                    id.as_str(),
                    SequenceJson {
                        j: s.scores.j,
                        f: s.scores.f,
                        jf: s.scores.jf,
                        frames: s.frames,
                        objects: s.objects,
                    },
                )
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

/// Aligned plain-text table, one row per video plus the mean.
pub fn report_table(report: &EvalReport) -> String {
    let width = report
        .per_sequence
        .keys()
        .map(String::len)
        .chain([5])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:>7}  {:>6}", "video", "J", "F", "J&F", "frames");
    for (id, s) in &report.per_sequence {
        let _ = writeln!(
            out,
            "{id:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>6}",
            s.scores.j, s.scores.f, s.scores.jf, s.frames
        );
    }
    let g = report.global;
    let _ = writeln!(
        out,
        "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>6}",
        "mean", g.j, g.f, g.jf, report.frame_count
    );
    out
}
