//! Attention-guided prompting of a promptable video segmenter.
//!
//! High-attention token centers become point prompts. Each prompt is
//! propagated into a mask tracklet over the sampled frames; redundant
//! tracklets are removed per frame and then by volume NMS on the object score
//! `V_p + s_SAM`. Survivors are scored for agreement with the attention field
//! (`s_ac`), filtered on `s_trk = mean(V_p, s_SAM, clamp(s_ac))`, and the kept
//! seeds are propagated across the whole video.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, GroundingMap};
use crate::mask::{CellMask, Mask};
use crate::segmenter::{Point, Segmenter, SegmenterError};

pub const DEFAULT_TAU_PQ: f64 = 0.8;
pub const DEFAULT_TAU_TRK: f64 = 0.8;
pub const DEFAULT_NMS_IOU: f64 = 0.7;

/// A prompt location at a token center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointQuery {
    /// Position in the sampled-frame list.
    pub frame: usize,
    /// Token cell `(y, x)`.
    pub cell: (usize, usize),
    /// Pixel `(y, x)` of the cell center.
    pub pixel: (u32, u32),
    pub attn: f64,
}

impl PointQuery {
    pub fn point(&self) -> Point {
        Point {
            x: self.pixel.1,
            y: self.pixel.0,
        }
    }
}

fn check_unit_threshold(name: &str, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "{name} must lie in (0, 1], got {tau}"
        )));
    }
    Ok(())
}

/// One query per cell with `V >= tau`, at pixel `cell * scale + scale / 2`.
///
/// Sorted by descending attention, then by `(t, y, x)`.
pub fn generate_point_queries(v: &GroundingMap, tau: f64, scale: (f64, f64)) -> Result<Vec<PointQuery>> {
    check_unit_threshold("tau_pq", tau)?;
    let g = v.grid();
    let mut out = Vec::new();
    for t in 0..g.frames {
        for y in 0..g.height {
            for x in 0..g.width {
                let a = v.get(t, y, x);
                if a >= tau {
                    out.push(PointQuery {
                        frame: t,
                        cell: (y, x),
                        pixel: (
                            libm::floor((y as f64 + 0.5) * scale.0) as u32,
                            libm::floor((x as f64 + 0.5) * scale.1) as u32,
                        ),
                        attn: a,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        b.attn
            .total_cmp(&a.attn)
            .then((a.frame, a.cell).cmp(&(b.frame, b.cell)))
    });
    Ok(out)
}

/// Spatio-temporal IoU: intersections and unions summed over all frames.
pub fn volume_iou(a: &[Mask], b: &[Mask]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(alloc::format!(
            "tracklets cover {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (ma, mb) in a.iter().zip(b) {
        let (i, u) = ma.overlap(mb)?;
        inter += i;
        union += u;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Outcome of comparing a freshly prompted frame mask with the live tracklets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DedupDecision {
    /// Keep the new mask; the listed tracklets overlap it and score lower.
    Keep { suppress: Vec<usize> },
    /// Drop the new mask in favour of tracklet `by`.
    Drop { by: usize },
}

/// Live tracklet as seen by [`frame_dedup`].
#[derive(Debug, Clone, Copy)]
pub struct DedupEntry<'a> {
    pub masks: &'a [Mask],
    pub object_score: f64,
}

/// Per-frame redundancy check. The first existing tracklet (earliest seeded)
/// whose mask at `frame` overlaps `new_mask` with IoU above `iou_thresh` and
/// scores at least as high wins; otherwise the new mask is kept and every
/// overlapping lower-scored tracklet is suppressed.
pub fn frame_dedup(
    existing: &[DedupEntry<'_>],
    new_mask: &Mask,
    new_score: f64,
    frame: usize,
    iou_thresh: f64,
) -> Result<DedupDecision> {
    let mut suppress = Vec::new();
    for (i, e) in existing.iter().enumerate() {
        let m = e.masks.get(frame).ok_or_else(|| {
            Error::Shape(alloc::format!("tracklet has no mask for frame {frame}"))
        })?;
        if m.iou(new_mask)? > iou_thresh {
            if e.object_score >= new_score {
                return Ok(DedupDecision::Drop { by: i });
            }
            suppress.push(i);
        }
    }
    Ok(DedupDecision::Keep { suppress })
}

/// Indices by descending score, earlier index first on ties.
pub fn priority_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy NMS: visit in priority order, keep an item unless it overlaps an
/// already kept one with IoU above `iou_thresh`. Returns kept indices in
/// priority order.
pub fn greedy_nms(
    scores: &[f64],
    iou_thresh: f64,
    mut iou: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<Vec<usize>> {
    let mut kept: Vec<usize> = Vec::new();
    for i in priority_order(scores) {
        let mut keep = true;
        for &k in &kept {
            if iou(i, k)? > iou_thresh {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Greedy volume-IoU NMS over tracklets ranked by object score.
pub fn tracklet_nms(tracklets: &[&[Mask]], object_scores: &[f64], iou_thresh: f64) -> Result<Vec<usize>> {
    if tracklets.len() != object_scores.len() {
        return Err(Error::Shape("one object score per tracklet required".into()));
    }
    greedy_nms(object_scores, iou_thresh, |a, b| {
        volume_iou(tracklets[a], tracklets[b])
    })
}

fn frame_mean(frame: &[f64]) -> f64 {
    frame.iter().sum::<f64>() / frame.len() as f64
}

/// Cells at or above their frame's mean attention.
pub fn attention_binary_mask(v: &GroundingMap) -> CellMask {
    let mut data = Vec::with_capacity(v.values().len());
    for frame in v.frames() {
        let mu = frame_mean(frame);
        data.extend(frame.iter().map(|&x| x >= mu));
    }
    CellMask::from_vec(v.grid(), data).expect("grid length")
}

/// Attention with below-mean cells replaced by minus the frame maximum.
pub fn penalized_values(v: &GroundingMap) -> GroundingMap {
    let mut out = Vec::with_capacity(v.values().len());
    for frame in v.frames() {
        let mu = frame_mean(frame);
        let delta = -frame.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.extend(frame.iter().map(|&x| if x >= mu { x } else { delta }));
    }
    v.map_values(out)
}

/// For each cell, the pixel index range and overlap weights along one axis.
fn axis_weights(pixels: usize, cells: usize) -> Vec<Vec<(usize, f64)>> {
    let s = pixels as f64 / cells as f64;
    (0..cells)
        .map(|c| {
            let lo = c as f64 * s;
            let hi = (c + 1) as f64 * s;
            let first = libm::floor(lo) as usize;
            let last = (libm::ceil(hi) as usize).min(pixels);
            (first..last)
                .filter_map(|p| {
                    let w = hi.min((p + 1) as f64) - lo.max(p as f64);
                    (w > 0.0).then_some((p, w))
                })
                .collect()
        })
        .collect()
}

/// Area pooling of pixel masks onto the `(Hp, Wp)` token grid: each cell holds
/// the covered fraction of its pixel footprint. Footprints need not be whole pixels.
pub fn downsample_mask(masks: &[Mask], cells: (usize, usize)) -> Result<GroundingMap> {
    let (hp, wp) = cells;
    let first = masks
        .first()
        .ok_or_else(|| Error::Shape("no masks to downsample".into()))?;
    let (h, w) = first.dims();
    if hp == 0 || wp == 0 || hp > h || wp > w {
        return Err(Error::Shape(alloc::format!(
            "cannot pool {h}x{w} masks onto {hp}x{wp} cells"
        )));
    }
    let wy = axis_weights(h, hp);
    let wx = axis_weights(w, wp);
    let area = (h as f64 / hp as f64) * (w as f64 / wp as f64);
    let mut values = Vec::with_capacity(masks.len() * hp * wp);
    for m in masks {
        if m.dims() != (h, w) {
            return Err(Error::Shape("tracklet masks differ in size".into()));
        }
        for cy in &wy {
            for cx in &wx {
                let mut acc = 0.0;
                for &(y, fy) in cy {
                    for &(x, fx) in cx {
                        if m.get(y, x) {
                            acc += fy * fx;
                        }
                    }
                }
                values.push(acc / area);
            }
        }
    }
    GroundingMap::new(Grid::new(masks.len(), hp, wp), values)
}

/// Raw attention consistency and its `[0, 1]`-clamped copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    pub raw: f64,
    pub clamped: f64,
}

/// `<M~, V^> / <M_attn, V^>`; 0 when the denominator is not positive.
pub fn consistency_score(
    pooled: &GroundingMap,
    attn_mask: &CellMask,
    penalized: &GroundingMap,
) -> Result<Consistency> {
    if pooled.grid() != penalized.grid() || attn_mask.grid() != penalized.grid() {
        return Err(Error::Shape("consistency inputs differ in shape".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&m, &a), &v) in pooled
        .values()
        .iter()
        .zip(attn_mask.data())
        .zip(penalized.values())
    {
        num += m * v;
        if a {
            den += v;
        }
    }
    let raw = if den > 0.0 { num / den } else { 0.0 };
    Ok(Consistency {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}

/// `s_trk`: arithmetic mean of attention, segmenter confidence and clamped consistency.
pub fn combined_score(attn: f64, sam: f64, consistency: Consistency) -> f64 {
    (attn + sam + consistency.clamped) / 3.0
}

/// Indices with `s_trk >= tau`, or the single best one when none pass.
pub fn select_tracklets(combined: &[f64], tau: f64) -> Vec<usize> {
    let passing: Vec<usize> = (0..combined.len()).filter(|&i| combined[i] >= tau).collect();
    if !passing.is_empty() || combined.is_empty() {
        return passing;
    }
    vec![priority_order(combined)[0]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptingConfig {
    pub tau_pq: f64,
    pub tau_trk: f64,
    pub nms_iou: f64,
    pub dedup_iou: f64,
}

impl Default for PromptingConfig {
    fn default() -> Self {
        Self {
            tau_pq: DEFAULT_TAU_PQ,
            tau_trk: DEFAULT_TAU_TRK,
            nms_iou: DEFAULT_NMS_IOU,
            dedup_iou: DEFAULT_NMS_IOU,
        }
    }
}

impl PromptingConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit_threshold("tau_pq", self.tau_pq)?;
        check_unit_threshold("tau_trk", self.tau_trk)?;
        for (name, v) in [("nms_iou", self.nms_iou), ("dedup_iou", self.dedup_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(alloc::format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackletScores {
    /// `V_p`: attention at the seed cell.
    pub attn: f64,
    /// `s_SAM`: segmenter confidence at the seed frame.
    pub sam: f64,
    /// `s_obj = V_p + s_SAM`, used for ranking only.
    pub object: f64,
    pub consistency: Consistency,
    /// `s_trk`.
    pub combined: f64,
}

/// Why a tracklet did not make it into the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackletFate {
    /// Dropped at its seed frame in favour of candidate `by`.
    DroppedAtPrompt { by: usize },
    /// Suppressed by a later, higher-scored candidate during per-frame dedup.
    SuppressedInFrame { by: usize },
    SuppressedByNms { by: usize },
    BelowThreshold,
    Selected,
}

/// One prompted query and what became of it.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub seed: PointQuery,
    pub sam: f64,
    pub object: f64,
    /// Filled for tracklets that reached scoring.
    pub scores: Option<TrackletScores>,
    pub fate: TrackletFate,
}

/// A retained object hypothesis with masks over every video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub candidate: usize,
    pub seed: PointQuery,
    pub scores: TrackletScores,
    pub masks: Vec<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptingOutcome {
    pub candidates: Vec<CandidateRecord>,
    pub objects: Vec<ObjectTrack>,
    /// Per-frame union of all object masks.
    pub union: Vec<Mask>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptingError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Segmenter(#[from] SegmenterError),
}

struct Live {
    candidate: usize,
    masks: Vec<Mask>,
}

fn propagated_masks(
    seg: &mut dyn Segmenter,
    frames: &[usize],
) -> core::result::Result<Vec<Mask>, PromptingError> {
    let out = seg.propagate(frames)?;
    if out.len() != frames.len() || out.iter().zip(frames).any(|(fm, &f)| fm.frame != f) {
        return Err(SegmenterError::Protocol(alloc::format!(
            "propagation returned {} masks for {} requested frames",
            out.len(),
            frames.len()
        ))
        .into());
    }
    Ok(out.into_iter().map(|fm| fm.mask).collect())
}

/// Runs the full prompting pipeline on grounding map `v`, whose frames are the
/// video frames listed in `sampled`.
pub fn run_prompting(
    v: &GroundingMap,
    sampled: &[usize],
    seg: &mut dyn Segmenter,
    cfg: &PromptingConfig,
) -> core::result::Result<PromptingOutcome, PromptingError> {
    cfg.validate()?;
    let dims = seg.dims();
    let g = v.grid();
    if sampled.len() != g.frames {
        return Err(Error::Shape(alloc::format!(
            "map has {} frames but {} sampled frame indices",
            g.frames,
            sampled.len()
        ))
        .into());
    }
    if sampled.windows(2).any(|w| w[0] >= w[1]) || sampled.iter().any(|&f| f >= dims.frames) {
        return Err(Error::InvalidParameter(
            "sampled frames must be strictly increasing and inside the video".into(),
        )
        .into());
    }
    if g.height > dims.height || g.width > dims.width {
        return Err(Error::Shape("token grid finer than the video frames".into()).into());
    }
    let scale = (
        dims.height as f64 / g.height as f64,
        dims.width as f64 / g.width as f64,
    );
    let clamp_point = |q: &PointQuery| Point {
        x: q.pixel.1.min(dims.width as u32 - 1),
        y: q.pixel.0.min(dims.height as u32 - 1),
    };

    let mut queries = generate_point_queries(v, cfg.tau_pq, scale)?;
    // frame by frame from the first sampled frame; strongest first within a frame
    queries.sort_by(|a, b| {
        a.frame
            .cmp(&b.frame)
            .then(b.attn.total_cmp(&a.attn))
            .then(a.cell.cmp(&b.cell))
    });

    let mut warnings = Vec::new();
    let empty_video = || vec![Mask::empty(dims.height, dims.width); dims.frames];
    if queries.is_empty() {
        warnings.push(alloc::format!(
            "no attention cell reaches tau_pq = {}; emitting empty masks",
            cfg.tau_pq
        ));
        return Ok(PromptingOutcome {
            candidates: Vec::new(),
            objects: Vec::new(),
            union: empty_video(),
            warnings,
        });
    }

    let mut candidates: Vec<CandidateRecord> = Vec::new();
    let mut live: Vec<Live> = Vec::new();
    for q in &queries {
        let fm = seg.prompt(sampled[q.frame], &[clamp_point(q)])?;
        let object = q.attn + fm.confidence;
        let id = candidates.len();
        let entries: Vec<DedupEntry<'_>> = live
            .iter()
            .map(|l| DedupEntry {
                masks: &l.masks,
                object_score: candidates[l.candidate].object,
            })
            .collect();
        let decision = frame_dedup(&entries, &fm.mask, object, q.frame, cfg.dedup_iou)?;
        let mut record = CandidateRecord {
            seed: *q,
            sam: fm.confidence,
            object,
            scores: None,
            fate: TrackletFate::BelowThreshold,
        };
        match decision {
            DedupDecision::Drop { by } => {
                record.fate = TrackletFate::DroppedAtPrompt {
                    by: live[by].candidate,
                };
                candidates.push(record);
            }
            DedupDecision::Keep { suppress } => {
                for &i in &suppress {
                    candidates[live[i].candidate].fate = TrackletFate::SuppressedInFrame { by: id };
                }
                let mut i = 0;
                live.retain(|_| {
                    let keep = !suppress.contains(&i);
                    i += 1;
                    keep
                });
                let masks = propagated_masks(seg, sampled)?;
                candidates.push(record);
                live.push(Live {
                    candidate: id,
                    masks,
                });
            }
        }
    }

    let objects_scores: Vec<f64> = live.iter().map(|l| candidates[l.candidate].object).collect();
    let mask_refs: Vec<&[Mask]> = live.iter().map(|l| l.masks.as_slice()).collect();
    let kept = tracklet_nms(&mask_refs, &objects_scores, cfg.nms_iou)?;
    for (i, l) in live.iter().enumerate() {
        if kept.contains(&i) {
            continue;
        }
        // the suppressor is the highest-priority kept tracklet overlapping it
        let by = kept
            .iter()
            .copied()
            .find(|&k| volume_iou(&l.masks, &live[k].masks).map_or(false, |x| x > cfg.nms_iou))
            .unwrap_or(kept[0]);
        candidates[l.candidate].fate = TrackletFate::SuppressedByNms {
            by: live[by].candidate,
        };
    }

    let attn_mask = attention_binary_mask(v);
    let penalized = penalized_values(v);
    let mut combined = Vec::with_capacity(kept.len());
    for &k in &kept {
        let pooled = downsample_mask(&live[k].masks, (g.height, g.width))?;
        let consistency = consistency_score(&pooled, &attn_mask, &penalized)?;
        let c = &mut candidates[live[k].candidate];
        let scores = TrackletScores {
            attn: c.seed.attn,
            sam: c.sam,
            object: c.object,
            consistency,
            combined: combined_score(c.seed.attn, c.sam, consistency),
        };
        c.scores = Some(scores);
        combined.push(scores.combined);
    }
    let selected = select_tracklets(&combined, cfg.tau_trk);
    if !selected.is_empty() && combined[selected[0]] < cfg.tau_trk {
        warnings.push(alloc::format!(
            "no tracklet reaches tau_trk = {}; keeping the best one (s_trk = {})",
            cfg.tau_trk,
            combined[selected[0]]
        ));
    }

    let all_frames: Vec<usize> = (0..dims.frames).collect();
    let mut objects = Vec::with_capacity(selected.len());
    let mut union = empty_video();
    for &s in &selected {
        let id = live[kept[s]].candidate;
        let c = &mut candidates[id];
        c.fate = TrackletFate::Selected;
        seg.prompt(sampled[c.seed.frame], &[clamp_point(&c.seed)])?;
        let masks = propagated_masks(seg, &all_frames)?;
        for (u, m) in union.iter_mut().zip(&masks) {
            u.union_with(m)?;
        }
        objects.push(ObjectTrack {
            candidate: id,
            seed: c.seed,
            scores: c.scores.expect("scored above"),
            masks,
        });
    }
    Ok(PromptingOutcome {
        candidates,
        objects,
        union,
        warnings,
    })
}
