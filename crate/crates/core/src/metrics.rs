//! Region similarity (J), contour accuracy (F) and their aggregation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::Mask;

/// Boundary tolerance as a fraction of the image diagonal.
pub const BOUNDARY_TOLERANCE: f64 = 0.008;

/// Mask IoU; 1 when both masks are empty.
pub fn region_similarity(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (inter, union) = pred.overlap(gt)?;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Foreground pixels with a 4-neighbour inside the image that is background.
pub fn boundary(mask: &Mask) -> Mask {
    let (h, w) = mask.dims();
    Mask::from_fn(h, w, |y, x| {
        mask.get(y, x)
            && ((y > 0 && !mask.get(y - 1, x))
                || (y + 1 < h && !mask.get(y + 1, x))
                || (x > 0 && !mask.get(y, x - 1))
                || (x + 1 < w && !mask.get(y, x + 1)))
    })
}

/// Dilation by a disk of the given radius.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    let (h, w) = mask.dims();
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = Mask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    out.set(ny as usize, nx as usize, true);
                }
            }
        }
    }
    out
}

/// `round(0.008 * diagonal)` pixels.
pub fn boundary_radius(height: usize, width: usize) -> usize {
    let diag = libm::sqrt((height * height + width * width) as f64);
    libm::round(BOUNDARY_TOLERANCE * diag) as usize
}

/// Boundary F-measure with the default diagonal-proportional tolerance.
pub fn contour_accuracy(pred: &Mask, gt: &Mask) -> Result<f64> {
    contour_accuracy_with_radius(pred, gt, boundary_radius(gt.height(), gt.width()))
}

pub fn contour_accuracy_with_radius(pred: &Mask, gt: &Mask, radius: usize) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(alloc::format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let pb = boundary(pred);
    let gb = boundary(gt);
    let (np, ng) = (pb.area(), gb.area());
    match (np, ng) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let (matched_pred, _) = pb.overlap(&dilate(&gb, radius))?;
    let (matched_gt, _) = gb.overlap(&dilate(&pb, radius))?;
    let precision = matched_pred as f64 / np as f64;
    let recall = matched_gt as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

impl Scores {
    pub fn new(j: f64, f: f64) -> Self {
        Self {
            j,
            f,
            jf: (j + f) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub scores: Scores,
    pub frames: usize,
    pub objects: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_sequence: BTreeMap<String, SequenceScore>,
    /// Means over sequences.
    pub global: Scores,
    pub frame_count: usize,
}

/// How multi-object masks are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ObjectMode {
    /// Union of all objects on both sides, per frame.
    #[default]
    Union,
    /// Each ground-truth object against its best-matching prediction, then averaged.
    PerObject,
}

/// Object masks of one video: `objects[k][t]`.
pub type ObjectSequences = Vec<Vec<Mask>>;

fn sequence_scores(pred: &[Mask], gt: &[Mask]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(alloc::format!(
            "{} predicted frames for {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::Shape("sequence without frames".into()));
    }
    let mut j = 0.0;
    let mut f = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        j += region_similarity(p, g)?;
        f += contour_accuracy(p, g)?;
    }
    let n = gt.len() as f64;
    Ok((j / n, f / n))
}

fn union_frames(objects: &[Vec<Mask>], frames: usize, dims: (usize, usize)) -> Result<Vec<Mask>> {
    let mut out = alloc::vec![Mask::empty(dims.0, dims.1); frames];
    for obj in objects {
        if obj.len() != frames {
            return Err(Error::Shape("objects cover different frame counts".into()));
        }
        for (u, m) in out.iter_mut().zip(obj) {
            u.union_with(m)?;
        }
    }
    Ok(out)
}

fn volume_overlap(a: &[Mask], b: &[Mask]) -> Result<f64> {
    let mut inter = 0;
    let mut union = 0;
    for (x, y) in a.iter().zip(b) {
        let (i, u) = x.overlap(y)?;
        inter += i;
        union += u;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Greedy one-to-one matching by descending volume IoU; ties go to lower indices.
fn match_objects(pred: &[Vec<Mask>], gt: &[Vec<Mask>]) -> Result<Vec<Option<usize>>> {
    let mut pairs = Vec::new();
    for (g, gm) in gt.iter().enumerate() {
        for (p, pm) in pred.iter().enumerate() {
            let iou = volume_overlap(pm, gm)?;
            if iou > 0.0 {
                pairs.push((iou, g, p));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut assigned = alloc::vec![None; gt.len()];
    let mut used = alloc::vec![false; pred.len()];
    for (_, g, p) in pairs {
        if assigned[g].is_none() && !used[p] {
            assigned[g] = Some(p);
            used[p] = true;
        }
    }
    Ok(assigned)
}

/// Scores one video. Both sides must cover the same frames; a prediction with
/// no objects counts as empty masks.
pub fn evaluate_sequence(pred: &[Vec<Mask>], gt: &[Vec<Mask>], mode: ObjectMode) -> Result<SequenceScore> {
    let frames = gt
        .first()
        .map(|o| o.len())
        .or_else(|| pred.first().map(|o| o.len()))
        .ok_or_else(|| Error::Shape("no masks on either side".into()))?;
    let dims = gt
        .first()
        .and_then(|o| o.first())
        .or_else(|| pred.first().and_then(|o| o.first()))
        .map(|m| m.dims())
        .ok_or_else(|| Error::Shape("sequence without frames".into()))?;
    if mode == ObjectMode::PerObject && !gt.is_empty() {
        let matches = match_objects(pred, gt)?;
        let empty = alloc::vec![Mask::empty(dims.0, dims.1); frames];
        let (mut j, mut f) = (0.0, 0.0);
        for (g, m) in gt.iter().zip(&matches) {
            let p = m.map_or(&empty, |i| &pred[i]);
            let (sj, sf) = sequence_scores(p, g)?;
            j += sj;
            f += sf;
        }
        let k = gt.len() as f64;
        return Ok(SequenceScore {
            scores: Scores::new(j / k, f / k),
            frames,
            objects: gt.len(),
        });
    }
    let p = union_frames(pred, frames, dims)?;
    let g = union_frames(gt, frames, dims)?;
    let (j, f) = sequence_scores(&p, &g)?;
    Ok(SequenceScore {
        scores: Scores::new(j, f),
        frames,
        objects: gt.len(),
    })
}

/// Per-frame J and F averaged per sequence, then over sequences.
pub fn evaluate(
    preds: &BTreeMap<String, ObjectSequences>,
    gts: &BTreeMap<String, ObjectSequences>,
    mode: ObjectMode,
) -> Result<EvalReport> {
    let missing: Vec<String> = gts.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let mut per_sequence = BTreeMap::new();
    for (id, gt) in gts {
        per_sequence.insert(id.clone(), evaluate_sequence(&preds[id], gt, mode)?);
    }
    Ok(summarize(per_sequence))
}

/// Aggregates per-sequence scores into a report.
pub fn summarize(per_sequence: BTreeMap<String, SequenceScore>) -> EvalReport {
    let n = per_sequence.len().max(1) as f64;
    let j = per_sequence.values().map(|s| s.scores.j).sum::<f64>() / n;
    let f = per_sequence.values().map(|s| s.scores.f).sum::<f64>() / n;
    let frame_count = per_sequence.values().map(|s| s.frames).sum();
    EvalReport {
        per_sequence,
        global: Scores::new(j, f),
        frame_count,
    }
}
