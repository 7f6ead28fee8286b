//! Synthetic label videos with matching attention dumps.
//!
//! Each video holds one target square and up to two distractor squares moving
//! at constant velocity. Object-prompt attention concentrates on the target;
//! background-prompt attention covers distractors and background. In
//! sink videos both prompts also put heavy attention on the right-hand pixel
//! columns, whatever the instruction.

use std::fs;
use std::path::{Path, PathBuf};

use decaf_core::grid::Grid;
use decaf_core::segmenter::{render_label_video, LabelVideo, MovingSquare};
use decaf_core::stack::{AttentionStack, Modality, PromptKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dump::{write_dump, DumpError, FORMAT_VERSION};
use crate::frames::{write_label_frames, FramesError};
use crate::manifest::{write_manifest, ManifestEntry, ManifestError, ManifestFile};

pub const FRAMES: usize = 16;
pub const SIZE: usize = 64;
/// Pixel columns `SINK_X..SIZE` attract attention in sink videos.
pub const SINK_X: usize = 48;
/// Squares stay left of this column.
const REGION_LIMIT_X: usize = 44;
const MIN_GAP: i64 = 6;

const VIDEO_GRID: (usize, usize) = (4, 4);
const FRAME_GRID: (usize, usize) = (8, 8);
const PREFIX_TOKENS: usize = 3;
const SUFFIX_TOKENS: usize = 5;
const HEADS: usize = 2;
const LAYERS: usize = 2;
const FIRST_STORED_LAYER: usize = 14;
const MODEL_LAYERS: usize = 28;

/// Share of the query's visual attention that sink cells take, independent of the prompt.
const SINK_SHARE: f64 = 0.8;
const NOISE: f64 = 0.04;
const QUERY_TEXT_MASS: f64 = 0.3;
const SELF_MASS: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub index: usize,
    pub id: String,
    /// Distractors first, target last.
    pub squares: Vec<MovingSquare>,
    pub target: u8,
    pub sink: bool,
    pub labels: LabelVideo,
}

impl SynthVideo {
    /// Ground-truth frames: target id where the target is, else 0.
    pub fn ground_truth(&self) -> Vec<Vec<u8>> {
        (0..FRAMES)
            .map(|t| {
                self.labels
                    .frame(t)
                    .iter()
                    .map(|&l| if l == self.target { l } else { 0 })
                    .collect()
            })
            .collect()
    }
}

fn video_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64
}

fn random_square(rng: &mut ChaCha8Rng, id: u8, size: usize, moving: bool) -> MovingSquare {
    let velocity = loop {
        let v = (rng.random_range(-1i64..=1), rng.random_range(-1i64..=1));
        if !moving || v != (0, 0) {
            break v;
        }
    };
    let span = (FRAMES - 1) as i64;
    let start_range = |v: i64, limit: usize| {
        let lo = (-span * v).max(0);
        let hi = limit as i64 - size as i64 - (span * v).max(0);
        lo..=hi
    };
    let start = (
        rng.random_range(start_range(velocity.0, SIZE)),
        rng.random_range(start_range(velocity.1, REGION_LIMIT_X)),
    );
    MovingSquare {
        id,
        size,
        start,
        velocity,
        visible: (0, FRAMES - 1),
    }
}

fn separated(a: &MovingSquare, b: &MovingSquare) -> bool {
    (0..FRAMES).all(|t| {
        let (ay, ax) = a.origin(t);
        let (by, bx) = b.origin(t);
        let (sa, sb) = (a.size as i64, b.size as i64);
        ay + sa + MIN_GAP <= by || by + sb + MIN_GAP <= ay || ax + sa + MIN_GAP <= bx || bx + sb + MIN_GAP <= ax
    })
}

/// Video `index` of the suite generated from `seed`.
pub fn generate_video(seed: u64, index: usize) -> SynthVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed(seed, index));
    let regions = 1 + index % 3;
    let squares = 'retry: loop {
        let mut ids: Vec<u8> = (1..=9).collect();
        let mut pick_id = |rng: &mut ChaCha8Rng| ids.swap_remove(rng.random_range(0..ids.len()));
        let target_id = pick_id(&mut rng);
        let target_size = rng.random_range(18..=24);
        let target = random_square(&mut rng, target_id, target_size, true);
        let mut squares = Vec::with_capacity(regions);
        for _ in 1..regions {
            let id = pick_id(&mut rng);
            let size = rng.random_range(12..=16);
            let d = random_square(&mut rng, id, size, false);
            if !separated(&d, &target) || squares.iter().any(|s| !separated(s, &d)) {
                continue 'retry;
            }
            squares.push(d);
        }
        squares.push(target);
        break squares;
    };
    let target = squares.last().expect("target present").id;
    SynthVideo {
        index,
        id: format!("synth{index:02}"),
        labels: render_label_video(FRAMES, SIZE, SIZE, &squares),
        squares,
        target,
        sink: index % 2 == 0,
    }
}

pub fn generate_suite(seed: u64, count: usize) -> Vec<SynthVideo> {
    (0..count).map(|i| generate_video(seed, i)).collect()
}

/// Pixel-class coverage of one token cell: `(target, distractor, sink, other background)`.
fn cell_coverage(v: &SynthVideo, t: usize, cell: (usize, usize), cells: (usize, usize)) -> [f64; 4] {
    let ch = SIZE / cells.0;
    let cw = SIZE / cells.1;
    let mut c = [0.0; 4];
    for y in cell.0 * ch..(cell.0 + 1) * ch {
        for x in cell.1 * cw..(cell.1 + 1) * cw {
            let l = v.labels.label(t, y, x);
            let k = if l == v.target {
                0
            } else if l != 0 {
                1
            } else if x >= SINK_X {
                2
            } else {
                3
            };
            c[k] += 1.0;
        }
    }
    let n = (ch * cw) as f64;
    c.map(|x| x / n)
}

/// Query-row attention over the visual tokens, summing to one.
fn visual_weights(v: &SynthVideo, frames: &[usize], cells: (usize, usize), prompt: PromptKind, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let class = match prompt {
        PromptKind::Object => [1.0, 0.12, 0.0, 0.0],
        PromptKind::Background => [0.03, 0.5, 0.0, 0.25],
    };
    let mut content = Vec::with_capacity(frames.len() * cells.0 * cells.1);
    let mut sink = Vec::with_capacity(content.capacity());
    for &t in frames {
        for y in 0..cells.0 {
            for x in 0..cells.1 {
                let cov = cell_coverage(v, t, (y, x), cells);
                let w: f64 = cov.iter().zip(class).map(|(c, k)| c * k).sum();
                content.push(w + rng.random::<f64>() * NOISE);
                sink.push(cov[2]);
            }
        }
    }
    let content_total: f64 = content.iter().sum();
    let sink_total: f64 = sink.iter().sum();
    let share = if v.sink && sink_total > 0.0 { SINK_SHARE } else { 0.0 };
    content
        .iter()
        .zip(&sink)
        .map(|(c, s)| (1.0 - share) * c / content_total + if share > 0.0 { share * s / sink_total } else { 0.0 })
        .collect()
}

fn layer(n: usize, visual: std::ops::Range<usize>, query_visual: [&[f64]; HEADS]) -> Vec<f32> {
    let mut out = vec![0f32; HEADS * n * n];
    let text: Vec<usize> = (0..n).filter(|i| !visual.contains(i)).collect();
    for (h, qv) in query_visual.iter().enumerate() {
        let m = &mut out[h * n * n..(h + 1) * n * n];
        for i in 0..n - 1 {
            let row = &mut m[i * n..(i + 1) * n];
            if i == 0 {
                row[0] = 1.0;
                continue;
            }
            row[i] = SELF_MASS as f32;
            let rest = ((1.0 - SELF_MASS) / i as f64) as f32;
            for r in &mut row[..i] {
                *r = rest;
            }
        }
        let q = &mut m[(n - 1) * n..];
        let total: f64 = qv.iter().sum();
        for (k, &w) in qv.iter().enumerate() {
            q[visual.start + k] = ((1.0 - QUERY_TEXT_MASS) * w / total) as f32;
        }
        for &i in &text {
            q[i] = (QUERY_TEXT_MASS / text.len() as f64) as f32;
        }
    }
    out
}

fn make_stack(v: &SynthVideo, frames: &[usize], frame_index: Option<usize>, prompt: PromptKind, rng: &mut ChaCha8Rng) -> AttentionStack {
    let (cells, modality) = match frame_index {
        None => (VIDEO_GRID, Modality::Video),
        Some(_) => (FRAME_GRID, Modality::Frame),
    };
    let grid = Grid::new(frames.len(), cells.0, cells.1);
    let nv = grid.len();
    let n = PREFIX_TOKENS + nv + SUFFIX_TOKENS;
    let visual = PREFIX_TOKENS..PREFIX_TOKENS + nv;
    let uniform = vec![1.0; nv];
    let layers = (0..LAYERS)
        .map(|_| {
            let focused = visual_weights(v, frames, cells, prompt, rng);
            layer(n, visual.clone(), [&focused, &uniform])
        })
        .collect();
    AttentionStack {
        layers,
        first_stored_layer: FIRST_STORED_LAYER,
        num_model_layers: Some(MODEL_LAYERS),
        num_heads: HEADS,
        seq_len: n,
        visual_start: PREFIX_TOKENS,
        visual_count: nv,
        text_count: PREFIX_TOKENS + SUFFIX_TOKENS,
        query_index: n - 1,
        grid,
        modality,
        prompt_kind: prompt,
        frame_index,
        capture_notes: "synthetic".into(),
    }
}

/// The dumps of one video, all frames sampled.
#[derive(Debug, Clone)]
pub struct SynthDumps {
    pub video_object: AttentionStack,
    pub video_background: AttentionStack,
    pub frame_object: Vec<AttentionStack>,
    pub frame_background: Vec<AttentionStack>,
}

pub fn make_dumps(v: &SynthVideo, seed: u64) -> SynthDumps {
    let mut rng = ChaCha8Rng::seed_from_u64(!video_seed(seed, v.index));
    let all: Vec<usize> = (0..FRAMES).collect();
    let video_object = make_stack(v, &all, None, PromptKind::Object, &mut rng);
    let video_background = make_stack(v, &all, None, PromptKind::Background, &mut rng);
    let mut frame_object = Vec::with_capacity(FRAMES);
    let mut frame_background = Vec::with_capacity(FRAMES);
    for t in 0..FRAMES {
        frame_object.push(make_stack(v, &[t], Some(t), PromptKind::Object, &mut rng));
        frame_background.push(make_stack(v, &[t], Some(t), PromptKind::Background, &mut rng));
    }
    SynthDumps {
        video_object,
        video_background,
        frame_object,
        frame_background,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error(transparent)]
    Frames(#[from] FramesError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Where a written suite lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteLayout {
    pub root: PathBuf,
    pub ids: Vec<String>,
    /// Videos with attention sinks.
    pub sink_ids: Vec<String>,
}

impl SuiteLayout {
    pub fn labels_dir(&self, id: &str) -> PathBuf {
        self.root.join("labels").join(id)
    }

    pub fn gt_root(&self) -> PathBuf {
        self.root.join("gt")
    }

    pub fn manifest(&self, id: &str) -> PathBuf {
        self.root.join("dumps").join(id).join("manifest.json")
    }
}

/// Writes label frames, ground truth, dumps and manifest of one video under `root`.
pub fn write_video(v: &SynthVideo, seed: u64, root: &Path) -> Result<(), SynthError> {
    let labels: Vec<Vec<u8>> = (0..FRAMES).map(|t| v.labels.frame(t).to_vec()).collect();
    write_label_frames(&root.join("labels").join(&v.id), SIZE, SIZE, &labels)?;
    write_label_frames(&root.join("gt").join(&v.id), SIZE, SIZE, &v.ground_truth())?;
    let dir = root.join("dumps").join(&v.id);
    fs::create_dir_all(&dir).map_err(|source| SynthError::Io {
        path: dir.clone(),
        source,
    })?;
    let d = make_dumps(v, seed);
    let mut entries = Vec::new();
    let mut put = |stack: &AttentionStack, name: String| -> Result<(), SynthError> {
        write_dump(stack, &dir.join(&name))?;
        entries.push(ManifestEntry {
            modality: stack.modality.into(),
            prompt: stack.prompt_kind.into(),
            frame: stack.frame_index,
            path: PathBuf::from(name),
        });
        Ok(())
    };
    put(&d.video_object, "video_object.bin".into())?;
    put(&d.video_background, "video_background.bin".into())?;
    for t in 0..FRAMES {
        put(&d.frame_object[t], format!("frame{t:02}_object.bin"))?;
        put(&d.frame_background[t], format!("frame{t:02}_background.bin"))?;
    }
    let manifest = ManifestFile {
        format_version: FORMAT_VERSION,
        video_id: v.id.clone(),
        object_category: "square".into(),
        original_frame_count: FRAMES,
        frame_size: [SIZE, SIZE],
        sampled_frame_indices: (0..FRAMES).collect(),
        entries,
    };
    write_manifest(&manifest, &dir.join("manifest.json"))?;
    Ok(())
}

pub fn write_suite(root: &Path, seed: u64, count: usize) -> Result<SuiteLayout, SynthError> {
    let videos = generate_suite(seed, count);
    for v in &videos {
        write_video(v, seed, root)?;
    }
    Ok(SuiteLayout {
        root: root.to_owned(),
        ids: videos.iter().map(|v| v.id.clone()).collect(),
        sink_ids: videos.iter().filter(|v| v.sink).map(|v| v.id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn videos_are_deterministic_and_separated() {
        for i in 0..10 {
            let a = generate_video(7, i);
            assert_eq!(a, generate_video(7, i));
            assert_eq!(a.squares.len(), 1 + i % 3);
            for t in 0..FRAMES {
                let target = a.labels.region_mask(t, a.target);
                let size = a.squares.last().unwrap().size;
                assert_eq!(target.area(), size * size, "target fully visible");
            }
        }
    }

    #[test]
    fn dumps_validate() {
        let v = generate_video(3, 2);
        let d = make_dumps(&v, 3);
        d.video_object.validate().unwrap();
        d.video_background.validate().unwrap();
        for s in d.frame_object.iter().chain(&d.frame_background) {
            s.validate().unwrap();
        }
    }
}
