//! Two-part container for attention stacks and grounding maps.
//!
//! `<path>` holds the tensor as little-endian `f32`, `<path>.json` the
//! metadata. Stacks are stored layer-major, each layer `(head, row, col)`
//! row-major. Grounding maps (`kind = "grounding_map"`) store one `(T, Hp, Wp)`
//! tensor.

use std::fs;
use std::path::{Path, PathBuf};

use decaf_core::grid::{Grid, GroundingMap, Normalization};
use decaf_core::stack::{AttentionStack, Modality, PromptKind};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid metadata: {source}")]
    Metadata {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: blob holds {actual} bytes, expected {expected}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        source: decaf_core::Error,
    },
}

/// Sidecar path of a container blob.
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    AttentionStack,
    GroundingMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityTag {
    Video,
    Frame,
}

impl From<Modality> for ModalityTag {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Video => Self::Video,
            Modality::Frame => Self::Frame,
        }
    }
}

impl From<ModalityTag> for Modality {
    fn from(m: ModalityTag) -> Self {
        match m {
            ModalityTag::Video => Self::Video,
            ModalityTag::Frame => Self::Frame,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTag {
    Object,
    Background,
}

impl From<PromptKind> for PromptTag {
    fn from(p: PromptKind) -> Self {
        match p {
            PromptKind::Object => Self::Object,
            PromptKind::Background => Self::Background,
        }
    }
}

impl From<PromptTag> for PromptKind {
    fn from(p: PromptTag) -> Self {
        match p {
            PromptTag::Object => Self::Object,
            PromptTag::Background => Self::Background,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackMetadata {
    pub format_version: u32,
    pub kind: Kind,
    pub dtype: String,
    pub num_layers: usize,
    pub first_stored_layer: usize,
    #[serde(default)]
    pub num_model_layers: Option<usize>,
    pub num_heads: usize,
    pub seq_len: usize,
    pub visual_start: usize,
    pub visual_count: usize,
    pub text_count: usize,
    pub query_index: usize,
    /// `[frames, height, width]` of the visual token grid.
    pub grid: [usize; 3],
    pub modality: ModalityTag,
    pub prompt_kind: PromptTag,
    #[serde(default)]
    pub frame_index: Option<usize>,
    #[serde(default)]
    pub capture_notes: String,
}

impl StackMetadata {
    pub fn of(stack: &AttentionStack) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: Kind::AttentionStack,
            dtype: DTYPE.into(),
            num_layers: stack.num_layers(),
            first_stored_layer: stack.first_stored_layer,
            num_model_layers: stack.num_model_layers,
            num_heads: stack.num_heads,
            seq_len: stack.seq_len,
            visual_start: stack.visual_start,
            visual_count: stack.visual_count,
            text_count: stack.text_count,
            query_index: stack.query_index,
            grid: [stack.grid.frames, stack.grid.height, stack.grid.width],
            modality: stack.modality.into(),
            prompt_kind: stack.prompt_kind.into(),
            frame_index: stack.frame_index,
            capture_notes: stack.capture_notes.clone(),
        }
    }

    fn layer_len(&self) -> Option<usize> {
        self.num_heads
            .checked_mul(self.seq_len)?
            .checked_mul(self.seq_len)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DumpError + '_ {
    move |source| DumpError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DumpError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DumpError::Metadata {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn encode_f32<'a>(values: impl Iterator<Item = &'a f32>, capacity: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(capacity * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn read_blob(path: &Path, expected_values: usize) -> Result<Vec<f32>, DumpError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let expected = expected_values as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(DumpError::Truncated {
            path: path.to_owned(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(decode_f32(&bytes))
}

fn check_header(path: &Path, version: u32, kind: Kind, want: Kind, dtype: &str) -> Result<(), DumpError> {
    let fail = |message: String| {
        Err(DumpError::Format {
            path: path.to_owned(),
            message,
        })
    };
    if version != FORMAT_VERSION {
        return fail(format!("unsupported format_version {version}"));
    }
    if kind != want {
        return fail(format!("expected a {want:?} container, found {kind:?}"));
    }
    if dtype != DTYPE {
        return fail(format!("unsupported dtype {dtype:?}"));
    }
    Ok(())
}

/// Writes `stack` to `path` and its metadata to `path.json`.
pub fn write_dump(stack: &AttentionStack, path: &Path) -> Result<(), DumpError> {
    stack.validate().map_err(|source| DumpError::Invalid {
        path: path.to_owned(),
        source,
    })?;
    let total = stack.num_layers() * stack.layer_len();
    let blob = encode_f32(stack.layers.iter().flatten(), total);
    fs::write(path, blob).map_err(io_err(path))?;
    write_json(&metadata_path(path), &StackMetadata::of(stack))
}

fn read_metadata<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DumpError> {
    let meta_path = metadata_path(path);
    let text = fs::read(&meta_path).map_err(io_err(&meta_path))?;
    serde_json::from_slice(&text).map_err(|source| DumpError::Metadata {
        path: meta_path,
        source,
    })
}

/// Reads and fully validates an attention stack.
pub fn read_dump(path: &Path) -> Result<AttentionStack, DumpError> {
    let meta: StackMetadata = read_metadata(path)?;
    check_header(path, meta.format_version, meta.kind, Kind::AttentionStack, &meta.dtype)?;
    let layer_len = meta
        .layer_len()
        .filter(|&n| n.checked_mul(meta.num_layers).is_some())
        .ok_or_else(|| DumpError::Format {
            path: path.to_owned(),
            message: "tensor dimensions overflow".into(),
        })?;
    let values = read_blob(path, layer_len * meta.num_layers)?;
    let layers = if layer_len == 0 {
        vec![Vec::new(); meta.num_layers]
    } else {
        values.chunks_exact(layer_len).map(<[f32]>::to_vec).collect()
    };
    let [frames, height, width] = meta.grid;
    let stack = AttentionStack {
        layers,
        first_stored_layer: meta.first_stored_layer,
        num_model_layers: meta.num_model_layers,
        num_heads: meta.num_heads,
        seq_len: meta.seq_len,
        visual_start: meta.visual_start,
        visual_count: meta.visual_count,
        text_count: meta.text_count,
        query_index: meta.query_index,
        grid: Grid::new(frames, height, width),
        modality: meta.modality.into(),
        prompt_kind: meta.prompt_kind.into(),
        frame_index: meta.frame_index,
        capture_notes: meta.capture_notes,
    };
    stack.validate().map_err(|source| DumpError::Invalid {
        path: path.to_owned(),
        source,
    })?;
    Ok(stack)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationTag {
    Raw,
    PerFrame,
    Global,
}

impl From<Normalization> for NormalizationTag {
    fn from(n: Normalization) -> Self {
        match n {
            Normalization::Raw => Self::Raw,
            Normalization::PerFrame => Self::PerFrame,
            Normalization::Global => Self::Global,
        }
    }
}

impl From<NormalizationTag> for Normalization {
    fn from(n: NormalizationTag) -> Self {
        match n {
            NormalizationTag::Raw => Self::Raw,
            NormalizationTag::PerFrame => Self::PerFrame,
            NormalizationTag::Global => Self::Global,
        }
    }
}

/// The video a grounding map belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoInfo {
    pub video_id: String,
    pub original_frame_count: usize,
    /// `[height, width]` in pixels.
    pub frame_size: [usize; 2],
    pub sampled_frame_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapMetadata {
    format_version: u32,
    kind: Kind,
    dtype: String,
    grid: [usize; 3],
    scale: [f64; 2],
    normalization: NormalizationTag,
    #[serde(flatten)]
    video: VideoInfo,
}

/// A fused grounding map together with its video description.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFile {
    pub map: GroundingMap,
    pub video: VideoInfo,
}

pub fn write_map(file: &MapFile, path: &Path) -> Result<(), DumpError> {
    let g = file.map.grid();
    let values: Vec<f32> = file.map.values().iter().map(|&v| v as f32).collect();
    fs::write(path, encode_f32(values.iter(), values.len())).map_err(io_err(path))?;
    let meta = MapMetadata {
        format_version: FORMAT_VERSION,
        kind: Kind::GroundingMap,
        dtype: DTYPE.into(),
        grid: [g.frames, g.height, g.width],
        scale: [file.map.scale.0, file.map.scale.1],
        normalization: file.map.normalization.into(),
        video: file.video.clone(),
    };
    write_json(&metadata_path(path), &meta)
}

pub fn read_map(path: &Path) -> Result<MapFile, DumpError> {
    let meta: MapMetadata = read_metadata(path)?;
    check_header(path, meta.format_version, meta.kind, Kind::GroundingMap, &meta.dtype)?;
    let [frames, height, width] = meta.grid;
    let grid = Grid::new(frames, height, width);
    let values = read_blob(path, grid.len())?;
    let invalid = |source| DumpError::Invalid {
        path: path.to_owned(),
        source,
    };
    let map = GroundingMap::new(grid, values.into_iter().map(f64::from).collect())
        .map_err(invalid)?
        .with_scale((meta.scale[0], meta.scale[1]))
        .with_normalization(meta.normalization.into());
    if meta.video.sampled_frame_indices.len() != frames {
        return Err(DumpError::Format {
            path: path.to_owned(),
            message: format!(
                "{} sampled frame indices for a map of {} frames",
                meta.video.sampled_frame_indices.len(),
                frames
            ),
        });
    }
    Ok(MapFile {
        map,
        video: meta.video,
    })
}
