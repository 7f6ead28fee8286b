//! Per-video manifest listing the eight-way (modality × prompt × frame) dumps.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dump::{ModalityTag, PromptTag, FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: missing entry for slot {slot}")]
    MissingSlot { path: PathBuf, slot: Slot },
    #[error("{path}: duplicate entry for slot {slot}")]
    DuplicateSlot { path: PathBuf, slot: Slot },
    #[error("{path}: entry for slot {slot} points to missing file {file}")]
    MissingFile {
        path: PathBuf,
        slot: Slot,
        file: PathBuf,
    },
}

/// A `(modality, prompt, frame)` position in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot {
    pub modality: ModalityTag,
    pub prompt: PromptTag,
    /// Original video frame index, frame dumps only.
    pub frame: Option<usize>,
}

impl Slot {
    pub fn video(prompt: PromptTag) -> Self {
        Self {
            modality: ModalityTag::Video,
            prompt,
            frame: None,
        }
    }

    pub fn frame(prompt: PromptTag, frame: usize) -> Self {
        Self {
            modality: ModalityTag::Frame,
            prompt,
            frame: Some(frame),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.modality {
            ModalityTag::Video => "video",
            ModalityTag::Frame => "frame",
        };
        let p = match self.prompt {
            PromptTag::Object => "object",
            PromptTag::Background => "background",
        };
        match self.frame {
            Some(t) => write!(f, "{m}/{p}@{t}"),
            None => write!(f, "{m}/{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub modality: ModalityTag,
    pub prompt: PromptTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    /// Relative to the manifest's directory, or absolute.
    pub path: PathBuf,
}

/// On-disk manifest document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub format_version: u32,
    pub video_id: String,
    pub object_category: String,
    pub original_frame_count: usize,
    pub frame_size: [usize; 2],
    pub sampled_frame_indices: Vec<usize>,
    pub entries: Vec<ManifestEntry>,
}

/// A checked manifest with resolved dump paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpManifest {
    pub video_id: String,
    pub object_category: String,
    pub original_frame_count: usize,
    pub frame_size: [usize; 2],
    pub sampled_frame_indices: Vec<usize>,
    pub entries: BTreeMap<Slot, PathBuf>,
}

impl DumpManifest {
    pub fn path(&self, slot: Slot) -> &Path {
        &self.entries[&slot]
    }
}

pub fn read_manifest(path: &Path) -> Result<DumpManifest, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let file: ManifestFile = serde_json::from_slice(&bytes).map_err(|source| ManifestError::Json {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    check(file, base).map_err(|e| e.at(path))
}

pub fn write_manifest(file: &ManifestFile, path: &Path) -> Result<(), ManifestError> {
    let mut text = serde_json::to_string_pretty(file).map_err(|source| ManifestError::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| ManifestError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Error before the manifest path is attached.
enum Problem {
    Invalid(String),
    Missing(Slot),
    Duplicate(Slot),
    File(Slot, PathBuf),
}

impl Problem {
    fn at(self, path: &Path) -> ManifestError {
        let path = path.to_owned();
        match self {
            Self::Invalid(message) => ManifestError::Invalid { path, message },
            Self::Missing(slot) => ManifestError::MissingSlot { path, slot },
            Self::Duplicate(slot) => ManifestError::DuplicateSlot { path, slot },
            Self::File(slot, file) => ManifestError::MissingFile { path, slot, file },
        }
    }
}

fn check(file: ManifestFile, base: &Path) -> Result<DumpManifest, Problem> {
    if file.format_version != FORMAT_VERSION {
        return Err(Problem::Invalid(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let sampled = &file.sampled_frame_indices;
    if sampled.is_empty() {
        return Err(Problem::Invalid("sampled_frame_indices is empty".into()));
    }
    if let Some(w) = sampled.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Problem::Invalid(format!(
            "sampled_frame_indices must be strictly increasing, found {} then {}",
            w[0], w[1]
        )));
    }
    if let Some(&t) = sampled.iter().find(|&&t| t >= file.original_frame_count) {
        return Err(Problem::Invalid(format!(
            "sampled frame {t} outside a video of {} frames",
            file.original_frame_count
        )));
    }
    if file.frame_size.contains(&0) {
        return Err(Problem::Invalid("frame_size must be positive".into()));
    }

    let mut entries = BTreeMap::new();
    for e in file.entries {
        let slot = Slot {
            modality: e.modality,
            prompt: e.prompt,
            frame: e.frame,
        };
        match (e.modality, e.frame) {
            (ModalityTag::Video, Some(_)) => {
                return Err(Problem::Invalid(format!("video entry {slot} must not carry a frame")))
            }
            (ModalityTag::Frame, None) => {
                return Err(Problem::Invalid("frame entry without a frame index".into()))
            }
            (ModalityTag::Frame, Some(t)) if sampled.binary_search(&t).is_err() => {
                return Err(Problem::Invalid(format!("entry {slot} is not a sampled frame")))
            }
            _ => {}
        }
        let resolved = base.join(&e.path);
        if !resolved.is_file() {
            return Err(Problem::File(slot, resolved));
        }
        if entries.insert(slot, resolved).is_some() {
            return Err(Problem::Duplicate(slot));
        }
    }

    let required = [PromptTag::Object, PromptTag::Background]
        .into_iter()
        .map(Slot::video)
        .chain(sampled.iter().flat_map(|&t| {
            [PromptTag::Object, PromptTag::Background]
                .into_iter()
                .map(move |p| Slot::frame(p, t))
        }));
    for slot in required {
        if !entries.contains_key(&slot) {
            return Err(Problem::Missing(slot));
        }
    }

    Ok(DumpManifest {
        video_id: file.video_id,
        object_category: file.object_category,
        original_frame_count: file.original_frame_count,
        frame_size: file.frame_size,
        sampled_frame_indices: file.sampled_frame_indices,
        entries,
    })
}
