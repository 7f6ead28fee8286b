//! Manifest to fused grounding map.

use std::path::Path;

use decaf_core::fusion::{fuse, FusionConfig, FusionInputs, Modalities};
use decaf_core::grid::GroundingMap;
use decaf_core::rollout::{stack_grounding, RolloutOptions};
use decaf_core::stack::{AttentionStack, Modality, PromptKind};

use crate::dump::{read_dump, DumpError, MapFile, PromptTag, VideoInfo};
use crate::manifest::{read_manifest, DumpManifest, ManifestError, Slot};
use crate::par::par_map;

#[derive(Debug, thiserror::Error)]
pub enum FuseError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error("slot {slot}: {message}")]
    Mismatch { slot: Slot, message: String },
    #[error("slot {slot}: {source}")]
    Rollout {
        slot: Slot,
        source: decaf_core::Error,
    },
    #[error("fusion failed: {0}")]
    Fusion(decaf_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuseOptions {
    /// Model layer to start the rollout from; defaults per dump.
    pub start_layer: Option<usize>,
    pub renormalize_rows: bool,
    pub fusion: FusionConfig,
    pub jobs: usize,
}

impl Default for FuseOptions {
    fn default() -> Self {
        Self {
            start_layer: None,
            renormalize_rows: true,
            fusion: FusionConfig::default(),
            jobs: 1,
        }
    }
}

fn check_slot(stack: &AttentionStack, slot: Slot, sampled: usize) -> Result<(), FuseError> {
    let mismatch = |message: String| Err(FuseError::Mismatch { slot, message });
    let kind = match slot.prompt {
        PromptTag::Object => PromptKind::Object,
        PromptTag::Background => PromptKind::Background,
    };
    if stack.prompt_kind != kind {
        return mismatch(format!("dump holds a {:?} prompt", stack.prompt_kind));
    }
    match slot.frame {
        None => {
            if stack.modality != Modality::Video {
                return mismatch("expected a video dump".into());
            }
            if stack.grid.frames != sampled {
                return mismatch(format!(
                    "video grid has {} frames for {sampled} sampled frames",
                    stack.grid.frames
                ));
            }
        }
        Some(t) => {
            if stack.modality != Modality::Frame || stack.frame_index != Some(t) {
                return mismatch(format!(
                    "expected the frame dump of frame {t}, found {:?} frame {:?}",
                    stack.modality, stack.frame_index
                ));
            }
        }
    }
    Ok(())
}

fn log_stats(what: &str, m: &GroundingMap) {
    let v = m.values();
    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
    let g = m.grid();
    log::info!(
        "{what}: {}x{}x{} min {:.4e} max {:.4e} mean {:.4e}",
        g.frames,
        g.height,
        g.width,
        m.min(),
        m.max(),
        mean
    );
}

/// Raw (unfused) rollout map of one manifest slot.
pub fn slot_map(manifest: &DumpManifest, slot: Slot, opts: &FuseOptions) -> Result<GroundingMap, FuseError> {
    let stack = read_dump(manifest.path(slot))?;
    check_slot(&stack, slot, manifest.sampled_frame_indices.len())?;
    let ro = RolloutOptions {
        start_layer: opts.start_layer.unwrap_or_else(|| stack.default_start_layer()),
        renormalize_rows: opts.renormalize_rows,
    };
    let map = stack_grounding(&stack, ro).map_err(|source| FuseError::Rollout { slot, source })?;
    log::debug!("{slot}: rollout from layer {}", ro.start_layer);
    Ok(map)
}

fn frame_stack(manifest: &DumpManifest, prompt: PromptTag, opts: &FuseOptions) -> Result<GroundingMap, FuseError> {
    let slots: Vec<Slot> = manifest
        .sampled_frame_indices
        .iter()
        .map(|&t| Slot::frame(prompt, t))
        .collect();
    let maps = par_map(&slots, opts.jobs, |&s| slot_map(manifest, s, opts))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    GroundingMap::stack_frames(&maps).map_err(|source| FuseError::Mismatch {
        slot: slots[0],
        message: format!("frame dumps disagree: {source}"),
    })
}

/// Raw rollout maps needed by `opts.fusion`.
pub fn raw_maps(manifest: &DumpManifest, opts: &FuseOptions) -> Result<FusionInputs, FuseError> {
    let cfg = &opts.fusion;
    let want_video = cfg.modalities != Modalities::FrameOnly;
    let want_frames = cfg.modalities != Modalities::VideoOnly;
    let mut inputs = FusionInputs::default();
    let video = |p| slot_map(manifest, Slot::video(p), opts);
    if want_video {
        inputs.video_object = Some(video(PromptTag::Object)?);
        if cfg.contrastive {
            inputs.video_background = Some(video(PromptTag::Background)?);
        }
    }
    if want_frames {
        inputs.frame_object = Some(frame_stack(manifest, PromptTag::Object, opts)?);
        if cfg.contrastive {
            inputs.frame_background = Some(frame_stack(manifest, PromptTag::Background, opts)?);
        }
    }
    for (name, m) in [
        ("video/object", &inputs.video_object),
        ("video/background", &inputs.video_background),
        ("frame/object", &inputs.frame_object),
        ("frame/background", &inputs.frame_background),
    ] {
        if let Some(m) = m {
            log_stats(name, m);
        }
    }
    Ok(inputs)
}

/// Fuses an already-read manifest.
pub fn fuse_manifest(manifest: &DumpManifest, opts: &FuseOptions) -> Result<MapFile, FuseError> {
    let inputs = raw_maps(manifest, opts)?;
    let fused = fuse(&inputs, &opts.fusion).map_err(FuseError::Fusion)?;
    let g = fused.grid();
    let [h, w] = manifest.frame_size;
    let map = fused.with_scale((h as f64 / g.height as f64, w as f64 / g.width as f64));
    log_stats("fused", &map);
    Ok(MapFile {
        map,
        video: VideoInfo {
            video_id: manifest.video_id.clone(),
            original_frame_count: manifest.original_frame_count,
            frame_size: manifest.frame_size,
            sampled_frame_indices: manifest.sampled_frame_indices.clone(),
        },
    })
}

pub fn build_fused_map(manifest_path: &Path, opts: &FuseOptions) -> Result<MapFile, FuseError> {
    let manifest = read_manifest(manifest_path)?;
    log::info!(
        "{}: {} sampled of {} frames, category {:?}",
        manifest.video_id,
        manifest.sampled_frame_indices.len(),
        manifest.original_frame_count,
        manifest.object_category
    );
    fuse_manifest(&manifest, opts)
}
