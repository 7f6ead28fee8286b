//! 8-bit single-channel PNG frames: label videos, ground truth, mask output.

use std::fs;
use std::path::{Path, PathBuf};

use decaf_core::mask::Mask;
use decaf_core::segmenter::LabelVideo;
use image::{GrayImage, ImageFormat};

#[derive(Debug, thiserror::Error)]
pub enum FramesError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

/// PNG files in `dir`, sorted by file name.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>, FramesError> {
    let io = |source| FramesError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads an 8-bit grayscale PNG as `(height, width, pixels)`.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>), FramesError> {
    let img = image::open(path).map_err(|source| FramesError::Image {
        path: path.to_owned(),
        source,
    })?;
    let img = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(FramesError::Invalid {
                path: path.to_owned(),
                message: format!("expected 8-bit single-channel PNG, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

pub fn write_gray(path: &Path, height: usize, width: usize, pixels: Vec<u8>) -> Result<(), FramesError> {
    let img = GrayImage::from_raw(width as u32, height as u32, pixels).ok_or_else(|| {
        FramesError::Invalid {
            path: path.to_owned(),
            message: "pixel buffer does not match dimensions".into(),
        }
    })?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| FramesError::Image {
            path: path.to_owned(),
            source,
        })
}

/// Binary mask as 0/255.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), FramesError> {
    let pixels = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray(path, mask.height(), mask.width(), pixels)
}

/// One frame of a label video, `0` = background.
pub fn read_label_frames(dir: &Path) -> Result<(usize, usize, Vec<Vec<u8>>), FramesError> {
    let files = png_files(dir)?;
    if files.is_empty() {
        return Err(FramesError::Invalid {
            path: dir.to_owned(),
            message: "no PNG frames".into(),
        });
    }
    let mut dims = None;
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        let (h, w, px) = read_gray(f)?;
        if *dims.get_or_insert((h, w)) != (h, w) {
            return Err(FramesError::Invalid {
                path: f.clone(),
                message: "frame size differs from the first frame".into(),
            });
        }
        frames.push(px);
    }
    let (h, w) = dims.expect("non-empty");
    Ok((h, w, frames))
}

pub fn read_label_video(dir: &Path) -> Result<LabelVideo, FramesError> {
    let (h, w, frames) = read_label_frames(dir)?;
    LabelVideo::new(h, w, frames).map_err(|e| FramesError::Invalid {
        path: dir.to_owned(),
        message: e.to_string(),
    })
}

/// Splits label frames into one mask sequence per nonzero id, ascending.
pub fn objects_from_labels(height: usize, width: usize, frames: &[Vec<u8>]) -> Vec<Vec<Mask>> {
    let mut ids: Vec<u8> = frames.iter().flatten().copied().filter(|&v| v != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            frames
                .iter()
                .map(|f| Mask::from_fn(height, width, |y, x| f[y * width + x] == id))
                .collect()
        })
        .collect()
}

pub fn write_label_frames(dir: &Path, height: usize, width: usize, frames: &[Vec<u8>]) -> Result<(), FramesError> {
    fs::create_dir_all(dir).map_err(|source| FramesError::Io {
        path: dir.to_owned(),
        source,
    })?;
    for (t, f) in frames.iter().enumerate() {
        write_gray(&dir.join(format!("{t:05}.png")), height, width, f.clone())?;
    }
    Ok(())
}

