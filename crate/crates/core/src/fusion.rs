//! Decomposed attention fusion.
//!
//! Object and background maps of the same modality are smoothed and
//! subtracted (contrastive fusion), then the coarse video map is upsampled to
//! the frame-map resolution and averaged with the per-frame maps
//! (complementary fusion).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, GroundingMap, Normalization};

/// Default smoothing width, in token cells.
pub const DEFAULT_SIGMA: f64 = 1.0;

/// Unit over which min-max normalization is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    PerFrame,
    Global,
}

impl From<NormMode> for Normalization {
    fn from(m: NormMode) -> Self {
        match m {
            NormMode::PerFrame => Normalization::PerFrame,
            NormMode::Global => Normalization::Global,
        }
    }
}

/// Truncated 1-D Gaussian with radius `ceil(3 sigma)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(alloc::format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let radius = libm::ceil(3.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| libm::exp(-((d * d) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn convolve_line(src: &[f64], dst: &mut [f64], stride: usize, len: usize, kernel: &[f64]) {
    let radius = (kernel.len() / 2) as isize;
    for i in 0..len {
        let mut acc = 0.0;
        for (k, &w) in kernel.iter().enumerate() {
            let j = reflect(i as isize + k as isize - radius, len);
            acc += w * src[j * stride];
        }
        dst[i * stride] = acc;
    }
}

/// Per-frame separable Gaussian blur with reflective borders.
pub fn gaussian_smooth(map: &GroundingMap, sigma: f64) -> Result<GroundingMap> {
    let kernel = gaussian_kernel(sigma)?;
    let g = map.grid();
    let (h, w) = (g.height, g.width);
    let mut out = vec![0.0; g.len()];
    let mut tmp = vec![0.0; g.frame_len()];
    for (t, frame) in map.frames().enumerate() {
        for y in 0..h {
            convolve_line(&frame[y * w..], &mut tmp[y * w..], 1, w, &kernel);
        }
        let dst = &mut out[t * g.frame_len()..(t + 1) * g.frame_len()];
        for x in 0..w {
            convolve_line(&tmp[x..], &mut dst[x..], w, h, &kernel);
        }
    }
    Ok(map.map_values(out))
}

fn normalize_slice(src: &[f64], dst: &mut [f64]) {
    let (lo, hi) = src
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if !(span > 0.0) {
        dst.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = ((s - lo) / span).clamp(0.0, 1.0);
    }
}

/// Min-max scaling to `[0, 1]`; a constant normalization unit becomes all zeros.
pub fn minmax_normalize(map: &GroundingMap, mode: NormMode) -> GroundingMap {
    let mut out = vec![0.0; map.values().len()];
    match mode {
        NormMode::Global => normalize_slice(map.values(), &mut out),
        NormMode::PerFrame => {
            let n = map.grid().frame_len();
            for (src, dst) in map.values().chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                normalize_slice(src, dst);
            }
        }
    }
    map.map_values(out).with_normalization(mode.into())
}

fn check_same_grid(a: &GroundingMap, b: &GroundingMap, what: &str) -> Result<()> {
    if a.grid() != b.grid() {
        let (ga, gb) = (a.grid(), b.grid());
        return Err(Error::Shape(alloc::format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
            ga.frames,
            ga.height,
            ga.width,
            gb.frames,
            gb.height,
            gb.width
        )));
    }
    Ok(())
}

/// Object minus background, clamped at zero; the result before normalization.
pub fn contrast_clamped(obj: &GroundingMap, bg: &GroundingMap) -> Result<GroundingMap> {
    check_same_grid(obj, bg, "contrastive fusion")?;
    let values = obj
        .values()
        .iter()
        .zip(bg.values())
        .map(|(&o, &b)| (o - b).max(0.0))
        .collect();
    Ok(obj.map_values(values).with_normalization(Normalization::Raw))
}

/// `normalize(max(obj - bg, 0))`.
pub fn contrastive_fuse(obj: &GroundingMap, bg: &GroundingMap, mode: NormMode) -> Result<GroundingMap> {
    Ok(minmax_normalize(&contrast_clamped(obj, bg)?, mode))
}

fn bilinear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let s = (dst as f64 + 0.5) * (src_len as f64 / dst_len as f64) - 0.5;
    let s = s.clamp(0.0, (src_len - 1) as f64);
    let i0 = libm::floor(s) as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Per-frame bilinear upsampling with cell-center sampling (`align_corners = false`).
pub fn upsample_bilinear(map: &GroundingMap, target: (usize, usize)) -> Result<GroundingMap> {
    let g = map.grid();
    let (th, tw) = target;
    if th < g.height || tw < g.width {
        return Err(Error::InvalidParameter(alloc::format!(
            "cannot upsample {}x{} to smaller {}x{}",
            g.height,
            g.width,
            th,
            tw
        )));
    }
    let out_grid = Grid::new(g.frames, th, tw);
    let ys: Vec<_> = (0..th).map(|y| bilinear_taps(y, g.height, th)).collect();
    let xs: Vec<_> = (0..tw).map(|x| bilinear_taps(x, g.width, tw)).collect();
    let mut values = Vec::with_capacity(out_grid.len());
    for frame in map.frames() {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let at = |y: usize, x: usize| frame[y * g.width + x];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                values.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    let scale = (
        map.scale.0 * g.height as f64 / th as f64,
        map.scale.1 * g.width as f64 / tw as f64,
    );
    Ok(GroundingMap::new(out_grid, values)?
        .with_scale(scale)
        .with_normalization(map.normalization))
}

/// Weighted mean `video_weight * video + (1 - video_weight) * frames`.
pub fn complementary_fuse(
    video: &GroundingMap,
    frames: &GroundingMap,
    video_weight: f64,
) -> Result<GroundingMap> {
    if !(0.0..=1.0).contains(&video_weight) {
        return Err(Error::InvalidParameter(alloc::format!(
            "video weight {video_weight} outside [0, 1]"
        )));
    }
    check_same_grid(video, frames, "complementary fusion")?;
    let values = video
        .values()
        .iter()
        .zip(frames.values())
        .map(|(&v, &f)| video_weight * v + (1.0 - video_weight) * f)
        .collect();
    Ok(frames.map_values(values))
}

/// Which modalities contribute to the fused map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modalities {
    Both,
    VideoOnly,
    FrameOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub sigma: f64,
    pub contrastive: bool,
    pub modalities: Modalities,
    pub video_norm: NormMode,
    pub frame_norm: NormMode,
    pub video_weight: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            contrastive: true,
            modalities: Modalities::Both,
            video_norm: NormMode::Global,
            frame_norm: NormMode::PerFrame,
            video_weight: 0.5,
        }
    }
}

/// Raw rollout maps of one video. Frame maps are stacked along time in
/// sampled-frame order. Background maps are only needed for contrastive fusion.
#[derive(Debug, Clone, Default)]
pub struct FusionInputs {
    pub video_object: Option<GroundingMap>,
    pub video_background: Option<GroundingMap>,
    pub frame_object: Option<GroundingMap>,
    pub frame_background: Option<GroundingMap>,
}

fn fuse_modality(
    obj: Option<&GroundingMap>,
    bg: Option<&GroundingMap>,
    cfg: &FusionConfig,
    mode: NormMode,
    name: &str,
) -> Result<GroundingMap> {
    let obj = obj.ok_or_else(|| Error::InvalidParameter(alloc::format!("missing {name} object map")))?;
    let obj = gaussian_smooth(obj, cfg.sigma)?;
    if !cfg.contrastive {
        return Ok(minmax_normalize(&obj, mode));
    }
    let bg = bg.ok_or_else(|| Error::InvalidParameter(alloc::format!("missing {name} background map")))?;
    contrastive_fuse(&obj, &gaussian_smooth(bg, cfg.sigma)?, mode)
}

/// Full fusion of the raw maps into the grounding map `V`.
pub fn fuse(inputs: &FusionInputs, cfg: &FusionConfig) -> Result<GroundingMap> {
    let video = || {
        fuse_modality(
            inputs.video_object.as_ref(),
            inputs.video_background.as_ref(),
            cfg,
            cfg.video_norm,
            "video",
        )
    };
    let frame = || {
        fuse_modality(
            inputs.frame_object.as_ref(),
            inputs.frame_background.as_ref(),
            cfg,
            cfg.frame_norm,
            "frame",
        )
    };
    match cfg.modalities {
        Modalities::VideoOnly => video(),
        Modalities::FrameOnly => frame(),
        Modalities::Both => {
            let v = video()?;
            let f = frame()?;
            if v.grid().frames != f.grid().frames {
                return Err(Error::Shape(alloc::format!(
                    "video map has {} frames, frame maps {}",
                    v.grid().frames,
                    f.grid().frames
                )));
            }
            let up = upsample_bilinear(&v, (f.grid().height, f.grid().width))?;
            complementary_fuse(&up, &f, cfg.video_weight)
        }
    }
}
