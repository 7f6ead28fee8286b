use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Token grid of a visual input: frames x patch rows x patch columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub const fn new(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
        }
    }

    pub const fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, t: usize, y: usize, x: usize) -> usize {
        (t * self.height + y) * self.width + x
    }
}

/// How the values of a [`GroundingMap`] have been scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Normalization {
    Raw,
    PerFrame,
    Global,
}

/// Real-valued attention field over a `(T, Hp, Wp)` token grid.
///
/// `scale` is the pixel size `(y, x)` of one token cell in the original frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingMap {
    grid: Grid,
    values: Vec<f64>,
    pub normalization: Normalization,
    pub scale: (f64, f64),
}

impl GroundingMap {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Shape("grounding map grid has a zero dimension".into()));
        }
        if values.len() != grid.len() {
            return Err(Error::Shape(alloc::format!(
                "{} values for grid {}x{}x{}",
                values.len(),
                grid.frames,
                grid.height,
                grid.width
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            grid,
            values,
            normalization: Normalization::Raw,
            scale: (1.0, 1.0),
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            normalization: Normalization::Raw,
            scale: (1.0, 1.0),
        }
    }

    pub fn with_scale(mut self, scale: (f64, f64)) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> f64 {
        self.values[self.grid.index(t, y, x)]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.grid.frame_len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.frame_len())
    }

    /// Replaces the values, keeping grid, scale and normalization tag.
    pub(crate) fn map_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            grid: self.grid,
            values,
            normalization: self.normalization,
            scale: self.scale,
        }
    }

    /// Stacks single-frame maps along the time axis.
    pub fn stack_frames(maps: &[GroundingMap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Shape("no frame maps to stack".into()))?;
        let g = first.grid;
        let mut values = Vec::with_capacity(g.len() * maps.len());
        let mut frames = 0;
        for m in maps {
            if m.grid.height != g.height || m.grid.width != g.width {
                return Err(Error::Shape(alloc::format!(
                    "frame map {}x{} differs from {}x{}",
                    m.grid.height,
                    m.grid.width,
                    g.height,
                    g.width
                )));
            }
            frames += m.grid.frames;
            values.extend_from_slice(&m.values);
        }
        Ok(Self {
            grid: Grid::new(frames, g.height, g.width),
            values,
            normalization: first.normalization,
            scale: first.scale,
        })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index `(t, y, x)` of the largest value; the first one in raster order on ties.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        let n = self.grid.frame_len();
        (best / n, (best % n) / self.grid.width, best % self.grid.width)
    }
}
