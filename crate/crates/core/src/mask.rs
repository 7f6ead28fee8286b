//! Binary masks at pixel resolution ([`Mask`]) and at token resolution ([`CellMask`]).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Row-major `H x W` binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(alloc::format!(
                "{} mask pixels for {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// `(|a & b|, |a | b|)`.
    pub fn overlap(&self, other: &Mask) -> Result<(usize, usize)> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(alloc::format!(
                "mask {}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            )));
        }
        let mut inter = 0;
        let mut union = 0;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok((inter, union))
    }

    /// Intersection over union; 0 when both masks are empty.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        let (inter, union) = self.overlap(other)?;
        Ok(if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        })
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape("union of masks with different sizes".into()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }
}

/// Binary mask over a `(T, Hp, Wp)` token grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellMask {
    grid: Grid,
    data: Vec<bool>,
}

impl CellMask {
    pub fn empty(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![false; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(alloc::format!(
                "{} cells for grid of {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.data[self.grid.index(t, y, x)]
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        let n = self.grid.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn frame_is_empty(&self, t: usize) -> bool {
        !self.frame(t).iter().any(|&b| b)
    }

    /// Single-frame pixel mask of cell layer `t` at one pixel per cell.
    pub fn frame_mask(&self, t: usize) -> Mask {
        Mask {
            height: self.grid.height,
            width: self.grid.width,
            data: self.frame(t).to_vec(),
        }
    }
}
