//! Coarse masks straight from the grounding map: Otsu thresholding and
//! nearest-neighbour upscaling to pixel resolution.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::GroundingMap;
use crate::mask::{CellMask, Mask};

pub const DEFAULT_BINS: usize = 256;

/// Histogram bin of `v` among `bins` equal-width bins on `[0, 1]`.
#[inline]
pub fn bin_of(v: f64, bins: usize) -> usize {
    let b = libm::floor(v * bins as f64);
    if b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

/// `a * b` for little-endian u64 limbs.
fn mul_limbs(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; a.len() + b.len()];
    for (i, &x) in a.iter().enumerate() {
        let mut carry = 0u128;
        for (j, &y) in b.iter().enumerate() {
            let cur = out[i + j] as u128 + x as u128 * y as u128 + carry;
            out[i + j] = cur as u64;
            carry = cur >> 64;
        }
        out[i + b.len()] = carry as u64;
    }
    out
}

fn limbs(v: u128) -> [u64; 2] {
    [v as u64, (v >> 64) as u64]
}

fn cmp_limbs(a: &[u64], b: &[u64]) -> core::cmp::Ordering {
    debug_assert_eq!(a.len(), b.len());
    a.iter().rev().cmp(b.iter().rev())
}

/// Between-class variance of a split, kept as the exact fraction
/// `d^2 / (n0 * n1)` (a positive multiple of the usual `w0 w1 (mu0 - mu1)^2`).
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    d: u128,
    n0n1: u128,
}

impl SplitScore {
    fn new(n0: u64, n1: u64, s0: u128, s1: u128) -> Self {
        let a = n1 as u128 * s0;
        let b = n0 as u128 * s1;
        Self {
            d: a.abs_diff(b),
            n0n1: n0 as u128 * n1 as u128,
        }
    }

    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        let lhs = mul_limbs(&mul_limbs(&limbs(self.d), &limbs(self.d)), &limbs(other.n0n1));
        let rhs = mul_limbs(&mul_limbs(&limbs(other.d), &limbs(other.d)), &limbs(self.n0n1));
        cmp_limbs(&lhs, &rhs)
    }
}

/// Otsu threshold over a `bins`-bin histogram on `[0, 1]`.
///
/// Candidates are the interior bin edges `k / bins`; bins below `k` form the
/// low class. Bin centers stand in for values, and the between-class variance
/// is compared in exact integer arithmetic, so ties resolve to the lowest edge.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidParameter(alloc::format!(
            "at least 2 bins required, got {bins}"
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if values.len() > u32::MAX as usize {
        return Err(Error::InvalidParameter("too many values".into()));
    }
    let mut hist = vec![0u64; bins];
    for &v in values {
        hist[bin_of(v, bins)] += 1;
    }
    let n: u64 = values.len() as u64;
    // sum of (2b + 1): twice the bin-center position in bin units
    let total: u128 = hist
        .iter()
        .enumerate()
        .map(|(b, &c)| c as u128 * (2 * b as u128 + 1))
        .sum();
    let mut n0 = 0u64;
    let mut s0 = 0u128;
    let mut best: Option<(usize, SplitScore)> = None;
    for k in 1..bins {
        n0 += hist[k - 1];
        s0 += hist[k - 1] as u128 * (2 * (k - 1) as u128 + 1);
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let score = SplitScore::new(n0, n1, s0, total - s0);
        match &best {
            Some((_, b)) if score.cmp(b) != core::cmp::Ordering::Greater => {}
            _ => best = Some((k, score)),
        }
    }
    best.map(|(k, _)| k as f64 / bins as f64)
        .ok_or(Error::DegenerateHistogram)
}

/// Scope of the Otsu threshold used by [`attn_mask`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum OtsuScope {
    /// One threshold for the whole video, so frames without the object can stay empty.
    #[default]
    Global,
    PerFrame,
}

fn threshold_cells(values: &[f64], out: &mut [bool], bins: usize) {
    match otsu_threshold(values, bins) {
        Ok(thr) => {
            for (o, &v) in out.iter_mut().zip(values) {
                *o = v >= thr;
            }
        }
        Err(_) => out.iter_mut().for_each(|o| *o = false),
    }
}

/// Binary `(T, Hp, Wp)` mask: cells at or above the Otsu threshold.
/// A degenerate map (all values in one bin) yields an empty mask.
pub fn attn_mask(v: &GroundingMap, scope: OtsuScope) -> CellMask {
    attn_mask_with_bins(v, scope, DEFAULT_BINS)
}

pub fn attn_mask_with_bins(v: &GroundingMap, scope: OtsuScope, bins: usize) -> CellMask {
    let g = v.grid();
    let mut data = vec![false; g.len()];
    match scope {
        OtsuScope::Global => threshold_cells(v.values(), &mut data, bins),
        OtsuScope::PerFrame => {
            let n = g.frame_len();
            for (src, dst) in v.values().chunks_exact(n).zip(data.chunks_exact_mut(n)) {
                threshold_cells(src, dst, bins);
            }
        }
    }
    CellMask::from_vec(g, data).expect("grid length")
}

/// Nearest-neighbour upscaling of each cell to `scale = (py, px)` pixels.
///
/// `target` must agree with `grid * scale` to within one cell in each axis.
pub fn mask_upscale(mask: &CellMask, scale: (f64, f64), target: (usize, usize)) -> Result<Vec<Mask>> {
    let g = mask.grid();
    let (h, w) = target;
    let (sy, sx) = scale;
    if !(sy > 0.0 && sx > 0.0) {
        return Err(Error::InvalidParameter("cell scale must be positive".into()));
    }
    if h < g.height || w < g.width {
        return Err(Error::InvalidParameter("upscale target smaller than grid".into()));
    }
    let off_y = (h as f64 - g.height as f64 * sy).abs();
    let off_x = (w as f64 - g.width as f64 * sx).abs();
    if off_y >= sy || off_x >= sx {
        return Err(Error::Shape(alloc::format!(
            "target {}x{} inconsistent with grid {}x{} at {}x{} px per cell",
            h,
            w,
            g.height,
            g.width,
            sy,
            sx
        )));
    }
    let cell_y: Vec<usize> = (0..h)
        .map(|y| ((y as f64 / sy) as usize).min(g.height - 1))
        .collect();
    let cell_x: Vec<usize> = (0..w)
        .map(|x| ((x as f64 / sx) as usize).min(g.width - 1))
        .collect();
    Ok((0..g.frames)
        .map(|t| Mask::from_fn(h, w, |y, x| mask.get(t, cell_y[y], cell_x[x])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn two_levels_split_between_them() {
        let mut values = vec![0.1; 4];
        values.extend([0.9; 4]);
        let thr = otsu_threshold(&values, 256).unwrap();
        assert!(thr > 0.1 && thr <= 0.9, "threshold {thr}");
        let selected: Vec<bool> = values.iter().map(|&v| v >= thr).collect();
        assert_eq!(selected, [false, false, false, false, true, true, true, true]);
        // every edge between the two bins scores the same; lowest wins
        assert_eq!(thr, (bin_of(0.1, 256) + 1) as f64 / 256.0);
    }

    #[test]
    fn single_value_is_degenerate() {
        assert_eq!(otsu_threshold(&[0.4; 10], 256), Err(Error::DegenerateHistogram));
        assert_eq!(otsu_threshold(&[], 256), Err(Error::DegenerateHistogram));
        assert!(otsu_threshold(&[0.1, 0.2], 1).is_err());
    }

    #[test]
    fn bin_edges_are_consistent_with_threshold_compare() {
        for k in 0..256 {
            let edge = k as f64 / 256.0;
            assert_eq!(bin_of(edge, 256), k);
        }
        assert_eq!(bin_of(1.0, 256), 255);
        assert_eq!(bin_of(-0.5, 256), 0);
    }

    #[test]
    fn block_map_masks_the_block() {
        let g = Grid::new(1, 4, 4);
        let mut v = vec![0.0; 16];
        for (y, x) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            v[y * 4 + x] = 1.0;
        }
        let m = attn_mask(&GroundingMap::new(g, v.clone()).unwrap(), OtsuScope::Global);
        let expected: Vec<bool> = v.iter().map(|&x| x == 1.0).collect();
        assert_eq!(m.data(), &expected[..]);
    }

    #[test]
    fn zero_map_gives_empty_masks() {
        let g = Grid::new(3, 2, 2);
        let m = attn_mask(&GroundingMap::zeros(g), OtsuScope::Global);
        assert_eq!(m.count(), 0);
        let m = attn_mask(&GroundingMap::zeros(g), OtsuScope::PerFrame);
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn global_scope_keeps_absent_frames_empty() {
        // object in frames 3..=8 of 12; other frames carry low noise
        let g = Grid::new(12, 3, 3);
        let mut v = vec![0.0; g.len()];
        for t in 0..12 {
            for i in 0..9 {
                v[t * 9 + i] = ((t * 9 + i) % 5) as f64 * 0.02;
            }
            if (3..=8).contains(&t) {
                v[t * 9 + 4] = 0.95;
                v[t * 9 + 5] = 0.85;
            }
        }
        let map = GroundingMap::new(g, v.clone()).unwrap();
        let thr = otsu_threshold(&v, 256).unwrap();
        let m = attn_mask(&map, OtsuScope::Global);
        for t in 0..12 {
            let direct: Vec<bool> = v[t * 9..(t + 1) * 9].iter().map(|&x| x >= thr).collect();
            assert_eq!(m.frame(t), &direct[..]);
            assert_eq!(m.frame_is_empty(t), !(3..=8).contains(&t), "frame {t}");
        }
        // per-frame Otsu invents foreground where the object is absent
        let pf = attn_mask(&map, OtsuScope::PerFrame);
        assert!(!pf.frame_is_empty(0));
    }

    #[test]
    fn upscale_examples() {
        let one = CellMask::from_vec(Grid::new(1, 1, 1), vec![true]).unwrap();
        let up = mask_upscale(&one, (14.0, 14.0), (14, 14)).unwrap();
        assert_eq!(up[0], Mask::full(14, 14));

        let checker = CellMask::from_vec(Grid::new(1, 2, 2), vec![true, false, false, true]).unwrap();
        let up = mask_upscale(&checker, (2.0, 2.0), (4, 4)).unwrap();
        let expected = Mask::from_fn(4, 4, |y, x| (y / 2) == (x / 2));
        assert_eq!(up[0], expected);

        let up = mask_upscale(&checker, (14.0, 14.0), (28, 28)).unwrap();
        assert_eq!(up[0].dims(), (28, 28));
        assert_eq!(up[0].area(), 2 * 14 * 14);

        assert!(mask_upscale(&checker, (14.0, 14.0), (42, 28)).is_err());
    }
}
