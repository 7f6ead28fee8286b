//! Attention rollout with vision-aware head weighting.
//!
//! Each stored layer is reduced to one `N x N` transition matrix: heads are
//! weighted by how strongly they attend to visual tokens, averaged, and mixed
//! with the identity for the residual path. Layers are then chained by matrix
//! product. All accumulation is done in `f64`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{Grid, GroundingMap};
use crate::stack::{AttentionStack, LayerView};

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(alloc::format!(
                "{} values for a {}x{} matrix",
                data.len(),
                n,
                n
            )));
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    pub fn row_sums(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.chunks_exact(self.n).map(|r| r.iter().sum())
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &SquareMatrix) -> Result<SquareMatrix> {
        if self.n != rhs.n {
            return Err(Error::Shape(alloc::format!(
                "matmul of {}x{} by {}x{}",
                self.n,
                self.n,
                rhs.n,
                rhs.n
            )));
        }
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let out_row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(SquareMatrix { n, data: out })
    }

    /// Row vector times matrix: `v * self`.
    pub fn left_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::Shape("vector length differs from matrix size".into()));
        }
        let n = self.n;
        let mut out = vec![0.0; n];
        for (k, &a) in v.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &b) in out.iter_mut().zip(&self.data[k * n..(k + 1) * n]) {
                *o += a * b;
            }
        }
        Ok(out)
    }

    /// Scales every row to sum to one; all-zero rows become one-hot on the diagonal.
    pub fn renormalize_rows(&mut self) {
        let n = self.n;
        for (i, row) in self.data.chunks_exact_mut(n).enumerate() {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            } else {
                row.iter_mut().for_each(|v| *v = 0.0);
                row[i] = 1.0;
            }
        }
    }
}

/// Per-head weights of one layer, scaled so the largest is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights(Vec<f64>);

impl HeadWeights {
    pub fn uniform(heads: usize) -> Self {
        Self(vec![1.0; heads])
    }

    /// Normalizes raw nonnegative strengths by their maximum.
    ///
    /// All-zero strengths fall back to uniform weights.
    pub fn from_strengths(strengths: Vec<f64>) -> Result<Self> {
        if strengths.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "head strengths must be finite and nonnegative".into(),
            ));
        }
        let max = strengths.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            return Ok(Self::uniform(strengths.len()));
        }
        Ok(Self(strengths.into_iter().map(|w| w / max).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weights heads by their visual attention strength: the per-row maximum
/// over visual key columns, averaged over all query rows.
pub fn head_weights(layer: LayerView<'_>, visual: Range<usize>) -> Result<HeadWeights> {
    if visual.is_empty() {
        return Err(Error::EmptyVisualRange);
    }
    let n = layer.seq_len();
    if visual.end > n {
        return Err(Error::Shape(alloc::format!(
            "visual range {}..{} outside sequence of {}",
            visual.start,
            visual.end,
            n
        )));
    }
    let strengths = (0..layer.heads())
        .map(|h| {
            let total: f64 = (0..n)
                .map(|r| {
                    layer.row(h, r)[visual.clone()]
                        .iter()
                        .fold(0.0f64, |m, &v| m.max(v as f64))
                })
                .sum();
            total / n as f64
        })
        .collect();
    HeadWeights::from_strengths(strengths)
}

/// Weighted head mean `sum_h w_h A_h / sum_h w_h`, optionally renormalized
/// so every row sums to one.
pub fn aggregate_heads(
    layer: LayerView<'_>,
    weights: &HeadWeights,
    renormalize: bool,
) -> Result<SquareMatrix> {
    if weights.len() != layer.heads() {
        return Err(Error::Shape(alloc::format!(
            "{} head weights for {} heads",
            weights.len(),
            layer.heads()
        )));
    }
    let total: f64 = weights.as_slice().iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("head weights sum to zero".into()));
    }
    let n = layer.seq_len();
    let mut data = vec![0.0; n * n];
    for (h, &w) in weights.as_slice().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for r in 0..n {
            let out = &mut data[r * n..(r + 1) * n];
            for (o, &a) in out.iter_mut().zip(layer.row(h, r)) {
                *o += w * a as f64;
            }
        }
    }
    data.iter_mut().for_each(|v| *v /= total);
    let mut m = SquareMatrix { n, data };
    if renormalize {
        m.renormalize_rows();
    }
    Ok(m)
}

/// Residual mixing `(A + I) / 2`.
pub fn residual_mix(a: &SquareMatrix) -> SquareMatrix {
    let mut out = a.clone();
    for v in out.data.iter_mut() {
        *v *= 0.5;
    }
    for i in 0..out.n {
        out.data[i * out.n + i] += 0.5;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutOptions {
    /// Model layer index the rollout starts from.
    pub start_layer: usize,
    /// Restore row stochasticity after weighted head aggregation.
    pub renormalize_rows: bool,
}

impl RolloutOptions {
    pub fn for_stack(stack: &AttentionStack) -> Self {
        Self {
            start_layer: stack.default_start_layer(),
            renormalize_rows: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutMatrix {
    pub matrix: SquareMatrix,
    pub start_layer: usize,
}

/// The per-layer transition matrix: weighted head aggregation, then residual mixing.
pub fn layer_transition(
    layer: LayerView<'_>,
    visual: Range<usize>,
    renormalize: bool,
) -> Result<SquareMatrix> {
    let w = head_weights(layer, visual)?;
    Ok(residual_mix(&aggregate_heads(layer, &w, renormalize)?))
}

fn stored_range(stack: &AttentionStack, start_layer: usize) -> Result<Range<usize>> {
    if start_layer < stack.first_stored_layer || start_layer >= stack.end_layer() {
        return Err(Error::StartLayer {
            start: start_layer,
            first: stack.first_stored_layer,
            end: stack.end_layer(),
        });
    }
    Ok(start_layer - stack.first_stored_layer..stack.num_layers())
}

/// Full rollout `R = A_L * ... * A_start` over the stored layers.
pub fn rollout(stack: &AttentionStack, opts: RolloutOptions) -> Result<RolloutMatrix> {
    stack.validate_layout()?;
    let layers = stored_range(stack, opts.start_layer)?;
    let visual = stack.visual_range();
    let mut r: Option<SquareMatrix> = None;
    for l in layers {
        let a = layer_transition(stack.layer(l), visual.clone(), opts.renormalize_rows)?;
        r = Some(match r {
            None => a,
            Some(prev) => a.matmul(&prev)?,
        });
    }
    Ok(RolloutMatrix {
        // stored_range is never empty
        matrix: r.expect("at least one layer"),
        start_layer: opts.start_layer,
    })
}

/// Row `query` of the rollout matrix, computed as a chain of vector-matrix
/// products from the last layer down. `O(L N^2)` instead of `O(L N^3)`.
pub fn rollout_row(stack: &AttentionStack, query: usize, opts: RolloutOptions) -> Result<Vec<f64>> {
    stack.validate_layout()?;
    if query >= stack.seq_len {
        return Err(Error::Shape(alloc::format!(
            "query {} outside sequence of {}",
            query,
            stack.seq_len
        )));
    }
    let layers = stored_range(stack, opts.start_layer)?;
    let visual = stack.visual_range();
    let mut row: Option<Vec<f64>> = None;
    for l in layers.rev() {
        let a = layer_transition(stack.layer(l), visual.clone(), opts.renormalize_rows)?;
        row = Some(match row {
            None => a.row(query).to_vec(),
            Some(v) => a.left_mul_vec(&v)?,
        });
    }
    Ok(row.expect("at least one layer"))
}

/// Reads the visual columns of rollout row `query_index` as a `(T, Hp, Wp)` map.
pub fn extract_grounding(
    r: &RolloutMatrix,
    query_index: usize,
    visual: Range<usize>,
    grid: Grid,
) -> Result<GroundingMap> {
    if query_index >= r.matrix.n() {
        return Err(Error::Shape("query index outside rollout matrix".into()));
    }
    grounding_from_row(r.matrix.row(query_index), visual, grid)
}

pub fn grounding_from_row(row: &[f64], visual: Range<usize>, grid: Grid) -> Result<GroundingMap> {
    if visual.len() != grid.len() {
        return Err(Error::Shape(alloc::format!(
            "{} visual tokens for grid {}x{}x{}",
            visual.len(),
            grid.frames,
            grid.height,
            grid.width
        )));
    }
    if visual.end > row.len() {
        return Err(Error::Shape("visual range outside rollout row".into()));
    }
    // clamp rounding residue from the f32 inputs
    let values = row[visual].iter().map(|&v| v.max(0.0)).collect();
    GroundingMap::new(grid, values)
}

/// Raw grounding map of a stack: rollout row of its query token over visual tokens.
pub fn stack_grounding(stack: &AttentionStack, opts: RolloutOptions) -> Result<GroundingMap> {
    let row = rollout_row(stack, stack.query_index, opts)?;
    grounding_from_row(&row, stack.visual_range(), stack.grid)
}
