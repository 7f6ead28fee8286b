//! Per-layer multi-head attention captured from a multimodal LLM.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Tolerance on attention row sums. Dumps come from 16-bit inference.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Video,
    Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptKind {
    Object,
    Background,
}

/// Attention tensors of the stored layers, each `heads x N x N` in
/// `(head, query row, key column)` order, plus the token layout needed to read
/// a grounding map back out.
///
/// Token layout: visual tokens occupy `visual_start..visual_start + visual_count`
/// in the grid's `(t, y, x)` raster order; every other token is text.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub layers: Vec<Vec<f32>>,
    /// Model layer index of `layers[0]`.
    pub first_stored_layer: usize,
    /// Total decoder layers of the source model, when known.
    pub num_model_layers: Option<usize>,
    pub num_heads: usize,
    pub seq_len: usize,
    pub visual_start: usize,
    pub visual_count: usize,
    pub text_count: usize,
    pub query_index: usize,
    pub grid: Grid,
    pub modality: Modality,
    pub prompt_kind: PromptKind,
    /// Original video frame index; present iff `modality` is `Frame`.
    pub frame_index: Option<usize>,
    pub capture_notes: String,
}

impl AttentionStack {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_len(&self) -> usize {
        self.num_heads * self.seq_len * self.seq_len
    }

    pub fn visual_range(&self) -> core::ops::Range<usize> {
        self.visual_start..self.visual_start + self.visual_count
    }

    /// Index one past the last stored model layer.
    pub fn end_layer(&self) -> usize {
        self.first_stored_layer + self.layers.len()
    }

    /// Rollout start: the middle model layer when the model depth is known,
    /// otherwise the first stored layer.
    pub fn default_start_layer(&self) -> usize {
        match self.num_model_layers {
            Some(n) => (n / 2).max(self.first_stored_layer),
            None => self.first_stored_layer,
        }
    }

    /// Tensor of stored layer `i` viewed as `heads x N x N`.
    pub fn layer(&self, i: usize) -> LayerView<'_> {
        LayerView {
            data: &self.layers[i],
            heads: self.num_heads,
            n: self.seq_len,
        }
    }

    /// Checks shapes, token layout and row stochasticity.
    pub fn validate(&self) -> Result<()> {
        self.validate_layout()?;
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(i) = layer.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(l * self.layer_len() + i));
            }
            let n = self.seq_len;
            for (r, row) in layer.chunks_exact(n).enumerate() {
                let (head, row_idx) = (r / n, r % n);
                if let Some(c) = row.iter().position(|&v| v < 0.0) {
                    return Err(Error::NegativeAttention {
                        layer: l,
                        head,
                        row: row_idx,
                        col: c,
                        value: row[c],
                    });
                }
                let sum: f64 = row.iter().map(|&v| v as f64).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::RowSum {
                        layer: l,
                        head,
                        row: row_idx,
                        sum,
                        tolerance: ROW_SUM_TOLERANCE,
                    });
                }
            }
        }
        Ok(())
    }

    /// Checks everything except tensor values.
    pub fn validate_layout(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidStack(msg));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        if self.num_heads == 0 || self.seq_len == 0 {
            return bad("zero heads or zero sequence length".into());
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.len() != self.layer_len() {
                return bad(alloc::format!(
                    "layer {} holds {} values, expected {}",
                    l,
                    layer.len(),
                    self.layer_len()
                ));
            }
        }
        let expected_frames = match self.modality {
            Modality::Video => self.grid.frames,
            Modality::Frame => 1,
        };
        if self.grid.frames != expected_frames || self.grid.frame_len() == 0 {
            return bad(alloc::format!(
                "grid {}x{}x{} invalid for {:?} input",
                self.grid.frames,
                self.grid.height,
                self.grid.width,
                self.modality
            ));
        }
        if self.visual_count != self.grid.len() {
            return bad(alloc::format!(
                "visual_count {} != grid size {}",
                self.visual_count,
                self.grid.len()
            ));
        }
        if self.visual_start + self.visual_count > self.seq_len {
            return bad("visual tokens extend past the sequence".into());
        }
        if self.visual_count + self.text_count != self.seq_len {
            return bad(alloc::format!(
                "visual_count {} + text_count {} != seq_len {}",
                self.visual_count,
                self.text_count,
                self.seq_len
            ));
        }
        if self.query_index >= self.seq_len || self.visual_range().contains(&self.query_index) {
            return bad(alloc::format!(
                "query_index {} must be a text token",
                self.query_index
            ));
        }
        match (self.modality, self.frame_index) {
            (Modality::Frame, None) => return bad("frame input without frame_index".into()),
            (Modality::Video, Some(_)) => return bad("video input with frame_index".into()),
            _ => {}
        }
        if let Some(n) = self.num_model_layers {
            if self.end_layer() > n {
                return bad(alloc::format!(
                    "stored layers end at {} but the model has {}",
                    self.end_layer(),
                    n
                ));
            }
        }
        Ok(())
    }
}

/// Borrowed `heads x N x N` attention tensor.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    data: &'a [f32],
    heads: usize,
    n: usize,
}

impl<'a> LayerView<'a> {
    pub fn new(data: &'a [f32], heads: usize, n: usize) -> Result<Self> {
        if data.len() != heads * n * n || heads == 0 {
            return Err(Error::Shape(alloc::format!(
                "{} values for {} heads of {}x{}",
                data.len(),
                heads,
                n,
                n
            )));
        }
        Ok(Self { data, heads, n })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, head: usize, row: usize) -> &'a [f32] {
        let start = (head * self.n + row) * self.n;
        &self.data[start..start + self.n]
    }
}
