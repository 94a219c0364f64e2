//! Block-diagonal empirical Fisher inverse.
//!
//! For each block the inverse of `λI + (1/N) Σ gᵢgᵢᵀ` is accumulated with
//! Sherman–Morrison updates starting from `(1/λ)I`, in stored row order.
//! Blocks are contiguous runs of `B` weights in row-major order; when `d` is
//! not a multiple of `B` the trailing block is shorter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tensorstore::GradientSet;

/// Inverse-diagonal values at or below this are treated as degenerate curvature.
pub const DIAG_FLOOR: f64 = 1e-12;

pub const DEFAULT_BLOCK_SIZE: usize = 64;
pub const DEFAULT_DAMPENING: f64 = 1e-8;
pub const WOODFISHER_DAMPENING: f64 = 1e-6;
pub const MAX_NUM_GRADS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherConfig {
    pub block_size: usize,
    pub dampening: f64,
    /// Upper bound on gradient rows consumed; extra rows are ignored.
    pub num_grads: usize,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            dampening: DEFAULT_DAMPENING,
            num_grads: MAX_NUM_GRADS,
        }
    }
}

impl FisherConfig {
    pub fn new(block_size: usize, dampening: f64, num_grads: usize) -> Result<Self> {
        let cfg = Self {
            block_size,
            dampening,
            num_grads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        if !(self.dampening > 0.0) || !self.dampening.is_finite() {
            return Err(Error::Config(format!(
                "dampening must be positive and finite, got {}",
                self.dampening
            )));
        }
        if self.num_grads == 0 {
            return Err(Error::Config("gradient count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Start offsets and lengths of the blocks covering `0..dim`.
pub fn block_ranges(dim: usize, block_size: usize) -> Vec<std::ops::Range<usize>> {
    (0..dim)
        .step_by(block_size.max(1))
        .map(|start| start..(start + block_size).min(dim))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherBlockInverse {
    blocks: Vec<Matrix>,
    dim: usize,
    config: FisherConfig,
}

impl FisherBlockInverse {
    /// Wraps precomputed blocks; their sizes must tile `0..dim` with `config.block_size`.
    pub fn from_blocks(blocks: Vec<Matrix>, config: FisherConfig) -> Result<Self> {
        config.validate()?;
        let dim: usize = blocks.iter().map(Matrix::dim).sum();
        let expected = block_ranges(dim, config.block_size);
        if expected.len() != blocks.len() || expected.iter().zip(&blocks).any(|(r, b)| r.len() != b.dim()) {
            return Err(Error::Shape(format!(
                "block sizes do not tile dimension {dim} with block size {}",
                config.block_size
            )));
        }
        Ok(Self { blocks, dim, config })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &FisherConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &Matrix {
        &self.blocks[j]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_start(&self, j: usize) -> usize {
        j * self.config.block_size
    }

    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        let start = self.block_start(j);
        start..start + self.blocks[j].dim()
    }

    /// `(block id, index within block)` of a global index.
    pub fn locate(&self, global: usize) -> Result<(usize, usize)> {
        if global >= self.dim {
            return Err(Error::IndexOutOfRange {
                index: global,
                dim: self.dim,
            });
        }
        let b = self.config.block_size;
        Ok((global / b, global % b))
    }

    /// `[F⁻¹]ᵢᵢ` for a global index, without clamping.
    pub fn diag(&self, global: usize) -> Result<f64> {
        let (j, i) = self.locate(global)?;
        Ok(self.blocks[j].diag(i))
    }

    /// Symmetric within `rel_tol` (relative to the block's largest entry) and
    /// strictly positive diagonal.
    pub fn check_invariants(&self, rel_tol: f64) -> bool {
        self.blocks.iter().all(|b| {
            let scale = b.max_abs().max(f64::MIN_POSITIVE);
            b.asymmetry() <= rel_tol * scale && (0..b.dim()).all(|i| b.diag(i) > 0.0)
        })
    }
}

/// Builds the block-diagonal inverse from gradient rows (at most `cfg.num_grads` of them).
pub fn build_fisher_inverse(grads: &GradientSet, cfg: &FisherConfig) -> Result<FisherBlockInverse> {
    cfg.validate()?;
    grads.check_finite()?;
    let n = grads.num_samples().min(cfg.num_grads);
    if n == 0 {
        return Err(Error::Config("no gradient samples".into()));
    }
    let d = grads.dim();
    let ranges = block_ranges(d, cfg.block_size);
    let blocks = ranges
        .par_iter()
        .map(|r| block_inverse(grads, n, r.clone(), cfg.dampening))
        .collect();
    Ok(FisherBlockInverse {
        blocks,
        dim: d,
        config: *cfg,
    })
}

fn block_inverse(grads: &GradientSet, n: usize, range: std::ops::Range<usize>, damp: f64) -> Matrix {
    let b = range.len();
    let mut inv = Matrix::scaled_identity(b, 1.0 / damp);
    let scale = n as f64;
    let mut v = vec![0.0; b];
    for row in grads.rows().take(n) {
        let g = &row[range.clone()];
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = crate::linalg::dot(inv.row(i), g);
        }
        let denom = scale + crate::linalg::dot(g, &v);
        for i in 0..b {
            let vi = v[i] / denom;
            for j in 0..b {
                inv[(i, j)] -= vi * v[j];
            }
        }
    }
    inv
}

/// Removes index `i` from the Fisher underlying `inv`: the result is the inverse of
/// the Fisher with row and column `i` deleted, with row/column `i` zeroed and its
/// diagonal left at the sentinel `0.0` so it can never be eliminated again.
pub fn eliminate_index(inv: &Matrix, i: usize) -> Result<Matrix> {
    let mut out = inv.clone();
    eliminate_in_place(&mut out, i)?;
    Ok(out)
}

pub fn eliminate_in_place(inv: &mut Matrix, i: usize) -> Result<()> {
    if i >= inv.dim() {
        return Err(Error::IndexOutOfRange {
            index: i,
            dim: inv.dim(),
        });
    }
    let pivot = inv.diag(i);
    if !(pivot > DIAG_FLOOR) {
        return Err(Error::DegenerateCurvature { index: i, value: pivot });
    }
    eliminate_with_pivot(inv, i, pivot);
    Ok(())
}

/// Like [`eliminate_in_place`] but clamps the pivot to [`DIAG_FLOOR`] instead of
/// failing. Returns `true` when clamping happened.
pub fn eliminate_clamped(inv: &mut Matrix, i: usize) -> bool {
    let pivot = inv.diag(i);
    let clamped = !(pivot > DIAG_FLOOR);
    eliminate_with_pivot(inv, i, if clamped { DIAG_FLOOR } else { pivot });
    clamped
}

fn eliminate_with_pivot(inv: &mut Matrix, i: usize, pivot: f64) {
    let n = inv.dim();
    let col: Vec<f64> = inv.row(i).to_vec();
    for a in 0..n {
        let ca = col[a] / pivot;
        if ca == 0.0 {
            continue;
        }
        for b in 0..n {
            inv[(a, b)] -= ca * col[b];
        }
    }
    for k in 0..n {
        inv[(i, k)] = 0.0;
        inv[(k, i)] = 0.0;
    }
}
