//! OBS saliency and compensating updates, single-weight and grouped, plus the
//! quadratic loss-increase model evaluated straight from gradient samples.

use crate::error::{Error, Result};
use crate::fisher::{FisherBlockInverse, DIAG_FLOOR};
use crate::linalg::{dot, Cholesky};
use crate::tensorstore::GradientSet;

/// Per-weight score plus where it came from in the block solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencyRecord {
    pub global_index: usize,
    pub score: f64,
    pub block_id: usize,
    pub elim_rank: usize,
}

/// Dense weight delta over the whole layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightUpdate {
    pub delta: Vec<f64>,
}

impl WeightUpdate {
    pub fn zeros(dim: usize) -> Self {
        Self { delta: vec![0.0; dim] }
    }

    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.delta).map(|(a, b)| a + b).collect()
    }

    /// Applies the update, forcing the listed indices to exact zero.
    pub fn apply_pruning(&self, w: &[f64], pruned: &[usize]) -> Vec<f64> {
        let mut out = self.apply(w);
        for &i in pruned {
            out[i] = 0.0;
        }
        out
    }

    /// Indices where the delta is non-zero.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.delta
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
    }
}

#[inline]
pub fn clamp_diag(d: f64) -> f64 {
    if d > DIAG_FLOOR {
        d
    } else {
        DIAG_FLOOR
    }
}

/// `w² / (2 [F⁻¹]ᵢᵢ)` with the diagonal clamped to the numerical floor.
#[inline]
pub fn single_score(w: f64, inv_diag: f64) -> f64 {
    w * w / (2.0 * clamp_diag(inv_diag))
}

fn check_weights(w: &[f64], inv: &FisherBlockInverse) -> Result<()> {
    if w.len() != inv.dim() {
        return Err(Error::Shape(format!(
            "{} weights against a Fisher inverse of dimension {}",
            w.len(),
            inv.dim()
        )));
    }
    Ok(())
}

pub fn saliency_single(w: &[f64], inv: &FisherBlockInverse, i: usize) -> Result<f64> {
    check_weights(w, inv)?;
    let d = inv.diag(i)?;
    Ok(single_score(w[i], d))
}

/// `δw = −(wᵢ / [F⁻¹]ᵢᵢ) F⁻¹ eᵢ`; the pruned coordinate is set to exactly `−wᵢ`.
pub fn update_single(w: &[f64], inv: &FisherBlockInverse, i: usize) -> Result<WeightUpdate> {
    check_weights(w, inv)?;
    let (j, local) = inv.locate(i)?;
    let block = inv.block(j);
    let coef = w[i] / clamp_diag(block.diag(local));
    let start = inv.block_start(j);
    let mut up = WeightUpdate::zeros(w.len());
    for (k, v) in block.row(local).iter().enumerate() {
        up.delta[start + k] = -coef * v;
    }
    up.delta[i] = -w[i];
    Ok(up)
}

/// Validates a within-block group and returns (block id, local indices).
fn group_block(inv: &FisherBlockInverse, q: &[usize]) -> Result<(usize, Vec<usize>)> {
    let first = *q
        .first()
        .ok_or_else(|| Error::Config("group must be non-empty".into()))?;
    let (block, _) = inv.locate(first)?;
    let mut local = Vec::with_capacity(q.len());
    for &g in q {
        let (b, l) = inv.locate(g)?;
        if b != block {
            return Err(Error::Config(format!(
                "group spans blocks {block} and {b}; use the cross-block wrappers"
            )));
        }
        if local.contains(&l) {
            return Err(Error::Config(format!("index {g} repeated in group")));
        }
        local.push(l);
    }
    Ok((block, local))
}

fn group_solve(w: &[f64], inv: &FisherBlockInverse, q: &[usize]) -> Result<(usize, Vec<usize>, Vec<f64>, f64)> {
    check_weights(w, inv)?;
    let (block, local) = group_block(inv, q)?;
    let sub = inv.block(block).principal(&local);
    let chol = Cholesky::factor(&sub)?;
    let wq: Vec<f64> = q.iter().map(|&g| w[g]).collect();
    let z = chol.solve(&wq);
    let rho = 0.5 * dot(&wq, &z);
    Ok((block, local, z, rho))
}

/// `½ w_Qᵀ ([F⁻¹]_[Q,Q])⁻¹ w_Q` for a group inside one block.
pub fn saliency_group(w: &[f64], inv: &FisherBlockInverse, q: &[usize]) -> Result<f64> {
    group_solve(w, inv, q).map(|(.., rho)| rho)
}

/// `δw = −F⁻¹ E_Qᵀ ([F⁻¹]_[Q,Q])⁻¹ w_Q`; coordinates in `Q` are set to exactly `−w_Q`.
pub fn update_group(w: &[f64], inv: &FisherBlockInverse, q: &[usize]) -> Result<WeightUpdate> {
    let (block, local, z, _) = group_solve(w, inv, q)?;
    let m = inv.block(block);
    let start = inv.block_start(block);
    let mut up = WeightUpdate::zeros(w.len());
    for r in 0..m.dim() {
        let row = m.row(r);
        let s: f64 = local.iter().zip(&z).map(|(&l, zl)| row[l] * zl).sum();
        up.delta[start + r] = -s;
    }
    for &g in q {
        up.delta[g] = -w[g];
    }
    Ok(up)
}

fn split_by_block(inv: &FisherBlockInverse, q: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); inv.num_blocks()];
    for &g in q {
        groups[inv.locate(g)?.0].push(g);
    }
    Ok(groups)
}

/// Group saliency for an arbitrary index set: the sum of per-block group saliencies.
pub fn saliency_groups(w: &[f64], inv: &FisherBlockInverse, q: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for g in split_by_block(inv, q)?.iter().filter(|g| !g.is_empty()) {
        total += saliency_group(w, inv, g)?;
    }
    Ok(total)
}

/// Group update for an arbitrary index set; per-block updates have disjoint support.
pub fn update_groups(w: &[f64], inv: &FisherBlockInverse, q: &[usize]) -> Result<WeightUpdate> {
    let mut up = WeightUpdate::zeros(w.len());
    for g in split_by_block(inv, q)?.iter().filter(|g| !g.is_empty()) {
        let part = update_group(w, inv, g)?;
        for i in inv.block_range(inv.locate(g[0])?.0) {
            up.delta[i] = part.delta[i];
        }
    }
    Ok(up)
}

/// `½ δwᵀ F δw` with `F = λI + (1/N) Σ gᵢgᵢᵀ`, evaluated without forming `F`.
pub fn loss_increase(w_before: &[f64], w_after: &[f64], grads: &GradientSet, damp: f64) -> Result<f64> {
    if w_before.len() != w_after.len() || w_before.len() != grads.dim() {
        return Err(Error::Shape(format!(
            "layer `{}`: weights {} / {} against gradients of dimension {}",
            grads.layer(),
            w_before.len(),
            w_after.len(),
            grads.dim()
        )));
    }
    let delta: Vec<f64> = w_after.iter().zip(w_before).map(|(a, b)| a - b).collect();
    let ridge = 0.5 * damp * dot(&delta, &delta);
    let n = grads.num_samples() as f64;
    let data: f64 = grads.rows().map(|g| dot(g, &delta).powi(2)).sum();
    Ok(ridge + data / (2.0 * n))
}

/// [`loss_increase`] under the block-diagonal Fisher a pruner actually sees:
/// blocks of `cfg.block_size`, at most `cfg.num_grads` rows, dampening `cfg.dampening`.
pub fn block_loss_increase(
    w_before: &[f64],
    w_after: &[f64],
    grads: &GradientSet,
    cfg: &crate::fisher::FisherConfig,
) -> Result<f64> {
    cfg.validate()?;
    if w_before.len() != w_after.len() || w_before.len() != grads.dim() {
        return Err(Error::Shape(format!(
            "layer `{}`: weights {} / {} against gradients of dimension {}",
            grads.layer(),
            w_before.len(),
            w_after.len(),
            grads.dim()
        )));
    }
    let delta: Vec<f64> = w_after.iter().zip(w_before).map(|(a, b)| a - b).collect();
    let ridge = 0.5 * cfg.dampening * dot(&delta, &delta);
    let n = grads.num_samples().min(cfg.num_grads);
    if n == 0 {
        return Ok(ridge);
    }
    let ranges = crate::fisher::block_ranges(delta.len(), cfg.block_size);
    let data: f64 = grads
        .rows()
        .take(n)
        .map(|g| {
            ranges
                .iter()
                .map(|r| dot(&g[r.clone()], &delta[r.clone()]).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(ridge + data / (2.0 * n as f64))
}
