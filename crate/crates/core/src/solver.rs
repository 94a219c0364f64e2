//! Greedy one-at-a-time OBS elimination per Fisher block, followed by a global
//! merge of the cumulative scores.
//!
//! Each block is solved to exhaustion on its own: at every step the live weight
//! with the smallest single-weight saliency is removed, the rest of the block is
//! compensated, and the block inverse is updated to exclude it. The running sum of
//! step saliencies becomes the global score of the removed weight. Because these
//! sums never decrease within a block, taking the `k` globally smallest scores
//! always selects a prefix of every block's elimination order, so the saved block
//! state after that prefix is the pruned block.
//!
//! Weights that are not selectable (not prunable, or already pruned) are removed
//! from the block inverse up front without touching their values. That restricts
//! the quadratic model to the selectable coordinates, so compensations never
//! alter fixed weights.

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fisher::{eliminate_clamped, FisherBlockInverse};
use crate::layers::Layer;
use crate::linalg::Matrix;
use crate::obs::{clamp_diag, single_score, SaliencyRecord};

/// Outcome of exhausting one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub block_id: usize,
    /// Within-block indices in elimination order.
    pub order: Vec<usize>,
    /// Cumulative saliency after each elimination.
    pub cumulative: Vec<f64>,
    /// Block weights after each elimination and its compensation.
    pub states: Vec<Vec<f64>>,
    /// Pivots that fell below the numerical floor and were clamped.
    pub clamped: usize,
}

impl BlockTrace {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Per-group cap on eliminations inside a block, for N:M patterns.
#[derive(Debug, Clone)]
struct GroupCap {
    group: usize,
    max_zeros: usize,
    zeros: Vec<usize>,
}

fn greedy(
    block_id: usize,
    w_block: &[f64],
    inv_block: &Matrix,
    selectable: &[bool],
    mut cap: Option<GroupCap>,
) -> BlockTrace {
    let b = w_block.len();
    debug_assert_eq!(inv_block.dim(), b);
    debug_assert_eq!(selectable.len(), b);
    let mut inv = inv_block.clone();
    let mut w = w_block.to_vec();
    let mut live = selectable.to_vec();
    let mut clamped = 0;
    for i in (0..b).filter(|&i| !selectable[i]) {
        clamped += usize::from(eliminate_clamped(&mut inv, i));
    }
    let steps = live.iter().filter(|&&l| l).count();
    let mut trace = BlockTrace {
        block_id,
        order: Vec::with_capacity(steps),
        cumulative: Vec::with_capacity(steps),
        states: Vec::with_capacity(steps),
        clamped,
    };
    let mut err = 0.0f64;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..b {
            if !live[i] {
                continue;
            }
            if let Some(c) = &cap {
                if c.zeros[i / c.group] >= c.max_zeros {
                    continue;
                }
            }
            let s = single_score(w[i], inv.diag(i));
            // strict < keeps the lowest index on ties
            if best.is_none_or(|(_, bs)| s < bs) {
                best = Some((i, s));
            }
        }
        let Some((i, rho)) = best else { break };
        let coef = w[i] / clamp_diag(inv.diag(i));
        let col = inv.row(i);
        for k in 0..b {
            w[k] -= coef * col[k];
        }
        w[i] = 0.0;
        err += rho;
        trace.order.push(i);
        trace.cumulative.push(err);
        trace.states.push(w.clone());
        live[i] = false;
        if let Some(c) = cap.as_mut() {
            c.zeros[i / c.group] += 1;
        }
        trace.clamped += usize::from(eliminate_clamped(&mut inv, i));
    }
    trace
}

/// Exhausts one block: eliminates every selectable index in greedy order.
pub fn solve_block(block_id: usize, w_block: &[f64], inv_block: &Matrix, selectable: &[bool]) -> BlockTrace {
    greedy(block_id, w_block, inv_block, selectable, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerResult {
    pub name: String,
    pub dims: Vec<usize>,
    /// Keep-mask including zeros from earlier steps.
    pub mask: Vec<u8>,
    pub weights: Vec<f64>,
    pub prunable: Vec<bool>,
    /// Predicted loss increase of this step for this layer.
    pub predicted: f64,
    /// Weights newly pruned in this step.
    pub newly_pruned: usize,
}

impl LayerResult {
    /// Unchanged copy of a layer.
    pub fn identity(layer: &Layer) -> Self {
        Self {
            name: layer.name.clone(),
            dims: layer.dims.clone(),
            mask: layer.mask.clone(),
            weights: layer.weights.clone(),
            prunable: layer.prunable.clone(),
            predicted: 0.0,
            newly_pruned: 0,
        }
    }

    pub fn to_layer(&self) -> Layer {
        Layer {
            name: self.name.clone(),
            dims: self.dims.clone(),
            weights: self.weights.clone(),
            prunable: self.prunable.clone(),
            mask: self.mask.clone(),
        }
    }

    pub fn zeros(&self) -> usize {
        self.prunable
            .iter()
            .zip(&self.mask)
            .filter(|(&p, &m)| p && m == 0)
            .count()
    }

    pub fn sparsity(&self) -> f64 {
        let p = self.prunable.iter().filter(|&&p| p).count();
        if p == 0 {
            0.0
        } else {
            self.zeros() as f64 / p as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub layers: Vec<LayerResult>,
    pub predicted_loss_increase: f64,
    /// Clamped pivots encountered (degenerate curvature warnings).
    pub clamped: usize,
}

impl PruneResult {
    pub fn from_layers(layers: Vec<LayerResult>, clamped: usize) -> Self {
        let predicted_loss_increase = layers.iter().map(|l| l.predicted).sum();
        Self {
            layers,
            predicted_loss_increase,
            clamped,
        }
    }

    pub fn mask(&self) -> Vec<u8> {
        self.layers.iter().flat_map(|l| l.mask.iter().copied()).collect()
    }

    pub fn new_weights(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().copied()).collect()
    }

    pub fn per_layer_sparsity(&self) -> IndexMap<String, f64> {
        self.layers.iter().map(|l| (l.name.clone(), l.sparsity())).collect()
    }

    pub fn zeros(&self) -> usize {
        self.layers.iter().map(LayerResult::zeros).sum()
    }

    pub fn newly_pruned(&self) -> usize {
        self.layers.iter().map(|l| l.newly_pruned).sum()
    }

    pub fn sparsity(&self) -> f64 {
        let p: usize = self
            .layers
            .iter()
            .map(|l| l.prunable.iter().filter(|&&p| p).count())
            .sum();
        if p == 0 {
            0.0
        } else {
            self.zeros() as f64 / p as f64
        }
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers.iter().map(LayerResult::to_layer).collect()
    }

    pub fn concat(parts: Vec<PruneResult>) -> Self {
        let clamped = parts.iter().map(|p| p.clamped).sum();
        Self::from_layers(parts.into_iter().flat_map(|p| p.layers).collect(), clamped)
    }
}

fn check_inverse(layer: &Layer, inv: &FisherBlockInverse) -> Result<()> {
    if inv.dim() != layer.len() {
        return Err(Error::Shape(format!(
            "layer `{}`: {} weights against Fisher inverse of dimension {}",
            layer.name,
            layer.len(),
            inv.dim()
        )));
    }
    Ok(())
}

struct Task<'a> {
    layer: usize,
    block: usize,
    range: std::ops::Range<usize>,
    inv: &'a Matrix,
}

fn block_tasks<'a>(layers: &[Layer], inverses: &[Option<&'a FisherBlockInverse>]) -> Result<Vec<Task<'a>>> {
    if layers.len() != inverses.len() {
        return Err(Error::Shape("one Fisher inverse slot per layer required".into()));
    }
    let mut tasks = Vec::new();
    for (li, (layer, inv)) in layers.iter().zip(inverses).enumerate() {
        let has_live = layer.selectable().iter().any(|&s| s);
        match inv {
            Some(inv) => {
                check_inverse(layer, inv)?;
                for j in 0..inv.num_blocks() {
                    tasks.push(Task {
                        layer: li,
                        block: j,
                        range: inv.block_range(j),
                        inv: inv.block(j),
                    });
                }
            }
            None if has_live => {
                return Err(Error::MissingGradients {
                    layer: layer.name.clone(),
                })
            }
            None => {}
        }
    }
    Ok(tasks)
}

/// Global greedy pruning across layers: `k` new zeros among selectable weights,
/// chosen by ascending (cumulative score, global index).
pub fn solve_global_layers(
    layers: &[Layer],
    inverses: &[Option<&FisherBlockInverse>],
    k: usize,
) -> Result<PruneResult> {
    let available: usize = layers
        .iter()
        .map(|l| l.selectable().iter().filter(|&&s| s).count())
        .sum();
    if k > available {
        return Err(Error::TargetTooLarge {
            requested: k,
            available,
        });
    }
    let tasks = block_tasks(layers, inverses)?;
    let traces: Vec<BlockTrace> = tasks
        .par_iter()
        .map(|t| {
            let layer = &layers[t.layer];
            let sel = layer.selectable();
            solve_block(t.block, &layer.weights[t.range.clone()], t.inv, &sel[t.range.clone()])
        })
        .collect();

    let offsets: Vec<usize> = layers
        .iter()
        .scan(0usize, |acc, l| {
            let o = *acc;
            *acc += l.len();
            Some(o)
        })
        .collect();
    let mut records: Vec<(SaliencyRecord, usize)> = Vec::with_capacity(available);
    for (ti, (task, trace)) in tasks.iter().zip(&traces).enumerate() {
        for (rank, (&local, &score)) in trace.order.iter().zip(&trace.cumulative).enumerate() {
            records.push((
                SaliencyRecord {
                    global_index: offsets[task.layer] + task.range.start + local,
                    score,
                    block_id: task.block,
                    elim_rank: rank,
                },
                ti,
            ));
        }
    }
    records.sort_by(|(a, _), (b, _)| a.score.total_cmp(&b.score).then(a.global_index.cmp(&b.global_index)));

    let mut take = vec![0usize; tasks.len()];
    let mut chosen: Vec<Vec<f64>> = vec![Vec::new(); tasks.len()];
    for (rec, ti) in records.iter().take(k) {
        take[*ti] += 1;
        chosen[*ti].push(rec.score);
    }
    for (ti, trace) in traces.iter().enumerate() {
        assert!(
            trace.cumulative.windows(2).all(|p| p[0] <= p[1]),
            "cumulative scores decreased in block {}",
            trace.block_id
        );
        // Ties aside, the selection must be exactly the prefix of the block order.
        let mut got = std::mem::take(&mut chosen[ti]);
        got.sort_by(f64::total_cmp);
        assert!(
            got.iter()
                .zip(&trace.cumulative)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "selection in block {} is not a prefix of its elimination order",
            trace.block_id
        );
    }

    let mut out: Vec<LayerResult> = layers.iter().map(LayerResult::identity).collect();
    let mut clamped = 0;
    for ((task, trace), &t) in tasks.iter().zip(&traces).zip(&take) {
        clamped += trace.clamped;
        if t == 0 {
            continue;
        }
        let res = &mut out[task.layer];
        res.weights[task.range.clone()].copy_from_slice(&trace.states[t - 1]);
        for &local in &trace.order[..t] {
            res.mask[task.range.start + local] = 0;
        }
        res.predicted += trace.cumulative[t - 1];
        res.newly_pruned += t;
    }
    Ok(PruneResult::from_layers(out, clamped))
}

/// Single-layer form: `k` zeros among `prunable` positions of `w`.
pub fn solve_global(w: &[f64], inv: &FisherBlockInverse, k: usize, prunable: &[bool]) -> Result<PruneResult> {
    if prunable.len() != w.len() {
        return Err(Error::Shape("prunable mask length differs from weights".into()));
    }
    let layer = Layer::flat("0", w.to_vec()).with_prunable(prunable.to_vec());
    solve_global_layers(std::slice::from_ref(&layer), &[Some(inv)], k)
}

/// Checks that N:M groups line up with the layer and its Fisher blocks.
pub fn check_nm(layer: &Layer, n: usize, m: usize, block_size: Option<usize>) -> Result<()> {
    let bad = |reason: String| Error::Pattern {
        layer: layer.name.clone(),
        reason,
    };
    if m == 0 || n >= m {
        return Err(Error::Config(format!("invalid N:M pattern {n}:{m} (need n < m)")));
    }
    if !layer.len().is_multiple_of(m) {
        return Err(bad(format!(
            "{} weights are not divisible into groups of {m}",
            layer.len()
        )));
    }
    if let Some(bs) = block_size {
        if bs < layer.len() && bs % m != 0 {
            return Err(bad(format!("block size {bs} is not a multiple of group size {m}")));
        }
    }
    for (g, chunk) in layer.prunable.chunks(m).enumerate() {
        let start = g * m;
        let prunable = chunk.iter().filter(|&&p| p).count();
        let already = (start..start + m)
            .filter(|&i| layer.prunable[i] && layer.mask[i] == 0)
            .count();
        if prunable < m - n {
            return Err(bad(format!(
                "group {g} has only {prunable} prunable weights, needs {}",
                m - n
            )));
        }
        if already > m - n {
            return Err(bad(format!(
                "group {g} already has {already} zeros, pattern allows {}",
                m - n
            )));
        }
    }
    Ok(())
}

/// N:M-constrained greedy pruning: every group of `m` consecutive weights ends
/// with exactly `m - n` zeros. A weight is never selected once its group is full.
pub fn solve_nm_layers(
    layers: &[Layer],
    inverses: &[Option<&FisherBlockInverse>],
    n: usize,
    m: usize,
) -> Result<PruneResult> {
    for (l, inv) in layers.iter().zip(inverses) {
        check_nm(l, n, m, inv.map(|i| i.config().block_size))?;
    }
    let tasks = block_tasks(layers, inverses)?;
    let traces: Vec<BlockTrace> = tasks
        .par_iter()
        .map(|t| {
            let layer = &layers[t.layer];
            let sel = layer.selectable();
            let r = t.range.clone();
            let zeros = (r.start..r.end)
                .step_by(m)
                .map(|g| (g..g + m).filter(|&i| layer.prunable[i] && layer.mask[i] == 0).count())
                .collect();
            let cap = GroupCap {
                group: m,
                max_zeros: m - n,
                zeros,
            };
            greedy(t.block, &layer.weights[r.clone()], t.inv, &sel[r], Some(cap))
        })
        .collect();
    let mut out: Vec<LayerResult> = layers.iter().map(LayerResult::identity).collect();
    let mut clamped = 0;
    for (task, trace) in tasks.iter().zip(&traces) {
        clamped += trace.clamped;
        let Some(last) = trace.states.last() else { continue };
        let res = &mut out[task.layer];
        res.weights[task.range.clone()].copy_from_slice(last);
        for &local in &trace.order {
            res.mask[task.range.start + local] = 0;
        }
        res.predicted += trace.total();
        res.newly_pruned += trace.len();
    }
    Ok(PruneResult::from_layers(out, clamped))
}

pub fn solve_nm(w: &[f64], inv: &FisherBlockInverse, n: usize, m: usize, prunable: &[bool]) -> Result<PruneResult> {
    if prunable.len() != w.len() {
        return Err(Error::Shape("prunable mask length differs from weights".into()));
    }
    let layer = Layer::flat("0", w.to_vec()).with_prunable(prunable.to_vec());
    solve_nm_layers(std::slice::from_ref(&layer), &[Some(inv)], n, m)
}

/// Number of N:M groups whose zero count differs from `m - n`.
pub fn nm_violations(mask: &[u8], n: usize, m: usize) -> usize {
    mask.chunks(m)
        .filter(|g| g.len() != m || g.iter().filter(|&&v| v == 0).count() != m - n)
        .count()
}
