//! Pruner front-ends: global magnitude (GM), correlation-ignoring OBS (WF), and
//! the greedy block solver (oViT), plus multi-step recomputation.
//!
//! Sparsity targets are fractions of prunable weights and count weights pruned by
//! earlier steps, so a target of 0.5 on a layer that is already 30% sparse prunes
//! another 20%.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{build_fisher_inverse, eliminate_clamped, FisherBlockInverse, FisherConfig, WOODFISHER_DAMPENING};
use crate::layers::{pruned_total, zeros_for, Layer};
use crate::obs::{clamp_diag, loss_increase, single_score};
use crate::solver::{check_nm, solve_global_layers, solve_nm_layers, LayerResult, PruneResult};
use crate::tensorstore::GradientSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gm,
    Wf,
    Ovit,
}

impl Method {
    /// Per-method dampening default.
    pub fn default_dampening(self) -> f64 {
        match self {
            Method::Wf => WOODFISHER_DAMPENING,
            Method::Gm | Method::Ovit => crate::fisher::DEFAULT_DAMPENING,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gm => "gm",
            Method::Wf => "wf",
            Method::Ovit => "ovit",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gm" => Ok(Method::Gm),
            "wf" => Ok(Method::Wf),
            "ovit" => Ok(Method::Ovit),
            other => Err(Error::Config(format!("unknown method `{other}` (gm, wf, ovit)"))),
        }
    }
}

/// What a pruning call should reach. The two forms are mutually exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Fraction of prunable weights that end up zero.
    Sparsity(f64),
    /// Exactly `n` non-zeros in every run of `m` consecutive weights.
    NM { n: usize, m: usize },
}

impl FromStr for Target {
    type Err = Error;
    /// `"0.5"` or `"2:4"`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some((n, m)) = s.split_once(':') {
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad N:M pattern `{s}`")))
            };
            let (n, m) = (parse(n)?, parse(m)?);
            if m == 0 || n >= m {
                return Err(Error::Config(format!("invalid N:M pattern `{s}` (need n < m)")));
            }
            return Ok(Target::NM { n, m });
        }
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad sparsity `{s}`")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("sparsity {v} outside [0, 1]")));
        }
        Ok(Target::Sparsity(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunerSpec {
    pub method: Method,
    pub fisher: FisherConfig,
    /// Number of Fisher recomputations per pruning event.
    pub recomputations: usize,
    /// Uniform per-layer sparsity instead of a global score pool.
    pub per_layer: bool,
}

impl PrunerSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            fisher: FisherConfig {
                dampening: method.default_dampening(),
                ..FisherConfig::default()
            },
            recomputations: 1,
            per_layer: false,
        }
    }

    pub fn with_fisher(mut self, fisher: FisherConfig) -> Self {
        self.fisher = fisher;
        self
    }

    pub fn with_recomputations(mut self, n: usize) -> Self {
        self.recomputations = n;
        self
    }

    pub fn with_per_layer(mut self, per_layer: bool) -> Self {
        self.per_layer = per_layer;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.recomputations == 0 {
            return Err(Error::Config("recomputations must be at least 1".into()));
        }
        if self.method != Method::Gm {
            self.fisher.validate()?;
        }
        Ok(())
    }
}

/// Gradients ordered like `layers`, matched by layer name.
pub fn align_grads<'a>(layers: &[Layer], grads: &'a [GradientSet]) -> Result<Vec<Option<&'a GradientSet>>> {
    layers
        .iter()
        .map(|l| match grads.iter().find(|g| g.layer() == l.name) {
            Some(g) if g.dim() != l.len() => Err(Error::Shape(format!(
                "layer `{}`: gradients have dimension {}, weight has {}",
                l.name,
                g.dim(),
                l.len()
            ))),
            other => Ok(other),
        })
        .collect()
}

fn new_zeros(layers: &[Layer], k_total: usize) -> Result<usize> {
    let already = pruned_total(layers);
    k_total.checked_sub(already).ok_or_else(|| {
        Error::Config(format!(
            "target of {k_total} zeros is below the {already} weights already pruned"
        ))
    })
}

/// Global magnitude pruning to `k` total zeros; no compensation.
pub fn prune_gm(layers: &[Layer], k: usize) -> Result<PruneResult> {
    let k_new = new_zeros(layers, k)?;
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    let mut offset = 0;
    for (li, l) in layers.iter().enumerate() {
        for (i, &s) in l.selectable().iter().enumerate() {
            if s {
                cands.push((l.weights[i].abs(), offset + i, li));
            }
        }
        offset += l.len();
    }
    if k_new > cands.len() {
        return Err(Error::TargetTooLarge {
            requested: k_new,
            available: cands.len(),
        });
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let starts = layer_offsets(layers);
    let mut out: Vec<LayerResult> = layers.iter().map(LayerResult::identity).collect();
    for &(_, g, li) in &cands[..k_new] {
        let i = g - starts[li];
        out[li].weights[i] = 0.0;
        out[li].mask[i] = 0;
        out[li].newly_pruned += 1;
    }
    Ok(PruneResult::from_layers(out, 0))
}

fn layer_offsets(layers: &[Layer]) -> Vec<usize> {
    layers
        .iter()
        .scan(0, |acc, l| {
            let o = *acc;
            *acc += l.len();
            Some(o)
        })
        .collect()
}

/// Magnitude pruning to an N:M pattern.
pub fn prune_gm_nm(layers: &[Layer], n: usize, m: usize) -> Result<PruneResult> {
    let mut out = Vec::with_capacity(layers.len());
    for l in layers {
        check_nm(l, n, m, None)?;
        let scores: Vec<f64> = l.weights.iter().map(|w| w.abs()).collect();
        out.push(nm_select(l, &scores, n, m));
    }
    Ok(PruneResult::from_layers(out, 0))
}

fn nm_select(l: &Layer, scores: &[f64], n: usize, m: usize) -> LayerResult {
    let sel = l.selectable();
    let mut res = LayerResult::identity(l);
    for g in (0..l.len()).step_by(m) {
        let zeros = (g..g + m).filter(|&i| l.prunable[i] && l.mask[i] == 0).count();
        let mut cands: Vec<usize> = (g..g + m).filter(|&i| sel[i]).collect();
        cands.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        for &i in cands.iter().take(m - n - zeros) {
            res.mask[i] = 0;
            res.newly_pruned += 1;
        }
    }
    res
}

/// Builds one inverse per layer that has gradients.
pub fn build_inverses(grads: &[Option<&GradientSet>], cfg: &FisherConfig) -> Result<Vec<Option<FisherBlockInverse>>> {
    grads
        .iter()
        .map(|g| g.map(|g| build_fisher_inverse(g, cfg)).transpose())
        .collect()
}

/// Restricts each block inverse to the selectable coordinates of the layer.
fn restricted(layer: &Layer, inv: &FisherBlockInverse) -> (Vec<crate::linalg::Matrix>, usize) {
    let sel = layer.selectable();
    let mut clamped = 0;
    let blocks = (0..inv.num_blocks())
        .map(|j| {
            let mut b = inv.block(j).clone();
            for (local, g) in inv.block_range(j).enumerate() {
                if !sel[g] {
                    clamped += usize::from(eliminate_clamped(&mut b, local));
                }
            }
            b
        })
        .collect();
    (blocks, clamped)
}

/// Independent-saliency OBS: scores from the initial inverse, `k` total zeros,
/// summed single-weight compensations from that same inverse.
pub fn prune_wf(layers: &[Layer], grads: &[Option<&GradientSet>], k: usize, spec: &PrunerSpec) -> Result<PruneResult> {
    let k_new = new_zeros(layers, k)?;
    let inverses = build_inverses(grads, &spec.fisher)?;
    let prepared = prepare_wf(layers, &inverses)?;
    let mut cands: Vec<(f64, usize, usize, usize)> = Vec::new();
    let offsets = layer_offsets(layers);
    for (li, p) in prepared.iter().enumerate() {
        let Some((scores, _, _)) = p else { continue };
        let sel = layers[li].selectable();
        for (i, &s) in scores.iter().enumerate() {
            if sel[i] {
                cands.push((s, offsets[li] + i, li, i));
            }
        }
    }
    if k_new > cands.len() {
        return Err(Error::TargetTooLarge {
            requested: k_new,
            available: cands.len(),
        });
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<Vec<usize>> = vec![Vec::new(); layers.len()];
    for &(_, _, li, i) in &cands[..k_new] {
        chosen[li].push(i);
    }
    let mut out = Vec::with_capacity(layers.len());
    let mut clamped = 0;
    for (li, l) in layers.iter().enumerate() {
        match &prepared[li] {
            Some((scores, blocks, c)) => {
                clamped += c;
                let inv = inverses[li].as_ref().expect("prepared implies inverse");
                out.push(wf_apply(l, inv, blocks, scores, &chosen[li]));
            }
            None => out.push(LayerResult::identity(l)),
        }
    }
    Ok(PruneResult::from_layers(out, clamped))
}

type WfPrepared = Option<(Vec<f64>, Vec<crate::linalg::Matrix>, usize)>;

fn prepare_wf(layers: &[Layer], inverses: &[Option<FisherBlockInverse>]) -> Result<Vec<WfPrepared>> {
    layers
        .par_iter()
        .zip(inverses)
        .map(|(l, inv)| match inv {
            Some(inv) => {
                if inv.dim() != l.len() {
                    return Err(Error::Shape(format!("layer `{}`: Fisher dimension mismatch", l.name)));
                }
                let (blocks, clamped) = restricted(l, inv);
                let scores = (0..l.len())
                    .map(|g| {
                        let (j, i) = (g / inv.config().block_size, g % inv.config().block_size);
                        single_score(l.weights[g], blocks[j].diag(i))
                    })
                    .collect();
                Ok(Some((scores, blocks, clamped)))
            }
            None if l.selectable().iter().any(|&s| s) => Err(Error::MissingGradients { layer: l.name.clone() }),
            None => Ok(None),
        })
        .collect()
}

fn wf_apply(
    l: &Layer,
    inv: &FisherBlockInverse,
    blocks: &[crate::linalg::Matrix],
    scores: &[f64],
    chosen: &[usize],
) -> LayerResult {
    let bs = inv.config().block_size;
    let mut res = LayerResult::identity(l);
    let mut delta = vec![0.0; l.len()];
    for &g in chosen {
        let (j, i) = (g / bs, g % bs);
        let b = &blocks[j];
        let coef = l.weights[g] / clamp_diag(b.diag(i));
        let start = inv.block_start(j);
        for (k, v) in b.row(i).iter().enumerate() {
            delta[start + k] -= coef * v;
        }
        res.predicted += scores[g];
    }
    for (w, d) in res.weights.iter_mut().zip(&delta) {
        *w += d;
    }
    for &g in chosen {
        res.weights[g] = 0.0;
        res.mask[g] = 0;
    }
    res.newly_pruned = chosen.len();
    res
}

fn prune_wf_nm(
    layers: &[Layer],
    grads: &[Option<&GradientSet>],
    n: usize,
    m: usize,
    spec: &PrunerSpec,
) -> Result<PruneResult> {
    let inverses = build_inverses(grads, &spec.fisher)?;
    for (l, inv) in layers.iter().zip(&inverses) {
        check_nm(l, n, m, inv.as_ref().map(|i| i.config().block_size))?;
    }
    let prepared = prepare_wf(layers, &inverses)?;
    let mut out = Vec::with_capacity(layers.len());
    let mut clamped = 0;
    for (li, l) in layers.iter().enumerate() {
        match &prepared[li] {
            Some((scores, blocks, c)) => {
                clamped += c;
                let picked = nm_select(l, scores, n, m);
                let chosen: Vec<usize> = (0..l.len())
                    .filter(|&i| picked.mask[i] == 0 && l.mask[i] == 1)
                    .collect();
                let inv = inverses[li].as_ref().expect("prepared implies inverse");
                out.push(wf_apply(l, inv, blocks, scores, &chosen));
            }
            None => out.push(LayerResult::identity(l)),
        }
    }
    Ok(PruneResult::from_layers(out, clamped))
}

/// Greedy block-solver pruning. `Target::Sparsity` goes through the global merge,
/// `Target::NM` through the pattern-constrained variant.
pub fn prune_ovit(
    layers: &[Layer],
    grads: &[Option<&GradientSet>],
    target: Target,
    spec: &PrunerSpec,
) -> Result<PruneResult> {
    let inverses = build_inverses(grads, &spec.fisher)?;
    let refs: Vec<Option<&FisherBlockInverse>> = inverses.iter().map(Option::as_ref).collect();
    match target {
        Target::Sparsity(s) => {
            let k = zeros_for(s, crate::layers::prunable_total(layers))?;
            solve_global_layers(layers, &refs, new_zeros(layers, k)?)
        }
        Target::NM { n, m } => solve_nm_layers(layers, &refs, n, m),
    }
}

/// `½ δwᵀ F δw` per layer from the gradients (full per-layer Fisher).
pub fn evaluate_increase(
    before: &[Layer],
    after: &[LayerResult],
    grads: &[Option<&GradientSet>],
    cfg: &FisherConfig,
) -> Result<Vec<f64>> {
    before
        .iter()
        .zip(after)
        .zip(grads)
        .map(|((b, a), g)| match g {
            Some(g) => loss_increase(&b.weights, &a.weights, &g.truncated(cfg.num_grads), cfg.dampening),
            None => Ok(0.0),
        })
        .collect()
}

/// One pruning step with the given gradients (no recomputation).
pub fn prune(spec: &PrunerSpec, layers: &[Layer], grads: &[GradientSet], target: Target) -> Result<PruneResult> {
    spec.validate()?;
    let aligned = align_grads(layers, grads)?;
    if spec.per_layer {
        if let Target::Sparsity(_) = target {
            let parts = layers
                .iter()
                .zip(&aligned)
                .map(|(l, g)| prune_aligned(spec, std::slice::from_ref(l), &[*g], target))
                .collect::<Result<Vec<_>>>()?;
            return Ok(PruneResult::concat(parts));
        }
    }
    prune_aligned(spec, layers, &aligned, target)
}

fn prune_aligned(
    spec: &PrunerSpec,
    layers: &[Layer],
    grads: &[Option<&GradientSet>],
    target: Target,
) -> Result<PruneResult> {
    match (spec.method, target) {
        (Method::Gm, t) => {
            let mut res = match t {
                Target::Sparsity(s) => prune_gm(layers, zeros_for(s, crate::layers::prunable_total(layers))?)?,
                Target::NM { n, m } => prune_gm_nm(layers, n, m)?,
            };
            let inc = evaluate_increase(layers, &res.layers, grads, &spec.fisher)?;
            for (l, v) in res.layers.iter_mut().zip(inc) {
                l.predicted = v;
            }
            res.predicted_loss_increase = res.layers.iter().map(|l| l.predicted).sum();
            Ok(res)
        }
        (Method::Wf, Target::Sparsity(s)) => prune_wf(
            layers,
            grads,
            zeros_for(s, crate::layers::prunable_total(layers))?,
            spec,
        ),
        (Method::Wf, Target::NM { n, m }) => prune_wf_nm(layers, grads, n, m, spec),
        (Method::Ovit, t) => prune_ovit(layers, grads, t, spec),
    }
}

/// Intermediate sparsity of sub-step `t` of `n_r`: `1 − (1 − s)^(t / n_r)`.
pub fn recompute_sparsity(s: f64, t: usize, n_r: usize) -> f64 {
    if t >= n_r {
        s
    } else {
        1.0 - (1.0 - s).powf(t as f64 / n_r as f64)
    }
}

/// Prunes in `spec.recomputations` sub-steps, asking `grads_at` for fresh gradients
/// at the current weights before each. Masks only ever lose ones.
pub fn prune_with_recompute<F>(
    spec: &PrunerSpec,
    layers: &[Layer],
    mut grads_at: F,
    target: Target,
) -> Result<PruneResult>
where
    F: FnMut(&[Layer]) -> Result<Vec<GradientSet>>,
{
    spec.validate()?;
    let n_r = spec.recomputations;
    let s = match target {
        Target::NM { .. } if n_r > 1 => {
            return Err(Error::Config(
                "recomputation is only defined for sparsity targets".into(),
            ))
        }
        Target::NM { .. } => {
            let grads = grads_at(layers)?;
            return prune(spec, layers, &grads, target);
        }
        Target::Sparsity(s) => s,
    };
    let mut current = layers.to_vec();
    let mut parts: Vec<PruneResult> = Vec::with_capacity(n_r);
    for t in 1..=n_r {
        let grads = grads_at(&current)?;
        let res = prune(spec, &current, &grads, Target::Sparsity(recompute_sparsity(s, t, n_r)))?;
        current = res.clone().into_layers();
        parts.push(res);
    }
    let mut last = parts.pop().expect("at least one sub-step");
    for p in &parts {
        for (a, b) in last.layers.iter_mut().zip(&p.layers) {
            a.predicted += b.predicted;
            a.newly_pruned += b.newly_pruned;
        }
        last.clamped += p.clamped;
    }
    last.predicted_loss_increase = last.layers.iter().map(|l| l.predicted).sum();
    Ok(last)
}
