//! Correlation-aware second-order weight pruning.
//!
//! Given weights and per-sample gradients, the engine builds a block-diagonal
//! empirical Fisher inverse, then prunes with one of three methods:
//!
//! * global magnitude (`gm`),
//! * independent OBS saliency with summed compensations (`wf`),
//! * greedy one-at-a-time OBS elimination per Fisher block with a global merge
//!   of cumulative scores (`ovit`), optionally under an N:M pattern.
//!
//! Supporting pieces: the OVPT tensor container ([`tensorstore`]), learning-rate
//! and sweep schedules ([`schedules`]), toy-model drivers ([`pipeline`]) and
//! brute-force oracles for small problems ([`oracle`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fisher;
pub mod layers;
pub mod linalg;
pub mod obs;
pub mod oracle;
pub mod pipeline;
pub mod pruners;
pub mod schedules;
pub mod solver;
pub mod tensorstore;

pub use error::{Error, Result, StoreError};
pub use fisher::{build_fisher_inverse, eliminate_index, FisherBlockInverse, FisherConfig};
pub use layers::Layer;
pub use linalg::Matrix;
pub use obs::{
    block_loss_increase, loss_increase, saliency_group, saliency_single, update_group, update_single, SaliencyRecord,
    WeightUpdate,
};
pub use pruners::{prune, prune_gm, prune_ovit, prune_wf, prune_with_recompute, Method, PrunerSpec, Target};
pub use schedules::{lr_at, plan_sweep, LrSchedule, SweepPlan};
pub use solver::{solve_block, solve_global, solve_nm, BlockTrace, LayerResult, PruneResult};
pub use tensorstore::{read_container, write_container, GradientSet, Tensor, TensorContainer};
