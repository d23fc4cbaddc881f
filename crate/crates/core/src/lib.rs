//! Greedy Gaussian mixture reduction.
//!
//! A mixture is shrunk one hypothesis at a time: prune a component or merge
//! a pair by moment matching. Four cost criteria are available:
//!
//! * [`CostKind::ArklFull`]: approximate reverse KL divergence, with a
//!   variational merge cost and a nearest-neighbour pruning cost.
//! * [`CostKind::ArklSimple`]: the cruder pruning and merging upper bounds.
//! * [`CostKind::RunnallsB`]: Runnalls' forward-KL bound (merge only).
//! * [`CostKind::WilliamsIse`]: exact integral squared error.
//!
//! ```
//! use gmreduce::{reduce, CostKind, GaussianMixture, ReduceOptions};
//!
//! let m = GaussianMixture::univariate(&[(0.8, -8.0, 1.0), (0.2, 8.0, 1.0)]).unwrap();
//! let (reduced, trace) = reduce(&m, 1, CostKind::ArklFull, &ReduceOptions::default()).unwrap();
//! assert_eq!(trace.steps[0].chosen.to_string(), "prune(2)");
//! assert_eq!(reduced.component(0).mean()[0], -8.0);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod costs;
pub mod error;
pub mod gauss;
pub mod mixture;
pub mod numeric;
pub mod quadrature;
pub mod reduce;
pub mod sweep;
pub mod tol;

pub use costs::{CostKind, DivergenceEstimate};
pub use error::{Error, Result};
pub use gauss::GaussianComponent;
pub use mixture::{GaussianMixture, Hypothesis};
pub use reduce::{cost_eval_count, reduce, reduce_reference, CostTable, ReduceOptions, ReductionTrace, TraceStep};
