//! Single-index extreme value index regression for heavy-tailed responses.
//!
//! The tail index is modelled as `γ(x) = exp(−α(xᵀθ))` with `α` a penalized
//! B-spline of the index. Fitting alternates a penalized Newton step for the
//! spline coefficients with a quasi-Newton step for the direction `θ` on the
//! unit sphere.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod likelihood;
pub mod numerics;
pub mod pot;
pub mod simbench;
pub mod single_index;
pub mod splines;
pub mod tuning;

pub use baselines::{fit_linear_evi, hill, predict_evi, weissman_quantile, EviModel, Fidelity};
pub use error::{Error, Result};
pub use pot::{Dataset, ThresholdSpec};
pub use single_index::{fit, FitConfig, IndexParam, SingleIndexFit};
pub use tuning::{select, Selection, TuningGrid};
