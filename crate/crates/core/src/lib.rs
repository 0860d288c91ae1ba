//! Covariate adjustment set selection from heterogeneous environments.
//!
//! Given observational data `(X, T, Y)` collected in several environments,
//! the crate searches for a covariate subset `S` under which the conditional
//! mean of the treatment or of the outcome is the same in every environment.
//! Such a set is a valid adjustment set when the invariant node's parents are
//! observed, even if other covariates are post-treatment or some confounders
//! are hidden. The effect is then estimated per environment with the doubly
//! robust AIPW formula using nuisances fitted on the pooled data.
//!
//! Modules, bottom up:
//!
//! - [`scm`]: simulators with known ground-truth effects.
//! - [`kernel`]: Gaussian kernel and median bandwidth.
//! - [`nuisance`]: ridge and logistic regressions on the pooled sample.
//! - [`invariance`]: the studentized cross U-statistic invariance losses.
//! - [`search`]: exhaustive subset search.
//! - [`relax`]: the Gumbel-sigmoid relaxation trained by gradient descent.
//! - [`estimator`]: AIPW estimates and baselines.
//! - [`bench`]: repeated-experiment harness producing MAE tables.
//!
//! ```
//! use ramen::scm::{sample_known_dag, Invariance, KnownDagScenario, PostKind};
//! use ramen::{estimator, search};
//!
//! let scenario = KnownDagScenario::new(Invariance::YOnly, PostKind::Collider, 3);
//! let (data, truth) = sample_known_dag(&scenario, 400, 3, 7).unwrap();
//! let selection = search::combinatorial_select(&data, None, 0).unwrap();
//! let report = estimator::estimate(&data, &selection).unwrap().with_truth(truth).unwrap();
//! assert!(report.mae.unwrap().is_finite());
//! ```

pub mod bench;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod invariance;
pub mod kernel;
pub mod nuisance;
pub mod relax;
pub mod scm;
pub mod search;
pub mod seed;
pub mod subset;

pub use dataset::{Environment, MultiEnvDataset};
pub use error::{Error, Result};
pub use subset::SubsetMask;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/invariance_loss.md")]
    mod invariance_loss {}
    #[doc = include_str!("../../../book/src/subset_search.md")]
    mod subset_search {}
    #[doc = include_str!("../../../book/src/gumbel_relaxation.md")]
    mod gumbel_relaxation {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
}
