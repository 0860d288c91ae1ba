//! Gradient-based subset selection with Gumbel-sigmoid gates.
//!
//! Each covariate `j` gets a logit `w_j`; a relaxed mask
//! `B_j = sigmoid((w_j + G₁ − G₂)/τ)` with Gumbel noise multiplies the
//! inputs, and small tanh networks play the role of the conditional means.
//! The gates and networks are trained by gradient descent on the
//! environment-averaged studentized loss while `τ` is annealed. Covariates
//! with `w_j > 0` form the candidate subsets for `T` and for `Y`; their exact
//! losses decide between them.

mod gate;
mod loss;
mod mlp;
mod train;

pub use gate::{gate_from_noise, gumbel_gate_sample, gumbel_noise, sigmoid, GateVector};
pub use loss::{relaxed_term, FixedDraw, Link, ScaleMode, TermGrad};
pub use mlp::{MlpGrad, MlpModel, DEFAULT_WIDTH};
pub use train::{
    default_grid, gumbel_select, gumbel_train, hyperparameter_sweep, GridPoint, GumbelRun, SweepResult,
    TraceRow, TrainConfig, TrainingTrace, MIN_TRAIN_ROWS,
};
