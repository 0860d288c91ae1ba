//! Multi-environment structural causal model simulation with known
//! treatment effects.

mod dag;
mod known;
mod random;

pub use dag::{DagSpec, Edge, Node, NodeRole};
pub use known::{sample_known_dag, Heterogeneity, Invariance, KnownDagScenario, PostKind, VARIANCE_FLOOR};
pub use random::{
    do_intervention_ate, erdos_renyi_edges, sample_random_dag, sample_random_dag_with_budget,
    sample_scm, shuffled, true_ate, ShiftSpec, DEFAULT_REJECTION_BUDGET,
};
