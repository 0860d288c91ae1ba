//! Random Erdős–Rényi DAGs with linear structural equations and
//! per-environment noise shifts.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dag::{confounders_of, reach, DagSpec, Edge, Node, NodeRole};
use super::known::Invariance;
use crate::dataset::{Environment, MultiEnvDataset};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_REJECTION_BUDGET: usize = 10_000;

/// Edges of an Erdős–Rényi DAG on `p` nodes: every pair `i < j` is joined
/// by `i -> j` with probability `density`, so node index order is a
/// topological order.
pub fn erdos_renyi_edges<R: Rng>(p: usize, density: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if rng.gen::<f64>() < density {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// [`sample_random_dag_with_budget`] with the default budget of 10 000 draws.
pub fn sample_random_dag(p: usize, density: f64, seed: u64, invariance: Invariance) -> Result<DagSpec> {
    sample_random_dag_with_budget(p, density, seed, invariance, DEFAULT_REJECTION_BUDGET)
}

/// Rejection-samples an Erdős–Rényi DAG on `p` nodes with a uniformly chosen
/// treatment/outcome pair until no node mediates `T -> Y` and at least one
/// node confounds them.
///
/// The accepted graph always contains `T -> Y`. A post-treatment node
/// `X_bad = T + Y + noise` is appended, and the parents of the non-invariant
/// node that it does not share with the other one are marked unobserved.
/// Edge weights are standard normal.
pub fn sample_random_dag_with_budget(
    p: usize,
    density: f64,
    seed: u64,
    invariance: Invariance,
    budget: usize,
) -> Result<DagSpec> {
    if p < 4 {
        return Err(Error::InvalidInput(format!("random DAG needs p >= 4 nodes, got {p}")));
    }
    if !(0.0..1.0).contains(&density) {
        return Err(Error::InvalidInput(format!("density must lie in [0, 1), got {density}")));
    }
    if invariance == Invariance::None {
        return Err(Error::InvalidInput(
            "random DAGs are generated with at least one invariant node".into(),
        ));
    }

    let mut rng = seed::rng(seed);
    let mut last_violation = String::from("none");
    for _ in 0..budget {
        let mut pairs = erdos_renyi_edges(p, density, &mut rng);
        let t = rng.gen_range(0..p - 1);
        let y = rng.gen_range(t + 1..p);
        if !pairs.contains(&(t, y)) {
            pairs.push((t, y));
        }

        let mut parents = vec![Vec::new(); p];
        let mut children = vec![Vec::new(); p];
        for &(a, b) in &pairs {
            parents[b].push(a);
            children[a].push(b);
        }
        let de_t = reach(&children, t, None);
        let an_y = reach(&parents, y, None);
        if let Some(m) = (0..p).find(|&j| j != t && j != y && de_t[j] && an_y[j]) {
            last_violation = format!("node {m} mediates treatment and outcome");
            continue;
        }
        if confounders_of(&parents, t, y).is_empty() {
            last_violation = "no confounder of treatment and outcome".into();
            continue;
        }

        let hidden: Vec<usize> = match invariance {
            Invariance::YOnly => difference(&parents[t], &parents[y], y),
            Invariance::TOnly => difference(&parents[y], &parents[t], t),
            _ => Vec::new(),
        };

        let mut nodes: Vec<Node> = (0..p)
            .map(|j| {
                let role = if j == t {
                    NodeRole::Treatment
                } else if j == y {
                    NodeRole::Outcome
                } else if hidden.contains(&j) {
                    NodeRole::Unobserved
                } else {
                    NodeRole::Covariate
                };
                let name = match role {
                    NodeRole::Treatment => "T".to_string(),
                    NodeRole::Outcome => "Y".to_string(),
                    _ => format!("Z{j}"),
                };
                Node { name, role }
            })
            .collect();
        nodes.push(Node {
            name: "X_bad".into(),
            role: NodeRole::PostTreatment,
        });

        let mut edges: Vec<Edge> = pairs
            .iter()
            .map(|&(from, to)| Edge {
                from,
                to,
                weight: rng.sample(StandardNormal),
            })
            .collect();
        edges.push(Edge { from: t, to: p, weight: 1.0 });
        edges.push(Edge { from: y, to: p, weight: 1.0 });
        return DagSpec::new(nodes, edges);
    }
    Err(Error::RejectionExhausted {
        attempts: budget,
        constraint: last_violation,
    })
}

fn difference(of: &[usize], minus: &[usize], skip: usize) -> Vec<usize> {
    of.iter()
        .copied()
        .filter(|j| *j != skip && !minus.contains(j))
        .collect()
}

/// Per-environment mean and variance shifts of every node's noise.
///
/// Node `j` in environment `e` has noise `mean_shift[e][j] +
/// sqrt(var_shift[e][j]) · N(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub env_count: usize,
    pub mean_shift: Vec<Vec<f64>>,
    pub var_shift: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl ShiftSpec {
    /// Draws shifts for `dag`: mean `ε · Uniform(-2, 2)` and variance
    /// multiplier `Uniform(0.5, 1.5)^ε` per (environment, node). Invariant
    /// nodes get no shift; at `ε = 0` nothing is shifted.
    pub fn random(
        dag: &DagSpec,
        invariance: Invariance,
        env_count: usize,
        epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        if env_count < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 environments, got {env_count}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
        }
        let p = dag.p();
        let (t, y) = (dag.treatment(), dag.outcome());
        let frozen = |j: usize| {
            (j == t && invariance.t_invariant()) || (j == y && invariance.y_invariant())
        };
        let mut rng = seed::rng(seed);
        let mut mean_shift = vec![vec![0.0; p]; env_count];
        let mut var_shift = vec![vec![1.0; p]; env_count];
        for e in 0..env_count {
            for j in 0..p {
                let m = rng.gen_range(-2.0..2.0);
                let v: f64 = rng.gen_range(0.5..1.5);
                if !frozen(j) {
                    mean_shift[e][j] = epsilon * m;
                    var_shift[e][j] = v.powf(epsilon);
                }
            }
        }
        Ok(Self {
            env_count,
            mean_shift,
            var_shift,
            epsilon,
        })
    }

    /// No shift anywhere.
    pub fn none(p: usize, env_count: usize) -> Self {
        Self {
            env_count,
            mean_shift: vec![vec![0.0; p]; env_count],
            var_shift: vec![vec![1.0; p]; env_count],
            epsilon: 0.0,
        }
    }

    fn check(&self, p: usize) -> Result<()> {
        if self.env_count < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 environments, got {}",
                self.env_count
            )));
        }
        let rows_ok = self.mean_shift.len() == self.env_count && self.var_shift.len() == self.env_count;
        let cols_ok = self
            .mean_shift
            .iter()
            .chain(&self.var_shift)
            .all(|row| row.len() == p);
        if !rows_ok || !cols_ok {
            return Err(Error::DimensionMismatch(format!(
                "shift tables must be {} x {p}",
                self.env_count
            )));
        }
        if self.var_shift.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("variance multipliers must be positive".into()));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// How the treatment node is set while simulating.
#[derive(Clone, Copy)]
enum TreatmentRule {
    Natural,
    Forced(f64),
}

/// One unit's node values in environment `env`.
fn draw_unit<R: Rng>(
    dag: &DagSpec,
    order: &[usize],
    parents: &[Vec<(usize, f64)>],
    shifts: &ShiftSpec,
    env: usize,
    rule: TreatmentRule,
    rng: &mut R,
    values: &mut [f64],
) {
    let t = dag.treatment();
    for &j in order {
        let linear: f64 = parents[j].iter().map(|&(k, w)| w * values[k]).sum();
        let z: f64 = rng.sample(StandardNormal);
        let noise = shifts.mean_shift[env][j] + shifts.var_shift[env][j].sqrt() * z;
        values[j] = if j == t {
            match rule {
                TreatmentRule::Forced(v) => v,
                TreatmentRule::Natural => {
                    let p = sigmoid(linear + noise);
                    if Bernoulli::new(p).expect("probability").sample(rng) {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        } else {
            linear + noise
        };
    }
}

/// Simulates `n` units per environment. Unobserved nodes are dropped; the
/// emitted covariates are the covariate and post-treatment nodes in index
/// order, named after the nodes.
pub fn sample_scm(dag: &DagSpec, shifts: &ShiftSpec, n: usize, seed: u64) -> Result<MultiEnvDataset> {
    dag.validate()?;
    let order = dag.topological_order()?;
    shifts.check(dag.p())?;
    if n < crate::dataset::MIN_ROWS {
        return Err(Error::InvalidInput(format!("need n >= 4 units per environment, got {n}")));
    }
    let p = dag.p();
    let parents: Vec<Vec<(usize, f64)>> = (0..p).map(|j| dag.parents(j)).collect();
    let columns = dag.emitted_columns();
    let (t, y) = (dag.treatment(), dag.outcome());

    let mut envs = Vec::with_capacity(shifts.env_count);
    let mut values = vec![0.0; p];
    for e in 0..shifts.env_count {
        let mut rng = seed::child_rng(seed, e as u64);
        let mut x = Array2::zeros((n, columns.len()));
        let mut tv = Array1::zeros(n);
        let mut yv = Array1::zeros(n);
        for i in 0..n {
            draw_unit(dag, &order, &parents, shifts, e, TreatmentRule::Natural, &mut rng, &mut values);
            for (c, &j) in columns.iter().enumerate() {
                x[[i, c]] = values[j];
            }
            tv[i] = values[t];
            yv[i] = values[y];
        }
        envs.push(Environment::new(x, tv, yv)?);
    }
    let names = columns.iter().map(|&j| dag.nodes[j].name.clone()).collect();
    MultiEnvDataset::new(envs, names)
}

/// Per-environment ATE of a linear DAG: the `T -> Y` edge weight.
///
/// Outcome noise shifts are additive, so the coefficient is the effect in
/// every environment. Refuses graphs with a mediator.
pub fn true_ate(dag: &DagSpec, env_count: usize) -> Result<Vec<f64>> {
    dag.validate()?;
    if let Some(&m) = dag.mediators().first() {
        return Err(Error::Mediator(m));
    }
    let effect = dag.edge_weight(dag.treatment(), dag.outcome()).unwrap_or(0.0);
    Ok(vec![effect; env_count])
}

/// Monte Carlo estimate of `E[Y | do(T=1)] - E[Y | do(T=0)]` in environment
/// `env` from `n` independent draws per arm, with its standard error.
pub fn do_intervention_ate(
    dag: &DagSpec,
    shifts: &ShiftSpec,
    env: usize,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    dag.validate()?;
    shifts.check(dag.p())?;
    if env >= shifts.env_count || n < 2 {
        return Err(Error::InvalidInput("environment out of range or n < 2".into()));
    }
    let order = dag.topological_order()?;
    let parents: Vec<Vec<(usize, f64)>> = (0..dag.p()).map(|j| dag.parents(j)).collect();
    let y = dag.outcome();
    let mut values = vec![0.0; dag.p()];
    let mut arm = |forced: f64, stream: u64| {
        let mut rng = seed::child_rng(seed, stream);
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                draw_unit(dag, &order, &parents, shifts, env, TreatmentRule::Forced(forced), &mut rng, &mut values);
                values[y]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var / n as f64)
    };
    let (m1, v1) = arm(1.0, 1);
    let (m0, v0) = arm(0.0, 2);
    Ok((m1 - m0, (v1 + v0).sqrt()))
}

/// Shuffled copy of `0..n`, used to draw environment orders in tests and
/// benches.
pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut seed::rng(seed));
    v
}
