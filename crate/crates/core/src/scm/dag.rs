use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Covariate,
    Unobserved,
    Treatment,
    Outcome,
    PostTreatment,
}

impl NodeRole {
    /// Whether the node is emitted as a column of `X`.
    pub fn is_emitted_covariate(self) -> bool {
        matches!(self, NodeRole::Covariate | NodeRole::PostTreatment)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub role: NodeRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// A weighted DAG whose nodes carry causal roles.
///
/// JSON form:
///
/// ```json
/// {
///   "nodes": [{"name": "Z0", "role": "covariate"}, {"name": "T", "role": "treatment"}],
///   "edges": [{"from": 0, "to": 1, "weight": 0.7}]
/// }
/// ```
///
/// Roles are `covariate`, `unobserved`, `treatment`, `outcome` and
/// `post_treatment`. Each node's structural equation is linear in its parents
/// with the edge weights as coefficients; the treatment node passes that
/// linear predictor through a sigmoid and draws a Bernoulli.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagSpec {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl DagSpec {
    /// Validates the graph invariants: edge endpoints in range, exactly one
    /// treatment and one outcome, acyclicity, and treatment an ancestor of
    /// outcome.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let dag = Self { nodes, edges };
        dag.validate()?;
        Ok(dag)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        for e in &self.edges {
            if e.from >= p || e.to >= p {
                return Err(Error::InvalidInput(format!(
                    "edge {} -> {} out of range for {p} nodes",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::Cyclic);
            }
            if !e.weight.is_finite() {
                return Err(Error::InvalidInput("edge weight is not finite".into()));
            }
        }
        let t = self.single_role(NodeRole::Treatment)?;
        let y = self.single_role(NodeRole::Outcome)?;
        self.topological_order()?;
        if !self.ancestors(y)[t] {
            return Err(Error::InvalidInput(
                "treatment must be an ancestor of the outcome".into(),
            ));
        }
        Ok(())
    }

    fn single_role(&self, role: NodeRole) -> Result<usize> {
        let mut found = self.nodes.iter().enumerate().filter(|(_, n)| n.role == role);
        match (found.next(), found.next()) {
            (Some((i, _)), None) => Ok(i),
            (None, _) => Err(Error::InvalidInput(format!("no node has role {role:?}"))),
            _ => Err(Error::InvalidInput(format!("more than one node has role {role:?}"))),
        }
    }

    pub fn p(&self) -> usize {
        self.nodes.len()
    }

    pub fn treatment(&self) -> usize {
        self.single_role(NodeRole::Treatment).expect("validated")
    }

    pub fn outcome(&self) -> usize {
        self.single_role(NodeRole::Outcome).expect("validated")
    }

    /// `(parent, weight)` pairs of `node`.
    pub fn parents(&self, node: usize) -> Vec<(usize, f64)> {
        self.edges
            .iter()
            .filter(|e| e.to == node)
            .map(|e| (e.from, e.weight))
            .collect()
    }

    pub fn edge_weight(&self, from: usize, to: usize) -> Option<f64> {
        self.edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| e.weight)
    }

    fn children_lists(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.p()];
        for e in &self.edges {
            out[e.from].push(e.to);
        }
        out
    }

    fn parent_lists(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.p()];
        for e in &self.edges {
            out[e.to].push(e.from);
        }
        out
    }

    /// Kahn's algorithm; ties broken by node index.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let p = self.p();
        let children = self.children_lists();
        let mut indegree = vec![0usize; p];
        for e in &self.edges {
            indegree[e.to] += 1;
        }
        let mut queue: VecDeque<usize> = (0..p).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(p);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &c in &children[u] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if order.len() == p {
            Ok(order)
        } else {
            Err(Error::Cyclic)
        }
    }

    /// Strict ancestors of `node` as a membership vector.
    pub fn ancestors(&self, node: usize) -> Vec<bool> {
        reach(&self.parent_lists(), node, None)
    }

    /// Strict descendants of `node` as a membership vector.
    pub fn descendants(&self, node: usize) -> Vec<bool> {
        reach(&self.children_lists(), node, None)
    }

    /// Nodes on a directed path strictly between treatment and outcome.
    pub fn mediators(&self) -> Vec<usize> {
        let (t, y) = (self.treatment(), self.outcome());
        let de_t = self.descendants(t);
        let an_y = self.ancestors(y);
        (0..self.p())
            .filter(|&j| j != t && j != y && de_t[j] && an_y[j])
            .collect()
    }

    /// Nodes that reach the treatment and also reach the outcome along a
    /// path avoiding the treatment.
    pub fn confounders(&self) -> Vec<usize> {
        let (t, y) = (self.treatment(), self.outcome());
        confounders_of(&self.parent_lists(), t, y)
    }

    /// Node indices emitted as covariate columns, in index order.
    pub fn emitted_columns(&self) -> Vec<usize> {
        (0..self.p())
            .filter(|&j| self.nodes[j].role.is_emitted_covariate())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dag: Self = serde_json::from_str(text)?;
        dag.validate()?;
        Ok(dag)
    }
}

/// Nodes reachable from `start` following `adjacency`, optionally never
/// entering `blocked`.
pub(crate) fn reach(adjacency: &[Vec<usize>], start: usize, blocked: Option<usize>) -> Vec<bool> {
    let mut seen = vec![false; adjacency.len()];
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &v in &adjacency[u] {
            if Some(v) != blocked && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen[start] = false;
    seen
}

pub(crate) fn confounders_of(parents: &[Vec<usize>], t: usize, y: usize) -> Vec<usize> {
    let an_t = reach(parents, t, None);
    let an_y_avoiding_t = reach(parents, y, Some(t));
    (0..parents.len())
        .filter(|&j| j != t && j != y && an_t[j] && an_y_avoiding_t[j])
        .collect()
}
