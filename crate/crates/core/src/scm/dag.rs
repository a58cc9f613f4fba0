//! Directed acyclic graphs over causal variables.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScmError;

/// Adjacency-matrix DAG; entry `(i, j)` means an edge `i -> j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DagRepr", into = "DagRepr")]
pub struct Dag {
    n: usize,
    adj: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct DagRepr(Vec<Vec<u8>>);

impl From<Dag> for DagRepr {
    fn from(d: Dag) -> Self {
        DagRepr(d.adjacency_rows())
    }
}

impl TryFrom<DagRepr> for Dag {
    type Error = ScmError;
    fn try_from(r: DagRepr) -> Result<Self, ScmError> {
        Dag::from_adjacency(&r.0)
    }
}

impl Dag {
    pub fn empty(n: usize) -> Self {
        Dag { n, adj: vec![false; n * n] }
    }

    /// Build from an edge list, validating acyclicity and absence of
    /// self-loops.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, ScmError> {
        let mut dag = Dag::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(ScmError::Contract(format!("edge ({i},{j}) out of range for n={n}")));
            }
            if i == j {
                return Err(ScmError::Contract(format!("self-loop at {i}")));
            }
            dag.adj[i * n + j] = true;
        }
        if dag.try_topological_order().is_none() {
            return Err(ScmError::Contract("graph is cyclic".into()));
        }
        Ok(dag)
    }

    pub fn from_adjacency(rows: &[Vec<u8>]) -> Result<Self, ScmError> {
        let n = rows.len();
        let mut edges = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ScmError::Contract("adjacency matrix is not square".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0 {
                    edges.push((i, j));
                }
            }
        }
        Dag::from_edges(n, &edges)
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| u8::from(self.adj[i * self.n + j])).collect())
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&b| b).count()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.has_edge(i, j)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.has_edge(i, j)).collect()
    }

    fn try_topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = (0..self.n).map(|j| self.parents(j).len()).collect();
        let mut order = Vec::with_capacity(self.n);
        let mut ready: Vec<usize> = (0..self.n).filter(|&j| indeg[j] == 0).collect();
        while let Some(&next) = ready.iter().min() {
            ready.retain(|&v| v != next);
            order.push(next);
            for c in self.children(next) {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(c);
                }
            }
        }
        (order.len() == self.n).then_some(order)
    }

    /// Deterministic topological order (smallest index first among sources).
    pub fn topological_order(&self) -> Vec<usize> {
        self.try_topological_order().expect("Dag invariant: acyclic")
    }

    /// Ancestors of `i`, excluding `i`.
    pub fn ancestors(&self, i: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        let mut stack = self.parents(i);
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(self.parents(v));
            }
        }
        (0..self.n).filter(|&v| seen[v]).collect()
    }

    /// Descendants of `i`, excluding `i`.
    pub fn descendants(&self, i: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        let mut stack = self.children(i);
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(self.children(v));
            }
        }
        (0..self.n).filter(|&v| seen[v]).collect()
    }

    /// Random DAG over the fixed topological order `0..n`: each edge `i -> j`
    /// with `i < j` is drawn independently with probability `edge_prob`.
    pub fn random_with_order(n: usize, edge_prob: f64, rng: &mut impl Rng) -> Self {
        let mut dag = Dag::empty(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(edge_prob) {
                    dag.adj[i * n + j] = true;
                }
            }
        }
        dag
    }

    /// Enumerate every labeled DAG on `n` nodes.
    pub fn enumerate_all(n: usize) -> Vec<Dag> {
        assert!(n <= 5, "DAG enumeration is exponential; capped at n=5");
        let cells: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        let mut out = Vec::new();
        for mask in 0u64..(1u64 << cells.len()) {
            let mut dag = Dag::empty(n);
            for (b, &(i, j)) in cells.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    dag.adj[i * n + j] = true;
                }
            }
            if dag.try_topological_order().is_some() {
                out.push(dag);
            }
        }
        out
    }
}
