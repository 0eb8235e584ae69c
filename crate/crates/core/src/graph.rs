//! Area adjacency graphs: validation, connected components, and a
//! deterministic reverse Cuthill-McKee ordering used by the sparse solver.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    num_areas: usize,
    /// Sorted neighbour lists, no self-loops, symmetric.
    adj: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    pub fn new(num_areas: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); num_areas];
        for &(a, b) in edges {
            if a >= num_areas || b >= num_areas {
                return Err(Error::InvalidInput(format!(
                    "edge ({a},{b}) out of range for {num_areas} areas"
                )));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at area {a}")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { num_areas, adj })
    }

    /// Rectangular lattice with rook adjacency, nodes in row-major order.
    pub fn lattice(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        Self::new(rows * cols, &edges).expect("lattice edges are valid")
    }

    /// Path graph 0-1-...-(n-1).
    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges).expect("path edges are valid")
    }

    pub fn num_areas(&self) -> usize {
        self.num_areas
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    /// Component label per node plus the number of components.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.num_areas];
        let mut next = 0;
        for start in 0..self.num_areas {
            if label[start] != usize::MAX {
                continue;
            }
            let mut queue = VecDeque::from([start]);
            label[start] = next;
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        (label, next)
    }

    /// Reverse Cuthill-McKee permutation: `order[k]` is the original index of
    /// the node placed at position k. Start nodes are minimum-degree with
    /// lowest index; fully deterministic.
    pub fn rcm_order(&self) -> Vec<usize> {
        let n = self.num_areas;
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        loop {
            let start = (0..n)
                .filter(|&i| !visited[i])
                .min_by_key(|&i| (self.degree(i), i));
            let Some(start) = start else { break };
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                order.push(u);
                let mut nbrs: Vec<usize> = self.adj[u]
                    .iter()
                    .copied()
                    .filter(|&v| !visited[v])
                    .collect();
                nbrs.sort_by_key(|&v| (self.degree(v), v));
                for v in nbrs {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        order.reverse();
        order
    }
}
