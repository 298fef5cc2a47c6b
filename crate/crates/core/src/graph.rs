//! Undirected communication graphs for the gossip algorithms, including
//! random geometric graph (RGG) generation on the unit square.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected simple graph on nodes `0..n`.
///
/// The adjacency matrix is symmetric with a zero diagonal; degrees are the
/// adjacency row sums. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    /// Generating point set, kept for reproducibility dumps only.
    points: Option<Vec<(f64, f64)>>,
    /// Generation parameters, kept for serialization only.
    gen_params: Option<(u64, f64)>,
}

impl Graph {
    /// Build a graph from an explicit edge list; duplicate edges collapse.
    pub fn from_edge_list(n: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("need at least 2 nodes, got {n}")));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &set {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph { n, edges: set, neighbors, points: None, gen_params: None })
    }

    /// Generate a random geometric graph: `n` points uniform in the unit
    /// square, edge (i, j) iff their distance is strictly below
    /// `sqrt(r0 * ln(n) / n)`. The same seed reproduces the same point set
    /// regardless of `r0`.
    pub fn generate_rgg(n: usize, r0: f64, seed: u64) -> Result<Graph> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("need at least 2 nodes, got {n}")));
        }
        if !(r0 > 0.0) {
            return Err(Error::InvalidParameter(format!("r0 must be positive, got {r0}")));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let points: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let r = rgg_radius(n, r0);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = points[i].0 - points[j].0;
                let dy = points[i].1 - points[j].1;
                if (dx * dx + dy * dy).sqrt() < r {
                    edges.push((i, j));
                }
            }
        }
        let mut g = Graph::from_edge_list(n, &edges)?;
        g.points = Some(points);
        g.gen_params = Some((seed, r0));
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Generating point set, present only for RGGs.
    pub fn points(&self) -> Option<&[(f64, f64)]> {
        self.points.as_deref()
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if i == j { self.degree(i) as f64 } else { 0.0 })
    }

    /// Laplacian L = D - A.
    pub fn laplacian(&self) -> DMatrix<f64> {
        self.degree_matrix() - self.adjacency_matrix()
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = GraphDoc {
            n: self.n,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            seed: self.gen_params.map(|(s, _)| s),
            r0: self.gen_params.map(|(_, r0)| r0),
        };
        serde_json::to_value(doc).expect("graph serialization cannot fail")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Graph> {
        let doc: GraphDoc = serde_json::from_value(value.clone())?;
        let edges: Vec<(usize, usize)> = doc.edges.iter().map(|e| (e[0], e[1])).collect();
        let mut g = Graph::from_edge_list(doc.n, &edges)?;
        if let (Some(seed), Some(r0)) = (doc.seed, doc.r0) {
            g.gen_params = Some((seed, r0));
        }
        Ok(g)
    }
}

/// Connection radius `sqrt(r0 * ln(n) / n)`.
pub fn rgg_radius(n: usize, r0: f64) -> f64 {
    (r0 * (n as f64).ln() / n as f64).sqrt()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    n: usize,
    edges: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r0: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p3() -> Graph {
        Graph::from_edge_list(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn path_graph_degrees() {
        let g = p3();
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        assert!(g.is_connected());
    }

    #[test]
    fn k2_from_edge_list() {
        let g = Graph::from_edge_list(2, &[(0, 1)]).unwrap();
        assert_eq!(g.degrees(), vec![1, 1]);
        assert!(g.is_connected());
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = Graph::from_edge_list(3, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.degrees(), vec![1, 1, 0]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Graph::from_edge_list(3, &[(0, 3)]).is_err());
        assert!(Graph::from_edge_list(3, &[(1, 1)]).is_err());
        assert!(Graph::from_edge_list(1, &[]).is_err());
    }

    #[test]
    fn disconnected_detected() {
        let g = Graph::from_edge_list(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(!g.is_connected());
    }

    #[test]
    fn rgg_radius_value() {
        // independent evaluation of sqrt(4 ln(100) / 100)
        let expected = (4.0_f64 * 100.0_f64.ln() / 100.0).sqrt();
        assert_relative_eq!(rgg_radius(100, 4.0), expected, max_relative = 1e-15);
        assert_relative_eq!(rgg_radius(100, 4.0), 0.429193, max_relative = 1e-5);
    }

    #[test]
    fn rgg_deterministic() {
        let a = Graph::generate_rgg(10, 1.0, 42).unwrap();
        let b = Graph::generate_rgg(10, 1.0, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rgg_k2_large_radius() {
        // radius >= sqrt(2) covers the whole unit square
        let g = Graph::generate_rgg(2, 10.0, 7).unwrap();
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn laplacian_of_path() {
        let l = p3().laplacian();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0],
        );
        assert_eq!(l, expected);
    }

    #[test]
    fn json_round_trip_sorted() {
        let g = Graph::from_edge_list(4, &[(3, 2), (0, 1), (1, 3)]).unwrap();
        let doc = g.to_json();
        let edges = doc["edges"].as_array().unwrap();
        assert_eq!(edges.len(), 3);
        // lexicographic edge ordering
        assert_eq!(edges[0][0], 0);
        let back = Graph::from_json(&doc).unwrap();
        assert_eq!(back, Graph::from_edge_list(4, &[(0, 1), (1, 3), (2, 3)]).unwrap());
    }

    proptest! {
        #[test]
        fn generated_graphs_are_consistent(n in 2usize..30, r0 in 0.2f64..8.0, seed in 0u64..1000) {
            let g = Graph::generate_rgg(n, r0, seed).unwrap();
            let a = g.adjacency_matrix();
            for i in 0..n {
                prop_assert_eq!(a[(i, i)], 0.0);
                let row_sum: f64 = (0..n).map(|j| a[(i, j)]).sum();
                prop_assert_eq!(row_sum as usize, g.degree(i));
                for j in 0..n {
                    prop_assert_eq!(a[(i, j)], a[(j, i)]);
                }
            }
        }

        #[test]
        fn rgg_monotone_in_radius(n in 2usize..25, r0 in 0.2f64..4.0, seed in 0u64..1000) {
            let small = Graph::generate_rgg(n, r0, seed).unwrap();
            let large = Graph::generate_rgg(n, r0 * 2.0, seed).unwrap();
            for (i, j) in small.edges() {
                prop_assert!(large.has_edge(i, j));
            }
        }
    }
}
