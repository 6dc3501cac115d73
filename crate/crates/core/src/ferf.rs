//! Fixed-radius controllability test via shortest paths.
//!
//! Vertices are the distinct states and successors of the dataset plus the
//! target. A vertex links to another when a sample carries it there, and
//! two vertices within the link radius link both ways. A dataset state is
//! deemed controllable when the target is reachable from it.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::neighbors::SpatialIndex;
use crate::space::{metric, State};

/// Hop count of an unreachable pair.
pub const UNREACHABLE: u32 = u32::MAX;

/// Above this many vertices proximity edges come from the spatial index
/// rather than an all-pairs scan.
pub const SCAN_LIMIT: usize = 2000;

/// Vertex count above which the dense all-pairs matrix is discouraged.
pub const FLOYD_WARN_LIMIT: usize = 6000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityStrategy {
    #[default]
    Auto,
    Scan,
    Index,
}

#[derive(Clone, Debug)]
pub struct ReachGraph {
    vertices: Vec<State>,
    /// Sorted, deduplicated successor lists.
    adjacency: Vec<Vec<u32>>,
    /// Vertex of each sample's state.
    state_vertex: Vec<u32>,
    target_vertex: u32,
}

fn key(p: &State) -> Vec<u64> {
    // +0.0 and -0.0 are the same point
    p.coords().iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl ReachGraph {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[State] {
        &self.vertices
    }

    pub fn successors(&self, v: usize) -> &[u32] {
        &self.adjacency[v]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[from].binary_search(&(to as u32)).is_ok()
    }

    pub fn target_vertex(&self) -> usize {
        self.target_vertex as usize
    }

    pub fn state_vertex(&self, sample: usize) -> usize {
        self.state_vertex[sample] as usize
    }

    /// Vertex holding exactly `p`, if any.
    pub fn vertex_of(&self, p: &State) -> Option<usize> {
        let k = key(p);
        self.vertices.iter().position(|v| key(v) == k)
    }

    /// Directed graph from explicit edges, for tests and tooling.
    pub fn from_edges(vertices: Vec<State>, edges: &[(usize, usize)], target: usize) -> Result<Self> {
        let n = vertices.len();
        if target >= n {
            return Err(Error::MissingTarget);
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidParameter {
                    name: "edges",
                    reason: format!("({a}, {b}) out of range for {n} vertices"),
                });
            }
            if a != b {
                adjacency[a].push(b as u32);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(ReachGraph {
            vertices,
            adjacency,
            state_vertex: Vec::new(),
            target_vertex: target as u32,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Radius of the mutual-proximity edges; the target radius when unset.
    pub link_radius: Option<f64>,
    pub proximity: ProximityStrategy,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            link_radius: None,
            proximity: ProximityStrategy::Auto,
        }
    }
}

fn check_radius(name: &'static str, r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("{r} is not positive"),
        })
    }
}

/// Builds the graph with the target radius also used as the link radius.
pub fn build_graph(ds: &Dataset, target: &State, epsilon: f64) -> Result<ReachGraph> {
    build_graph_with(ds, target, epsilon, &GraphOptions::default())
}

pub fn build_graph_with(
    ds: &Dataset,
    target: &State,
    epsilon: f64,
    opts: &GraphOptions,
) -> Result<ReachGraph> {
    check_radius("epsilon", epsilon)?;
    let link = opts.link_radius.unwrap_or(epsilon);
    check_radius("link_radius", link)?;
    ds.check_state(target)?;

    let mut ids: HashMap<Vec<u64>, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut intern = |p: &State| -> u32 {
        *ids.entry(key(p)).or_insert_with(|| {
            vertices.push(p.clone());
            (vertices.len() - 1) as u32
        })
    };
    let mut state_vertex = Vec::with_capacity(ds.len());
    let mut edges: Vec<(u32, u32)> = Vec::with_capacity(ds.len());
    for s in ds.samples() {
        let a = intern(&s.x);
        let b = intern(&s.x_next);
        state_vertex.push(a);
        edges.push((a, b));
    }
    let target_vertex = intern(target);

    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); vertices.len()];
    for (a, b) in edges {
        if a != b {
            adjacency[a as usize].push(b);
        }
    }

    let use_index = match opts.proximity {
        ProximityStrategy::Scan => false,
        ProximityStrategy::Index => true,
        ProximityStrategy::Auto => vertices.len() > SCAN_LIMIT,
    };
    let data_vertices = vertices.len();
    let proximity: Vec<Vec<u32>> = if use_index {
        let index = SpatialIndex::build(&vertices)?;
        (0..data_vertices)
            .into_par_iter()
            .map(|v| {
                let mut out = Vec::new();
                let r = radius_for(v, target_vertex as usize, link, epsilon);
                index.within(vertices[v].coords(), r, |w, _| {
                    if w != v && within_link(v, w, target_vertex as usize, link, epsilon, &vertices) {
                        out.push(w as u32);
                    }
                });
                out
            })
            .collect()
    } else {
        (0..data_vertices)
            .into_par_iter()
            .map(|v| {
                (0..data_vertices)
                    .filter(|&w| w != v && within_link(v, w, target_vertex as usize, link, epsilon, &vertices))
                    .map(|w| w as u32)
                    .collect()
            })
            .collect()
    };
    for (list, extra) in adjacency.iter_mut().zip(proximity) {
        list.extend(extra);
        list.sort_unstable();
        list.dedup();
    }

    Ok(ReachGraph {
        vertices,
        adjacency,
        state_vertex,
        target_vertex,
    })
}

/// Links touching the target use the target radius, the rest the link radius.
fn radius_for(v: usize, target: usize, link: f64, epsilon: f64) -> f64 {
    if v == target {
        epsilon
    } else {
        link.max(epsilon)
    }
}

fn within_link(v: usize, w: usize, target: usize, link: f64, epsilon: f64, vertices: &[State]) -> bool {
    let r = if v == target || w == target { epsilon } else { link };
    metric(vertices[v].coords(), vertices[w].coords()) <= r
}

/// Dense hop-count matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    hops: Vec<u32>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, from: usize, to: usize) -> u32 {
        self.hops[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[u32] {
        &self.hops[from * self.n..(from + 1) * self.n]
    }

    pub fn column(&self, to: usize) -> Vec<u32> {
        (0..self.n).map(|i| self.get(i, to)).collect()
    }
}

/// All-pairs shortest hop counts by Floyd's algorithm.
pub fn floyd_all_pairs(g: &ReachGraph) -> DistanceMatrix {
    let n = g.len();
    let mut hops = vec![UNREACHABLE; n * n];
    for v in 0..n {
        hops[v * n + v] = 0;
        for &w in g.successors(v) {
            hops[v * n + w as usize] = 1;
        }
    }
    let mut pivot_row = vec![0u32; n];
    for k in 0..n {
        pivot_row.copy_from_slice(&hops[k * n..(k + 1) * n]);
        hops.par_chunks_mut(n).for_each(|row| {
            let through = row[k];
            if through == UNREACHABLE {
                return;
            }
            for (cell, &tail) in row.iter_mut().zip(&pivot_row) {
                if tail != UNREACHABLE {
                    let candidate = through + tail;
                    if candidate < *cell {
                        *cell = candidate;
                    }
                }
            }
        });
    }
    DistanceMatrix { n, hops }
}

/// Hop count from every vertex to `target`, by Dijkstra's algorithm on the
/// reversed graph.
pub fn dijkstra_to_target(g: &ReachGraph, target: &State) -> Result<Vec<u32>> {
    let t = g.vertex_of(target).ok_or(Error::MissingTarget)?;
    Ok(dijkstra_to_vertex(g, t))
}

pub fn dijkstra_to_vertex(g: &ReachGraph, t: usize) -> Vec<u32> {
    let n = g.len();
    let mut reversed: Vec<Vec<u32>> = vec![Vec::new(); n];
    for v in 0..n {
        for &w in g.successors(v) {
            reversed[w as usize].push(v as u32);
        }
    }
    let mut dist = vec![UNREACHABLE; n];
    let mut heap = BinaryHeap::new();
    dist[t] = 0;
    heap.push(Reverse((0u32, t as u32)));
    while let Some(Reverse((d, v))) = heap.pop() {
        if d > dist[v as usize] {
            continue;
        }
        for &w in &reversed[v as usize] {
            let nd = d + 1;
            if nd < dist[w as usize] {
                dist[w as usize] = nd;
                heap.push(Reverse((nd, w)));
            }
        }
    }
    dist
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FerfMode {
    Floyd,
    #[default]
    Dijkstra,
}

#[derive(Clone, Debug)]
pub struct FerfOutcome {
    pub graph: ReachGraph,
    /// Hop count from each sample's state to the target.
    pub hops: Vec<u32>,
    pub controllable_indices: Vec<usize>,
    /// Present in floyd mode.
    pub distances: Option<DistanceMatrix>,
}

pub fn run_ferf(
    ds: &Dataset,
    target: &State,
    epsilon: f64,
    mode: FerfMode,
    opts: &GraphOptions,
) -> Result<FerfOutcome> {
    let graph = build_graph_with(ds, target, epsilon, opts)?;
    let t = graph.target_vertex();
    let (to_target, distances) = match mode {
        FerfMode::Dijkstra => (dijkstra_to_vertex(&graph, t), None),
        FerfMode::Floyd => {
            let m = floyd_all_pairs(&graph);
            (m.column(t), Some(m))
        }
    };
    let hops: Vec<u32> = (0..ds.len())
        .map(|i| to_target[graph.state_vertex(i)])
        .collect();
    let controllable_indices = hops
        .iter()
        .enumerate()
        .filter(|(_, h)| **h != UNREACHABLE)
        .map(|(i, _)| i)
        .collect();
    Ok(FerfOutcome {
        graph,
        hops,
        controllable_indices,
        distances,
    })
}

/// Sample indices whose state reaches the target in the graph.
pub fn ferf_controllable(ds: &Dataset, target: &State, epsilon: f64) -> Result<Vec<usize>> {
    Ok(run_ferf(ds, target, epsilon, FerfMode::Dijkstra, &GraphOptions::default())?.controllable_indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::TransitionSample;

    fn s(x: [f64; 2], xn: [f64; 2]) -> TransitionSample {
        TransitionSample::new(x.into(), [0.0].into(), xn.into()).unwrap()
    }

    fn chain() -> Dataset {
        Dataset::new(vec![s([0.0, 0.0], [1.0, 0.0]), s([1.0, 0.0], [2.0, 0.0])], None).unwrap()
    }

    #[test]
    fn single_sample_graph() {
        let ds = Dataset::new(vec![s([0.0, 0.0], [1.0, 0.0])], None).unwrap();
        let g = build_graph(&ds, &[5.0, 5.0].into(), 1e-6).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn chain_paths() {
        let ds = chain();
        let t = State::from([2.0, 0.0]);
        let g = build_graph(&ds, &t, 1e-6).unwrap();
        assert_eq!(g.len(), 3);
        let m = floyd_all_pairs(&g);
        assert_eq!(m.get(0, 2), 2);
        assert_eq!(dijkstra_to_target(&g, &t).unwrap(), vec![2, 1, 0]);
        assert_eq!(m.column(2), vec![2, 1, 0]);
        assert_eq!(ferf_controllable(&ds, &t, 1e-6).unwrap(), vec![0, 1]);
    }

    #[test]
    fn boundary_distance_links_both_ways() {
        let ds = Dataset::new(vec![s([0.0, 0.0], [0.0, 0.0]), s([0.5, 0.0], [0.5, 0.0])], None)
            .unwrap();
        let g = build_graph(&ds, &[9.0, 9.0].into(), 0.5).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
        let g = build_graph(&ds, &[9.0, 9.0].into(), 0.4999).unwrap();
        assert!(!g.has_edge(0, 1));
    }

    #[test]
    fn disconnected_vertex() {
        let ds = chain();
        let g = build_graph(&ds, &[7.0, 7.0].into(), 1e-6).unwrap();
        let m = floyd_all_pairs(&g);
        let t = g.target_vertex();
        for v in 0..g.len() {
            let expect = if v == t { 0 } else { UNREACHABLE };
            assert_eq!(m.get(t, v), expect);
            assert_eq!(m.get(v, t), expect);
        }
    }

    #[test]
    fn only_target_coincident_states_without_edges() {
        let ds = Dataset::new(
            vec![s([0.0, 0.0], [0.3, 0.3]), s([0.6, 0.6], [0.9, 0.9])],
            None,
        )
        .unwrap();
        assert_eq!(ferf_controllable(&ds, &[0.0, 0.0].into(), 1e-3).unwrap(), vec![0]);
    }

    #[test]
    fn missing_target() {
        let g = build_graph(&chain(), &[2.0, 0.0].into(), 0.1).unwrap();
        assert!(matches!(
            dijkstra_to_target(&g, &[4.0, 4.0].into()),
            Err(Error::MissingTarget)
        ));
    }

    #[test]
    fn vertex_bound() {
        let ds = chain();
        let g = build_graph(&ds, &[0.5, 0.5].into(), 0.1).unwrap();
        assert!(g.len() <= 2 * ds.len() + 1);
    }

    #[test]
    fn link_radius_decouples_from_target_radius() {
        let ds = Dataset::new(
            vec![s([0.0, 0.0], [0.0, 0.0]), s([0.3, 0.0], [0.3, 0.0])],
            None,
        )
        .unwrap();
        let t = State::from([0.0, 0.05]);
        let opts = GraphOptions {
            link_radius: Some(0.35),
            ..Default::default()
        };
        let out = run_ferf(&ds, &t, 0.1, FerfMode::Dijkstra, &opts).unwrap();
        assert_eq!(out.controllable_indices, vec![0, 1]);
        let plain = run_ferf(&ds, &t, 0.1, FerfMode::Floyd, &GraphOptions::default()).unwrap();
        assert_eq!(plain.controllable_indices, vec![0]);
    }
}
