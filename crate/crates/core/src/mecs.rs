//! Controllable-tree search over metric balls.
//!
//! Starting from the target ball, each iteration selects the unvisited ball
//! of largest radius, finds every sample whose successor lies in it, gives
//! each such sample a ball whose one-step image provably stays inside the
//! selected ball (under the sample's local Lipschitz constant, capped at the
//! estimate's confidence radius), and prunes balls contained in others.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::lipschitz::LipschitzEstimate;
use crate::neighbors::SpatialIndex;
use crate::space::{ball_contains, metric, subset_by_geometry, ControlInput, State, StateBall, TIE_TOLERANCE};

/// Below this a Lipschitz constant is treated as zero.
pub const LIPSCHITZ_FLOOR: f64 = 1e-9;
/// A center is expanded again only if its radius grows by more than this.
pub const IMPROVEMENT_TOL: f64 = 1e-6;
/// Selection cap as a multiple of the dataset size.
pub const ITERATION_CAP_FACTOR: usize = 50;

/// Radius of the ball around a predecessor whose successor sits
/// `dist_to_center` from the center of a controllable ball of radius
/// `sigma`: `min(delta, (sigma - dist_to_center) / l_x)`.
pub fn evaluate_radius(sigma: f64, dist_to_center: f64, l_x: f64, delta: f64) -> Result<f64> {
    if !(dist_to_center >= 0.0 && dist_to_center <= sigma) {
        return Err(Error::Precondition(format!(
            "successor at distance {dist_to_center} is outside the selected ball of radius {sigma}"
        )));
    }
    if !(l_x >= 0.0 && delta > 0.0) {
        return Err(Error::Precondition(format!(
            "need l_x >= 0 and delta > 0, got l_x = {l_x}, delta = {delta}"
        )));
    }
    if l_x <= LIPSCHITZ_FLOOR {
        return Ok(delta);
    }
    Ok(delta.min((sigma - dist_to_center) / l_x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MecsOptions {
    /// Drop balls contained in other balls. Turning this off is only useful
    /// for checking that pruning does not change coverage.
    pub pruning: bool,
    pub improvement_tol: f64,
    /// Defaults to `ITERATION_CAP_FACTOR * N` when unset.
    pub max_iterations: Option<usize>,
}

impl Default for MecsOptions {
    fn default() -> Self {
        MecsOptions {
            pruning: true,
            improvement_tol: IMPROVEMENT_TOL,
            max_iterations: None,
        }
    }
}

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub ball: StateBall,
    pub parent: Option<NodeId>,
    /// Sample whose transition carries this ball into its parent.
    pub via_sample: Option<usize>,
    pub depth: usize,
    /// Iteration that selected the node, or created it for zero-radius
    /// nodes (which are never selected).
    pub iteration: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MecsStats {
    /// Balls taken from the unvisited set and expanded.
    pub selections: usize,
    /// (selected ball, predecessor) hits.
    pub hits: usize,
    /// Hits dropped because the center already had a ball at least as large.
    pub not_improving: usize,
    /// New balls dropped for lying inside an existing ball.
    pub pruned_new: usize,
    /// Unvisited balls dropped for lying inside a new ball.
    pub pruned_leaves: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MecsResult {
    pub target: State,
    pub epsilon: f64,
    /// Visited balls; `visited[0]` is the target ball and ids are positions.
    pub visited: Vec<TreeNode>,
    /// Sample indices whose state lies in some visited ball, ascending.
    pub controllable_indices: Vec<usize>,
    pub iterations: usize,
    /// Number of samples found in the selected ball, per selection.
    pub expansion_counts: Vec<usize>,
    pub stats: MecsStats,
}

impl MecsResult {
    pub fn root(&self) -> &TreeNode {
        &self.visited[0]
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode> {
        self.visited.get(id).ok_or(Error::UnknownNode(id))
    }

    /// Radii of selected balls in selection order.
    pub fn selected_radii(&self) -> impl Iterator<Item = f64> + '_ {
        self.visited[..self.stats.selections].iter().map(|n| n.ball.radius)
    }

    /// Point membership in the union of visited balls.
    pub fn covers(&self, p: &[f64]) -> bool {
        self.visited
            .iter()
            .any(|n| metric(n.ball.center.coords(), p) <= n.ball.radius)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Leaf,
    Visited,
    Pruned,
}

#[derive(Debug)]
struct Candidate {
    /// `None` for the target ball.
    sample: Option<usize>,
    radius: f64,
    parent: Option<usize>,
    depth: usize,
    iteration: usize,
    status: Status,
}

/// Max-radius ordering; ties go to the earliest created ball.
#[derive(Debug, PartialEq)]
struct Ranked {
    radius: f64,
    id: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.radius
            .total_cmp(&other.radius)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'a> {
    ds: &'a Dataset,
    estimates: &'a [LipschitzEstimate],
    target: &'a State,
    epsilon: f64,
    opts: &'a MecsOptions,
    states: SpatialIndex,
    successors: SpatialIndex,
    arena: Vec<Candidate>,
    /// Unvisited balls per center sample.
    leaves_at: Vec<Vec<usize>>,
    visited_at: Vec<Vec<usize>>,
    best_radius: Vec<Option<f64>>,
    /// Largest radius of any non-target ball so far.
    max_radius: f64,
    heap: BinaryHeap<Ranked>,
    order: Vec<usize>,
    expansion_counts: Vec<usize>,
    stats: MecsStats,
}

impl<'a> Search<'a> {
    fn center(&self, id: usize) -> &'a [f64] {
        match self.arena[id].sample {
            Some(i) => self.ds.samples()[i].x.coords(),
            None => self.target.coords(),
        }
    }

    /// Is `B(x_i, r)` inside the target ball or any live ball?
    fn is_covered(&self, i: usize, r: f64) -> bool {
        let c = self.ds.samples()[i].x.coords();
        if subset_by_geometry(metric(c, self.target.coords()), r, self.epsilon, TIE_TOLERANCE) {
            return true;
        }
        let reach = self.max_radius - r + TIE_TOLERANCE;
        if reach < 0.0 {
            return false;
        }
        let mut covered = false;
        self.states.within(c, reach, |j, d| {
            if covered {
                return;
            }
            covered = self.leaves_at[j]
                .iter()
                .chain(&self.visited_at[j])
                .any(|&id| subset_by_geometry(d, r, self.arena[id].radius, TIE_TOLERANCE));
        });
        covered
    }

    /// Prunes unvisited balls inside `B(x_i, r)`.
    fn prune_inside(&mut self, i: usize, r: f64) {
        let c = self.ds.samples()[i].x.coords();
        let mut hits = Vec::new();
        self.states.within(c, r + TIE_TOLERANCE, |j, d| {
            for &id in &self.leaves_at[j] {
                if subset_by_geometry(d, self.arena[id].radius, r, TIE_TOLERANCE) {
                    hits.push((j, id));
                }
            }
        });
        for (j, id) in hits {
            self.arena[id].status = Status::Pruned;
            self.leaves_at[j].retain(|&x| x != id);
            self.stats.pruned_leaves += 1;
        }
    }

    fn add(&mut self, i: usize, r: f64, parent: usize, iteration: usize) {
        let id = self.arena.len();
        self.arena.push(Candidate {
            sample: Some(i),
            radius: r,
            parent: Some(parent),
            depth: self.arena[parent].depth + 1,
            iteration,
            status: Status::Leaf,
        });
        self.leaves_at[i].push(id);
        self.max_radius = self.max_radius.max(r);
        if r > 0.0 {
            self.heap.push(Ranked { radius: r, id });
        }
    }

    fn expand(&mut self, id: usize, iteration: usize) -> Result<()> {
        let z = self.center(id);
        let sigma = self.arena[id].radius;
        let mut found = Vec::new();
        self.successors.within(z, sigma, |i, d| found.push((i, d)));
        found.sort_unstable_by_key(|&(i, _)| i);
        self.expansion_counts.push(found.len());
        self.stats.hits += found.len();

        for (i, d) in found {
            let est = &self.estimates[i];
            let r = evaluate_radius(sigma, d, est.l_x, est.delta)?;
            if let Some(best) = self.best_radius[i] {
                if r <= best + self.opts.improvement_tol {
                    self.stats.not_improving += 1;
                    continue;
                }
            }
            self.best_radius[i] = Some(r);
            if self.opts.pruning {
                if self.is_covered(i, r) {
                    self.stats.pruned_new += 1;
                    continue;
                }
                self.prune_inside(i, r);
            }
            self.add(i, r, id, iteration);
        }
        Ok(())
    }

    fn visit(&mut self, id: usize, iteration: usize) {
        let c = &mut self.arena[id];
        c.status = Status::Visited;
        c.iteration = iteration;
        if let Some(i) = c.sample {
            self.leaves_at[i].retain(|&x| x != id);
            self.visited_at[i].push(id);
        }
        self.order.push(id);
    }
}

fn validate(
    ds: &Dataset,
    estimates: &[LipschitzEstimate],
    target: &State,
    epsilon: f64,
) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("{epsilon} is not positive"),
        });
    }
    ds.check_state(target)?;
    if estimates.len() != ds.len() {
        return Err(Error::InvalidParameter {
            name: "estimates",
            reason: format!("{} estimates for {} samples", estimates.len(), ds.len()),
        });
    }
    if let Some(e) = estimates.iter().enumerate().find(|(i, e)| {
        e.sample_index != *i || !(e.l_x >= 0.0) || !(e.delta > 0.0 && e.delta.is_finite())
    }) {
        return Err(Error::InvalidParameter {
            name: "estimates",
            reason: format!("estimate at position {} is misaligned or invalid", e.0),
        });
    }
    Ok(())
}

/// Runs the search from `B(target, epsilon)` until no unvisited ball is left.
pub fn run_mecs(
    ds: &Dataset,
    estimates: &[LipschitzEstimate],
    target: &State,
    epsilon: f64,
    opts: &MecsOptions,
) -> Result<MecsResult> {
    validate(ds, estimates, target, epsilon)?;
    let n = ds.len();
    let cap = opts
        .max_iterations
        .unwrap_or(ITERATION_CAP_FACTOR * n + 1);

    let mut search = Search {
        ds,
        estimates,
        target,
        epsilon,
        opts,
        states: SpatialIndex::build(ds.states())?,
        successors: SpatialIndex::build(ds.successors())?,
        arena: vec![Candidate {
            sample: None,
            radius: epsilon,
            parent: None,
            depth: 0,
            iteration: 0,
            status: Status::Leaf,
        }],
        leaves_at: vec![Vec::new(); n],
        visited_at: vec![Vec::new(); n],
        best_radius: vec![None; n],
        max_radius: 0.0,
        heap: BinaryHeap::from([Ranked {
            radius: epsilon,
            id: 0,
        }]),
        order: Vec::new(),
        expansion_counts: Vec::new(),
        stats: MecsStats::default(),
    };

    let mut iteration = 0;
    while let Some(Ranked { id, .. }) = search.heap.pop() {
        if search.arena[id].status != Status::Leaf {
            continue;
        }
        if iteration == cap {
            return Err(Error::IterationCap(cap));
        }
        iteration += 1;
        search.visit(id, iteration);
        search.stats.selections += 1;
        search.expand(id, iteration)?;
    }

    // Zero-radius balls were never selectable; the survivors join the tree.
    let zero: Vec<usize> = (0..search.arena.len())
        .filter(|&id| search.arena[id].status == Status::Leaf)
        .collect();
    for id in zero {
        let created = search.arena[id].iteration;
        search.visit(id, created);
    }

    let Search {
        arena,
        order,
        states,
        expansion_counts,
        stats,
        ..
    } = search;

    let mut position = vec![usize::MAX; arena.len()];
    for (pos, &id) in order.iter().enumerate() {
        position[id] = pos;
    }
    let visited: Vec<TreeNode> = order
        .iter()
        .enumerate()
        .map(|(pos, &id)| {
            let c = &arena[id];
            let center = match c.sample {
                Some(i) => ds.samples()[i].x.clone(),
                None => target.clone(),
            };
            TreeNode {
                id: pos,
                ball: StateBall {
                    center,
                    radius: c.radius,
                },
                parent: c.parent.map(|p| position[p]),
                via_sample: c.sample,
                depth: c.depth,
                iteration: c.iteration,
            }
        })
        .collect();

    let controllable_indices = covered_indices(&states, &visited, n);
    Ok(MecsResult {
        target: target.clone(),
        epsilon,
        iterations: visited.len(),
        visited,
        controllable_indices,
        expansion_counts,
        stats,
    })
}

fn covered_indices(states: &SpatialIndex, visited: &[TreeNode], n: usize) -> Vec<usize> {
    let mut mark = vec![false; n];
    for node in visited {
        states.within(node.ball.center.coords(), node.ball.radius, |j, _| mark[j] = true);
    }
    mark.iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(j, _)| j)
        .collect()
}

/// Sample indices whose state lies in at least one visited ball.
pub fn controllable_indices(result: &MecsResult, ds: &Dataset) -> Result<Vec<usize>> {
    let states = SpatialIndex::build(ds.states())?;
    if let Some(node) = result.visited.first() {
        ds.check_state(&node.ball.center)?;
    }
    Ok(covered_indices(&states, &result.visited, ds.len()))
}

/// `(via_sample, u)` pairs from `node` up to the root, leaf first.
///
/// Applying the inputs in order from any state in the node's ball moves the
/// state through the ancestor balls into the target ball, provided the
/// Lipschitz constants used to size the balls hold.
pub fn extract_control_path(
    result: &MecsResult,
    ds: &Dataset,
    node: NodeId,
) -> Result<Vec<(usize, ControlInput)>> {
    let mut path = Vec::new();
    let mut current = result.node(node)?;
    while let Some(parent) = current.parent {
        let i = current
            .via_sample
            .ok_or_else(|| Error::Precondition(format!("node {} has no sample", current.id)))?;
        let sample = ds
            .samples()
            .get(i)
            .ok_or_else(|| Error::Precondition(format!("sample {i} not in dataset")))?;
        path.push((i, sample.u.clone()));
        current = result.node(parent)?;
    }
    Ok(path)
}

/// Checks the structural invariants of a finished search.
pub fn audit(result: &MecsResult, ds: &Dataset) -> Result<()> {
    let fail = |msg: String| Err(Error::Precondition(msg));
    let root = result
        .visited
        .first()
        .ok_or_else(|| Error::Precondition("empty tree".into()))?;
    if root.parent.is_some() || root.via_sample.is_some() {
        return fail("root has a parent".into());
    }
    if root.ball.center != result.target || root.ball.radius != result.epsilon {
        return fail("root is not the target ball".into());
    }
    if result.iterations != result.visited.len() {
        return fail("iteration count differs from visited count".into());
    }
    for node in &result.visited[1..] {
        let (Some(p), Some(i)) = (node.parent, node.via_sample) else {
            return fail(format!("node {} is detached", node.id));
        };
        let parent = result.node(p)?;
        let sample = ds
            .samples()
            .get(i)
            .ok_or_else(|| Error::Precondition(format!("sample {i} missing")))?;
        if p >= node.id && node.ball.radius > 0.0 {
            return fail(format!("node {} visited before its parent", node.id));
        }
        if !ball_contains(&parent.ball, &sample.x_next)? {
            return fail(format!("node {}: successor outside the parent ball", node.id));
        }
        if node.ball.center != sample.x {
            return fail(format!("node {}: center is not the sample state", node.id));
        }
        if node.depth != parent.depth + 1 {
            return fail(format!("node {}: depth mismatch", node.id));
        }
    }
    let again = controllable_indices(result, ds)?;
    if again != result.controllable_indices {
        return fail("controllable indices disagree with the visited balls".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::TransitionSample;

    #[test]
    fn radius_examples() {
        assert!((evaluate_radius(0.05, 0.03, 1.0, 0.2).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(evaluate_radius(0.05, 0.0, 0.0, 0.2).unwrap(), 0.2);
        assert_eq!(evaluate_radius(0.05, 0.05, 0.98, 0.2).unwrap(), 0.0);
        assert_eq!(evaluate_radius(0.05, 0.0, 0.1, 0.2).unwrap(), 0.2);
        assert!(evaluate_radius(0.05, 0.06, 1.0, 0.2).is_err());
    }

    fn chain_dataset() -> Dataset {
        // 0 -> 1 -> 2 along the x axis, with samples 1 spaced by 0.5
        let s = |a: f64, b: f64| {
            TransitionSample::new([a, 0.0].into(), [0.0].into(), [b, 0.0].into()).unwrap()
        };
        Dataset::new(vec![s(1.0, 0.5), s(0.5, 0.0), s(3.0, 3.0)], None).unwrap()
    }

    #[test]
    fn expands_backwards_along_a_chain() {
        let ds = chain_dataset();
        let est = LipschitzEstimate::uniform(3, 1.0, 0.0, 0.2);
        let r = run_mecs(&ds, &est, &[0.0, 0.0].into(), 0.1, &MecsOptions::default()).unwrap();
        audit(&r, &ds).unwrap();
        assert_eq!(r.controllable_indices, vec![0, 1]);
        assert_eq!(r.visited.len(), 3);
        let path = extract_control_path(&r, &ds, 2).unwrap();
        assert_eq!(path.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1]);
        assert!(extract_control_path(&r, &ds, 0).unwrap().is_empty());
        assert!(matches!(
            extract_control_path(&r, &ds, 9),
            Err(Error::UnknownNode(9))
        ));
    }

    #[test]
    fn no_predecessor_leaves_only_the_root() {
        let ds = chain_dataset();
        let est = LipschitzEstimate::uniform(3, 1.0, 0.0, 0.2);
        let r = run_mecs(&ds, &est, &[2.0, 2.0].into(), 0.1, &MecsOptions::default()).unwrap();
        assert_eq!(r.visited.len(), 1);
        assert!(r.controllable_indices.is_empty());

        // target covering sample 2's state but nothing flows into it
        let r = run_mecs(&ds, &est, &[3.0, 0.05].into(), 0.06, &MecsOptions::default()).unwrap();
        assert_eq!(r.controllable_indices, vec![2]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = chain_dataset();
        let est = LipschitzEstimate::uniform(3, 1.0, 0.0, 0.2);
        let t = State::from([0.0, 0.0]);
        let o = MecsOptions::default();
        assert!(run_mecs(&ds, &est, &t, 0.0, &o).is_err());
        assert!(run_mecs(&ds, &est[..2], &t, 0.1, &o).is_err());
        assert!(run_mecs(&ds, &est, &[0.0].into(), 0.1, &o).is_err());
    }

    #[test]
    fn tangent_successor_gives_a_kept_zero_ball() {
        let s = TransitionSample::new([1.0, 0.0].into(), [0.0].into(), [0.1, 0.0].into()).unwrap();
        let ds = Dataset::new(vec![s], None).unwrap();
        let est = LipschitzEstimate::uniform(1, 1.0, 0.0, 0.2);
        let r = run_mecs(&ds, &est, &[0.0, 0.0].into(), 0.1, &MecsOptions::default()).unwrap();
        assert_eq!(r.visited.len(), 2);
        assert_eq!(r.visited[1].ball.radius, 0.0);
        assert_eq!(r.stats.selections, 1);
        assert_eq!(r.controllable_indices, vec![0]);
        audit(&r, &ds).unwrap();
    }

    #[test]
    fn iteration_cap_is_enforced() {
        let ds = chain_dataset();
        let est = LipschitzEstimate::uniform(3, 1.0, 0.0, 0.2);
        let o = MecsOptions {
            max_iterations: Some(1),
            ..Default::default()
        };
        assert!(matches!(
            run_mecs(&ds, &est, &[0.0, 0.0].into(), 0.1, &o),
            Err(Error::IterationCap(1))
        ));
    }
}
