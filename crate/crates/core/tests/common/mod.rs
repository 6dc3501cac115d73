//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written the slow, obvious way on purpose and shares no
//! code with the crate beyond its public types.

#![allow(dead_code)]

use std::collections::VecDeque;

use datactl_core::ferf::{ReachGraph, UNREACHABLE};
use datactl_core::lipschitz::{ConstraintPair, LipschitzEstimate};
use datactl_core::mecs::MecsResult;
use datactl_core::systems::{sample_dataset, SamplingConfig, SystemId, SystemSpec};
use datactl_core::{Dataset, State};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Smallest feasible `L_u` for a given `L_x`, or `None` if no `L_u` works.
fn least_lu(cs: &[ConstraintPair], lx: f64) -> Option<f64> {
    let mut lu: f64 = 0.0;
    for k in cs {
        let rest = k.c - k.a * lx;
        if rest <= 0.0 {
            continue;
        }
        if k.b == 0.0 {
            return None;
        }
        lu = lu.max(rest / k.b);
    }
    Some(lu)
}

fn least_lx(cs: &[ConstraintPair], lu: f64) -> Option<f64> {
    let swapped: Vec<ConstraintPair> = cs
        .iter()
        .map(|k| ConstraintPair { a: k.b, b: k.a, c: k.c })
        .collect();
    least_lu(&swapped, lu)
}

/// Grid search for the LCQP minimizer at resolution `step`.
///
/// Each coordinate is found on its own grid with the other coordinate set to
/// its least feasible value; both profiles are convex, so each grid argmin
/// lies within one step of the true coordinate.
pub fn grid_lcqp(cs: &[ConstraintPair], step: f64) -> (f64, f64) {
    // (R, R) with R = max c/(a+b) is feasible, so the optimum lies within √2·R
    let reach = cs
        .iter()
        .map(|k| if k.c <= 0.0 { 0.0 } else { k.c / (k.a + k.b) })
        .fold(0.0, f64::max)
        * std::f64::consts::SQRT_2;
    let steps = (reach / step).ceil() as usize + 1;
    let argmin = |least: &dyn Fn(f64) -> Option<f64>| {
        let mut best = (f64::INFINITY, 0.0);
        for s in 0..=steps {
            let v = s as f64 * step;
            if let Some(w) = least(v) {
                let obj = v * v + w * w;
                if obj < best.0 {
                    best = (obj, v);
                }
            }
        }
        best.1
    };
    let lx = argmin(&|v| least_lu(cs, v));
    let lu = argmin(&|v| least_lx(cs, v));
    (lx, lu)
}

/// Constraints with `a, b` bounded away from zero, so the optimum stays in
/// a box the grid can cover.
pub fn random_constraints(rng: &mut ChaCha8Rng, count: usize) -> Vec<ConstraintPair> {
    (0..count)
        .map(|_| ConstraintPair {
            a: rng.gen_range(0.2..=1.0),
            b: rng.gen_range(0.2..=1.0),
            c: rng.gen_range(0.0..=1.0),
        })
        .collect()
}

pub fn linear_scan(points: &[State], center: &State, r: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| euclid(p.coords(), center.coords()) <= r)
        .map(|(i, _)| i)
        .collect()
}

/// Random directed graph on `n` vertices with edge probability `p`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> ReachGraph {
    let vertices: Vec<State> = (0..n).map(|i| State::from([i as f64, 0.0])).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.gen_bool(p) {
                edges.push((a, b));
            }
        }
    }
    let target = rng.gen_range(0..n);
    ReachGraph::from_edges(vertices, &edges, target).unwrap()
}

/// Hop counts from `source` by breadth-first search.
pub fn bfs_from(g: &ReachGraph, source: usize) -> Vec<u32> {
    let mut dist = vec![UNREACHABLE; g.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        for &w in g.successors(v) {
            let w = w as usize;
            if dist[w] == UNREACHABLE {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// States of `ds` inside some visited ball, by exhaustive check.
pub fn brute_force_controllable(result: &MecsResult, ds: &Dataset) -> Vec<usize> {
    (0..ds.len())
        .filter(|&i| {
            let x = ds.samples()[i].x.coords();
            result
                .visited
                .iter()
                .any(|n| euclid(n.ball.center.coords(), x) <= n.ball.radius)
        })
        .collect()
}

pub fn in_union(result: &MecsResult, p: &[f64]) -> bool {
    result
        .visited
        .iter()
        .any(|n| euclid(n.ball.center.coords(), p) <= n.ball.radius)
}

pub fn uniform_in_box(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(l, h)| rng.gen_range(*l..=*h)).collect()
}

/// Small dataset from one of the benchmark systems.
pub fn small_dataset(rng: &mut ChaCha8Rng, max_n: usize) -> (SystemSpec, Dataset) {
    let ids = [SystemId::MassSpring, SystemId::Vanderpol, SystemId::TunnelDiode];
    let id = ids[rng.gen_range(0..ids.len())];
    let spec = SystemSpec::preset(id);
    let n = rng.gen_range(10..=max_n);
    let cfg = SamplingConfig::for_system(id, n, rng.gen());
    let ds = sample_dataset(&spec, &cfg).unwrap();
    (spec, ds)
}

/// Copies estimates with `L_x` raised to at least `floor`.
pub fn floored(estimates: &[LipschitzEstimate], floor: f64) -> Vec<LipschitzEstimate> {
    estimates
        .iter()
        .map(|e| LipschitzEstimate {
            l_x: e.l_x.max(floor),
            ..e.clone()
        })
        .collect()
}
