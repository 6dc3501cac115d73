//! Local Lipschitz constant estimation.
//!
//! For sample `i`, every pair `{j, k}` of samples whose states lie within
//! `delta` of `x_i` yields the half-plane
//!
//! ```text
//! d(x_j, x_k) * L_x + d(u_j, u_k) * L_u >= d(x'_j, x'_k)
//! ```
//!
//! and the estimate is the point of least `L_x² + L_u²` in the intersection
//! of those half-planes with the nonnegative quadrant.
//!
//! Dividing a constraint with `c > 0` by `c` turns it into `p · L >= 1` with
//! `p = (a/c, b/c)`. Over `L >= 0` only the points of `{p}` on its lower-left
//! convex hull can bind, so the solver keeps a Pareto front of the normals,
//! reduces it to the hull, and enumerates candidate active sets over the
//! hull alone.
//!
//! Neighborhoods hold up to a few hundred thousand pairs, almost none of
//! which bind. [`estimate_all`] therefore solves over a small working set
//! and adds pairs only when a full scan finds them violated; the scan stops
//! when nothing is violated, which makes the working optimum the optimum of
//! the full set.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::neighbors::SpatialIndex;
use crate::seed::stream_rng;
use crate::space::metric;

/// Successor gap above which two identical `(x, u)` samples are reported as
/// inconsistent.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Number of random global pairs behind the sparse-neighborhood fallback.
pub const FALLBACK_PAIRS: usize = 200;

/// `a * L_x + b * L_u >= c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintPair {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub sample_index: usize,
    pub l_x: f64,
    pub l_u: f64,
    pub delta: f64,
    pub n_neighbors: usize,
    pub fallback_used: bool,
}

impl LipschitzEstimate {
    /// Same constants for every sample, e.g. known true values.
    pub fn uniform(n: usize, l_x: f64, l_u: f64, delta: f64) -> Vec<LipschitzEstimate> {
        (0..n)
            .map(|sample_index| LipschitzEstimate {
                sample_index,
                l_x,
                l_u,
                delta,
                n_neighbors: 0,
                fallback_used: false,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzOptions {
    pub delta: f64,
    pub fallback_pairs: usize,
    pub seed: u64,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        LipschitzOptions {
            delta: 0.2,
            fallback_pairs: FALLBACK_PAIRS,
            seed: 0,
        }
    }
}

impl LipschitzOptions {
    pub fn with_delta(delta: f64) -> Self {
        LipschitzOptions {
            delta,
            ..Default::default()
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "delta",
            reason: format!("{delta} is not positive"),
        })
    }
}

/// Normalized constraint `p · L >= 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Normal {
    alpha: f64,
    beta: f64,
    /// Samples that produced the constraint, for warm starts.
    pair: (usize, usize),
}

/// Pareto-minimal normals seen so far, sorted by `alpha` ascending (and
/// therefore `beta` strictly descending).
#[derive(Debug, Default)]
struct Envelope {
    front: Vec<Normal>,
    accepted: usize,
}

impl Envelope {
    fn clear(&mut self) {
        self.front.clear();
        self.accepted = 0;
    }

    /// Adds one constraint; `Err(gap)` for an inconsistent `a = b = 0` pair.
    /// `Ok(true)` when the front changed.
    #[inline]
    fn push(&mut self, a: f64, b: f64, c: f64, pair: (usize, usize)) -> std::result::Result<bool, f64> {
        if a == 0.0 && b == 0.0 {
            return if c > FEASIBILITY_TOL { Err(c) } else { Ok(false) };
        }
        self.accepted += 1;
        if c <= 0.0 {
            // holds for every L >= 0
            return Ok(false);
        }
        Ok(self.insert(Normal {
            alpha: a / c,
            beta: b / c,
            pair,
        }))
    }

    fn insert(&mut self, p: Normal) -> bool {
        let pos = self.front.partition_point(|q| q.alpha <= p.alpha);
        if pos > 0 && self.front[pos - 1].beta <= p.beta {
            return false;
        }
        let start = if pos > 0 && self.front[pos - 1].alpha == p.alpha {
            pos - 1
        } else {
            pos
        };
        let end = pos + self.front[pos..].partition_point(|q| q.beta >= p.beta);
        self.front.splice(start..end, [p]);
        true
    }

    fn is_empty(&self) -> bool {
        self.accepted == 0
    }

    fn solve(&self) -> (f64, f64) {
        solve_hull(&lower_hull(&self.front))
    }
}

/// Lower convex hull of a front sorted by `alpha` ascending.
fn lower_hull(front: &[Normal]) -> Vec<Normal> {
    let mut hull: Vec<Normal> = Vec::with_capacity(front.len());
    for &p in front {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let cross = (a.alpha - o.alpha) * (p.beta - o.beta) - (a.beta - o.beta) * (p.alpha - o.alpha);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Enumerates candidate active sets over the hull constraints and returns
/// the feasible candidate of least norm.
fn solve_hull(hull: &[Normal]) -> (f64, f64) {
    if hull.is_empty() {
        return (0.0, 0.0);
    }
    let feasible = |lx: f64, lu: f64| {
        lx >= 0.0
            && lu >= 0.0
            && hull
                .iter()
                .all(|p| p.alpha * lx + p.beta * lu >= 1.0 - 1e-12)
    };
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |lx: f64, lu: f64| {
        if lx.is_finite() && lu.is_finite() && feasible(lx, lu) {
            let better = match best {
                None => true,
                Some((bx, bu)) => lx * lx + lu * lu < bx * bx + bu * bu,
            };
            if better {
                best = Some((lx, lu));
            }
        }
    };
    for p in hull {
        // projection of the origin onto the constraint line
        let n2 = p.alpha * p.alpha + p.beta * p.beta;
        consider(p.alpha / n2, p.beta / n2);
        // the line meeting either axis
        if p.alpha > 0.0 {
            consider(1.0 / p.alpha, 0.0);
        }
        if p.beta > 0.0 {
            consider(0.0, 1.0 / p.beta);
        }
    }
    for w in hull.windows(2) {
        let (p, q) = (w[0], w[1]);
        let det = p.alpha * q.beta - p.beta * q.alpha;
        if det != 0.0 {
            consider((q.beta - p.beta) / det, (p.alpha - q.alpha) / det);
        }
    }
    best.expect("a nonempty hull always has a feasible axis candidate")
}

/// Minimizes `L_x² + L_u²` over `L >= 0` subject to every constraint.
///
/// An empty list gives `(0, 0)`.
pub fn solve_lcqp(constraints: &[ConstraintPair]) -> Result<(f64, f64)> {
    let mut env = Envelope::default();
    for (n, k) in constraints.iter().enumerate() {
        let valid = [k.a, k.b, k.c].iter().all(|v| v.is_finite() && *v >= 0.0);
        if !valid || (k.a == 0.0 && k.b == 0.0 && k.c > 0.0) {
            return Err(Error::Precondition(format!(
                "constraint {n} ({}, {}, {}) is not a valid Lipschitz half-plane",
                k.a, k.b, k.c
            )));
        }
        let _ = env.push(k.a, k.b, k.c, (n, n));
    }
    Ok(env.solve())
}

/// Indices of samples whose state lies within `delta` of sample `i`'s.
fn neighborhood(ds: &Dataset, i: usize, delta: f64, idx: &SpatialIndex) -> Vec<usize> {
    let mut out = Vec::new();
    idx.within(ds.samples()[i].x.coords(), delta, |j, _| out.push(j));
    out.sort_unstable();
    out
}

/// Visits every unordered pair of `members` with its (a, b, c).
fn for_each_pair<F>(ds: &Dataset, members: &[usize], mut f: F) -> Result<()>
where
    F: FnMut(usize, usize, f64, f64, f64) -> std::result::Result<(), f64>,
{
    let s = ds.samples();
    for (n, &j) in members.iter().enumerate() {
        let (xj, uj, nj) = (s[j].x.coords(), s[j].u.coords(), s[j].x_next.coords());
        for &k in &members[n + 1..] {
            let a = metric(xj, s[k].x.coords());
            let b = metric(uj, s[k].u.coords());
            let c = metric(nj, s[k].x_next.coords());
            f(j, k, a, b, c).map_err(|gap| Error::DataInconsistency {
                first: j,
                second: k,
                gap,
            })?;
        }
    }
    Ok(())
}

/// Constraint list for sample `i` over its `delta`-neighborhood in `idx`
/// (an index over the dataset states).
pub fn build_constraints(
    ds: &Dataset,
    i: usize,
    delta: f64,
    idx: &SpatialIndex,
) -> Result<Vec<ConstraintPair>> {
    check_delta(delta)?;
    if i >= ds.len() {
        return Err(Error::InvalidParameter {
            name: "sample index",
            reason: format!("{i} out of range for {} samples", ds.len()),
        });
    }
    let members = neighborhood(ds, i, delta, idx);
    let mut out = Vec::new();
    for_each_pair(ds, &members, |_, _, a, b, c| {
        if a == 0.0 && b == 0.0 {
            if c > FEASIBILITY_TOL {
                return Err(c);
            }
        } else {
            out.push(ConstraintPair { a, b, c });
        }
        Ok(())
    })?;
    Ok(out)
}

/// Estimate from random global pairs; used where a neighborhood yields no
/// constraints.
fn global_estimate(ds: &Dataset, opts: &LipschitzOptions) -> Result<(f64, f64)> {
    let n = ds.len();
    if n < 2 {
        return Ok((0.0, 0.0));
    }
    let mut rng = stream_rng(opts.seed, 0);
    let s = ds.samples();
    let mut env = Envelope::default();
    for _ in 0..opts.fallback_pairs {
        let j = rng.gen_range(0..n);
        let mut k = rng.gen_range(0..n - 1);
        if k >= j {
            k += 1;
        }
        let a = metric(s[j].x.coords(), s[k].x.coords());
        let b = metric(s[j].u.coords(), s[k].u.coords());
        let c = metric(s[j].x_next.coords(), s[k].x_next.coords());
        env.push(a, b, c, (j, k)).map_err(|gap| Error::DataInconsistency {
            first: j.min(k),
            second: j.max(k),
            gap,
        })?;
    }
    Ok(env.solve())
}

/// Neighborhood copied column by column, so distance loops over a block of
/// partners vectorize.
#[derive(Debug, Default)]
struct Packed {
    n: usize,
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    xn: Vec<Vec<f64>>,
}

impl Packed {
    fn fill(&mut self, ds: &Dataset, members: &[usize]) {
        fn refill<'a>(cols: &mut Vec<Vec<f64>>, dim: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) {
            cols.resize_with(dim, Vec::new);
            for (axis, col) in cols.iter_mut().enumerate() {
                col.clear();
                col.extend(rows.clone().map(|r| r[axis]));
            }
        }
        let s = ds.samples();
        self.n = members.len();
        refill(&mut self.x, ds.state_dim(), members.iter().map(|&j| s[j].x.coords()));
        refill(&mut self.u, ds.input_dim(), members.iter().map(|&j| s[j].u.coords()));
        refill(&mut self.xn, ds.state_dim(), members.iter().map(|&j| s[j].x_next.coords()));
    }

    fn exact(&self, j: usize, k: usize) -> (f64, f64, f64) {
        let gap = |cols: &[Vec<f64>]| cols.iter().map(|c| (c[j] - c[k]).powi(2)).sum::<f64>().sqrt();
        (gap(&self.x), gap(&self.u), gap(&self.xn))
    }
}

const BLOCK: usize = 64;

/// Squared distances from row `j` to rows `start..start + out.len()`.
#[inline(always)]
fn block_gaps(cols: &[Vec<f64>], j: usize, start: usize, out: &mut [f64]) {
    out.fill(0.0);
    let len = out.len();
    for col in cols {
        let v = col[j];
        for (o, w) in out.iter_mut().zip(&col[start..start + len]) {
            *o += (v - w) * (v - w);
        }
    }
}

/// Relative slack under which a pair counts as violated by the working
/// solution.
const VIOLATION_TOL: f64 = 1e-11;

/// Solves the LCQP of one packed neighborhood by constraint generation.
///
/// The working set starts with the pairs through the center sample `center`.
/// Each round scans all pairs against the current optimum and adds the
/// violated ones; once a round adds nothing, the working optimum satisfies
/// every pair and is therefore the optimum of the full set. The scan needs no
/// square roots for pairs that satisfy the current optimum. Returns `None`
/// when every pair is degenerate.
fn solve_neighborhood(
    p: &Packed,
    members: &[usize],
    center: usize,
    warm: &[(usize, usize)],
    env: &mut Envelope,
) -> std::result::Result<Option<(f64, f64)>, (usize, usize, f64)> {
    let n = p.n;
    let mut seed = |j: usize, k: usize| {
        let (a, b, c) = p.exact(j, k);
        env.push(a, b, c, (members[j], members[k]))
            .map(|_| ())
            .map_err(|gap| (j.min(k), j.max(k), gap))
    };
    for k in (0..n).filter(|&k| k != center) {
        seed(center, k)?;
    }
    for &(gj, gk) in warm {
        if let (Ok(j), Ok(k)) = (members.binary_search(&gj), members.binary_search(&gk)) {
            seed(j, k)?;
        }
    }
    let mut nondegenerate = !env.is_empty();
    let (mut a2, mut b2, mut c2) = ([0.0; BLOCK], [0.0; BLOCK], [0.0; BLOCK]);
    let mut flag = [false; BLOCK];
    loop {
        let (lx, lu) = env.solve();
        let (lx2, lu2) = (lx * lx, lu * lu);
        let cross = 4.0 * lx2 * lu2;
        let mut changed = false;
        for j in 0..n {
            let mut start = j + 1;
            while start < n {
                let len = BLOCK.min(n - start);
                block_gaps(&p.x, j, start, &mut a2[..len]);
                block_gaps(&p.u, j, start, &mut b2[..len]);
                block_gaps(&p.xn, j, start, &mut c2[..len]);
                let mut any = false;
                for t in 0..len {
                    // c > a L_x + b L_u, squared twice to avoid roots
                    let rest = c2[t] - a2[t] * lx2 - b2[t] * lu2;
                    flag[t] = rest > 0.0 && rest * rest > cross * a2[t] * b2[t];
                    any |= flag[t];
                    nondegenerate |= a2[t] + b2[t] > 0.0;
                }
                if any {
                    for t in (0..len).filter(|&t| flag[t]) {
                        let k = start + t;
                        let (a, b, c) = (a2[t].sqrt(), b2[t].sqrt(), c2[t].sqrt());
                        if a == 0.0 && b == 0.0 {
                            if c > FEASIBILITY_TOL {
                                return Err((j, k, c));
                            }
                            continue;
                        }
                        if a * lx + b * lu < c * (1.0 - VIOLATION_TOL) {
                            changed |= env.push(a, b, c, (members[j], members[k])).unwrap_or(false);
                        }
                    }
                }
                start += len;
            }
        }
        if !changed {
            return Ok(nondegenerate.then_some((lx, lu)));
        }
    }
}

/// Samples per work item. The warm start resets at item boundaries, so the
/// output does not depend on how rayon schedules the items.
const CHUNK: usize = 32;

/// One estimate per sample, in sample order.
pub fn estimate_all(ds: &Dataset, opts: &LipschitzOptions) -> Result<Vec<LipschitzEstimate>> {
    check_delta(opts.delta)?;
    let idx = SpatialIndex::build(ds.states())?;
    let fallback = std::sync::OnceLock::new();
    let n = ds.len();
    let chunks = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let (mut env, mut packed, mut warm) = (Envelope::default(), Packed::default(), Vec::new());
            (c * CHUNK..n.min((c + 1) * CHUNK))
                .map(|i| {
                    // the previous sample's binding pairs often bind here too
                    warm.clear();
                    warm.extend(env.front.iter().map(|q| q.pair));
                    env.clear();
                    let members = neighborhood(ds, i, opts.delta, &idx);
                    packed.fill(ds, &members);
                    let center = members.binary_search(&i).expect("a sample neighbors itself");
                    let solved = solve_neighborhood(&packed, &members, center, &warm, &mut env)
                        .map_err(|(j, k, gap)| Error::DataInconsistency {
                            first: members[j],
                            second: members[k],
                            gap,
                        })?;
                    let (l_x, l_u, fallback_used) = match solved {
                        Some((lx, lu)) => (lx, lu, false),
                        None => {
                            let (lx, lu) = match fallback.get() {
                                Some(v) => *v,
                                None => {
                                    let v = global_estimate(ds, opts)?;
                                    *fallback.get_or_init(|| v)
                                }
                            };
                            (lx, lu, true)
                        }
                    };
                    Ok(LipschitzEstimate {
                        sample_index: i,
                        l_x,
                        l_u,
                        delta: opts.delta,
                        n_neighbors: members.len(),
                        fallback_used,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Worst violation of the KKT conditions at `(lx, lu)`: primal
/// infeasibility, and the residual of expressing the gradient `2L` as a
/// nonnegative combination of active constraint and axis normals.
pub fn kkt_residual(constraints: &[ConstraintPair], lx: f64, lu: f64, active_tol: f64) -> f64 {
    let mut primal: f64 = (-lx).max(-lu).max(0.0);
    let mut normals: Vec<(f64, f64)> = Vec::new();
    for k in constraints {
        let slack = k.a * lx + k.b * lu - k.c;
        primal = primal.max(-slack);
        if slack.abs() <= active_tol * (1.0 + k.c) {
            let n = k.a.hypot(k.b);
            normals.push((k.a / n, k.b / n));
        }
    }
    if lx.abs() <= active_tol {
        normals.push((1.0, 0.0));
    }
    if lu.abs() <= active_tol {
        normals.push((0.0, 1.0));
    }
    let g = (2.0 * lx, 2.0 * lu);
    let gn = g.0.hypot(g.1);
    if gn == 0.0 {
        return primal;
    }
    // Distance from g to the cone spanned by the active normals (2-D: the
    // cone is spanned by its two extreme rays).
    let mut best = gn;
    for (n, &p) in normals.iter().enumerate() {
        let t = (g.0 * p.0 + g.1 * p.1).max(0.0);
        best = best.min((g.0 - t * p.0).hypot(g.1 - t * p.1));
        for &q in &normals[n + 1..] {
            let det = p.0 * q.1 - p.1 * q.0;
            if det.abs() < 1e-15 {
                continue;
            }
            let s = (g.0 * q.1 - g.1 * q.0) / det;
            let t = (p.0 * g.1 - p.1 * g.0) / det;
            if s >= 0.0 && t >= 0.0 {
                best = 0.0;
            }
        }
    }
    primal.max(best)
}
