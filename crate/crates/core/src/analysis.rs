//! Degree-of-controllability (DOC) reports, parameter sweeps and rollout
//! verification of controllable balls against the true dynamics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ferf::{run_ferf, FerfMode, GraphOptions};
use crate::lipschitz::LipschitzEstimate;
use crate::mecs::{extract_control_path, run_mecs, MecsOptions, MecsResult, NodeId};
use crate::seed::stream_rng;
use crate::space::{metric, State};
use crate::systems::{step, SystemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mecs,
    Ferf,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mecs => "mecs",
            Method::Ferf => "ferf",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocReport {
    pub target: State,
    pub epsilon: f64,
    pub method: Method,
    pub doc: f64,
    pub n_controllable: usize,
    pub n_total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    TargetGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// ε for an ε-sweep, the grid index for a target sweep.
    pub param: f64,
    pub report: DocReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

/// Fraction of samples in `controllable`.
pub fn doc(controllable: &[usize], ds: &Dataset) -> Result<f64> {
    if let Some(&bad) = controllable.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::InvalidParameter {
            name: "controllable",
            reason: format!("index {bad} out of range for {} samples", ds.len()),
        });
    }
    let mut sorted = controllable.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(sorted.len() as f64 / ds.len() as f64)
}

/// Everything a controllability test needs besides target and radius.
#[derive(Clone, Debug)]
pub struct Analyzer<'a> {
    pub ds: &'a Dataset,
    pub estimates: &'a [LipschitzEstimate],
    pub mecs: MecsOptions,
    pub graph: GraphOptions,
}

impl<'a> Analyzer<'a> {
    pub fn new(ds: &'a Dataset, estimates: &'a [LipschitzEstimate]) -> Self {
        Analyzer {
            ds,
            estimates,
            mecs: MecsOptions::default(),
            graph: GraphOptions::default(),
        }
    }

    pub fn controllable(&self, target: &State, epsilon: f64, method: Method) -> Result<Vec<usize>> {
        match method {
            Method::Mecs => Ok(run_mecs(self.ds, self.estimates, target, epsilon, &self.mecs)?
                .controllable_indices),
            Method::Ferf => Ok(run_ferf(self.ds, target, epsilon, FerfMode::Dijkstra, &self.graph)?
                .controllable_indices),
        }
    }

    pub fn report(&self, target: &State, epsilon: f64, method: Method) -> Result<DocReport> {
        let set = self.controllable(target, epsilon, method)?;
        Ok(make_report(target, epsilon, method, set.len(), self.ds.len()))
    }

    /// One report per ε, ascending.
    pub fn epsilon_sweep(&self, target: &State, epsilons: &[f64], method: Method) -> Result<SweepResult> {
        if epsilons.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidParameter {
                name: "epsilons",
                reason: "must be sorted ascending".into(),
            });
        }
        let points = epsilons
            .par_iter()
            .map(|&eps| {
                Ok(SweepPoint {
                    param: eps,
                    report: self.report(target, eps, method)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepResult {
            axis: SweepAxis::Epsilon,
            points,
        })
    }

    /// One report per grid target at fixed ε.
    pub fn target_grid_sweep(&self, grid: &[State], epsilon: f64, method: Method) -> Result<SweepResult> {
        if grid.is_empty() {
            return Err(Error::Empty("target grid"));
        }
        let points = grid
            .par_iter()
            .enumerate()
            .map(|(k, t)| {
                Ok(SweepPoint {
                    param: k as f64,
                    report: self.report(t, epsilon, method)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepResult {
            axis: SweepAxis::TargetGrid,
            points,
        })
    }
}

fn make_report(target: &State, epsilon: f64, method: Method, n_controllable: usize, n_total: usize) -> DocReport {
    DocReport {
        target: target.clone(),
        epsilon,
        method,
        doc: n_controllable as f64 / n_total as f64,
        n_controllable,
        n_total,
    }
}

/// `steps × steps` grid over a 2-D box, row-major with the first coordinate
/// varying fastest.
pub fn grid_2d(lower: [f64; 2], upper: [f64; 2], steps: usize) -> Result<Vec<State>> {
    if steps < 2 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "need at least 2 points per axis".into(),
        });
    }
    let at = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (steps - 1) as f64;
    Ok((0..steps)
        .flat_map(|r| (0..steps).map(move |c| (r, c)))
        .map(|(r, c)| State::from([at(lower[0], upper[0], c), at(lower[1], upper[1], r)]))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub probe: usize,
    pub start: State,
    pub final_dist: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub node_id: NodeId,
    pub path_len: usize,
    pub probes: Vec<ProbeOutcome>,
}

impl VerificationRecord {
    pub fn passed(&self) -> usize {
        self.probes.iter().filter(|p| p.pass).count()
    }
}

/// Uniform point in a ball by rejection from its bounding box.
pub fn sample_in_ball<R: Rng>(rng: &mut R, center: &State, radius: f64) -> State {
    if radius == 0.0 {
        return center.clone();
    }
    let c = center.coords();
    loop {
        let offset: Vec<f64> = c.iter().map(|_| rng.gen_range(-radius..=radius)).collect();
        if offset.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
            let p: Vec<f64> = c.iter().zip(&offset).map(|(a, b)| a + b).collect();
            return State::new(p).expect("finite probe");
        }
    }
}

/// Replays the node's control path from random states in its ball through
/// the true dynamics and checks the end state lands in the target ball.
///
/// Probe batch `node` draws from stream `node` of `seed`.
pub fn verify_ball_by_rollout(
    result: &MecsResult,
    ds: &Dataset,
    node: NodeId,
    spec: &SystemSpec,
    n_probes: usize,
    seed: u64,
) -> Result<VerificationRecord> {
    let ball = &result.node(node)?.ball;
    let path = extract_control_path(result, ds, node)?;
    let mut rng = stream_rng(seed, node as u64);
    let target = result.target.coords();
    let probes = (0..n_probes)
        .map(|probe| {
            let start = sample_in_ball(&mut rng, &ball.center, ball.radius);
            let mut x = start.clone();
            for (_, u) in &path {
                x = step(spec, &x, u)?;
            }
            let final_dist = metric(x.coords(), target);
            Ok(ProbeOutcome {
                probe,
                start,
                final_dist,
                pass: final_dist <= result.epsilon,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VerificationRecord {
        node_id: node,
        path_len: path.len(),
        probes,
    })
}

/// Verifies every visited ball.
pub fn verify_all(
    result: &MecsResult,
    ds: &Dataset,
    spec: &SystemSpec,
    n_probes: usize,
    seed: u64,
) -> Result<Vec<VerificationRecord>> {
    (0..result.visited.len())
        .into_par_iter()
        .map(|node| verify_ball_by_rollout(result, ds, node, spec, n_probes, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::TransitionSample;

    fn tiny() -> Dataset {
        let s = |a: f64, b: f64| {
            TransitionSample::new([a, 0.0].into(), [0.0].into(), [b, 0.0].into()).unwrap()
        };
        Dataset::new(vec![s(0.2, 0.1), s(0.1, 0.0), s(0.9, 0.9)], None).unwrap()
    }

    #[test]
    fn doc_examples() {
        let ds = tiny();
        assert_eq!(doc(&[], &ds).unwrap(), 0.0);
        assert_eq!(doc(&[0, 1, 2], &ds).unwrap(), 1.0);
        assert!(doc(&[3], &ds).is_err());
    }

    #[test]
    fn huge_epsilon_covers_everything() {
        let ds = tiny();
        let est = LipschitzEstimate::uniform(3, 1.0, 0.0, 0.2);
        let a = Analyzer::new(&ds, &est);
        let sweep = a
            .epsilon_sweep(&[0.0, 0.0].into(), &[0.05, 10.0], Method::Mecs)
            .unwrap();
        assert_eq!(sweep.points[1].report.doc, 1.0);
        let sweep = a
            .epsilon_sweep(&[0.0, 0.0].into(), &[0.05, 10.0], Method::Ferf)
            .unwrap();
        assert_eq!(sweep.points[1].report.doc, 1.0);
        assert!(a.epsilon_sweep(&[0.0, 0.0].into(), &[0.1, 0.05], Method::Ferf).is_err());
    }

    #[test]
    fn grid_point_reproduces_single_run() {
        let ds = tiny();
        let est = LipschitzEstimate::uniform(3, 1.0, 0.0, 0.2);
        let a = Analyzer::new(&ds, &est);
        let t = State::from([0.0, 0.0]);
        let single = a.report(&t, 0.05, Method::Mecs).unwrap();
        let grid = a.target_grid_sweep(&[t], 0.05, Method::Mecs).unwrap();
        assert_eq!(grid.points[0].report, single);
        assert!(a.target_grid_sweep(&[], 0.05, Method::Mecs).is_err());
    }

    #[test]
    fn grid_layout() {
        let g = grid_2d([-1.0, -1.0], [1.0, 1.0], 21).unwrap();
        assert_eq!(g.len(), 441);
        assert_eq!(g[0], State::from([-1.0, -1.0]));
        assert_eq!(g[1], State::from([-0.9, -1.0]));
        assert_eq!(g[440], State::from([1.0, 1.0]));
        assert_eq!(g[220], State::from([0.0, 0.0]));
    }

    #[test]
    fn probes_stay_in_ball() {
        let mut rng = stream_rng(1, 0);
        let c = State::from([0.3, -0.2]);
        for _ in 0..500 {
            let p = sample_in_ball(&mut rng, &c, 0.05);
            assert!(metric(p.coords(), c.coords()) <= 0.05);
        }
        assert_eq!(sample_in_ball(&mut rng, &c, 0.0), c);
    }
}
