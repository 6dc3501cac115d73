//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs with `harness = false`. The process exits nonzero on a failed
//! criterion only when `ACCEPTANCE_STRICT=1`; otherwise the FAIL lines and
//! the summary are the report.

mod common;

use std::time::{Duration, Instant};

use common::*;
use datactl_core::analysis::{doc, verify_all};
use datactl_core::ferf::{
    dijkstra_to_target, dijkstra_to_vertex, floyd_all_pairs, run_ferf, FerfMode, GraphOptions,
};
use datactl_core::lipschitz::{estimate_all, solve_lcqp, LipschitzEstimate, LipschitzOptions};
use datactl_core::mecs::{run_mecs, MecsOptions, MecsResult};
use datactl_core::neighbors::SpatialIndex;
use datactl_core::seed::stream_rng;
use datactl_core::systems::{named_equilibrium, sample_dataset, SamplingConfig, SystemId, SystemSpec};
use datactl_core::{Dataset, State};
use rand::Rng;

const N: usize = 5000;
const SEED: u64 = 42;
const DELTA: f64 = 0.2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Suite {
    results: Vec<(&'static str, bool)>,
}

impl Suite {
    fn run(&mut self, name: &'static str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let mut o = f();
        let took = start.elapsed();
        if let Some(limit) = limit {
            if took > limit {
                o.pass = false;
                o.detail.push_str(&format!("; over the {} s budget", limit.as_secs()));
            }
        }
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name} ({:.1} s): {}", took.as_secs_f64(), o.detail);
        self.results.push((name, o.pass));
    }
}

struct Prepared {
    spec: SystemSpec,
    ds: Dataset,
    est: Vec<LipschitzEstimate>,
}

fn prepare(id: SystemId) -> Prepared {
    let spec = SystemSpec::preset(id);
    let ds = sample_dataset(&spec, &SamplingConfig::for_system(id, N, SEED)).unwrap();
    let est = estimate_all(&ds, &LipschitzOptions::with_delta(DELTA)).unwrap();
    Prepared { spec, ds, est }
}

fn mecs(p: &Prepared, target: &State, eps: f64) -> MecsResult {
    run_mecs(&p.ds, &p.est, target, eps, &MecsOptions::default()).unwrap()
}

fn mecs_doc(p: &Prepared, target: &State, eps: f64) -> f64 {
    doc(&mecs(p, target, eps).controllable_indices, &p.ds).unwrap()
}

/// First grid index `k` (ε = k·step) in `1..=last` whose DOC satisfies `hit`.
fn first_hit(p: &Prepared, target: &State, step: f64, last: usize, hit: impl Fn(f64) -> bool) -> Option<usize> {
    (1..=last).find(|&k| hit(mecs_doc(p, target, k as f64 * step)))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt_grid(k: Option<usize>, step: f64) -> String {
    k.map_or("never".into(), |k| format!("{:.3}", k as f64 * step))
}

fn main() {
    let mut suite = Suite { results: Vec::new() };
    let origin = State::from([0.0, 0.0]);

    let mut ms = None;
    suite.run("lipschitz_mass_spring", Some(Duration::from_secs(60)), || {
        let p = prepare(SystemId::MassSpring);
        let m = median(p.est.iter().map(|e| e.l_x).collect());
        let pass = (0.93..=1.03).contains(&m);
        ms = Some(p);
        outcome(pass, format!("median L_x = {m:.4}, true 1.0212"))
    });
    let ms = ms.unwrap();

    suite.run("mass_spring_equilibrium_doc", Some(Duration::from_secs(300)), || {
        let at = mecs_doc(&ms, &origin, 0.05);
        // step 0.005: ε = 0.02 ± one step is grid index 3..=5
        let first = first_hit(&ms, &origin, 0.005, 40, |d| d == 1.0);
        let pass = at >= 0.99 && matches!(first, Some(3..=5));
        outcome(
            pass,
            format!(
                "DOC(0.05) = {at:.4}; first ε with DOC = 1 on step 0.005 up to 0.2: {}",
                fmt_grid(first, 0.005)
            ),
        )
    });

    suite.run("autonomous_mass_spring", None, || {
        let p = prepare(SystemId::MassSpringAutonomous);
        let at = mecs_doc(&p, &origin, 0.05);
        let mut pass = at >= 0.99;
        let mut detail = format!("equilibrium DOC(0.05) = {at:.4}; first ε with DOC > 0.1:");
        for t in [[0.3, 0.0], [0.0, 0.3], [-0.3, 0.0], [0.0, -0.3]] {
            // ε = 0.16 ± 0.05 on step 0.01 is grid index 11..=21
            let first = first_hit(&p, &State::from(t), 0.01, 40, |d| d > 0.1);
            pass &= matches!(first, Some(11..=21));
            detail.push_str(&format!(" {t:?} -> {}", fmt_grid(first, 0.01)));
        }
        outcome(pass, detail)
    });

    suite.run("oscillator", None, || {
        let p = prepare(SystemId::Vanderpol);
        let worst = (2..=10)
            .map(|k| (mecs_doc(&p, &origin, k as f64 * 0.01) - 1.0).abs())
            .fold(0.0, f64::max);
        let off = State::from([0.25, 0.0]);
        // surge: first ε with DOC ≥ 0.5; 0.06 ± 0.02 is grid index 4..=8
        let first = first_hit(&p, &off, 0.01, 30, |d| d >= 0.5);
        let below = mecs_doc(&p, &off, 0.01);
        let pass = worst <= 0.01 && matches!(first, Some(4..=8));
        outcome(
            pass,
            format!(
                "equilibrium max |DOC - 1| over ε in [0.02, 0.1] = {worst:.4}; \
                 target [0.25, 0]: DOC(0.01) = {below:.3}, surge at {}",
                fmt_grid(first, 0.01)
            ),
        )
    });

    suite.run("tunnel_diode_basins", None, || {
        let p = prepare(SystemId::TunnelDiode);
        let run = |name| mecs(&p, &named_equilibrium(&p.spec, name).unwrap(), 0.05).controllable_indices;
        let (c0, c1, c2) = (run("equ0"), run("equ1"), run("equ2"));
        let d = |c: &[usize]| doc(c, &p.ds).unwrap();
        let (d0, d1, d2) = (d(&c0), d(&c1), d(&c2));
        let shared = c1.iter().filter(|i| c2.binary_search(i).is_ok()).count();
        let pass = d0 <= 0.02
            && (d1 - 0.3).abs() <= 0.1
            && (d2 - 0.7).abs() <= 0.1
            && (d1 + d2 - 1.0).abs() <= 0.05
            && shared == 0;
        outcome(
            pass,
            format!("DOC equ0 {d0:.4}, equ1 {d1:.4}, equ2 {d2:.4}, sum {:.4}, shared states {shared}", d1 + d2),
        )
    });

    suite.run("rollout_soundness", None, || {
        let eps = 0.05;
        let rate = |est: &[LipschitzEstimate]| {
            let r = run_mecs(&ms.ds, est, &origin, eps, &MecsOptions::default()).unwrap();
            let recs = verify_all(&r, &ms.ds, &ms.spec, 10, SEED).unwrap();
            let passed: usize = recs.iter().map(|r| r.passed()).sum();
            let total: usize = recs.iter().map(|r| r.probes.len()).sum();
            (passed, total)
        };
        let (pe, te) = rate(&ms.est);
        let norm = ms.spec.known_state_lipschitz().unwrap();
        let (pt, tt) = rate(&LipschitzEstimate::uniform(ms.ds.len(), norm, 0.2, DELTA));
        let pass = pe as f64 >= 0.99 * te as f64 && pt == tt;
        outcome(pass, format!("estimated {pe}/{te}, true constants {pt}/{tt}"))
    });

    suite.run("cross_algorithm_oracles", Some(Duration::from_secs(120)), || {
        let mut rng = stream_rng(SEED, 1);
        let mut lcqp_bad = 0;
        for _ in 0..100 {
            let count = rng.gen_range(1..=50);
            let cs = random_constraints(&mut rng, count);
            let got = solve_lcqp(&cs).unwrap();
            let want = grid_lcqp(&cs, 1e-4);
            if (got.0 - want.0).abs() > 2e-4 || (got.1 - want.1).abs() > 2e-4 {
                lcqp_bad += 1;
            }
        }
        let points: Vec<State> = (0..5000)
            .map(|_| State::from([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let index = SpatialIndex::build(&points).unwrap();
        let mut query_bad = 0;
        for _ in 0..100 {
            let c = State::from([rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)]);
            let r = rng.gen_range(0.0..0.4);
            if index.query_radius(&c, r).unwrap() != linear_scan(&points, &c, r) {
                query_bad += 1;
            }
        }
        let (mut floyd_bad, mut dijkstra_bad) = (0, 0);
        for _ in 0..50 {
            let n = rng.gen_range(1..=200);
            let p = rng.gen_range(0.0..0.05);
            let g = random_graph(&mut rng, n, p);
            let m = floyd_all_pairs(&g);
            if (0..n).any(|v| m.row(v) != bfs_from(&g, v).as_slice()) {
                floyd_bad += 1;
            }
            if dijkstra_to_vertex(&g, g.target_vertex()) != m.column(g.target_vertex()) {
                dijkstra_bad += 1;
            }
        }
        for _ in 0..10 {
            let (_, ds) = small_dataset(&mut rng, 100);
            let target = ds.samples()[rng.gen_range(0..ds.len())].x_next.clone();
            let out = run_ferf(&ds, &target, 0.05, FerfMode::Floyd, &GraphOptions::default()).unwrap();
            let m = out.distances.expect("floyd keeps the matrix");
            if dijkstra_to_target(&out.graph, &target).unwrap() != m.column(out.graph.target_vertex()) {
                dijkstra_bad += 1;
            }
        }
        let pass = lcqp_bad + query_bad + floyd_bad + dijkstra_bad == 0;
        outcome(
            pass,
            format!(
                "mismatches: lcqp {lcqp_bad}/100, radius query {query_bad}/100, \
                 floyd {floyd_bad}/50, dijkstra {dijkstra_bad}/60"
            ),
        )
    });

    suite.run("pruning_equivalence", None, || {
        let mut rng = stream_rng(SEED, 2);
        let mut disagree = 0;
        let mut probes = 0;
        for _ in 0..10 {
            let (_, ds) = small_dataset(&mut rng, 200);
            let est = estimate_all(&ds, &LipschitzOptions::default()).unwrap();
            let target = ds.samples()[rng.gen_range(0..ds.len())].x.clone();
            let eps = rng.gen_range(0.02..0.15);
            // radii may creep when L_x < 1; both runs must finish
            let opts = |pruning| MecsOptions {
                pruning,
                max_iterations: Some(usize::MAX),
                ..MecsOptions::default()
            };
            let on = run_mecs(&ds, &est, &target, eps, &opts(true)).unwrap();
            let off = run_mecs(&ds, &est, &target, eps, &opts(false)).unwrap();
            let (lo, hi) = bounding_box(&ds);
            for _ in 0..1000 {
                let p = uniform_in_box(&mut rng, &lo, &hi);
                probes += 1;
                if in_union(&on, &p) != in_union(&off, &p) {
                    disagree += 1;
                }
            }
        }
        outcome(disagree == 0, format!("{disagree} of {probes} probe points disagree"))
    });

    suite.run("complexity_counters", None, || {
        let mut rng = stream_rng(SEED, 3);
        let mut worst_l = 0.0f64;
        let mut worst_m = 0.0f64;
        let mut check = |ds: &Dataset, est: &[LipschitzEstimate], target: &State, eps: f64| {
            let n = ds.len() as f64;
            let g = run_ferf(ds, target, eps, FerfMode::Dijkstra, &GraphOptions::default()).unwrap();
            worst_l = worst_l.max(g.graph.len() as f64 / (2.0 * n + 1.0));
            let floor = floored(est, 1.0);
            let r = run_mecs(ds, &floor, target, eps, &MecsOptions::default()).unwrap();
            worst_m = worst_m.max(r.visited.len() as f64 / (n + 1.0));
        };
        for eps in [0.02, 0.05, 0.1] {
            check(&ms.ds, &ms.est, &origin, eps);
        }
        for _ in 0..20 {
            let (_, ds) = small_dataset(&mut rng, 300);
            let est = estimate_all(&ds, &LipschitzOptions::default()).unwrap();
            let target = ds.samples()[rng.gen_range(0..ds.len())].x.clone();
            check(&ds, &est, &target, rng.gen_range(0.01..0.2));
        }
        let pass = worst_l <= 1.0 && worst_m <= 1.0;
        outcome(pass, format!("max L/(2N+1) = {worst_l:.3}, max M/(N+1) = {worst_m:.3}"))
    });

    let failed: Vec<_> = suite.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        suite.results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn bounding_box(ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let dim = ds.state_dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for s in ds.states() {
        for (k, v) in s.coords().iter().enumerate() {
            lo[k] = lo[k].min(*v);
            hi[k] = hi[k].max(*v);
        }
    }
    (lo, hi)
}
