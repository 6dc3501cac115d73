//! Subcommand handlers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use datactl_core::analysis::{doc, grid_2d, verify_all, Analyzer, Method, SweepResult};
use datactl_core::dataset::{load, sidecar_path};
use datactl_core::ferf::{run_ferf, FerfMode, FerfOutcome, GraphOptions};
use datactl_core::lipschitz::{build_constraints, estimate_all, LipschitzEstimate, LipschitzOptions};
use datactl_core::mecs::{run_mecs, MecsOptions, MecsResult, MecsStats};
use datactl_core::neighbors::SpatialIndex;
use datactl_core::seed::derive_seed;
use datactl_core::systems::{sample_dataset, sampling_meta, SystemId, SystemSpec};
use datactl_core::{Dataset, State};
use serde::Serialize;

use crate::artifacts::*;
use crate::config::*;
use crate::UsageError;

/// Values shared by every subcommand: the global flags and the optional
/// config file they override.
pub struct Globals {
    pub config: Option<ExperimentConfig>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Globals {
    pub fn seed(&self) -> u64 {
        self.seed
            .or(self.config.as_ref().map(|c| c.seed))
            .unwrap_or(0)
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        let dir = self
            .output_dir
            .clone()
            .or_else(|| self.config.as_ref().and_then(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn delta(&self, flag: Option<f64>) -> f64 {
        flag.or(self.config.as_ref().map(|c| c.delta))
            .unwrap_or_else(default_delta)
    }

    fn epsilons(&self, flag: Option<&str>) -> Result<Vec<f64>> {
        match (flag, &self.config) {
            (Some(s), _) => parse_epsilons(s)?.values(),
            (None, Some(c)) => c.epsilon.values(),
            (None, None) => bail!(UsageError("no epsilon given (flag or --config)".into())),
        }
    }

    fn epsilon(&self, flag: Option<f64>) -> Result<f64> {
        match flag {
            Some(e) if e.is_finite() && e > 0.0 => Ok(e),
            Some(e) => bail!(UsageError(format!("epsilon {e} is not positive"))),
            None => match self.epsilons(None)?[..] {
                [e] => Ok(e),
                _ => bail!(UsageError("config lists several epsilons; pass --epsilon".into())),
            },
        }
    }

    fn target(&self, flag: Option<&str>, spec: Option<&SystemSpec>) -> Result<State> {
        match (flag, &self.config) {
            (Some(s), _) => resolve_target(spec, &parse_target(s)),
            (None, Some(c)) => resolve_target(spec, &c.target),
            (None, None) => bail!(UsageError("no target given (flag or --config)".into())),
        }
    }

    /// The dataset and, when it can be told, the system that generated it.
    fn dataset(&self, flag: Option<&Path>) -> Result<(Dataset, Option<SystemSpec>)> {
        let path = match flag {
            Some(p) => p.to_path_buf(),
            None => self.output_dir()?.join("dataset.csv"),
        };
        let (ds, meta) = load(&path)?;
        let spec = match (&self.config, meta.and_then(|m| m.system)) {
            (Some(c), _) => Some(c.system_spec()?),
            (None, Some(id)) => Some(SystemSpec::preset(id.parse::<SystemId>()?)),
            (None, None) => None,
        };
        Ok((ds, spec))
    }

    fn estimates(&self, ds: &Dataset, file: Option<&Path>, delta: f64) -> Result<Vec<LipschitzEstimate>> {
        match file {
            Some(p) => read_lipschitz(p, ds.len(), delta),
            None => Ok(estimate_all(ds, &lipschitz_options(delta, self.seed()))?),
        }
    }
}

pub fn lipschitz_options(delta: f64, root: u64) -> LipschitzOptions {
    LipschitzOptions {
        delta,
        seed: derive_seed(root, "lipschitz", 0),
        ..LipschitzOptions::with_delta(delta)
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// System identifier, e.g. mass_spring or tunnel_diode.
    #[arg(long)]
    pub system: Option<SystemId>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub max_traj_len: Option<usize>,
    /// File stem of the dataset inside the output directory.
    #[arg(long, default_value = "dataset")]
    pub name: String,
}

pub fn sample(g: &Globals, a: &SampleArgs) -> Result<()> {
    let (section, sampling) = match &g.config {
        Some(c) => (c.system.clone(), c.sampling.clone()),
        None => {
            let id = a.system.ok_or_else(|| UsageError("--system is required without --config".into()))?;
            let n = a.n_samples.unwrap_or(5000);
            (
                SystemSection { id, params: Default::default(), dt: None },
                SamplingSection { n_samples: n, max_traj_len: None },
            )
        }
    };
    let mut section = section;
    if let Some(id) = a.system {
        section.id = id;
    }
    let spec = section.spec()?;
    let mut cfg = datactl_core::systems::SamplingConfig::for_system(
        spec.id,
        a.n_samples.unwrap_or(sampling.n_samples),
        derive_seed(g.seed(), "sample", 0),
    );
    if let Some(len) = a.max_traj_len.or(sampling.max_traj_len) {
        cfg.max_traj_len = len;
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let ds = sample_dataset(&spec, &cfg)?;
    let path = g.output_dir()?.join(format!("{}.csv", a.name));
    write_dataset(&path, &ds, &spec, &cfg)?;
    println!("wrote {} samples to {}", ds.len(), path.display());
    Ok(())
}

pub fn write_dataset(
    path: &Path,
    ds: &Dataset,
    spec: &SystemSpec,
    cfg: &datactl_core::systems::SamplingConfig,
) -> Result<()> {
    ds.write_csv(path)?;
    sampling_meta(spec, cfg).write(&sidecar_path(path))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Neighborhood radius.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Also write the constraint pairs of this sample to `constraints_<i>.csv`.
    #[arg(long)]
    pub constraints_for: Option<usize>,
}

pub fn estimate(g: &Globals, a: &EstimateArgs) -> Result<()> {
    let (ds, _) = g.dataset(a.dataset.as_deref())?;
    let delta = g.delta(a.delta);
    let est = estimate_all(&ds, &lipschitz_options(delta, g.seed()))?;
    let out = g.output_dir()?;
    write_lipschitz(&out.join("lipschitz.csv"), &est)?;
    if let Some(i) = a.constraints_for {
        if i >= ds.len() {
            bail!(UsageError(format!("sample {i} out of range for {} samples", ds.len())));
        }
        let idx = SpatialIndex::build(ds.states())?;
        let cs = build_constraints(&ds, i, delta, &idx)?;
        let mut w = csv::Writer::from_path(out.join(format!("constraints_{i}.csv")))?;
        w.write_record(["a", "b", "c"])?;
        for k in cs {
            w.write_record([k.a.to_string(), k.b.to_string(), k.c.to_string()])?;
        }
        w.flush()?;
    }
    let fallback = est.iter().filter(|e| e.fallback_used).count();
    println!(
        "estimated {} samples (delta {delta}): median L_x {:.4}, {fallback} fallbacks",
        est.len(),
        median(est.iter().map(|e| e.l_x).collect())
    );
    Ok(())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Args)]
pub struct MecsArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// `x0,x1` or an equilibrium name such as `equ1`.
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Estimates from `estimate-lipschitz`; estimated on the fly when absent.
    #[arg(long)]
    pub lipschitz_file: Option<PathBuf>,
    /// Dump the visited balls every k iterations to `snapshots.csv`.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[arg(long)]
    pub no_pruning: bool,
}

#[derive(Debug, Serialize)]
pub struct MecsMeta {
    pub method: &'static str,
    pub n_samples: usize,
    pub target: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub pruning: bool,
    #[serde(rename = "M")]
    pub m: usize,
    pub iterations: usize,
    pub n_controllable: usize,
    pub doc: f64,
    pub max_neighborhood: usize,
    pub mean_neighborhood: f64,
    pub all_lx_at_least_one: bool,
    pub stats: MecsStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

pub struct MecsRun<'a> {
    pub ds: &'a Dataset,
    pub est: &'a [LipschitzEstimate],
    pub target: &'a State,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub pruning: bool,
    pub snapshot_every: Option<usize>,
}

impl MecsRun<'_> {
    /// Runs the search and writes `balls.csv`, `controllable.csv` and
    /// optionally `snapshots.csv` into `dir`.
    pub fn execute(&self, dir: &Path) -> Result<(MecsResult, MecsMeta)> {
        let opts = MecsOptions { pruning: self.pruning, ..MecsOptions::default() };
        let r = run_mecs(self.ds, self.est, self.target, self.epsilon, &opts)?;
        std::fs::create_dir_all(dir)?;
        write_balls(&dir.join("balls.csv"), &r)?;
        write_controllable(&dir.join("controllable.csv"), self.ds.len(), &r.controllable_indices)?;
        if let Some(k) = self.snapshot_every {
            if k == 0 {
                bail!(UsageError("--snapshot-every must be positive".into()));
            }
            write_snapshots(&dir.join("snapshots.csv"), &r, k)?;
        }
        let counts = &r.expansion_counts;
        let meta = MecsMeta {
            method: "mecs",
            n_samples: self.ds.len(),
            target: self.target.coords().to_vec(),
            epsilon: self.epsilon,
            delta: self.delta,
            seed: self.seed,
            pruning: self.pruning,
            m: r.visited.len(),
            iterations: r.iterations,
            n_controllable: r.controllable_indices.len(),
            doc: doc(&r.controllable_indices, self.ds)?,
            max_neighborhood: counts.iter().copied().max().unwrap_or(0),
            mean_neighborhood: if counts.is_empty() {
                0.0
            } else {
                counts.iter().sum::<usize>() as f64 / counts.len() as f64
            },
            all_lx_at_least_one: self.est.iter().all(|e| e.l_x >= 1.0),
            stats: r.stats.clone(),
            wall_time_s: None,
        };
        Ok((r, meta))
    }
}

pub fn mecs(g: &Globals, a: &MecsArgs) -> Result<()> {
    let (ds, spec) = g.dataset(a.dataset.as_deref())?;
    let delta = g.delta(a.delta);
    let target = g.target(a.target.as_deref(), spec.as_ref())?;
    let epsilon = g.epsilon(a.epsilon)?;
    let est = g.estimates(&ds, a.lipschitz_file.as_deref(), delta)?;
    let start = Instant::now();
    let run = MecsRun {
        ds: &ds,
        est: &est,
        target: &target,
        epsilon,
        delta,
        seed: g.seed(),
        pruning: !a.no_pruning,
        snapshot_every: a.snapshot_every.or(g.config.as_ref().and_then(|c| c.snapshot_every)),
    };
    let out = g.output_dir()?;
    let (_, mut meta) = run.execute(&out)?;
    meta.wall_time_s = Some(start.elapsed().as_secs_f64());
    write_json(&out.join("run.meta.json"), &meta)?;
    println!("mecs: M = {}, DOC = {:.4}", meta.m, meta.doc);
    Ok(())
}

#[derive(Debug, Args)]
pub struct FerfArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Proximity-edge radius; ε when absent.
    #[arg(long)]
    pub link_radius: Option<f64>,
    /// Also write per-sample hop counts to `distances.csv`.
    #[arg(long)]
    pub distances: bool,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ModeArg {
    Floyd,
    Dijkstra,
}

impl From<ModeArg> for FerfMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Floyd => FerfMode::Floyd,
            ModeArg::Dijkstra => FerfMode::Dijkstra,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FerfMeta {
    pub method: &'static str,
    pub mode: FerfMode,
    pub n_samples: usize,
    pub target: Vec<f64>,
    pub epsilon: f64,
    pub link_radius: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub edges: usize,
    pub n_controllable: usize,
    pub doc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

pub fn ferf_execute(
    dir: &Path,
    ds: &Dataset,
    target: &State,
    epsilon: f64,
    mode: FerfMode,
    link_radius: Option<f64>,
    distances: bool,
) -> Result<(FerfOutcome, FerfMeta)> {
    let opts = GraphOptions { link_radius, ..GraphOptions::default() };
    let out = run_ferf(ds, target, epsilon, mode, &opts)?;
    std::fs::create_dir_all(dir)?;
    write_controllable(&dir.join("controllable.csv"), ds.len(), &out.controllable_indices)?;
    if distances {
        write_distances(&dir.join("distances.csv"), &out)?;
    }
    let meta = FerfMeta {
        method: "ferf",
        mode,
        n_samples: ds.len(),
        target: target.coords().to_vec(),
        epsilon,
        link_radius: link_radius.unwrap_or(epsilon),
        l: out.graph.len(),
        edges: out.graph.edge_count(),
        n_controllable: out.controllable_indices.len(),
        doc: doc(&out.controllable_indices, ds)?,
        wall_time_s: None,
    };
    Ok((out, meta))
}

pub fn ferf(g: &Globals, a: &FerfArgs) -> Result<()> {
    let (ds, spec) = g.dataset(a.dataset.as_deref())?;
    let target = g.target(a.target.as_deref(), spec.as_ref())?;
    let epsilon = g.epsilon(a.epsilon)?;
    let mode = a
        .mode
        .map(FerfMode::from)
        .or(g.config.as_ref().map(|c| c.ferf_mode))
        .unwrap_or_default();
    let link = a.link_radius.or(g.config.as_ref().and_then(|c| c.link_radius));
    let start = Instant::now();
    let out = g.output_dir()?;
    let (_, mut meta) = ferf_execute(&out, &ds, &target, epsilon, mode, link, a.distances)?;
    meta.wall_time_s = Some(start.elapsed().as_secs_f64());
    write_json(&out.join("run.meta.json"), &meta)?;
    println!("ferf: L = {}, DOC = {:.4}", meta.l, meta.doc);
    Ok(())
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum MethodArg {
    Mecs,
    Ferf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mecs => Method::Mecs,
            MethodArg::Ferf => Method::Ferf,
        }
    }
}

fn single_method(g: &Globals, flag: Option<MethodArg>) -> Result<Method> {
    match (flag, g.config.as_ref().map(|c| c.method)) {
        (Some(m), _) => Ok(m.into()),
        (None, Some(MethodChoice::Ferf)) => Ok(Method::Ferf),
        (None, Some(MethodChoice::Both)) => bail!(UsageError("pass --method mecs or ferf".into())),
        _ => Ok(Method::Mecs),
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    /// `a,b,c` or `start:stop:step`.
    #[arg(long)]
    pub epsilons: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub lipschitz_file: Option<PathBuf>,
}

pub fn analyzer<'a>(ds: &'a Dataset, est: &'a [LipschitzEstimate], link_radius: Option<f64>) -> Analyzer<'a> {
    let mut a = Analyzer::new(ds, est);
    a.graph.link_radius = link_radius;
    a
}

/// FERF ignores the constants; placeholders avoid the estimation cost.
pub fn placeholder_estimates(ds: &Dataset) -> Vec<LipschitzEstimate> {
    LipschitzEstimate::uniform(ds.len(), 1.0, 0.0, default_delta())
}

pub fn doc_sweep(g: &Globals, a: &SweepArgs) -> Result<()> {
    let (ds, spec) = g.dataset(a.dataset.as_deref())?;
    let target = g.target(a.target.as_deref(), spec.as_ref())?;
    let eps = g.epsilons(a.epsilons.as_deref())?;
    let method = single_method(g, a.method)?;
    let est = match method {
        Method::Mecs => g.estimates(&ds, a.lipschitz_file.as_deref(), g.delta(a.delta))?,
        Method::Ferf => placeholder_estimates(&ds),
    };
    let link = g.config.as_ref().and_then(|c| c.link_radius);
    let sweep = analyzer(&ds, &est, link).epsilon_sweep(&target, &eps, method)?;
    let path = g.output_dir()?.join("sweep.csv");
    write_sweep(&path, &sweep)?;
    print_sweep(&sweep);
    Ok(())
}

fn print_sweep(s: &SweepResult) {
    for p in &s.points {
        println!("{:>8} {:.4}", p.param, p.report.doc);
    }
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Lower grid corner `x0,x1`; the state bounds when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub lower: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub upper: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub lipschitz_file: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct HeatmapMeta {
    pub method: Method,
    pub epsilon: f64,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub steps: usize,
    pub snapped_to_states: bool,
}

pub fn heatmap_execute(
    dir: &Path,
    ds: &Dataset,
    est: &[LipschitzEstimate],
    grid: &GridSpec,
    epsilon: f64,
    method: Method,
    link_radius: Option<f64>,
) -> Result<SweepResult> {
    let targets = grid_2d(grid.lower, grid.upper, grid.steps).map_err(|e| UsageError(e.to_string()))?;
    let sweep = analyzer(ds, est, link_radius).target_grid_sweep(&targets, epsilon, method)?;
    std::fs::create_dir_all(dir)?;
    write_heatmap(&dir.join("heatmap.csv"), &sweep)?;
    let meta = HeatmapMeta {
        method,
        epsilon,
        lower: grid.lower,
        upper: grid.upper,
        steps: grid.steps,
        snapped_to_states: false,
    };
    write_json(&dir.join("heatmap.meta.json"), &meta)?;
    Ok(sweep)
}

pub fn doc_map(g: &Globals, a: &MapArgs) -> Result<()> {
    let (ds, spec) = g.dataset(a.dataset.as_deref())?;
    let epsilon = g.epsilon(a.epsilon)?;
    let method = single_method(g, a.method)?;
    let from_config = match g.config.as_ref().map(|c| &c.target) {
        Some(TargetSpec::Grid { grid }) => Some(grid.clone()),
        _ => None,
    };
    let bounds = ds
        .bounds()
        .map(|b| &b.state)
        .or(spec.as_ref().map(|s| &s.state_bounds))
        .filter(|b| b.dim() == 2);
    let corner = |flag: &Option<String>, pick: fn(&GridSpec) -> [f64; 2], bound: fn(&datactl_core::Bounds) -> [f64; 2]| -> Result<[f64; 2]> {
        match flag {
            Some(s) => parse_pair(s),
            None => from_config
                .as_ref()
                .map(pick)
                .or(bounds.map(bound))
                .ok_or_else(|| UsageError("grid corners unknown; pass --lower and --upper".into()).into()),
        }
    };
    let grid = GridSpec {
        lower: corner(&a.lower, |g| g.lower, |b| [b.lower[0], b.lower[1]])?,
        upper: corner(&a.upper, |g| g.upper, |b| [b.upper[0], b.upper[1]])?,
        steps: a.steps.or(from_config.as_ref().map(|g| g.steps)).unwrap_or_else(default_steps),
    };
    let est = match method {
        Method::Mecs => g.estimates(&ds, a.lipschitz_file.as_deref(), g.delta(a.delta))?,
        Method::Ferf => placeholder_estimates(&ds),
    };
    let link = g.config.as_ref().and_then(|c| c.link_radius);
    let sweep = heatmap_execute(&g.output_dir()?, &ds, &est, &grid, epsilon, method, link)?;
    let best = sweep.points.iter().map(|p| p.report.doc).fold(0.0, f64::max);
    println!("doc-map: {} targets, max DOC {best:.4}", sweep.points.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub lipschitz_file: Option<PathBuf>,
    /// Probes per visited ball.
    #[arg(long, default_value_t = 10)]
    pub probes: usize,
}

pub fn verify(g: &Globals, a: &VerifyArgs) -> Result<()> {
    let (ds, spec) = g.dataset(a.dataset.as_deref())?;
    let spec = spec.ok_or_else(|| {
        UsageError("verification needs the generating system (dataset sidecar or --config)".into())
    })?;
    let delta = g.delta(a.delta);
    let target = g.target(a.target.as_deref(), Some(&spec))?;
    let epsilon = g.epsilon(a.epsilon)?;
    let est = g.estimates(&ds, a.lipschitz_file.as_deref(), delta)?;
    let r = run_mecs(&ds, &est, &target, epsilon, &MecsOptions::default())?;
    let (passed, total) = verify_to(&g.output_dir()?.join("verify.csv"), &r, &ds, &spec, a.probes, g.seed())?;
    println!("verify: {passed}/{total} probes landed in the target ball");
    Ok(())
}

pub fn verify_to(
    path: &Path,
    r: &MecsResult,
    ds: &Dataset,
    spec: &SystemSpec,
    probes: usize,
    root: u64,
) -> Result<(usize, usize)> {
    let recs = verify_all(r, ds, spec, probes, derive_seed(root, "verify", 0))?;
    write_verify(path, &recs)?;
    let passed = recs.iter().map(|r| r.passed()).sum();
    let total = recs.iter().map(|r| r.probes.len()).sum();
    Ok((passed, total))
}
