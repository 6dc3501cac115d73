//! The `run` subcommand: sample, estimate, test, analyze and export from
//! one config, then write `manifest.json`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use datactl_core::analysis::Method;
use datactl_core::lipschitz::{estimate_all, LipschitzEstimate};
use datactl_core::seed::derive_seed;
use datactl_core::systems::sample_dataset;
use datactl_core::Dataset;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::artifacts::*;
use crate::commands::*;
use crate::config::*;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// `complete`, or `incomplete` when a stage failed.
    pub status: &'static str,
    pub failed_stage: Option<&'static str>,
    pub error: Option<String>,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<&'static str, u64>,
    /// Every file under the output directory except this manifest.
    pub files: Vec<FileEntry>,
    pub counters: BTreeMap<String, Value>,
    pub wall_time_s: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

type StageResult<T> = std::result::Result<T, (&'static str, anyhow::Error)>;

struct Stages<'a> {
    cfg: &'a ExperimentConfig,
    root: u64,
    out: &'a Path,
    counters: BTreeMap<String, Value>,
    wall: BTreeMap<&'static str, f64>,
}

impl Stages<'_> {
    fn timed<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> StageResult<T> {
        let start = Instant::now();
        let r = f();
        *self.wall.entry(stage).or_insert(0.0) += start.elapsed().as_secs_f64();
        r.map_err(|e| (stage, e))
    }

    fn all(&mut self) -> StageResult<()> {
        let cfg = self.cfg;
        let out = self.out;
        let root = self.root;
        let spec = self.timed("config", || {
            write_json(&out.join("config.json"), cfg)?;
            cfg.system_spec()
        })?;

        let ds = self.timed("sample", || {
            let scfg = cfg.sampling_config(derive_seed(root, "sample", 0));
            let ds = sample_dataset(&spec, &scfg)?;
            write_dataset(&out.join("dataset.csv"), &ds, &spec, &scfg)?;
            Ok(ds)
        })?;

        let methods: Vec<Method> = match cfg.method {
            MethodChoice::Mecs => vec![Method::Mecs],
            MethodChoice::Ferf => vec![Method::Ferf],
            MethodChoice::Both => vec![Method::Mecs, Method::Ferf],
        };
        let est = self.timed("estimate", || {
            if !methods.contains(&Method::Mecs) {
                return Ok(Vec::new());
            }
            let est = estimate_all(&ds, &lipschitz_options(cfg.delta, root))?;
            write_lipschitz(&out.join("lipschitz.csv"), &est)?;
            Ok(est)
        })?;
        if !est.is_empty() {
            self.counters.insert("lipschitz".into(), lipschitz_counters(&est));
        }

        let eps = cfg.epsilon.values().map_err(|e| ("config", e))?;
        match &cfg.target {
            TargetSpec::Grid { grid } => {
                for &m in &methods {
                    let est = estimates_for(m, &ds, &est);
                    let dir = out.join(m.to_string());
                    self.timed("heatmap", || {
                        heatmap_execute(&dir, &ds, &est, grid, eps[0], m, cfg.link_radius).map(drop)
                    })?;
                }
            }
            target => {
                let target = resolve_target(Some(&spec), target).map_err(|e| ("config", e))?;
                if let [epsilon] = eps[..] {
                    self.single(&ds, &est, &spec, &target, epsilon, &methods)?;
                } else {
                    for &m in &methods {
                        let est = estimates_for(m, &ds, &est);
                        let dir = out.join(m.to_string());
                        self.timed("sweep", || {
                            let s = analyzer(&ds, &est, cfg.link_radius).epsilon_sweep(&target, &eps, m)?;
                            std::fs::create_dir_all(&dir)?;
                            write_sweep(&dir.join("sweep.csv"), &s)
                        })?;
                    }
                }
            }
        }
        Ok(())
    }

    fn single(
        &mut self,
        ds: &Dataset,
        est: &[LipschitzEstimate],
        spec: &datactl_core::systems::SystemSpec,
        target: &datactl_core::State,
        epsilon: f64,
        methods: &[Method],
    ) -> StageResult<()> {
        let (cfg, out, root) = (self.cfg, self.out, self.root);
        let mut sets = Vec::new();
        for &m in methods {
            let dir = out.join(m.to_string());
            match m {
                Method::Mecs => {
                    let (r, meta) = self.timed("mecs", || {
                        let run = MecsRun {
                            ds,
                            est,
                            target,
                            epsilon,
                            delta: cfg.delta,
                            seed: root,
                            pruning: true,
                            snapshot_every: cfg.snapshot_every,
                        };
                        let (r, meta) = run.execute(&dir)?;
                        write_json(&dir.join("run.meta.json"), &meta)?;
                        Ok((r, meta))
                    })?;
                    let n = ds.len();
                    self.counters.insert(
                        "mecs".into(),
                        json!({
                            "M": meta.m,
                            "iterations": meta.iterations,
                            "max_neighborhood": meta.max_neighborhood,
                            "mean_neighborhood": meta.mean_neighborhood,
                            "all_lx_at_least_one": meta.all_lx_at_least_one,
                            "m_within_n_plus_one": meta.m <= n + 1,
                        }),
                    );
                    if cfg.verify_probes > 0 {
                        let (passed, total) = self.timed("verify", || {
                            verify_to(&dir.join("verify.csv"), &r, ds, spec, cfg.verify_probes, root)
                        })?;
                        self.counters.insert(
                            "verify".into(),
                            json!({ "probes": total, "passed": passed }),
                        );
                    }
                    sets.push(r.controllable_indices);
                }
                Method::Ferf => {
                    let (o, meta) = self.timed("ferf", || {
                        let (o, meta) =
                            ferf_execute(&dir, ds, target, epsilon, cfg.ferf_mode, cfg.link_radius, true)?;
                        write_json(&dir.join("run.meta.json"), &meta)?;
                        Ok((o, meta))
                    })?;
                    self.counters.insert(
                        "ferf".into(),
                        json!({
                            "L": meta.l,
                            "edges": meta.edges,
                            "l_within_2n_plus_one": meta.l <= 2 * ds.len() + 1,
                        }),
                    );
                    sets.push(o.controllable_indices);
                }
            }
        }
        if let [mecs, ferf] = &sets[..] {
            self.timed("diff", || write_json(&out.join("diff.json"), &diff(mecs, ferf, ds.len())))?;
        }
        Ok(())
    }
}

fn estimates_for(m: Method, ds: &Dataset, est: &[LipschitzEstimate]) -> Vec<LipschitzEstimate> {
    match m {
        Method::Mecs => est.to_vec(),
        Method::Ferf => placeholder_estimates(ds),
    }
}

fn lipschitz_counters(est: &[LipschitzEstimate]) -> Value {
    let n = est.len().max(1) as f64;
    json!({
        "median_L_x_hat": median(est.iter().map(|e| e.l_x).collect()),
        "max_neighbors": est.iter().map(|e| e.n_neighbors).max().unwrap_or(0),
        "mean_neighbors": est.iter().map(|e| e.n_neighbors).sum::<usize>() as f64 / n,
        "fallbacks": est.iter().filter(|e| e.fallback_used).count(),
    })
}

#[derive(Debug, Serialize)]
struct Diff {
    n_total: usize,
    both: usize,
    mecs_only: usize,
    ferf_only: usize,
    neither: usize,
    doc_mecs: f64,
    doc_ferf: f64,
    /// |both| / |either|; 1 when both sets are empty.
    jaccard: f64,
}

fn diff(mecs: &[usize], ferf: &[usize], n: usize) -> Diff {
    let mut a = vec![false; n];
    let mut b = vec![false; n];
    mecs.iter().for_each(|&i| a[i] = true);
    ferf.iter().for_each(|&i| b[i] = true);
    let count = |f: &dyn Fn(bool, bool) -> bool| a.iter().zip(&b).filter(|(x, y)| f(**x, **y)).count();
    let both = count(&|x, y| x && y);
    let either = count(&|x, y| x || y);
    Diff {
        n_total: n,
        both,
        mecs_only: count(&|x, y| x && !y),
        ferf_only: count(&|x, y| !x && y),
        neither: n - either,
        doc_mecs: mecs.len() as f64 / n as f64,
        doc_ferf: ferf.len() as f64 / n as f64,
        jaccard: if either == 0 { 1.0 } else { both as f64 / either as f64 },
    }
}

/// Runs the experiment into `out`. The manifest is written even when a
/// stage fails, marked incomplete and naming the stage.
pub fn run_experiment(cfg: &ExperimentConfig, root: u64, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut stages = Stages {
        cfg,
        root,
        out,
        counters: BTreeMap::new(),
        wall: BTreeMap::new(),
    };
    let result = stages.all();
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        status: "complete",
        failed_stage: None,
        error: None,
        config: cfg.clone(),
        seeds: ["sample", "lipschitz", "verify"]
            .into_iter()
            .map(|s| (s, derive_seed(root, s, 0)))
            .chain([("root", root)])
            .collect(),
        files: list_files(out)?,
        counters: stages.counters,
        wall_time_s: stages.wall,
    };
    if let Err((stage, e)) = &result {
        manifest.status = "incomplete";
        manifest.failed_stage = Some(stage);
        manifest.error = Some(format!("{e:#}"));
    }
    write_json(&out.join(MANIFEST), &manifest)?;
    match result {
        Ok(()) => Ok(manifest),
        Err((stage, e)) => Err(e.context(format!("stage `{stage}` failed"))),
    }
}

/// Files under `root`, sorted, with `/`-separated relative paths.
pub fn list_files(root: &Path) -> Result<Vec<FileEntry>> {
    let mut paths = Vec::new();
    collect(root, &mut paths)?;
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let rel: Vec<String> = p
            .strip_prefix(root)?
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        let rel = rel.join("/");
        if rel == MANIFEST {
            continue;
        }
        let (bytes, sha256) = hash_file(&p)?;
        out.push(FileEntry { path: rel, bytes, sha256 });
    }
    Ok(out)
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn hash_file(path: &Path) -> Result<(u64, String)> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        bytes += k as u64;
        h.update(&buf[..k]);
    }
    Ok((bytes, hex::encode(h.finalize())))
}
