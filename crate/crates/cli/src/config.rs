//! Experiment configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use datactl_core::ferf::FerfMode;
use datactl_core::systems::{named_equilibrium, SamplingConfig, SystemId, SystemSpec};
use datactl_core::State;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSection,
    pub sampling: SamplingSection,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub epsilon: EpsilonSpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub method: MethodChoice,
    #[serde(default)]
    pub ferf_mode: FerfMode,
    /// Proximity-edge radius for FERF; ε when unset.
    #[serde(default)]
    pub link_radius: Option<f64>,
    #[serde(default)]
    pub snapshot_every: Option<usize>,
    /// Rollout probes per visited ball; 0 skips verification.
    #[serde(default)]
    pub verify_probes: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

pub fn default_delta() -> f64 {
    0.2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub id: SystemId,
    /// Overrides of the preset parameters.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n_samples: usize,
    #[serde(default)]
    pub max_traj_len: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Single(f64),
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    #[serde(default = "default_steps")]
    pub steps: usize,
}

pub fn default_steps() -> usize {
    21
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Point(Vec<f64>),
    Named(String),
    Grid { grid: GridSpec },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    #[default]
    Mecs,
    Ferf,
    Both,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(UsageError(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let spec = self.system_spec()?;
        self.sampling_config(0).validate()?;
        if let TargetSpec::Named(name) = &self.target {
            named_equilibrium(&spec, name).map_err(|e| UsageError(e.to_string()))?;
        }
        let eps = self.epsilon.values()?;
        if matches!(self.target, TargetSpec::Grid { .. }) && eps.len() != 1 {
            bail!(UsageError("a target grid needs a single epsilon".into()));
        }
        Ok(())
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        self.system.spec()
    }

    pub fn sampling_config(&self, seed: u64) -> SamplingConfig {
        let mut cfg = SamplingConfig::for_system(self.system.id, self.sampling.n_samples, seed);
        if let Some(len) = self.sampling.max_traj_len {
            cfg.max_traj_len = len;
        }
        cfg
    }
}

impl SystemSection {
    pub fn spec(&self) -> Result<SystemSpec> {
        let mut spec = SystemSpec::preset(self.id);
        for (k, v) in &self.params {
            if !spec.params.contains_key(k) {
                bail!(UsageError(format!("system `{}` has no parameter `{k}`", self.id)));
            }
            spec.params.insert(k.clone(), *v);
        }
        if let Some(dt) = self.dt {
            spec.dt = dt;
        }
        spec.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(spec)
    }
}

impl EpsilonSpec {
    /// The radii in ascending order.
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            EpsilonSpec::Single(e) => vec![*e],
            EpsilonSpec::List(v) => v.clone(),
            EpsilonSpec::Range { start, stop, step } => range(*start, *stop, *step)?,
        };
        if v.is_empty() || v.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            bail!(UsageError("epsilon values must be positive".into()));
        }
        if v.windows(2).any(|w| w[0] >= w[1]) {
            bail!(UsageError("epsilon values must be strictly ascending".into()));
        }
        Ok(v)
    }
}

/// `start, start + step, ...` up to `stop` inclusive, computed by index so
/// no rounding drift accumulates.
pub fn range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && start.is_finite() && stop >= start) {
        bail!(UsageError(format!("bad range {start}:{stop}:{step}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

/// Resolves a point or a named equilibrium.
pub fn resolve_target(spec: Option<&SystemSpec>, target: &TargetSpec) -> Result<State> {
    match target {
        TargetSpec::Point(v) => Ok(State::new(v.clone()).map_err(|e| UsageError(e.to_string()))?),
        TargetSpec::Named(name) => {
            let spec = spec.ok_or_else(|| {
                UsageError(format!("target `{name}` needs a known system (dataset sidecar or --config)"))
            })?;
            Ok(named_equilibrium(spec, name).map_err(|e| UsageError(e.to_string()))?)
        }
        TargetSpec::Grid { .. } => bail!(UsageError("expected a single target, found a grid".into())),
    }
}

/// `0.25,0` is a point; anything else names an equilibrium.
pub fn parse_target(s: &str) -> TargetSpec {
    let parts: Option<Vec<f64>> = s.split(',').map(|p| p.trim().parse().ok()).collect();
    match parts {
        Some(v) => TargetSpec::Point(v),
        None => TargetSpec::Named(s.trim().to_string()),
    }
}

/// `a,b,c` or `start:stop:step`.
pub fn parse_epsilons(s: &str) -> Result<EpsilonSpec> {
    let bad = || UsageError(format!("cannot parse epsilons `{s}`"));
    if s.contains(':') {
        let v: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()?;
        let [start, stop, step] = v[..] else { bail!(bad()) };
        Ok(EpsilonSpec::Range { start, stop, step })
    } else {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(EpsilonSpec::List(v))
    }
}

pub fn parse_pair(s: &str) -> Result<[f64; 2]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| UsageError(format!("cannot parse `{s}` as x0,x1")))?;
    match v[..] {
        [a, b] => Ok([a, b]),
        _ => bail!(UsageError(format!("expected two coordinates, got `{s}`"))),
    }
}
