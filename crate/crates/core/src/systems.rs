//! Benchmark simulators and the random-policy trajectory sampler.
//!
//! All systems are explicit discrete-time maps `x' = f(x, u)`. The same
//! maps double as the ground truth for rollout verification.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Bounds, Dataset, DatasetBounds, DatasetMeta};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, RNG_ALGORITHM};
use crate::space::{ControlInput, State, TransitionSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    MassSpring,
    MassSpringAutonomous,
    Vanderpol,
    VanderpolAutonomous,
    TunnelDiode,
}

impl SystemId {
    pub const ALL: [SystemId; 5] = [
        SystemId::MassSpring,
        SystemId::MassSpringAutonomous,
        SystemId::Vanderpol,
        SystemId::VanderpolAutonomous,
        SystemId::TunnelDiode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemId::MassSpring => "mass_spring",
            SystemId::MassSpringAutonomous => "mass_spring_autonomous",
            SystemId::Vanderpol => "vanderpol",
            SystemId::VanderpolAutonomous => "vanderpol_autonomous",
            SystemId::TunnelDiode => "tunnel_diode",
        }
    }

    fn required_params(self) -> &'static [&'static str] {
        match self {
            SystemId::MassSpring | SystemId::MassSpringAutonomous => &["m", "k", "rho"],
            SystemId::Vanderpol | SystemId::VanderpolAutonomous => &[],
            SystemId::TunnelDiode => &["R", "C", "L", "u"],
        }
    }

    /// Trajectory length used when collecting data for this system.
    pub fn default_max_traj_len(self) -> usize {
        match self {
            SystemId::MassSpring | SystemId::MassSpringAutonomous => 50,
            _ => 200,
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownSystem(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub id: SystemId,
    pub params: BTreeMap<String, f64>,
    pub dt: f64,
    pub state_bounds: Bounds,
    pub input_bounds: Bounds,
}

impl SystemSpec {
    /// The benchmark configuration of each system.
    ///
    /// Tunnel-diode parameters are in scaled circuit units (kΩ, pF, µH, ns,
    /// mA), in which the printed equilibria are fixed points of the map.
    pub fn preset(id: SystemId) -> Self {
        let params: &[(&str, f64)] = match id {
            SystemId::MassSpring | SystemId::MassSpringAutonomous => {
                &[("m", 0.5), ("k", 1.0), ("rho", 1.5)]
            }
            SystemId::Vanderpol | SystemId::VanderpolAutonomous => &[],
            SystemId::TunnelDiode => &[("R", 1.5), ("C", 2.0), ("L", 5.0), ("u", 1.2)],
        };
        let (state_bounds, input_bounds) = match id {
            SystemId::MassSpring => (Bounds::cube(2, -1.0, 1.0), Bounds::cube(1, -1.0, 1.0)),
            SystemId::Vanderpol => (Bounds::cube(2, -1.0, 1.0), Bounds::cube(1, -0.5, 0.5)),
            SystemId::MassSpringAutonomous | SystemId::VanderpolAutonomous => {
                (Bounds::cube(2, -1.0, 1.0), Bounds::cube(1, 0.0, 0.0))
            }
            SystemId::TunnelDiode => (Bounds::cube(2, -0.3, 1.4), Bounds::cube(1, 1.2, 1.2)),
        };
        SystemSpec {
            id,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            dt: 0.1,
            state_bounds,
            input_bounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("{} is not positive", self.dt),
            });
        }
        for name in self.id.required_params() {
            match self.params.get(*name) {
                Some(v) if v.is_finite() => {}
                _ => {
                    return Err(Error::InvalidParameter {
                        name: "params",
                        reason: format!("{} needs a finite `{name}`", self.id),
                    })
                }
            }
        }
        if self.state_bounds.dim() != 2 || self.input_bounds.dim() != 1 {
            return Err(Error::InvalidParameter {
                name: "bounds",
                reason: "benchmark systems have a 2-D state and a 1-D input".into(),
            });
        }
        if !self.state_bounds.is_non_degenerate() {
            return Err(Error::InvalidParameter {
                name: "state_bounds",
                reason: "every axis needs positive width".into(),
            });
        }
        Ok(())
    }

    fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn state_dim(&self) -> usize {
        self.state_bounds.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_bounds.dim()
    }

    /// Mass-spring state matrix `A` and input column `B`.
    fn mass_spring_matrices(&self) -> ([[f64; 2]; 2], [f64; 2]) {
        let (m, k, rho, dt) = (self.param("m"), self.param("k"), self.param("rho"), self.dt);
        (
            [[1.0, dt], [-k / m * dt, 1.0 - rho / m * dt]],
            [0.0, dt / m],
        )
    }

    /// Global Lipschitz constant in the state for systems that have a known
    /// one (`‖A‖₂` for the linear mass-spring maps).
    pub fn known_state_lipschitz(&self) -> Option<f64> {
        match self.id {
            SystemId::MassSpring | SystemId::MassSpringAutonomous => {
                Some(spectral_norm_2x2(self.mass_spring_matrices().0))
            }
            _ => None,
        }
    }

    /// Input that holds the system at its equilibria.
    pub fn equilibrium_input(&self) -> ControlInput {
        match self.id {
            SystemId::TunnelDiode => ControlInput::from([self.param("u")]),
            _ => ControlInput::from([0.0]),
        }
    }
}

fn spectral_norm_2x2(a: [[f64; 2]; 2]) -> f64 {
    // Largest eigenvalue of AᵀA in closed form.
    let p = a[0][0] * a[0][0] + a[1][0] * a[1][0];
    let q = a[0][0] * a[0][1] + a[1][0] * a[1][1];
    let r = a[0][1] * a[0][1] + a[1][1] * a[1][1];
    let mean = 0.5 * (p + r);
    let spread = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    (mean + spread).sqrt()
}

/// Tunnel-diode characteristic `h(x₁)`, evaluated by Horner's rule.
pub fn h_diode(x1: f64) -> f64 {
    const COEFFS: [f64; 5] = [83.72, -226.31, 229.62, -103.79, 17.76];
    COEFFS.iter().fold(0.0, |acc, c| acc * x1 + c) * x1
}

fn h_diode_slope(x1: f64) -> f64 {
    17.76 - 2.0 * 103.79 * x1 + 3.0 * 229.62 * x1.powi(2) - 4.0 * 226.31 * x1.powi(3)
        + 5.0 * 83.72 * x1.powi(4)
}

/// One step of the system. Inputs outside `input_bounds` are clamped.
pub fn step(spec: &SystemSpec, x: &State, u: &ControlInput) -> Result<State> {
    if x.dim() != spec.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.state_dim(),
            found: x.dim(),
        });
    }
    if u.dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            found: u.dim(),
        });
    }
    let u = spec.input_bounds.clamp(u.coords())[0];
    let next = step_raw(spec, [x.coords()[0], x.coords()[1]], u);
    if next.iter().all(|v| v.is_finite()) {
        Ok(State::new(next.to_vec()).expect("finite"))
    } else {
        Err(Error::NumericalBlowUp {
            system: spec.id.to_string(),
            state: x.coords().to_vec(),
        })
    }
}

fn step_raw(spec: &SystemSpec, [x1, x2]: [f64; 2], u: f64) -> [f64; 2] {
    let dt = spec.dt;
    match spec.id {
        SystemId::MassSpring | SystemId::MassSpringAutonomous => {
            let (a, b) = spec.mass_spring_matrices();
            let u = if spec.id == SystemId::MassSpringAutonomous { 0.0 } else { u };
            [
                a[0][0] * x1 + a[0][1] * x2 + b[0] * u,
                a[1][0] * x1 + a[1][1] * x2 + b[1] * u,
            ]
        }
        SystemId::Vanderpol | SystemId::VanderpolAutonomous => {
            let u = if spec.id == SystemId::VanderpolAutonomous { 0.0 } else { u };
            [
                x1 + x2 * dt,
                x2 + (-x1 - 0.5 * (1.0 - x1 * x1) * x2 + u) * dt,
            ]
        }
        SystemId::TunnelDiode => {
            let (r, c, l) = (spec.param("R"), spec.param("C"), spec.param("L"));
            [
                x1 + (-h_diode(x1) + x2) / c * dt,
                x2 + (-x1 - r * x2 + u) / l * dt,
            ]
        }
    }
}

/// Printed tunnel-diode equilibria: saddle, left stable, right stable.
const TUNNEL_DIODE_SEEDS: [[f64; 2]; 3] = [[0.285, 0.61], [0.063, 0.758], [0.884, 0.21]];

/// Known equilibria. Tunnel-diode points are Newton-refined from their
/// printed coordinates on the fixed-point residual.
pub fn equilibria(spec: &SystemSpec) -> Vec<State> {
    match spec.id {
        SystemId::TunnelDiode => TUNNEL_DIODE_SEEDS
            .iter()
            .map(|seed| State::from(refine_tunnel_diode(spec, *seed)))
            .collect(),
        _ => vec![State::from([0.0, 0.0])],
    }
}

fn refine_tunnel_diode(spec: &SystemSpec, seed: [f64; 2]) -> [f64; 2] {
    let (r, u) = (spec.param("R"), spec.param("u"));
    // Fixed points satisfy x₂ = (u − x₁)/R and h(x₁) = x₂; solve the scalar
    // residual in x₁ and recover x₂.
    let mut x1 = seed[0];
    for _ in 0..50 {
        let g = h_diode(x1) - (u - x1) / r;
        let dg = h_diode_slope(x1) + 1.0 / r;
        let dx = g / dg;
        x1 -= dx;
        if dx.abs() < 1e-15 {
            break;
        }
    }
    [x1, (u - x1) / r]
}

/// Equilibrium by name: `equ`/`origin` for single-equilibrium systems,
/// `equ0`, `equ1`, `equ2` for the tunnel diode.
pub fn named_equilibrium(spec: &SystemSpec, name: &str) -> Result<State> {
    let eqs = equilibria(spec);
    let idx = match (spec.id, name) {
        (SystemId::TunnelDiode, "equ0") => Some(0),
        (SystemId::TunnelDiode, "equ1") => Some(1),
        (SystemId::TunnelDiode, "equ2") => Some(2),
        (SystemId::TunnelDiode, _) => None,
        (_, "equ" | "equ0" | "origin") => Some(0),
        _ => None,
    };
    idx.map(|i| eqs[i].clone())
        .ok_or_else(|| Error::UnknownEquilibrium {
            system: spec.id.to_string(),
            name: name.to_string(),
        })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub max_traj_len: usize,
    pub seed: u64,
    #[serde(default)]
    pub policy: Policy,
}

impl SamplingConfig {
    pub fn for_system(id: SystemId, n_samples: usize, seed: u64) -> Self {
        SamplingConfig {
            n_samples,
            max_traj_len: id.default_max_traj_len(),
            seed,
            policy: Policy::UniformRandom,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter {
                name: "n_samples",
                reason: "must be positive".into(),
            });
        }
        if self.max_traj_len == 0 {
            return Err(Error::InvalidParameter {
                name: "max_traj_len",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, b: &Bounds) -> Vec<f64> {
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(l, u)| if l < u { rng.gen_range(*l..=*u) } else { *l })
        .collect()
}

/// Collects `n_samples` transitions from random-policy trajectories.
///
/// Each trajectory starts uniformly in the state box and draws inputs
/// uniformly from the input box. It restarts after `max_traj_len` steps or
/// when a step leaves the state box; the leaving transition is discarded.
/// Trajectory `k` draws from RNG stream `k` of the seed.
pub fn sample_dataset(spec: &SystemSpec, cfg: &SamplingConfig) -> Result<Dataset> {
    spec.validate()?;
    cfg.validate()?;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut trajectory = 0u64;
    while samples.len() < cfg.n_samples {
        let mut rng = stream_rng(cfg.seed, trajectory);
        trajectory += 1;
        let mut x = State::new(uniform_in(&mut rng, &spec.state_bounds))?;
        for _ in 0..cfg.max_traj_len {
            let u = ControlInput::new(uniform_in(&mut rng, &spec.input_bounds))?;
            let x_next = step(spec, &x, &u)?;
            if !spec.state_bounds.contains(x_next.coords()) {
                break;
            }
            samples.push(TransitionSample::new(x, u, x_next.clone())?);
            if samples.len() == cfg.n_samples {
                break;
            }
            x = x_next;
        }
    }
    Dataset::new(
        samples,
        Some(DatasetBounds {
            state: spec.state_bounds.clone(),
            input: spec.input_bounds.clone(),
        }),
    )
}

/// Sidecar describing a dataset produced by [`sample_dataset`].
pub fn sampling_meta(spec: &SystemSpec, cfg: &SamplingConfig) -> DatasetMeta {
    DatasetMeta {
        state_dim: spec.state_dim(),
        input_dim: spec.input_dim(),
        bounds: Some(DatasetBounds {
            state: spec.state_bounds.clone(),
            input: spec.input_bounds.clone(),
        }),
        seed: Some(cfg.seed),
        system: Some(spec.id.to_string()),
        rng: Some(RNG_ALGORITHM.to_string()),
        n_samples: Some(cfg.n_samples),
        max_traj_len: Some(cfg.max_traj_len),
    }
}
