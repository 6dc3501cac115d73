//! States, inputs, transitions and closed metric balls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack used when deciding ball containment.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// The metric on state and input space.
///
/// Everything in the crate measures distance through this one function, so
/// swapping the metric is a one-line change.
#[inline]
pub fn metric(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_finite(coords: &[f64], what: &'static str) -> Result<()> {
    if coords.is_empty() {
        return Err(Error::Empty(what));
    }
    if coords.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(Vec<f64>);

impl State {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords, "state")?;
        Ok(State(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for State {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl<const D: usize> From<[f64; D]> for State {
    /// Panics on non-finite input; meant for literals.
    fn from(coords: [f64; D]) -> Self {
        State::new(coords.to_vec()).expect("finite, non-empty state literal")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlInput(Vec<f64>);

impl ControlInput {
    /// Inputs may be zero-dimensional only in the sense of a single pinned
    /// coordinate; an empty vector is rejected like for states.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords, "control input")?;
        Ok(ControlInput(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl<const D: usize> From<[f64; D]> for ControlInput {
    fn from(coords: [f64; D]) -> Self {
        ControlInput::new(coords.to_vec()).expect("finite, non-empty input literal")
    }
}

/// One observed transition `x --u--> x_next`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub x: State,
    pub u: ControlInput,
    pub x_next: State,
}

impl TransitionSample {
    pub fn new(x: State, u: ControlInput, x_next: State) -> Result<Self> {
        if x.dim() != x_next.dim() {
            return Err(Error::DimensionMismatch {
                expected: x.dim(),
                found: x_next.dim(),
            });
        }
        Ok(TransitionSample { x, u, x_next })
    }
}

/// Closed ball `{z : d(z, center) <= radius}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateBall {
    pub center: State,
    pub radius: f64,
}

impl StateBall {
    pub fn new(center: State, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "radius",
                reason: format!("{radius} is not a finite nonnegative number"),
            });
        }
        Ok(StateBall { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        })
    }
}

pub fn distance(a: &State, b: &State) -> Result<f64> {
    same_dim(a.dim(), b.dim())?;
    Ok(metric(a.coords(), b.coords()))
}

pub fn ball_contains(ball: &StateBall, p: &State) -> Result<bool> {
    Ok(distance(&ball.center, p)? <= ball.radius)
}

pub fn ball_subset(inner: &StateBall, outer: &StateBall) -> Result<bool> {
    let d = distance(&inner.center, &outer.center)?;
    Ok(subset_by_geometry(d, inner.radius, outer.radius, TIE_TOLERANCE))
}

/// Containment test on precomputed center distance.
#[inline]
pub(crate) fn subset_by_geometry(center_dist: f64, inner: f64, outer: f64, tol: f64) -> bool {
    center_dist + inner <= outer + tol
}
