//! Transition datasets and their on-disk form.
//!
//! A dataset is stored as a CSV file with header
//! `x0,...,x{d-1},u0,...,u{m-1},xn0,...,xn{d-1}` and a JSON sidecar
//! `<name>.meta.json` carrying dimensions, bounds and provenance.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ControlInput, State, TransitionSample};

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::Empty("bounds"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter {
                name: "bounds",
                reason: format!("lower {lower:?} exceeds upper {upper:?}"),
            });
        }
        Ok(Bounds { lower, upper })
    }

    /// Same interval on every axis.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Bounds {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn clamp(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    /// True when every axis has positive width.
    pub fn is_non_degenerate(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| l < u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetBounds {
    pub state: Bounds,
    pub input: Bounds,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<TransitionSample>,
    state_dim: usize,
    input_dim: usize,
    bounds: Option<DatasetBounds>,
}

impl Dataset {
    /// Validates dimensions and, when present, bounds.
    pub fn new(samples: Vec<TransitionSample>, bounds: Option<DatasetBounds>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let state_dim = first.x.dim();
        let input_dim = first.u.dim();
        for s in &samples {
            for d in [s.x.dim(), s.x_next.dim()] {
                if d != state_dim {
                    return Err(Error::DimensionMismatch {
                        expected: state_dim,
                        found: d,
                    });
                }
            }
            if s.u.dim() != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    found: s.u.dim(),
                });
            }
        }
        if let Some(b) = &bounds {
            if b.state.dim() != state_dim {
                return Err(Error::DimensionMismatch {
                    expected: state_dim,
                    found: b.state.dim(),
                });
            }
            if b.input.dim() != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    found: b.input.dim(),
                });
            }
            if let Some(index) = samples.iter().position(|s| {
                !(b.state.contains(s.x.coords())
                    && b.state.contains(s.x_next.coords())
                    && b.input.contains(s.u.coords()))
            }) {
                return Err(Error::OutOfBounds { index });
            }
        }
        Ok(Dataset {
            samples,
            state_dim,
            input_dim,
            bounds,
        })
    }

    pub fn samples(&self) -> &[TransitionSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn bounds(&self) -> Option<&DatasetBounds> {
        self.bounds.as_ref()
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &State> {
        self.samples.iter().map(|s| &s.x)
    }

    pub fn successors(&self) -> impl ExactSizeIterator<Item = &State> {
        self.samples.iter().map(|s| &s.x_next)
    }

    pub fn check_state(&self, p: &State) -> Result<()> {
        if p.dim() == self.state_dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.state_dim,
                found: p.dim(),
            })
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = csv_header(self.state_dim, self.input_dim);
        let io = |e| Error::io(path, e);
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for s in &self.samples {
            let row: Vec<String> = s
                .x
                .coords()
                .iter()
                .chain(s.u.coords())
                .chain(s.x_next.coords())
                .map(|v| format_float(*v))
                .collect();
            writeln!(out, "{}", row.join(",")).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Reads a dataset CSV. Dimensions come from the header; bounds, when
    /// wanted, come from the sidecar via [`Dataset::with_bounds`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::format(path, e))?;
        let headers = reader.headers().map_err(|e| Error::format(path, e))?.clone();
        let (state_dim, input_dim) = parse_header(headers.iter().collect(), path)?;

        let mut samples = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::format(path, e))?;
            let values = record
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("row {}: {e}", row + 1)))?;
            if values.len() != 2 * state_dim + input_dim {
                return Err(Error::format(
                    path,
                    format!("row {} has {} fields", row + 1, values.len()),
                ));
            }
            let bad_row = |e: Error| Error::format(path, format!("row {}: {e}", row + 1));
            let x = State::new(values[..state_dim].to_vec()).map_err(bad_row)?;
            let u = ControlInput::new(values[state_dim..state_dim + input_dim].to_vec())
                .map_err(bad_row)?;
            let x_next = State::new(values[state_dim + input_dim..].to_vec()).map_err(bad_row)?;
            samples.push(TransitionSample { x, u, x_next });
        }
        Dataset::new(samples, None)
    }

    pub fn with_bounds(self, bounds: DatasetBounds) -> Result<Self> {
        Dataset::new(self.samples, Some(bounds))
    }
}

/// Round-trip exact float formatting.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub fn csv_header(state_dim: usize, input_dim: usize) -> Vec<String> {
    (0..state_dim)
        .map(|i| format!("x{i}"))
        .chain((0..input_dim).map(|i| format!("u{i}")))
        .chain((0..state_dim).map(|i| format!("xn{i}")))
        .collect()
}

fn parse_header(fields: Vec<&str>, path: &Path) -> Result<(usize, usize)> {
    let count = |prefix: &str| {
        fields
            .iter()
            .filter(|f| {
                f.strip_prefix(prefix)
                    .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            })
            .count()
    };
    let state_dim = count("x");
    let input_dim = count("u");
    if state_dim == 0 || input_dim == 0 {
        return Err(Error::format(path, "header must name x*, u* and xn* columns"));
    }
    let expected = csv_header(state_dim, input_dim);
    if fields.len() != expected.len() || fields.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
        return Err(Error::format(
            path,
            format!("expected header `{}`", expected.join(",")),
        ));
    }
    Ok((state_dim, input_dim))
}

/// Contents of the `<name>.meta.json` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub state_dim: usize,
    pub input_dim: usize,
    pub bounds: Option<DatasetBounds>,
    pub seed: Option<u64>,
    pub system: Option<String>,
    #[serde(default)]
    pub rng: Option<String>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub max_traj_len: Option<usize>,
}

impl DatasetMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

/// `data/foo.csv` -> `data/foo.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

/// Loads a dataset CSV, applying bounds from the sidecar when one exists.
pub fn load(path: &Path) -> Result<(Dataset, Option<DatasetMeta>)> {
    let ds = Dataset::read_csv(path)?;
    let meta_path = sidecar_path(path);
    if !meta_path.exists() {
        return Ok((ds, None));
    }
    let meta = DatasetMeta::read(&meta_path)?;
    if meta.state_dim != ds.state_dim() || meta.input_dim != ds.input_dim() {
        return Err(Error::format(
            &meta_path,
            "dimensions disagree with the dataset header",
        ));
    }
    let ds = match &meta.bounds {
        Some(b) => ds.with_bounds(b.clone())?,
        None => ds,
    };
    Ok((ds, Some(meta)))
}
