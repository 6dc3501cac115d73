//! CSV and JSON files written by the subcommands.
//!
//! Floats are written with Rust's shortest round-trip formatting so that
//! identical runs produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use datactl_core::analysis::{SweepResult, VerificationRecord};
use datactl_core::ferf::{FerfOutcome, UNREACHABLE};
use datactl_core::lipschitz::LipschitzEstimate;
use datactl_core::mecs::MecsResult;
use serde::Serialize;

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_lipschitz(path: &Path, est: &[LipschitzEstimate]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["index", "L_x_hat", "L_u_hat", "n_neighbors", "fallback"])?;
    for e in est {
        w.write_record([
            e.sample_index.to_string(),
            e.l_x.to_string(),
            e.l_u.to_string(),
            e.n_neighbors.to_string(),
            u8::from(e.fallback_used).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `lipschitz.csv`; the file does not carry δ, so it is supplied.
pub fn read_lipschitz(path: &Path, n: usize, delta: f64) -> Result<Vec<LipschitzEstimate>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["index", "L_x_hat", "L_u_hat", "n_neighbors", "fallback"] {
        bail!("{}: unexpected header {:?}", path.display(), header);
    }
    let mut out = Vec::with_capacity(n);
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> Result<&str> { Ok(rec.get(k).unwrap_or_default()) };
        let parse = |k: usize| -> Result<f64> {
            field(k)?
                .parse()
                .with_context(|| format!("{}: row {}, column {}", path.display(), row + 1, k))
        };
        let index: usize = field(0)?.parse().with_context(|| format!("{}: row {}", path.display(), row + 1))?;
        if index != row {
            bail!("{}: row {} has index {index}", path.display(), row + 1);
        }
        out.push(LipschitzEstimate {
            sample_index: index,
            l_x: parse(1)?,
            l_u: parse(2)?,
            delta,
            n_neighbors: parse(3)? as usize,
            fallback_used: field(4)? == "1",
        });
    }
    if out.len() != n {
        bail!("{}: {} estimates for {n} samples", path.display(), out.len());
    }
    Ok(out)
}

fn coord_header(prefix: &str, dim: usize) -> impl Iterator<Item = String> + '_ {
    (0..dim).map(move |k| format!("{prefix}{k}"))
}

pub fn write_balls(path: &Path, r: &MecsResult) -> Result<()> {
    let dim = r.target.dim();
    let mut w = writer(path)?;
    let mut header = vec!["node_id".to_string()];
    header.extend(coord_header("c", dim));
    header.extend(["radius", "parent", "via_sample", "iteration", "depth"].map(String::from));
    w.write_record(&header)?;
    for n in &r.visited {
        let mut row = vec![n.id.to_string()];
        row.extend(n.ball.center.coords().iter().map(f64::to_string));
        row.extend([
            n.ball.radius.to_string(),
            opt(n.parent),
            opt(n.via_sample),
            n.iteration.to_string(),
            n.depth.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Visited balls as of every `every`-th iteration, plus the final tree.
pub fn write_snapshots(path: &Path, r: &MecsResult, every: usize) -> Result<()> {
    let dim = r.target.dim();
    let last = r.visited.iter().map(|n| n.iteration).max().unwrap_or(0);
    let mut marks: Vec<usize> = (1..).map(|k| k * every).take_while(|&t| t < last).collect();
    marks.push(last);
    let mut w = writer(path)?;
    let mut header = vec!["snapshot".to_string(), "node_id".to_string()];
    header.extend(coord_header("c", dim));
    header.push("radius".into());
    w.write_record(&header)?;
    for t in marks {
        for n in r.visited.iter().filter(|n| n.iteration <= t) {
            let mut row = vec![t.to_string(), n.id.to_string()];
            row.extend(n.ball.center.coords().iter().map(f64::to_string));
            row.push(n.ball.radius.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_controllable(path: &Path, n: usize, indices: &[usize]) -> Result<()> {
    let mut flags = vec![false; n];
    for &i in indices {
        flags[i] = true;
    }
    let mut w = writer(path)?;
    w.write_record(["index", "controllable"])?;
    for (i, f) in flags.iter().enumerate() {
        w.write_record([i.to_string(), u8::from(*f).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Hop count from each sample's state to the target, empty when unreachable.
pub fn write_distances(path: &Path, out: &FerfOutcome) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["index", "hops"])?;
    for (i, h) in out.hops.iter().enumerate() {
        let h = if *h == UNREACHABLE { String::new() } else { h.to_string() };
        w.write_record([i.to_string(), h])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: &Path, s: &SweepResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["param", "doc", "n_controllable", "n_total"])?;
    for p in &s.points {
        w.write_record([
            p.param.to_string(),
            p.report.doc.to_string(),
            p.report.n_controllable.to_string(),
            p.report.n_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_heatmap(path: &Path, s: &SweepResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["tx0", "tx1", "doc"])?;
    for p in &s.points {
        let t = p.report.target.coords();
        w.write_record([t[0].to_string(), t[1].to_string(), p.report.doc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_verify(path: &Path, records: &[VerificationRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["node_id", "probe", "final_dist", "pass"])?;
    for rec in records {
        for p in &rec.probes {
            w.write_record([
                rec.node_id.to_string(),
                p.probe.to_string(),
                p.final_dist.to_string(),
                u8::from(p.pass).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lipschitz_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lipschitz.csv");
        let mut est = LipschitzEstimate::uniform(3, 0.1 + 0.2, 1.0 / 3.0, 0.2);
        est[1].fallback_used = true;
        est[2].n_neighbors = 17;
        write_lipschitz(&path, &est).unwrap();
        assert_eq!(read_lipschitz(&path, 3, 0.2).unwrap(), est);
        assert!(read_lipschitz(&path, 4, 0.2).is_err());
    }
}
