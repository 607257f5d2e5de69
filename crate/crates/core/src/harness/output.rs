//! Trace and sweep CSV files.

use std::collections::BTreeMap;
use std::path::Path;

use super::run::SweepRow;
use crate::error::{Error, Result};
use crate::trace::RegretTrace;

pub const TRACE_HEADER: [&str; 6] = [
    "algo",
    "run_id",
    "seed",
    "t",
    "instant_regret",
    "cumulative_regret",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// One row per round, sorted by `(run_id, t)` with `t` starting at 1.
pub fn write_csv(path: &Path, traces: &[RegretTrace]) -> Result<()> {
    let mut order: Vec<&RegretTrace> = traces.iter().collect();
    order.sort_by_key(|t| (t.run_id, t.algo.clone()));
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(TRACE_HEADER).map_err(|e| csv_err(path, e))?;
    for tr in order {
        let run = tr.run_id.to_string();
        let seed = tr.seed.to_string();
        for (i, (r, c)) in tr.instant.iter().zip(&tr.cumulative).enumerate() {
            w.write_record([
                tr.algo.as_str(),
                &run,
                &seed,
                &(i + 1).to_string(),
                &r.to_string(),
                &c.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads traces written by [`write_csv`], grouped by `(algo, run_id)`.
pub fn read_csv(path: &Path) -> Result<Vec<RegretTrace>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Config(format!(
            "{}: unexpected header",
            path.display()
        )));
    }
    let mut by_key: BTreeMap<(String, usize), RegretTrace> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad =
            |what: &str| Error::Config(format!("{}: row {}: bad {what}", path.display(), line + 2));
        let algo = rec[0].to_string();
        let run_id: usize = rec[1].parse().map_err(|_| bad("run_id"))?;
        let seed: u64 = rec[2].parse().map_err(|_| bad("seed"))?;
        let t: usize = rec[3].parse().map_err(|_| bad("t"))?;
        let instant: f64 = rec[4].parse().map_err(|_| bad("instant_regret"))?;
        let cumulative: f64 = rec[5].parse().map_err(|_| bad("cumulative_regret"))?;
        let tr = by_key
            .entry((algo.clone(), run_id))
            .or_insert_with(|| RegretTrace::new(algo, run_id, seed));
        if t != tr.len() + 1 {
            return Err(bad("t (rows must be in round order)"));
        }
        tr.instant.push(instant);
        tr.cumulative.push(cumulative);
    }
    Ok(by_key.into_values().collect())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["omega_r", "t1", "mean", "sd"])
        .map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record([
            row.omega_r.to_string(),
            row.t1.to_string(),
            row.mean.to_string(),
            row.sd.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = || Error::Config(format!("{}: row {}: malformed", path.display(), line + 2));
        if rec.len() != 4 {
            return Err(bad());
        }
        rows.push(SweepRow {
            omega_r: rec[0].parse().map_err(|_| bad())?,
            t1: rec[1].parse().map_err(|_| bad())?,
            mean: rec[2].parse().map_err(|_| bad())?,
            sd: rec[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}
