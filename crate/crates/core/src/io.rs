//! CSV artifacts and dataset files.
//!
//! Numbers are written in the shortest form that parses back to the same
//! double; NaN marks an undefined statistic. Every file has a header row.
//!
//! `reps.csv` columns: design, p, n, r2_target, learner, rep, seed, status
//! (`ok` or `failed`), theta_hat, kappa, se, ci_lo, ci_hi, covered (1/0),
//! bias, sq_error, sample_r2, message. Statistic fields are empty on failed
//! rows, and `message` is empty on successful ones.
//!
//! Dataset files have header `y,d,x1,...,xp`. Columns named `oracle_*` may
//! follow and are ignored on ingest.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::dgp::{Dataset, Design};
use crate::dml::Regime;
use crate::error::{Error, Result};
use crate::learners::LearnerKind;
use crate::montecarlo::{overlap_label, CellKey, CellSummary, DesignRow, RegimeRow, RepRecord, RepStats};

pub const REPS_HEADER: [&str; 18] = [
    "design",
    "p",
    "n",
    "r2_target",
    "learner",
    "rep",
    "seed",
    "status",
    "theta_hat",
    "kappa",
    "se",
    "ci_lo",
    "ci_hi",
    "covered",
    "bias",
    "sq_error",
    "sample_r2",
    "message",
];

pub const CELLS_HEADER: [&str; 16] = [
    "design",
    "p",
    "n",
    "r2_target",
    "learner",
    "overlap",
    "b_reps",
    "failures",
    "median_kappa",
    "mean_kappa",
    "sd_kappa",
    "coverage",
    "avg_ci_length",
    "mean_bias",
    "rmse",
    "regime",
];

pub const REGIMES_HEADER: [&str; 8] = [
    "regime",
    "learner",
    "cells",
    "reps",
    "coverage",
    "avg_ci_length",
    "mean_bias",
    "rmse",
];

pub const DESIGN_HEADER: [&str; 10] = [
    "design",
    "r2_target",
    "overlap",
    "cells",
    "reps",
    "n_values",
    "learners",
    "median_kappa",
    "mean_kappa",
    "sd_kappa",
];

/// Shortest round-trip representation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("row {row}, column `{column}`: `{field}` is not a number")))
}

fn parse_int<T: std::str::FromStr>(field: &str, row: usize, column: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("row {row}, column `{column}`: `{field}` is not an integer")))
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn key_fields(key: &CellKey) -> [String; 5] {
    [
        key.design.to_string(),
        key.p.to_string(),
        key.n.to_string(),
        fmt_f64(key.r2_target),
        key.learner.to_string(),
    ]
}

pub fn write_reps<W: Write>(out: W, records: &[RepRecord]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(REPS_HEADER)?;
    for r in records {
        let mut row: Vec<String> = key_fields(&r.key).into();
        row.push(r.rep.to_string());
        row.push(r.seed.to_string());
        match &r.outcome {
            Ok(s) => {
                row.push("ok".into());
                row.extend([s.theta_hat, s.kappa, s.se, s.ci_lo, s.ci_hi].map(fmt_f64));
                row.push(if s.covered { "1" } else { "0" }.into());
                row.extend([s.bias, s.sq_error, s.sample_r2].map(fmt_f64));
                row.push(String::new());
            }
            Err(msg) => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 9));
                row.push(msg.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn check_header(found: &csv::StringRecord, expected: &[&str], what: &str) -> Result<()> {
    let found: Vec<&str> = found.iter().collect();
    if found != expected {
        return Err(Error::Data(format!(
            "{what}: header mismatch, expected `{}`, found `{}`",
            expected.join(","),
            found.join(",")
        )));
    }
    Ok(())
}

fn parse_key(rec: &csv::StringRecord, row: usize) -> Result<CellKey> {
    let design: Design = rec[0]
        .parse()
        .map_err(|_| Error::Data(format!("row {row}, column `design`: unknown design `{}`", &rec[0])))?;
    let learner: LearnerKind = rec[4]
        .parse()
        .map_err(|_| Error::Data(format!("row {row}, column `learner`: unknown learner `{}`", &rec[4])))?;
    Ok(CellKey {
        design,
        p: parse_int(&rec[1], row, "p")?,
        n: parse_int(&rec[2], row, "n")?,
        r2_target: parse_f64(&rec[3], row, "r2_target")?,
        learner,
    })
}

/// Reads a `reps.csv` file; the record invariants are checked on the way in.
pub fn read_reps<R: Read>(input: R) -> Result<Vec<RepRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    check_header(rdr.headers()?, &REPS_HEADER, "reps file")?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != REPS_HEADER.len() {
            return Err(Error::Data(format!(
                "row {row}: expected {} fields, found {}",
                REPS_HEADER.len(),
                rec.len()
            )));
        }
        let key = parse_key(&rec, row)?;
        let rep = parse_int(&rec[5], row, "rep")?;
        let seed = parse_int(&rec[6], row, "seed")?;
        let outcome = match &rec[7] {
            "ok" => {
                let f = |idx: usize| parse_f64(&rec[idx], row, REPS_HEADER[idx]);
                let stats = RepStats::new(f(8)?, f(9)?, f(10)?, (f(11)?, f(12)?), f(16)?);
                let covered = match &rec[13] {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(Error::Data(format!(
                            "row {row}, column `covered`: expected 0 or 1, found `{other}`"
                        )))
                    }
                };
                let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
                if covered != stats.covered || !close(f(14)?, stats.bias) || !close(f(15)?, stats.sq_error) {
                    return Err(Error::Data(format!(
                        "row {row}: covered/bias/sq_error inconsistent with theta_hat and the interval"
                    )));
                }
                Ok(stats)
            }
            "failed" => Err(rec[17].to_string()),
            other => {
                return Err(Error::Data(format!(
                    "row {row}, column `status`: unknown status `{other}`"
                )))
            }
        };
        out.push(RepRecord {
            key,
            rep,
            seed,
            outcome,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("replication records"));
    }
    Ok(out)
}

fn opt_regime(r: Option<Regime>) -> String {
    r.map(|r| r.label().to_string()).unwrap_or_default()
}

pub fn write_cells<W: Write>(out: W, summaries: &[CellSummary]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(CELLS_HEADER)?;
    for s in summaries {
        let mut row: Vec<String> = key_fields(&s.key).into();
        row.push(overlap_label(s.key.r2_target));
        row.push(s.b_reps.to_string());
        row.push(s.failures.to_string());
        row.extend(
            [
                s.median_kappa,
                s.mean_kappa,
                s.sd_kappa,
                s.coverage,
                s.avg_ci_length,
                s.mean_bias,
                s.rmse,
            ]
            .map(fmt_f64),
        );
        row.push(opt_regime(s.regime));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_regimes<W: Write>(out: W, rows: &[RegimeRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(REGIMES_HEADER)?;
    for r in rows {
        let mut row = vec![
            r.regime.label().to_string(),
            r.learner.to_string(),
            r.cells.to_string(),
            r.reps.to_string(),
        ];
        row.extend([r.coverage, r.avg_ci_length, r.mean_bias, r.rmse].map(fmt_f64));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_design<W: Write>(out: W, rows: &[DesignRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(DESIGN_HEADER)?;
    for r in rows {
        let n_values: Vec<String> = r.n_values.iter().map(|n| n.to_string()).collect();
        let learners: Vec<&str> = r.learners.iter().map(|l| l.label()).collect();
        let mut row = vec![
            r.design.to_string(),
            fmt_f64(r.r2_target),
            r.overlap.clone(),
            r.cells.to_string(),
            r.reps.to_string(),
            n_values.join(";"),
            learners.join(";"),
        ];
        row.extend([r.median_kappa, r.mean_kappa, r.sd_kappa].map(fmt_f64));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `y,d,x1..xp`, followed by `oracle_m,oracle_g,oracle_l,oracle_eps`
/// when requested and available.
pub fn write_dataset<W: Write>(out: W, ds: &Dataset, with_oracle: bool) -> Result<()> {
    let mut w = writer(out);
    let p = ds.p();
    let oracle = ds.oracle.as_ref().filter(|_| with_oracle);
    let mut header = vec!["y".to_string(), "d".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    if oracle.is_some() {
        header.extend(["oracle_m", "oracle_g", "oracle_l", "oracle_eps"].map(String::from));
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row = vec![fmt_f64(ds.y[i]), fmt_f64(ds.d[i])];
        row.extend(ds.x.row(i).iter().map(|v| fmt_f64(*v)));
        if let Some(o) = oracle {
            row.extend([o.true_m[i], o.true_g[i], o.true_l[i], o.eps[i]].map(fmt_f64));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a dataset file. Oracle columns are ignored.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let used = header.iter().take_while(|h| !h.starts_with("oracle_")).count();
    if header[used..].iter().any(|h| !h.starts_with("oracle_")) {
        return Err(Error::Data("oracle_* columns must come after all covariates".into()));
    }
    if used < 3 || header[0] != "y" || header[1] != "d" {
        return Err(Error::Data(format!(
            "header must start with `y,d,x1`, found `{}`",
            header.join(",")
        )));
    }
    let p = used - 2;
    for (j, h) in header[2..used].iter().enumerate() {
        if *h != format!("x{}", j + 1) {
            return Err(Error::Data(format!(
                "column {}: expected `x{}`, found `{h}`",
                j + 3,
                j + 1
            )));
        }
    }
    let (mut y, mut d, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "row {row}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        for (j, field) in rec.iter().take(used).enumerate() {
            let v = parse_f64(field, row, &header[j])?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {row}, column `{}`: non-finite value",
                    header[j]
                )));
            }
            match j {
                0 => y.push(v),
                1 => d.push(v),
                _ => x.push(v),
            }
        }
    }
    if y.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, p), x).map_err(|e| Error::Data(e.to_string()))?;
    Dataset::new(Array1::from(y), Array1::from(d), x)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}
