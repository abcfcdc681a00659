//! Aggregate tables, the artifact directory layout and the markdown report.
//!
//! A run directory holds `reps.csv`, `cells.csv`, `regimes.csv`,
//! `design.csv` and `report.md`; a high-dimensional study adds
//! `highdim_reps.csv` and `highdim.csv`. Every aggregate file is a pure
//! function of the replication records.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::io::{write_cells, write_design, write_regimes, write_reps};
use crate::montecarlo::{
    aggregate_all, design_table, overlap_label, regime_table, CellSummary, DesignRow, RegimeRow, RepRecord,
};

pub const REPS_FILE: &str = "reps.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const REGIMES_FILE: &str = "regimes.csv";
pub const DESIGN_FILE: &str = "design.csv";
pub const HIGHDIM_REPS_FILE: &str = "highdim_reps.csv";
pub const HIGHDIM_FILE: &str = "highdim.csv";
pub const REPORT_FILE: &str = "report.md";

#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub cells: Vec<CellSummary>,
    pub regimes: Vec<RegimeRow>,
    pub design: Vec<DesignRow>,
}

pub fn tabulate(records: &[RepRecord]) -> Result<Tables> {
    let cells = aggregate_all(records)?;
    let regimes = regime_table(&cells, records);
    let design = design_table(records);
    Ok(Tables { cells, regimes, design })
}

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path)?;
    written.push(path);
    Ok(BufWriter::new(file))
}

/// Writes every artifact into `dir` (created if missing). On error, files
/// written so far are removed.
pub fn write_artifacts(dir: &Path, records: &[RepRecord], highdim: Option<&[RepRecord]>) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let result = write_all(dir, records, highdim, &mut written);
    if result.is_err() {
        for path in &written {
            let _ = std::fs::remove_file(path);
        }
    }
    result.map(|()| written)
}

fn write_all(
    dir: &Path,
    records: &[RepRecord],
    highdim: Option<&[RepRecord]>,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let tables = tabulate(records)?;
    let hd = highdim.map(aggregate_all).transpose()?;
    std::fs::create_dir_all(dir)?;
    write_reps(create(dir, REPS_FILE, written)?, records)?;
    write_cells(create(dir, CELLS_FILE, written)?, &tables.cells)?;
    write_regimes(create(dir, REGIMES_FILE, written)?, &tables.regimes)?;
    write_design(create(dir, DESIGN_FILE, written)?, &tables.design)?;
    if let (Some(recs), Some(summaries)) = (highdim, hd.as_ref()) {
        write_reps(create(dir, HIGHDIM_REPS_FILE, written)?, recs)?;
        write_cells(create(dir, HIGHDIM_FILE, written)?, summaries)?;
    }
    let md = render_markdown(&tables, hd.as_deref());
    std::io::Write::write_all(&mut create(dir, REPORT_FILE, written)?, md.as_bytes())?;
    Ok(())
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn regime_cell(s: &CellSummary) -> String {
    s.regime.map_or("n/a".into(), |r| r.label().to_string())
}

pub fn render_markdown(tables: &Tables, highdim: Option<&[CellSummary]>) -> String {
    let mut out = String::from("# Monte Carlo summary\n\n");

    out.push_str("## Median κ by overlap level\n\n");
    out.push_str("| Design | Overlap | R²(D|X) | Median κ | Mean κ | SD κ | n values | Learners | Reps |\n");
    out.push_str("|---|---|---:|---:|---:|---:|---|---|---:|\n");
    for r in &tables.design {
        let ns: Vec<String> = r.n_values.iter().map(|n| n.to_string()).collect();
        let ls: Vec<&str> = r.learners.iter().map(|l| l.label()).collect();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.design,
            r.overlap,
            f3(r.r2_target),
            f3(r.median_kappa),
            f3(r.mean_kappa),
            f3(r.sd_kappa),
            ns.join(", "),
            ls.join(", "),
            r.reps
        );
    }

    out.push_str("\n## Cell-level summary\n\n");
    out.push_str(
        "| n | R² target | Learner | Overlap | Median κ | Mean κ | Coverage | Avg CI length | Mean bias | RMSE | Regime | Failures |\n",
    );
    out.push_str("|---:|---:|---|---|---:|---:|---:|---:|---:|---:|---|---:|\n");
    let mut cells: Vec<&CellSummary> = tables.cells.iter().collect();
    cells.sort_by(|a, b| {
        a.key
            .design
            .cmp(&b.key.design)
            .then(a.key.r2_target.total_cmp(&b.key.r2_target))
            .then(a.key.n.cmp(&b.key.n))
            .then(a.key.learner.cmp(&b.key.learner))
    });
    for s in cells {
        let _ = writeln!(
            out,
            "| {} | {:.2} | {} | {} | {:.4} | {:.4} | {} | {} | {} | {:.4} | {} | {} |",
            s.key.n,
            s.key.r2_target,
            s.key.learner,
            overlap_label(s.key.r2_target),
            s.median_kappa,
            s.mean_kappa,
            f3(s.coverage),
            f3(s.avg_ci_length),
            f3(s.mean_bias),
            s.rmse,
            regime_cell(s),
            s.failures
        );
    }

    out.push_str("\n## Coverage and CI length by κ regime\n\n");
    out.push_str("| κ regime | Learner | Cells | Reps | Coverage (%) | Avg CI length | Bias | RMSE |\n");
    out.push_str("|---|---|---:|---:|---:|---:|---:|---:|\n");
    for r in &tables.regimes {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.regime.label(),
            r.learner,
            r.cells,
            r.reps,
            pct(r.coverage),
            f3(r.avg_ci_length),
            f3(r.mean_bias),
            f3(r.rmse)
        );
    }

    if let Some(hd) = highdim {
        out.push_str("\n## High-dimensional study\n\n");
        if let Some(first) = hd.first() {
            let _ = writeln!(
                out,
                "n = {}, p = {}, learner {}.\n",
                first.key.n, first.key.p, first.key.learner
            );
        }
        out.push_str("| R²(D|X) | Median κ | Coverage (%) | Avg CI length | RMSE | Regime |\n");
        out.push_str("|---|---:|---:|---:|---:|---|\n");
        for s in hd {
            let _ = writeln!(
                out,
                "| {:.2} ({} overlap) | {:.2} | {} | {} | {} | {} |",
                s.key.r2_target,
                overlap_label(s.key.r2_target),
                s.median_kappa,
                pct(s.coverage),
                f3(s.avg_ci_length),
                f3(s.rmse),
                regime_cell(s)
            );
        }
    }
    out
}
