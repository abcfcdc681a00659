//! Replication loops, per-cell and pooled aggregation, and the
//! high-dimensional study.
//!
//! Replication `r` of a cell draws its data from
//! `derive_seed(base_seed, [design, p, n, r2 bits, r])`; the learner tag is
//! deliberately absent so that all learners see the same samples. The DML
//! stream is that seed forked by the learner tag.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{gen_sample, make_spec, realized_r2, Design, DgpSpec, THETA0};
use crate::dml::{classify_regime, run_dml, Regime};
use crate::error::{Error, Result};
use crate::learners::{LearnerKind, LearnerSpec};
use crate::stats::{mean, median, sd};
use crate::stochastics::{derive_seed, SeededStream};

/// Worker count override; never affects results.
pub const THREADS_ENV: &str = "DMLK_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub design: Design,
    pub p: usize,
    pub n: usize,
    pub r2_target: f64,
    pub rho: f64,
    pub learner: LearnerSpec,
    pub b_reps: usize,
    pub k_folds: usize,
    pub alpha: f64,
    pub base_seed: u64,
}

impl CellConfig {
    pub fn key(&self) -> CellKey {
        CellKey {
            design: self.design,
            p: self.p,
            n: self.n,
            r2_target: self.r2_target,
            learner: self.learner.kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_reps == 0 {
            return Err(Error::InvalidArgument("b_reps must be at least 1".into()));
        }
        if self.k_folds < 2 || self.n < 2 * self.k_folds {
            return Err(Error::InvalidArgument(format!(
                "need k_folds >= 2 and n >= 2·k_folds (n={}, k_folds={})",
                self.n, self.k_folds
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Data seed of replication `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        let design = match self.design {
            Design::LowDim => 0,
            Design::HighDim => 1,
        };
        derive_seed(
            self.base_seed,
            &[
                design,
                self.p as u64,
                self.n as u64,
                self.r2_target.to_bits(),
                rep as u64,
            ],
        )
    }
}

/// Identity of a design cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub design: Design,
    pub p: usize,
    pub n: usize,
    pub r2_target: f64,
    pub learner: LearnerKind,
}

impl CellKey {
    fn same(&self, other: &CellKey) -> bool {
        self.design == other.design
            && self.p == other.p
            && self.n == other.n
            && self.r2_target.to_bits() == other.r2_target.to_bits()
            && self.learner == other.learner
    }
}

/// Statistics of one successful replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepStats {
    pub theta_hat: f64,
    pub kappa: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
    pub bias: f64,
    pub sq_error: f64,
    pub sample_r2: f64,
}

impl RepStats {
    pub fn new(theta_hat: f64, kappa: f64, se: f64, ci: (f64, f64), sample_r2: f64) -> Self {
        let bias = theta_hat - THETA0;
        Self {
            theta_hat,
            kappa,
            se,
            ci_lo: ci.0,
            ci_hi: ci.1,
            covered: ci.0 <= THETA0 && THETA0 <= ci.1,
            bias,
            sq_error: bias * bias,
            sample_r2,
        }
    }

    pub fn ci_length(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub key: CellKey,
    pub rep: usize,
    pub seed: u64,
    /// Failure message for replications whose fit errored.
    pub outcome: std::result::Result<RepStats, String>,
}

impl RepRecord {
    pub fn stats(&self) -> Option<&RepStats> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub b_reps: usize,
    pub failures: usize,
    pub median_kappa: f64,
    pub mean_kappa: f64,
    pub sd_kappa: f64,
    pub coverage: f64,
    pub avg_ci_length: f64,
    pub mean_bias: f64,
    pub rmse: f64,
    /// `None` when every replication failed.
    pub regime: Option<Regime>,
}

fn learner_tag(kind: LearnerKind) -> u64 {
    match kind {
        LearnerKind::Las => 1,
        LearnerKind::Lin => 2,
        LearnerKind::Rf => 3,
    }
}

fn run_rep(cfg: &CellConfig, dgp: &DgpSpec, rep: usize) -> RepRecord {
    let seed = cfg.rep_seed(rep);
    let outcome = (|| {
        let mut data_stream = SeededStream::new(seed);
        let ds = gen_sample(dgp, cfg.n, &mut data_stream)?;
        let dml_stream = SeededStream::new(seed).fork(learner_tag(cfg.learner.kind));
        let fit = run_dml(&ds, &cfg.learner, cfg.k_folds, cfg.alpha, &dml_stream)?;
        let r2 = realized_r2(&ds)?;
        Ok::<_, Error>(RepStats::new(fit.theta_hat, fit.kappa, fit.se, fit.ci, r2))
    })()
    .map_err(|e| e.to_string());
    RepRecord {
        key: cfg.key(),
        rep,
        seed,
        outcome,
    }
}

/// Runs `f` on a pool sized by `DMLK_THREADS` when set, else on the global pool.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let threads: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

pub fn run_cell(cfg: &CellConfig) -> Result<Vec<RepRecord>> {
    Ok(run_grid(std::slice::from_ref(cfg))?.remove(0))
}

/// Runs every replication of every cell; results are grouped per cell in
/// input order and sorted by replication index.
pub fn run_grid(cells: &[CellConfig]) -> Result<Vec<Vec<RepRecord>>> {
    let mut specs = Vec::with_capacity(cells.len());
    for cfg in cells {
        cfg.validate()?;
        specs.push(make_spec(cfg.design, cfg.p, cfg.rho, cfg.r2_target)?);
    }
    let jobs: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cfg)| (0..cfg.b_reps).map(move |r| (c, r)))
        .collect();
    let flat: Vec<RepRecord> = with_pool(|| {
        jobs.par_iter()
            .map(|&(c, r)| run_rep(&cells[c], &specs[c], r))
            .collect()
    })?;
    let mut out: Vec<Vec<RepRecord>> = cells.iter().map(|c| Vec::with_capacity(c.b_reps)).collect();
    for (rec, &(c, _)) in flat.into_iter().zip(&jobs) {
        out[c].push(rec);
    }
    Ok(out)
}

/// Summary of one cell. Failed replications are counted and excluded.
pub fn aggregate_cell(records: &[RepRecord]) -> Result<CellSummary> {
    let first = records.first().ok_or(Error::Empty("replication records"))?;
    let ok: Vec<&RepStats> = records.iter().filter_map(RepRecord::stats).collect();
    let mut kappas: Vec<f64> = ok.iter().map(|s| s.kappa).collect();
    let m = ok.len() as f64;
    let avg = |f: fn(&RepStats) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|s| f(s)).sum::<f64>() / m
        }
    };
    let mean_kappa = mean(&kappas);
    let sd_kappa = sd(&kappas);
    let median_kappa = median(&mut kappas);
    Ok(CellSummary {
        key: first.key,
        b_reps: records.len(),
        failures: records.len() - ok.len(),
        median_kappa,
        mean_kappa,
        sd_kappa,
        coverage: avg(|s| if s.covered { 1.0 } else { 0.0 }),
        avg_ci_length: avg(RepStats::ci_length),
        mean_bias: avg(|s| s.bias),
        rmse: avg(|s| s.sq_error).sqrt(),
        regime: if ok.is_empty() {
            None
        } else {
            classify_regime(median_kappa).ok()
        },
    })
}

/// Splits a record stream into consecutive runs of the same cell.
pub fn group_by_cell(records: &[RepRecord]) -> Vec<&[RepRecord]> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || !records[i].key.same(&records[start].key) {
            if i > start {
                groups.push(&records[start..i]);
            }
            start = i;
        }
    }
    groups
}

pub fn aggregate_all(records: &[RepRecord]) -> Result<Vec<CellSummary>> {
    if records.is_empty() {
        return Err(Error::Empty("replication records"));
    }
    group_by_cell(records).into_iter().map(aggregate_cell).collect()
}

/// One row of the coverage-by-regime table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub regime: Regime,
    pub learner: LearnerKind,
    pub cells: usize,
    pub reps: usize,
    pub coverage: f64,
    pub avg_ci_length: f64,
    pub mean_bias: f64,
    pub rmse: f64,
}

/// Cells are grouped by (regime of median κ, learner); statistics are
/// pooled over the successful replications of member cells.
pub fn regime_table(summaries: &[CellSummary], records: &[RepRecord]) -> Vec<RegimeRow> {
    let mut groups: BTreeMap<(Regime, LearnerKind), (usize, Vec<&RepStats>)> = BTreeMap::new();
    for s in summaries {
        let Some(regime) = s.regime else { continue };
        let entry = groups.entry((regime, s.key.learner)).or_default();
        entry.0 += 1;
        entry.1.extend(
            records
                .iter()
                .filter(|r| r.key.same(&s.key))
                .filter_map(RepRecord::stats),
        );
    }
    groups
        .into_iter()
        .map(|((regime, learner), (cells, stats))| {
            let m = stats.len() as f64;
            let avg = |f: &dyn Fn(&RepStats) -> f64| stats.iter().map(|s| f(s)).sum::<f64>() / m;
            RegimeRow {
                regime,
                learner,
                cells,
                reps: stats.len(),
                coverage: avg(&|s| if s.covered { 1.0 } else { 0.0 }),
                avg_ci_length: avg(&RepStats::ci_length),
                mean_bias: avg(&|s| s.bias),
                rmse: avg(&|s| s.sq_error).sqrt(),
            }
        })
        .collect()
}

/// Overlap level name for the canonical R² targets.
pub fn overlap_label(r2: f64) -> String {
    if r2 == 0.75 {
        "High".into()
    } else if r2 == 0.90 {
        "Moderate".into()
    } else if r2 == 0.97 {
        "Low".into()
    } else {
        format!("R2={r2}")
    }
}

/// One row of the κ-by-overlap design table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub design: Design,
    pub r2_target: f64,
    pub overlap: String,
    pub cells: usize,
    pub reps: usize,
    pub n_values: Vec<usize>,
    pub learners: Vec<LearnerKind>,
    pub median_kappa: f64,
    pub mean_kappa: f64,
    pub sd_kappa: f64,
}

/// κ statistics per (design, overlap), pooled over the successful
/// replications of every n and learner. Rows are ordered by design, then R².
pub fn design_table(records: &[RepRecord]) -> Vec<DesignRow> {
    let mut rows: Vec<DesignRow> = Vec::new();
    let mut kappas: Vec<Vec<f64>> = Vec::new();
    for group in group_by_cell(records) {
        let key = group[0].key;
        let idx = match rows
            .iter()
            .position(|r| r.design == key.design && r.r2_target.to_bits() == key.r2_target.to_bits())
        {
            Some(i) => i,
            None => {
                rows.push(DesignRow {
                    design: key.design,
                    r2_target: key.r2_target,
                    overlap: overlap_label(key.r2_target),
                    cells: 0,
                    reps: 0,
                    n_values: Vec::new(),
                    learners: Vec::new(),
                    median_kappa: f64::NAN,
                    mean_kappa: f64::NAN,
                    sd_kappa: f64::NAN,
                });
                kappas.push(Vec::new());
                rows.len() - 1
            }
        };
        let row = &mut rows[idx];
        row.cells += 1;
        if !row.n_values.contains(&key.n) {
            row.n_values.push(key.n);
        }
        if !row.learners.contains(&key.learner) {
            row.learners.push(key.learner);
        }
        let ks = group.iter().filter_map(RepRecord::stats).map(|s| s.kappa);
        kappas[idx].extend(ks);
    }
    for (row, ks) in rows.iter_mut().zip(kappas.iter_mut()) {
        row.n_values.sort_unstable();
        row.learners.sort_unstable();
        row.reps = ks.len();
        row.mean_kappa = mean(ks);
        row.sd_kappa = sd(ks);
        row.median_kappa = median(ks);
    }
    rows.sort_by(|a, b| a.design.cmp(&b.design).then(a.r2_target.total_cmp(&b.r2_target)));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighDimStudy {
    /// One summary per overlap level, in increasing R² order.
    pub summaries: Vec<CellSummary>,
    pub kappa_strictly_increasing: bool,
    pub coverage_non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighDimConfig {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub r2_grid: Vec<f64>,
    pub b_reps: usize,
    pub k_folds: usize,
    pub alpha: f64,
    pub base_seed: u64,
    pub learner: LearnerSpec,
}

impl Default for HighDimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            p: 500,
            rho: 0.5,
            r2_grid: vec![0.75, 0.90, 0.97],
            b_reps: 500,
            k_folds: 5,
            alpha: 0.05,
            base_seed: 20_240_601,
            learner: LearnerSpec::las(),
        }
    }
}

impl HighDimConfig {
    pub fn cells(&self) -> Vec<CellConfig> {
        let mut grid = self.r2_grid.clone();
        grid.sort_by(f64::total_cmp);
        grid.into_iter()
            .map(|r2| CellConfig {
                design: Design::HighDim,
                p: self.p,
                n: self.n,
                r2_target: r2,
                rho: self.rho,
                learner: self.learner.clone(),
                b_reps: self.b_reps,
                k_folds: self.k_folds,
                alpha: self.alpha,
                base_seed: self.base_seed,
            })
            .collect()
    }
}

/// Lasso-only study on the high-dimensional design.
pub fn run_highdim_study(cfg: &HighDimConfig) -> Result<(HighDimStudy, Vec<RepRecord>)> {
    if cfg.learner.kind != LearnerKind::Las {
        return Err(Error::InvalidArgument(
            "the high-dimensional study uses the lasso learner only".into(),
        ));
    }
    let cells = cfg.cells();
    let runs = run_grid(&cells)?;
    let summaries = runs.iter().map(|r| aggregate_cell(r)).collect::<Result<Vec<_>>>()?;
    let kappa_strictly_increasing = summaries.windows(2).all(|w| w[0].median_kappa < w[1].median_kappa);
    let coverage_non_increasing = summaries.windows(2).all(|w| w[0].coverage >= w[1].coverage);
    let records = runs.into_iter().flatten().collect();
    Ok((
        HighDimStudy {
            summaries,
            kappa_strictly_increasing,
            coverage_non_increasing,
        },
        records,
    ))
}
