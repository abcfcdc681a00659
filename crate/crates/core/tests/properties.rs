use dmlk::dgp::{gen_sample, make_spec, Design, THETA0};
use dmlk::diagnose::{diagnose, DiagnoseOptions};
use dmlk::dml::{run_dml, Regime};
use dmlk::io::{read_dataset, read_reps, write_dataset, write_reps};
use dmlk::learners::{LearnerKind, LearnerSpec};
use dmlk::montecarlo::{aggregate_cell, run_grid, CellConfig};
use dmlk::stochastics::SeededStream;

fn cell(n: usize, r2: f64, learner: LearnerSpec, b_reps: usize) -> CellConfig {
    CellConfig {
        design: Design::LowDim,
        p: 10,
        n,
        r2_target: r2,
        rho: 0.5,
        learner,
        b_reps,
        k_folds: 5,
        alpha: 0.05,
        base_seed: 77,
    }
}

fn exported(r2: f64, n: usize, seed: u64) -> Vec<u8> {
    let spec = make_spec(Design::LowDim, 10, 0.5, r2).unwrap();
    let ds = gen_sample(&spec, n, &mut SeededStream::new(seed)).unwrap();
    let mut buf = Vec::new();
    write_dataset(&mut buf, &ds, true).unwrap();
    buf
}

#[test]
fn ingested_dataset_gives_identical_fit() {
    let spec = make_spec(Design::LowDim, 10, 0.5, 0.9).unwrap();
    let ds = gen_sample(&spec, 250, &mut SeededStream::new(8)).unwrap();
    let mut buf = Vec::new();
    write_dataset(&mut buf, &ds, true).unwrap();
    let back = read_dataset(&buf[..]).unwrap();
    for learner in [LearnerSpec::lin(), LearnerSpec::las(), LearnerSpec::rf()] {
        let stream = SeededStream::new(99);
        let a = run_dml(&ds, &learner, 5, 0.05, &stream).unwrap();
        let b = run_dml(&back, &learner, 5, 0.05, &stream).unwrap();
        assert_eq!(a, b, "{:?}", learner.kind);
    }
}

fn diagnose_share(r2: f64, accept: impl Fn(f64, Regime) -> bool) -> usize {
    let opts = DiagnoseOptions {
        learner: LearnerKind::Lin,
        ..Default::default()
    };
    (0..50u64)
        .filter(|&seed| {
            let ds = read_dataset(&exported(r2, 500, 1000 + seed)[..]).unwrap();
            let rep = diagnose(&ds, &DiagnoseOptions { seed, ..opts }).unwrap();
            accept(rep.kappa, rep.regime)
        })
        .count()
}

#[test]
fn diagnose_high_overlap_is_well_conditioned() {
    let hits = diagnose_share(0.75, |k, r| (0.5..=1.0).contains(&k) && r == Regime::WellConditioned);
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn diagnose_low_overlap_is_severely_ill() {
    let hits = diagnose_share(0.97, |_, r| r == Regime::SeverelyIll);
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn stored_coverage_flags_match_intervals() {
    let cells = [
        cell(120, 0.75, LearnerSpec::lin(), 10),
        cell(120, 0.97, LearnerSpec::las(), 10),
        cell(120, 0.90, LearnerSpec::rf(), 4),
    ];
    let records: Vec<_> = run_grid(&cells).unwrap().into_iter().flatten().collect();
    let mut buf = Vec::new();
    write_reps(&mut buf, &records).unwrap();
    for r in read_reps(&buf[..]).unwrap() {
        let s = r.stats().unwrap();
        assert_eq!(s.covered, s.ci_lo <= THETA0 && THETA0 <= s.ci_hi);
    }
}

#[test]
fn median_kappa_increases_with_overlap_loss() {
    let cells: Vec<_> = [0.75, 0.90, 0.97]
        .map(|r2| cell(500, r2, LearnerSpec::lin(), 200))
        .into();
    let medians: Vec<f64> = run_grid(&cells)
        .unwrap()
        .iter()
        .map(|recs| aggregate_cell(recs).unwrap().median_kappa)
        .collect();
    assert!(medians[0] < medians[1] && medians[1] < medians[2], "{medians:?}");
}

#[test]
fn ci_length_halves_when_n_quadruples() {
    let cells = [
        cell(500, 0.90, LearnerSpec::lin(), 200),
        cell(2000, 0.90, LearnerSpec::lin(), 200),
    ];
    let len: Vec<f64> = run_grid(&cells)
        .unwrap()
        .iter()
        .map(|recs| aggregate_cell(recs).unwrap().avg_ci_length)
        .collect();
    let ratio = len[1] / (len[0] / 2.0);
    assert!((ratio - 1.0).abs() <= 0.15, "lengths {len:?}");
}
