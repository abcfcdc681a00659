use std::path::Path;
use std::process::{Command, Output};

use dmlk::dgp::{gen_sample, make_spec, Design};
use dmlk::io::write_dataset;
use dmlk::stochastics::SeededStream;

fn dmlk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmlk"))
        .args(args)
        .env("DMLK_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MINIMAL: &str = "n_values = [60]\nr2_targets = [0.75]\nlearners = [\"LIN\"]\nb_reps = 2\n";

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn minimal_config_writes_two_reps_and_one_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, MINIMAL).unwrap();
    let out = dir.path().join("out");
    let o = dmlk(&["run-sim", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&out.join("reps.csv")).lines().count(), 3);
    assert_eq!(read(&out.join("cells.csv")).lines().count(), 2);
    for f in ["regimes.csv", "design.csv", "report.md"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn output_dir_from_config_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from_config");
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, format!("{MINIMAL}output_dir = {:?}\n", s(&out))).unwrap();
    assert!(dmlk(&["run-sim", "--config", s(&cfg)]).status.success());
    assert!(out.join("cells.csv").exists());
}

#[test]
fn invalid_config_exits_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, format!("{MINIMAL}alpha = 1.5\n")).unwrap();
    let out = dir.path().join("out");
    let o = dmlk(&["run-sim", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
    assert!(!out.exists());
}

#[test]
fn run_sim_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(
        &cfg,
        "n_values = [60]\nr2_targets = [0.75, 0.97]\nlearners = [\"LIN\", \"LAS\"]\nb_reps = 3\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(dmlk(&["run-sim", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(dmlk(&["run-sim", "--config", s(&cfg), "--out", s(&b)]).status.success());
    for f in ["reps.csv", "cells.csv", "regimes.csv", "design.csv", "report.md"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn report_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(
        &cfg,
        "n_values = [60, 80]\nr2_targets = [0.9]\nlearners = [\"LIN\", \"RF\"]\nb_reps = 2\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    assert!(dmlk(&["run-sim", "--config", s(&cfg), "--out", s(&run)])
        .status
        .success());
    let again = dir.path().join("again");
    let o = dmlk(&["report", "--reps", s(&run.join("reps.csv")), "--out", s(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["reps.csv", "cells.csv", "regimes.csv", "design.csv", "report.md"] {
        assert_eq!(
            std::fs::read(run.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn hand_built_reps_give_hand_checked_summary() {
    let dir = tempfile::tempdir().unwrap();
    let reps = dir.path().join("reps.csv");
    std::fs::write(
        &reps,
        "design,p,n,r2_target,learner,rep,seed,status,theta_hat,kappa,se,ci_lo,ci_hi,covered,bias,sq_error,sample_r2,message\n\
         lowdim,10,500,0.75,LIN,0,11,ok,1.1,0.5,0.05,1.0,1.2,1,0.1,0.01,0.74,\n\
         lowdim,10,500,0.75,LIN,1,12,ok,0.8,0.9,0.025,0.85,0.95,0,-0.2,0.04,0.76,\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = dmlk(&["report", "--reps", s(&reps), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cells = read(&out.join("cells.csv"));
    let row: Vec<&str> = cells.lines().nth(1).unwrap().split(',').collect();
    let num = |i: usize| row[i].parse::<f64>().unwrap();
    assert_eq!(&row[..8], ["lowdim", "10", "500", "0.75", "LIN", "High", "2", "0"]);
    // Oracle: kappa {0.5, 0.9}; covered {1, 0}; lengths {0.2, 0.1};
    // errors {0.1, -0.2}.
    assert!((num(8) - 0.7).abs() < 1e-12);
    assert!((num(9) - 0.7).abs() < 1e-12);
    assert!((num(10) - (0.08f64).sqrt()).abs() < 1e-12);
    assert_eq!(num(11), 0.5);
    assert!((num(12) - 0.15).abs() < 1e-12);
    assert!((num(13) + 0.05).abs() < 1e-12);
    assert!((num(14) - (0.025f64).sqrt()).abs() < 1e-12);
    assert_eq!(row[15], "<1");
}

#[test]
fn empty_reps_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let reps = dir.path().join("reps.csv");
    std::fs::write(&reps, "").unwrap();
    let out = dir.path().join("out");
    let o = dmlk(&["report", "--reps", s(&reps), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn diagnose_prints_kappa_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let spec = make_spec(Design::LowDim, 10, 0.5, 0.97).unwrap();
    let ds = gen_sample(&spec, 400, &mut SeededStream::new(3)).unwrap();
    write_dataset(std::fs::File::create(&data).unwrap(), &ds, true).unwrap();
    let json = dir.path().join("report.json");
    let o = dmlk(&["diagnose", "--data", s(&data), "--learner", "lin", "--json", s(&json)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("kappa_DML") && stdout.contains(">=2"), "{stdout}");
    assert!(stdout.contains("warrant particular scrutiny"));
    let text = read(&json);
    assert!(text.trim_start().starts_with('{'));
    assert!(text.contains("\"regime\": \"SeverelyIll\""), "{text}");
}

#[test]
fn diagnose_rejects_tiny_and_malformed_data() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = dir.path().join("tiny.csv");
    std::fs::write(&tiny, "y,d,x1\n1,0.5,0.1\n2,1.5,0.2\n0,0.1,0.3\n").unwrap();
    let o = dmlk(&["diagnose", "--data", s(&tiny), "--folds", "5"]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,d,x1\n1,0.5,0.1\n2,abc,0.2\n").unwrap();
    let o = dmlk(&["diagnose", "--data", s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 2") && err.contains("`d`"), "{err}");

    let flat = dir.path().join("flat.csv");
    let rows: String = (0..20).map(|i| format!("{i},1.0,{}\n", i % 3)).collect();
    std::fs::write(&flat, format!("y,d,x1\n{rows}")).unwrap();
    let o = dmlk(&["diagnose", "--data", s(&flat)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate score"));
}
