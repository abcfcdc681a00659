//! One-shot DML fit on user data, reported together with κ and its regime.

use std::fmt;

use serde::Serialize;

use crate::dgp::Dataset;
use crate::dml::{classify_regime, run_dml, DmlFit, Regime};
use crate::error::{Error, Result};
use crate::learners::{LearnerKind, LearnerSpec};
use crate::stochastics::SeededStream;

pub const DEFAULT_LEARNER: LearnerKind = LearnerKind::Las;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnoseOptions {
    pub learner: LearnerKind,
    pub k_folds: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            learner: DEFAULT_LEARNER,
            k_folds: DEFAULT_FOLDS,
            alpha: DEFAULT_ALPHA,
            seed: DEFAULT_SEED,
        }
    }
}

/// Invariant: `regime` is the classification of `kappa`, and `warnings` is
/// non-empty whenever the regime is not well-conditioned.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnoseReport {
    pub theta_hat: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub kappa: f64,
    pub regime: Regime,
    pub n: usize,
    pub p: usize,
    pub learner: LearnerKind,
    pub k_folds: usize,
    pub seed: u64,
    pub guidance: String,
    pub warnings: Vec<String>,
}

impl DiagnoseReport {
    pub fn from_fit(fit: &DmlFit, p: usize, k_folds: usize, seed: u64) -> Result<Self> {
        let regime = classify_regime(fit.kappa)?;
        let mut warnings = Vec::new();
        if regime != Regime::WellConditioned {
            warnings.push(format!(
                "kappa = {:.3} places the score in the {} regime; estimates and intervals warrant particular scrutiny",
                fit.kappa,
                match regime {
                    Regime::ModeratelyIll => "moderately ill-conditioned",
                    _ => "severely ill-conditioned",
                }
            ));
        }
        if p >= fit.n {
            warnings.push(format!(
                "p = {p} is not below n = {}; nuisance fits rely on regularization",
                fit.n
            ));
        }
        Ok(Self {
            theta_hat: fit.theta_hat,
            se: fit.se,
            ci: fit.ci,
            alpha: fit.alpha,
            kappa: fit.kappa,
            regime,
            n: fit.n,
            p,
            learner: fit.learner.kind,
            k_folds,
            seed,
            guidance: regime.guidance().to_string(),
            warnings,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are serializable")
    }
}

impl fmt::Display for DiagnoseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = 100.0 * (1.0 - self.alpha);
        writeln!(
            f,
            "n = {}, p = {}, learner {}, K = {} folds, seed {}",
            self.n, self.p, self.learner, self.k_folds, self.seed
        )?;
        writeln!(f, "theta_hat  {:.6}", self.theta_hat)?;
        writeln!(f, "SE         {:.6}", self.se)?;
        writeln!(f, "{level}% CI    [{:.6}, {:.6}]", self.ci.0, self.ci.1)?;
        writeln!(f, "kappa_DML  {:.4}", self.kappa)?;
        writeln!(f, "regime     {}", self.regime.label())?;
        writeln!(f, "{}", self.guidance)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

pub fn diagnose(ds: &Dataset, opts: &DiagnoseOptions) -> Result<DiagnoseReport> {
    if opts.k_folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "folds must be at least 2, got {}",
            opts.k_folds
        )));
    }
    let d0 = ds.d[0];
    if ds.d.iter().all(|&v| v == d0) {
        return Err(Error::DegenerateScore);
    }
    let spec = LearnerSpec::new(opts.learner);
    let fit = run_dml(ds, &spec, opts.k_folds, opts.alpha, &SeededStream::new(opts.seed))?;
    DiagnoseReport::from_fit(&fit, ds.p(), opts.k_folds, opts.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{gen_sample, make_spec, Design};
    use ndarray::{Array1, Array2};

    #[test]
    fn report_is_consistent_with_kappa() {
        let spec = make_spec(Design::LowDim, 10, 0.5, 0.97).unwrap();
        let ds = gen_sample(&spec, 300, &mut SeededStream::new(4)).unwrap();
        let opts = DiagnoseOptions {
            learner: LearnerKind::Lin,
            ..Default::default()
        };
        let rep = diagnose(&ds, &opts).unwrap();
        assert_eq!(rep.regime, classify_regime(rep.kappa).unwrap());
        assert_eq!(rep.regime, Regime::SeverelyIll);
        assert!(!rep.warnings.is_empty());
        assert!(rep.to_string().contains("warrant particular scrutiny"));
        let json: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(json["regime"], "SeverelyIll");
        assert_eq!(json["n"], 300);
    }

    #[test]
    fn constant_treatment_is_degenerate() {
        let n = 40;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let ds = Dataset::new(Array1::from_elem(n, 1.0), Array1::from_elem(n, 2.0), x).unwrap();
        assert!(matches!(
            diagnose(&ds, &DiagnoseOptions::default()),
            Err(Error::DegenerateScore)
        ));
    }

    #[test]
    fn too_few_rows_is_a_precondition_error() {
        let x = Array2::from_shape_fn((3, 1), |(i, _)| i as f64);
        let ds = Dataset::new(Array1::from(vec![1.0, 2.0, 0.5]), Array1::from(vec![0.0, 1.0, 3.0]), x).unwrap();
        let err = diagnose(&ds, &DiagnoseOptions::default()).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }
}
