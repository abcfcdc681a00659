//! Experiment configuration: a flat TOML file describing the simulation grid.
//!
//! ```toml
//! n_values = [500, 2000]
//! r2_targets = [0.75, 0.90, 0.97]
//! learners = ["LIN", "LAS", "RF"]
//! b_reps = 200
//! ```
//!
//! Every other key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dgp::{make_spec, Design, LOW_DIM_P};
use crate::error::{Error, Result};
use crate::learners::{LearnerKind, LearnerSpec};
use crate::montecarlo::{CellConfig, HighDimConfig};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_design")]
    pub design: Design,
    /// Covariate dimension; defaults to 10 (low-dim) or 500 (high-dim).
    pub p: Option<usize>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub n_values: Vec<usize>,
    pub r2_targets: Vec<f64>,
    pub learners: Vec<String>,
    pub b_reps: usize,
    #[serde(default = "default_folds")]
    pub k_folds: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Also run the lasso-only high-dimensional study.
    #[serde(default)]
    pub highdim_study: bool,
    #[serde(default = "default_highdim_n")]
    pub highdim_n: usize,
    #[serde(default = "default_highdim_p")]
    pub highdim_p: usize,
    #[serde(default = "default_r2_grid")]
    pub highdim_r2_targets: Vec<f64>,
    /// Defaults to `b_reps`.
    pub highdim_b_reps: Option<usize>,
}

fn default_design() -> Design {
    Design::LowDim
}
fn default_rho() -> f64 {
    0.5
}
fn default_folds() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.05
}
fn default_seed() -> u64 {
    20_240_601
}
fn default_highdim_n() -> usize {
    200
}
fn default_highdim_p() -> usize {
    500
}
fn default_r2_grid() -> Vec<f64> {
    vec![0.75, 0.90, 0.97]
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{field}`: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn dimension(&self) -> usize {
        self.p.unwrap_or(match self.design {
            Design::LowDim => LOW_DIM_P,
            Design::HighDim => 500,
        })
    }

    pub fn learner_kinds(&self) -> Result<Vec<LearnerKind>> {
        self.learners
            .iter()
            .map(|s| s.parse().map_err(|e: Error| invalid("learners", e)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() {
            return Err(invalid("n_values", "must list at least one sample size"));
        }
        if self.r2_targets.is_empty() {
            return Err(invalid("r2_targets", "must list at least one overlap level"));
        }
        if self.learners.is_empty() {
            return Err(invalid("learners", "must list at least one learner"));
        }
        let kinds = self.learner_kinds()?;
        let mut seen = kinds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != kinds.len() {
            return Err(invalid("learners", "duplicate learner"));
        }
        if self.b_reps == 0 {
            return Err(invalid("b_reps", "must be at least 1"));
        }
        if self.k_folds < 2 {
            return Err(invalid("k_folds", "must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(invalid("rho", format!("must lie in [0, 1), got {}", self.rho)));
        }
        for &n in &self.n_values {
            if n < 2 * self.k_folds {
                return Err(invalid(
                    "n_values",
                    format!("{n} is below 2·k_folds = {}", 2 * self.k_folds),
                ));
            }
        }
        for &r2 in &self.r2_targets {
            make_spec(self.design, self.dimension(), self.rho, r2).map_err(|e| invalid("r2_targets", e))?;
        }
        if kinds.contains(&LearnerKind::Las) {
            for &n in &self.n_values {
                // Each inner CV fold needs training rows.
                let train = n - n.div_ceil(self.k_folds);
                if train < 2 * LearnerSpec::las().lasso.cv_folds {
                    return Err(invalid(
                        "n_values",
                        format!("{n} is too small for the cross-validated lasso"),
                    ));
                }
            }
        }
        if self.highdim_study {
            if self.highdim_b_reps == Some(0) {
                return Err(invalid("highdim_b_reps", "must be at least 1"));
            }
            if self.highdim_r2_targets.is_empty() {
                return Err(invalid("highdim_r2_targets", "must list at least one overlap level"));
            }
            if self.highdim_n < 2 * self.k_folds {
                return Err(invalid("highdim_n", "below 2·k_folds"));
            }
            for &r2 in &self.highdim_r2_targets {
                make_spec(Design::HighDim, self.highdim_p, self.rho, r2)
                    .map_err(|e| invalid("highdim_r2_targets", e))?;
            }
        }
        Ok(())
    }

    /// Grid cells ordered by n, then overlap, then learner as listed.
    pub fn cells(&self) -> Result<Vec<CellConfig>> {
        let kinds = self.learner_kinds()?;
        let mut cells = Vec::new();
        for &n in &self.n_values {
            for &r2 in &self.r2_targets {
                for &kind in &kinds {
                    cells.push(CellConfig {
                        design: self.design,
                        p: self.dimension(),
                        n,
                        r2_target: r2,
                        rho: self.rho,
                        learner: LearnerSpec::new(kind),
                        b_reps: self.b_reps,
                        k_folds: self.k_folds,
                        alpha: self.alpha,
                        base_seed: self.base_seed,
                    });
                }
            }
        }
        Ok(cells)
    }

    pub fn highdim(&self) -> Option<HighDimConfig> {
        self.highdim_study.then(|| HighDimConfig {
            n: self.highdim_n,
            p: self.highdim_p,
            rho: self.rho,
            r2_grid: self.highdim_r2_targets.clone(),
            b_reps: self.highdim_b_reps.unwrap_or(self.b_reps),
            k_folds: self.k_folds,
            alpha: self.alpha,
            base_seed: self.base_seed,
            learner: LearnerSpec::las(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
n_values = [500, 2000]
r2_targets = [0.75, 0.90, 0.97]
learners = ["LIN", "LAS", "RF"]
b_reps = 200
"#;

    #[test]
    fn full_grid_has_eighteen_cells() {
        let cfg = ExperimentConfig::from_toml_str(GRID).unwrap();
        let cells = cfg.cells().unwrap();
        assert_eq!(cells.len(), 18);
        assert_eq!(cfg.dimension(), 10);
        assert_eq!((cfg.k_folds, cfg.alpha), (5, 0.05));
        assert!(cells.iter().all(|c| c.b_reps == 200));
        assert!(cfg.highdim().is_none());
    }

    #[test]
    fn rejects_bad_alpha_naming_the_field() {
        let err = ExperimentConfig::from_toml_str(&format!("{GRID}alpha = 1.5\n")).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = ExperimentConfig::from_toml_str(&format!("{GRID}colour = 3\n")).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn rejects_bad_values() {
        for extra in ["k_folds = 1\n", "rho = 1.0\n", "design = \"sideways\"\n"] {
            assert!(
                ExperimentConfig::from_toml_str(&format!("{GRID}{extra}")).is_err(),
                "{extra}"
            );
        }
        let bad_r2 = GRID.replace("0.97]", "1.0]");
        assert!(ExperimentConfig::from_toml_str(&bad_r2)
            .unwrap_err()
            .to_string()
            .contains("r2_targets"));
        let bad_learner = GRID.replace("\"RF\"", "\"SVM\"");
        assert!(ExperimentConfig::from_toml_str(&bad_learner)
            .unwrap_err()
            .to_string()
            .contains("learners"));
        let tiny_n = GRID.replace("[500, 2000]", "[6]");
        assert!(ExperimentConfig::from_toml_str(&tiny_n)
            .unwrap_err()
            .to_string()
            .contains("n_values"));
        let zero_b = GRID.replace("b_reps = 200", "b_reps = 0");
        assert!(ExperimentConfig::from_toml_str(&zero_b).is_err());
    }

    #[test]
    fn highdim_options() {
        let cfg =
            ExperimentConfig::from_toml_str(&format!("{GRID}highdim_study = true\nhighdim_b_reps = 7\n")).unwrap();
        let hd = cfg.highdim().unwrap();
        assert_eq!((hd.n, hd.p, hd.b_reps), (200, 500, 7));
        assert_eq!(hd.r2_grid, vec![0.75, 0.90, 0.97]);
    }
}
