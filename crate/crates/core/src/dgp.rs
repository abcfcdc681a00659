//! Synthetic partially linear designs with overlap calibrated to a target
//! R²(D|X).
//!
//! X ~ N(0, Σ(ρ)), D = Xᵀβ_D + U with U ~ N(0, σ_U²), and
//! Y = Dθ₀ + Σⱼ γⱼ sin(Xⱼ) + ε with ε ~ N(0, 1).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::{
    chol_lower, sample_mvn_with_factor, sample_std_normal, toeplitz_sigma, CovarianceMatrix, SeededStream,
};

pub const LOW_DIM_P: usize = 10;
pub const THETA0: f64 = 1.0;

const LOW_DIM_BETA: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];
const GAMMA: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    LowDim,
    HighDim,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::LowDim => "lowdim",
            Design::HighDim => "highdim",
        })
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lowdim" => Ok(Design::LowDim),
            "highdim" => Ok(Design::HighDim),
            other => Err(Error::InvalidArgument(format!("unknown design `{other}`"))),
        }
    }
}

/// Fully specified generative design.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub design: Design,
    pub p: usize,
    pub rho: f64,
    pub beta_d: Vec<f64>,
    pub gamma: Vec<f64>,
    pub theta0: f64,
    pub r2_target: f64,
    pub sigma_u2: f64,
    sigma: CovarianceMatrix,
    chol: Array2<f64>,
}

impl DgpSpec {
    pub fn sigma(&self) -> &CovarianceMatrix {
        &self.sigma
    }

    /// Population R²(D|X) implied by the stored σ_U².
    pub fn population_r2(&self) -> f64 {
        let q = self.sigma.quad_form(&self.beta_d);
        q / (q + self.sigma_u2)
    }
}

/// Ground truth attached to synthetic samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub theta0: f64,
    pub beta_d: Vec<f64>,
    /// m₀(X) = Xβ_D
    pub true_m: Array1<f64>,
    /// g₀(X) = γᵀ sin(X)
    pub true_g: Array1<f64>,
    /// ℓ₀(X) = θ₀ m₀(X) + g₀(X)
    pub true_l: Array1<f64>,
    pub eps: Array1<f64>,
}

/// One (Y, D, X) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Array1<f64>,
    pub d: Array1<f64>,
    pub x: Array2<f64>,
    pub oracle: Option<Oracle>,
}

impl Dataset {
    pub fn new(y: Array1<f64>, d: Array1<f64>, x: Array2<f64>) -> Result<Self> {
        let ds = Self { y, d, x, oracle: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_oracle(mut self, oracle: Oracle) -> Result<Self> {
        self.oracle = Some(oracle);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.d.len() != n || self.x.nrows() != n {
            return Err(Error::Data(format!(
                "inconsistent lengths: y={}, d={}, x rows={}",
                n,
                self.d.len(),
                self.x.nrows()
            )));
        }
        let finite = |v: &f64| v.is_finite();
        if !self.y.iter().all(finite) || !self.d.iter().all(finite) || !self.x.iter().all(finite) {
            return Err(Error::Data("non-finite value in dataset".into()));
        }
        if let Some(o) = &self.oracle {
            if [o.true_m.len(), o.true_g.len(), o.true_l.len(), o.eps.len()]
                .iter()
                .any(|&len| len != n)
                || o.beta_d.len() != self.p()
            {
                return Err(Error::Data("oracle dimensions do not match dataset".into()));
            }
        }
        Ok(())
    }
}

/// σ_U² = βᵀΣβ · (1 − r2) / r2.
pub fn calibrate_sigma_u(beta_d: &[f64], sigma: &CovarianceMatrix, r2_target: f64) -> Result<f64> {
    if !(r2_target > 0.0 && r2_target < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target R² must lie in (0, 1), got {r2_target}"
        )));
    }
    let q = sigma.quad_form(beta_d);
    if !(q > 0.0) {
        return Err(Error::Design(
            "treatment signal βᵀΣβ is zero; overlap cannot be calibrated".into(),
        ));
    }
    Ok(q * (1.0 - r2_target) / r2_target)
}

pub fn make_spec(design: Design, p: usize, rho: f64, r2_target: f64) -> Result<DgpSpec> {
    let (beta_d, gamma) = match design {
        Design::LowDim => {
            if p != LOW_DIM_P {
                return Err(Error::Design(format!(
                    "low-dimensional design requires p = {LOW_DIM_P}, got {p}"
                )));
            }
            (padded(&LOW_DIM_BETA, p), padded(&GAMMA, p))
        }
        Design::HighDim => {
            if p == 0 {
                return Err(Error::Design("high-dimensional design requires p >= 1".into()));
            }
            let beta = (0..p as i32).map(|j| 0.7f64.powi(j)).collect();
            (beta, padded(&GAMMA, p))
        }
    };
    let sigma = toeplitz_sigma(p, rho)?;
    let sigma_u2 = calibrate_sigma_u(&beta_d, &sigma, r2_target)?;
    let chol = chol_lower(&sigma)?;
    Ok(DgpSpec {
        design,
        p,
        rho,
        beta_d,
        gamma,
        theta0: THETA0,
        r2_target,
        sigma_u2,
        sigma,
        chol,
    })
}

fn padded(head: &[f64], p: usize) -> Vec<f64> {
    let mut v = vec![0.0; p];
    let k = head.len().min(p);
    v[..k].copy_from_slice(&head[..k]);
    v
}

/// Draws X, then U, then ε from `stream` (in that order).
pub fn gen_sample(spec: &DgpSpec, n: usize, stream: &mut SeededStream) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sample size must be >= 2, got {n}")));
    }
    let x = sample_mvn_with_factor(n, &spec.chol, stream);
    let u = sample_std_normal(n, stream) * spec.sigma_u2.sqrt();
    let eps = sample_std_normal(n, stream);

    let active_beta: Vec<(usize, f64)> = nonzero(&spec.beta_d);
    let active_gamma: Vec<(usize, f64)> = nonzero(&spec.gamma);
    let mut true_m = Array1::zeros(n);
    let mut true_g = Array1::zeros(n);
    for (i, row) in x.rows().into_iter().enumerate() {
        true_m[i] = active_beta.iter().map(|&(j, b)| b * row[j]).sum::<f64>();
        true_g[i] = active_gamma.iter().map(|&(j, g)| g * row[j].sin()).sum::<f64>();
    }
    let d = &true_m + &u;
    let y = Array1::from_shape_fn(n, |i| d[i] * spec.theta0 + true_g[i] + eps[i]);
    let true_l = Array1::from_shape_fn(n, |i| spec.theta0 * true_m[i] + true_g[i]);

    Dataset::new(y, d, x)?.with_oracle(Oracle {
        theta0: spec.theta0,
        beta_d: spec.beta_d.clone(),
        true_m,
        true_g,
        true_l,
        eps,
    })
}

fn nonzero(v: &[f64]) -> Vec<(usize, f64)> {
    v.iter().copied().enumerate().filter(|&(_, b)| b != 0.0).collect()
}

pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Var̂(Xβ_D) / Var̂(D), using the true β_D.
pub fn realized_r2(ds: &Dataset) -> Result<f64> {
    let oracle = ds.oracle.as_ref().ok_or(Error::MissingOracle)?;
    let var_d = sample_variance(&ds.d.to_vec());
    if !(var_d > 0.0) {
        return Err(Error::Data("treatment has zero sample variance".into()));
    }
    let var_m = sample_variance(&oracle.true_m.to_vec());
    Ok(var_m / var_d)
}
