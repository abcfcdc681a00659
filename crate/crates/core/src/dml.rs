//! Cross-fitted partialling-out estimator for the partially linear model,
//! its score Jacobian and condition number κ = n / Σû², the plug-in standard
//! error, Wald intervals, the exact linearization split and regime labels.

use std::fmt;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::learners::{self, LearnerSpec};
use crate::stochastics::{balanced_partition, SeededStream};

/// Partition of observations into K folds (0-based fold labels).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldMap {
    pub assignment: Vec<usize>,
    pub k: usize,
}

impl FoldMap {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn make_folds(n: usize, k: usize, stream: &mut SeededStream) -> Result<FoldMap> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count must satisfy 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    Ok(FoldMap {
        assignment: balanced_partition(n, k, stream),
        k,
    })
}

/// Which nuisance regression a learner is fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceRole {
    /// m(X) ≈ E[D|X]
    Treatment,
    /// ℓ(X) ≈ E[Y|X]
    Outcome,
}

impl NuisanceRole {
    fn tag(self) -> u64 {
        match self {
            NuisanceRole::Treatment => 0,
            NuisanceRole::Outcome => 1,
        }
    }
}

/// Out-of-fold residuals û = D − m̂(X) and v̂ = Y − ℓ̂(X).
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub u_hat: Array1<f64>,
    pub v_hat: Array1<f64>,
}

/// Cross-fitting with an arbitrary nuisance fitter. For each fold, `fit_predict`
/// receives `(role, fold, rows used for training, x_train, target_train,
/// x_held_out)` and returns predictions for the held-out rows.
pub fn crossfit_with<F>(ds: &Dataset, folds: &FoldMap, mut fit_predict: F) -> Result<Residuals>
where
    F: FnMut(
        NuisanceRole,
        usize,
        &[usize],
        ArrayView2<'_, f64>,
        ArrayView1<'_, f64>,
        ArrayView2<'_, f64>,
    ) -> Result<Array1<f64>>,
{
    let n = ds.n();
    if folds.assignment.len() != n {
        return Err(Error::InvalidArgument(format!(
            "fold map covers {} rows, dataset has {n}",
            folds.assignment.len()
        )));
    }
    let mut u_hat = Array1::zeros(n);
    let mut v_hat = Array1::zeros(n);
    for fold in 0..folds.k {
        let test = folds.members(fold);
        let train = folds.complement(fold);
        let x_tr = ds.x.select(Axis(0), &train);
        let x_te = ds.x.select(Axis(0), &test);
        for (role, target, resid) in [
            (NuisanceRole::Treatment, &ds.d, &mut u_hat),
            (NuisanceRole::Outcome, &ds.y, &mut v_hat),
        ] {
            let t_tr = target.select(Axis(0), &train);
            let pred =
                fit_predict(role, fold, &train, x_tr.view(), t_tr.view(), x_te.view()).map_err(|e| Error::FoldFit {
                    fold,
                    source: Box::new(e),
                })?;
            if pred.len() != test.len() {
                return Err(Error::FoldFit {
                    fold,
                    source: Box::new(Error::Fit("wrong number of predictions".into())),
                });
            }
            for (&i, p) in test.iter().zip(pred.iter()) {
                resid[i] = target[i] - p;
            }
        }
    }
    Ok(Residuals { u_hat, v_hat })
}

/// Stream used for the learner of `(fold, role)`.
fn learner_stream(stream: &SeededStream, fold: usize, role: NuisanceRole) -> SeededStream {
    stream.fork(1 + 2 * fold as u64 + role.tag())
}

pub fn crossfit_residuals(
    ds: &Dataset,
    spec: &LearnerSpec,
    folds: &FoldMap,
    stream: &SeededStream,
) -> Result<Residuals> {
    crossfit_with(ds, folds, |role, fold, _, x_tr, t_tr, x_te| {
        let mut s = learner_stream(stream, fold, role);
        let model = learners::fit(spec, x_tr, t_tr, &mut s)?;
        model.predict(x_te)
    })
}

fn sum_sq(u: ArrayView1<'_, f64>) -> f64 {
    u.dot(&u)
}

/// θ̂ = Σûv̂ / Σû².
pub fn estimate_theta(u_hat: ArrayView1<'_, f64>, v_hat: ArrayView1<'_, f64>) -> Result<f64> {
    let suu = sum_sq(u_hat);
    if !(suu > 0.0) {
        return Err(Error::DegenerateScore);
    }
    Ok(u_hat.dot(&v_hat) / suu)
}

/// Ĵ = −Σû²/n and κ = n/Σû².
pub fn jacobian_and_kappa(u_hat: ArrayView1<'_, f64>) -> Result<(f64, f64)> {
    let suu = sum_sq(u_hat);
    if !(suu > 0.0) {
        return Err(Error::DegenerateScore);
    }
    let n = u_hat.len() as f64;
    Ok((-suu / n, n / suu))
}

/// Plug-in SE = (κ/√n)·√((1/n) Σ û²ε̂²).
pub fn se_dml(u_hat: ArrayView1<'_, f64>, eps_hat: ArrayView1<'_, f64>, kappa: f64, n: usize) -> Result<f64> {
    if n < 2 || u_hat.len() != n || eps_hat.len() != n {
        return Err(Error::InvalidArgument(format!(
            "standard error needs n >= 2 matching residual lengths (n={n})"
        )));
    }
    if !(sum_sq(u_hat) > 0.0) {
        return Err(Error::DegenerateScore);
    }
    let nf = n as f64;
    let meat = u_hat
        .iter()
        .zip(eps_hat.iter())
        .map(|(u, e)| u * u * e * e)
        .sum::<f64>()
        / nf;
    Ok(kappa / nf.sqrt() * meat.sqrt())
}

/// Standard normal quantile by Acklam's rational approximation
/// (relative error below 1.15e-9 on (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Wald interval θ̂ ± z_{1−α/2}·SE.
pub fn confidence_interval(theta_hat: f64, se: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(se >= 0.0) {
        return Err(Error::InvalidArgument(format!("standard error must be >= 0, got {se}")));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok((theta_hat - z * se, theta_hat + z * se))
}

/// Mean orthogonal score (1/n) Σ û(v̂ − θû).
pub fn score_mean(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>, theta: f64) -> f64 {
    u.iter().zip(v.iter()).map(|(u, v)| u * (v - theta * u)).sum::<f64>() / u.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmlFit {
    pub n: usize,
    pub theta_hat: f64,
    pub u_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub eps_hat: Vec<f64>,
    pub j_hat: f64,
    pub kappa: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub fold_map: FoldMap,
    pub learner: LearnerSpec,
}

impl DmlFit {
    pub fn covers(&self, theta: f64) -> bool {
        self.ci.0 <= theta && theta <= self.ci.1
    }

    pub fn t_stat(&self, theta: f64) -> f64 {
        (self.theta_hat - theta) / self.se
    }
}

/// Assembles a fit from cross-fitted residuals.
pub fn fit_from_residuals(res: Residuals, fold_map: FoldMap, learner: LearnerSpec, alpha: f64) -> Result<DmlFit> {
    let Residuals { u_hat, v_hat } = res;
    let n = u_hat.len();
    let theta_hat = estimate_theta(u_hat.view(), v_hat.view())?;
    let (j_hat, kappa) = jacobian_and_kappa(u_hat.view())?;
    let eps_hat = &v_hat - &(&u_hat * theta_hat);
    let se = se_dml(u_hat.view(), eps_hat.view(), kappa, n)?;
    let ci = confidence_interval(theta_hat, se, alpha)?;
    Ok(DmlFit {
        n,
        theta_hat,
        u_hat: u_hat.to_vec(),
        v_hat: v_hat.to_vec(),
        eps_hat: eps_hat.to_vec(),
        j_hat,
        kappa,
        se,
        ci,
        alpha,
        fold_map,
        learner,
    })
}

/// Full cross-fitted DML run. Folds come from `stream.fork(0)`; the learner
/// for fold f and role r uses `stream.fork(1 + 2f + r)`.
pub fn run_dml(ds: &Dataset, spec: &LearnerSpec, k: usize, alpha: f64, stream: &SeededStream) -> Result<DmlFit> {
    let n = ds.n();
    if n < 2 * k {
        return Err(Error::InvalidArgument(format!(
            "need at least 2·K = {} observations for K = {k} folds, got {n}",
            2 * k
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let folds = make_folds(n, k, &mut stream.fork(0))?;
    let res = crossfit_residuals(ds, spec, &folds, stream)?;
    fit_from_residuals(res, folds, spec.clone(), alpha)
}

/// θ̂ − θ₀ = κ(Sₙ + Bₙ) + Rₙ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizationParts {
    /// Score average at the true nuisances, (1/n) Σ Uᵢεᵢ.
    pub s_n: f64,
    /// Shift from plugging in the estimated nuisances.
    pub b_n: f64,
    pub r_n: f64,
    pub kappa: f64,
}

pub fn decompose_linearization(ds: &Dataset, fit: &DmlFit) -> Result<LinearizationParts> {
    let oracle = ds.oracle.as_ref().ok_or(Error::MissingOracle)?;
    if fit.u_hat.len() != ds.n() {
        return Err(Error::InvalidArgument("fit and dataset sizes differ".into()));
    }
    let theta0 = oracle.theta0;
    let u0 = &ds.d - &oracle.true_m;
    let v0 = &ds.y - &oracle.true_l;
    let s_n = score_mean(u0.view(), v0.view(), theta0);
    let at_estimate = score_mean(
        ArrayView1::from(&fit.u_hat[..]),
        ArrayView1::from(&fit.v_hat[..]),
        theta0,
    );
    let b_n = at_estimate - s_n;
    let r_n = (fit.theta_hat - theta0) - fit.kappa * (s_n + b_n);
    Ok(LinearizationParts {
        s_n,
        b_n,
        r_n,
        kappa: fit.kappa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    WellConditioned,
    ModeratelyIll,
    SeverelyIll,
}

impl Regime {
    /// κ-range label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            Regime::WellConditioned => "<1",
            Regime::ModeratelyIll => "[1,2)",
            Regime::SeverelyIll => ">=2",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [Regime::WellConditioned, Regime::ModeratelyIll, Regime::SeverelyIll]
            .into_iter()
            .find(|r| r.label() == s)
    }

    pub fn guidance(self) -> &'static str {
        match self {
            Regime::WellConditioned => {
                "well-conditioned score (kappa < 1): standard DML inference is generally trustworthy"
            }
            Regime::ModeratelyIll => {
                "moderately ill-conditioned score (1 <= kappa < 2): results warrant particular scrutiny; check alternative learners and overlap"
            }
            Regime::SeverelyIll => {
                "severely ill-conditioned score (kappa >= 2): results warrant particular scrutiny; intervals are wide or sensitive to nuisance bias"
            }
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::WellConditioned => "well-conditioned",
            Regime::ModeratelyIll => "moderately ill-conditioned",
            Regime::SeverelyIll => "severely ill-conditioned",
        })
    }
}

/// κ < 1 well, 1 ≤ κ < 2 moderate, κ ≥ 2 severe.
pub fn classify_regime(kappa: f64) -> Result<Regime> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    Ok(if kappa < 1.0 {
        Regime::WellConditioned
    } else if kappa < 2.0 {
        Regime::ModeratelyIll
    } else {
        Regime::SeverelyIll
    })
}

/// Residuals computed with the true nuisance functions.
pub fn oracle_residuals(ds: &Dataset) -> Result<Residuals> {
    let o = ds.oracle.as_ref().ok_or(Error::MissingOracle)?;
    Ok(Residuals {
        u_hat: &ds.d - &o.true_m,
        v_hat: &ds.y - &o.true_l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{gen_sample, make_spec, Design};
    use ndarray::{array, Array2};

    #[test]
    fn fold_sizes() {
        let f = make_folds(10, 5, &mut SeededStream::new(1)).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
        let f = make_folds(11, 5, &mut SeededStream::new(1)).unwrap();
        let mut sizes = f.sizes();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert!(make_folds(4, 5, &mut SeededStream::new(1)).is_err());
        assert!(make_folds(10, 1, &mut SeededStream::new(1)).is_err());
        assert_eq!(
            make_folds(37, 5, &mut SeededStream::new(9)).unwrap(),
            make_folds(37, 5, &mut SeededStream::new(9)).unwrap()
        );
    }

    #[test]
    fn theta_examples() {
        let u = array![0.5, -1.0, 2.0];
        assert_eq!(estimate_theta(u.view(), (&u * 2.0).view()).unwrap(), 2.0);
        assert_eq!(
            estimate_theta(array![1.0, 1.0].view(), array![1.0, 3.0].view()).unwrap(),
            2.0
        );
        // (2 + 6 + 30) / (1 + 4 + 9)
        let t = estimate_theta(array![1.0, 2.0, 3.0].view(), array![2.0, 3.0, 10.0].view()).unwrap();
        assert!((t - 38.0 / 14.0).abs() < 1e-15);
        assert!(matches!(
            estimate_theta(array![0.0, 0.0].view(), array![1.0, 2.0].view()),
            Err(Error::DegenerateScore)
        ));
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(
            jacobian_and_kappa(array![1.0, -1.0, 1.0, -1.0].view()).unwrap(),
            (-1.0, 1.0)
        );
        assert_eq!(jacobian_and_kappa(array![2.0, 2.0].view()).unwrap(), (-4.0, 0.25));
        let u = array![0.3, -1.2, 0.8];
        let (_, k1) = jacobian_and_kappa(u.view()).unwrap();
        let (_, k2) = jacobian_and_kappa((&u * 3.0).view()).unwrap();
        assert!((k2 - k1 / 9.0).abs() < 1e-15);
        assert!(jacobian_and_kappa(array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn se_examples() {
        let ones = Array1::<f64>::ones(4);
        let (_, kappa) = jacobian_and_kappa(ones.view()).unwrap();
        assert_eq!(kappa, 1.0);
        assert_eq!(se_dml(ones.view(), ones.view(), kappa, 4).unwrap(), 0.5);
        assert_eq!(se_dml(ones.view(), Array1::zeros(4).view(), kappa, 4).unwrap(), 0.0);
        let u = array![1.0, 2.0];
        let (_, kappa) = jacobian_and_kappa(u.view()).unwrap();
        assert!((kappa - 0.4).abs() < 1e-15);
        let se = se_dml(u.view(), array![1.0, 1.0].view(), kappa, 2).unwrap();
        let hand = (0.4 / 2f64.sqrt()) * (2.5f64).sqrt();
        assert!((se - hand).abs() < 1e-15);
        assert!((se - 0.4472).abs() < 1e-4);
    }

    #[test]
    fn quantile_against_tabulated_and_statrs() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let z = normal_quantile(0.975);
        assert!((z - 1.959963984540054).abs() < 1e-8);
        assert!((z - 1.96).abs() < 5e-5);
        let reference = Normal::new(0.0, 1.0).unwrap();
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let want = reference.inverse_cdf(p);
            assert!((normal_quantile(p) - want).abs() < 1e-8, "p={p}");
        }
        for &p in &[1e-10, 1e-6, 0.01, 0.99, 1.0 - 1e-6] {
            let want = reference.inverse_cdf(p);
            assert!((normal_quantile(p) - want).abs() <= 1e-8 * want.abs().max(1.0), "p={p}");
        }
    }

    #[test]
    fn interval_examples() {
        assert_eq!(confidence_interval(1.0, 0.0, 0.05).unwrap(), (1.0, 1.0));
        let (lo, hi) = confidence_interval(0.0, 1.0, 0.05).unwrap();
        assert!((hi - 1.959964).abs() < 1e-6 && (lo + 1.959964).abs() < 1e-6);
        let (lo, hi) = confidence_interval(2.0, 0.5, 0.05).unwrap();
        assert!((lo - 1.02).abs() < 1e-4 && (hi - 2.98).abs() < 1e-4);
        assert!(confidence_interval(0.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn regime_thresholds() {
        assert_eq!(classify_regime(0.710).unwrap(), Regime::WellConditioned);
        assert_eq!(classify_regime(1.6087).unwrap(), Regime::ModeratelyIll);
        assert_eq!(classify_regime(7.600).unwrap(), Regime::SeverelyIll);
        assert_eq!(classify_regime(1.0).unwrap(), Regime::ModeratelyIll);
        assert_eq!(classify_regime(2.0).unwrap(), Regime::SeverelyIll);
        assert_eq!(classify_regime(0.999_999).unwrap(), Regime::WellConditioned);
        assert!(classify_regime(0.0).is_err());
        assert!(classify_regime(-1.0).is_err());
        assert!(classify_regime(f64::NAN).is_err());
        for r in [Regime::WellConditioned, Regime::ModeratelyIll, Regime::SeverelyIll] {
            assert_eq!(Regime::from_label(r.label()), Some(r));
        }
    }

    fn sample(r2: f64, n: usize, seed: u64) -> Dataset {
        let spec = make_spec(Design::LowDim, 10, 0.5, r2).unwrap();
        gen_sample(&spec, n, &mut SeededStream::new(seed)).unwrap()
    }

    #[test]
    fn perfect_nuisances_give_oracle_residuals() {
        let ds = sample(0.75, 200, 3);
        let o = ds.oracle.clone().unwrap();
        let folds = make_folds(200, 5, &mut SeededStream::new(1)).unwrap();
        let res = crossfit_with(&ds, &folds, |role, fold, _, _, _, _| {
            let idx = folds.members(fold);
            let src = match role {
                NuisanceRole::Treatment => &o.true_m,
                NuisanceRole::Outcome => &o.true_l,
            };
            Ok(src.select(Axis(0), &idx))
        })
        .unwrap();
        let u = &ds.d - &o.true_m;
        let v = &u * o.theta0 + &o.eps;
        for i in 0..200 {
            assert!((res.u_hat[i] - u[i]).abs() < 1e-12);
            assert!((res.v_hat[i] - v[i]).abs() < 1e-12);
        }

        // With η̂ = η₀ the nuisance shift vanishes and θ̂ − θ₀ = κ·Sₙ.
        let fit = fit_from_residuals(res, folds, LearnerSpec::lin(), 0.05).unwrap();
        let parts = decompose_linearization(&ds, &fit).unwrap();
        assert!(parts.b_n.abs() < 1e-14);
        assert!(((fit.theta_hat - 1.0) - parts.kappa * parts.s_n).abs() < 1e-12);
    }

    #[test]
    fn zero_predictor_returns_raw_variables() {
        let ds = sample(0.75, 100, 4);
        let folds = make_folds(100, 5, &mut SeededStream::new(2)).unwrap();
        let res = crossfit_with(&ds, &folds, |_, _, _, _, _, x_te| Ok(Array1::zeros(x_te.nrows()))).unwrap();
        assert_eq!(res.u_hat, ds.d);
        assert_eq!(res.v_hat, ds.y);
    }

    #[test]
    fn out_of_fold_training_differs_from_full_sample() {
        let ds = sample(0.75, 200, 5);
        let spec = LearnerSpec::lin();
        let folds = make_folds(200, 5, &mut SeededStream::new(3)).unwrap();
        let stream = SeededStream::new(4);
        let crossfit = crossfit_residuals(&ds, &spec, &folds, &stream).unwrap();
        let leaky = crossfit_with(&ds, &folds, |role, _, _, _, _, x_te| {
            let target = match role {
                NuisanceRole::Treatment => ds.d.view(),
                NuisanceRole::Outcome => ds.y.view(),
            };
            let m = learners::fit(&spec, ds.x.view(), target, &mut SeededStream::new(0))?;
            m.predict(x_te)
        })
        .unwrap();
        let diff = crossfit
            .u_hat
            .iter()
            .zip(leaky.u_hat.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn run_dml_invariants() {
        for (seed, spec) in [
            (10, LearnerSpec::lin()),
            (11, LearnerSpec::las()),
            (12, LearnerSpec::rf()),
        ] {
            let ds = sample(0.90, 150, seed);
            let fit = run_dml(&ds, &spec, 5, 0.05, &SeededStream::new(seed)).unwrap();
            assert!((fit.kappa * fit.j_hat.abs() - 1.0).abs() <= 4.0 * f64::EPSILON);
            let suu: f64 = fit.u_hat.iter().map(|u| u * u).sum();
            let root: f64 = fit
                .u_hat
                .iter()
                .zip(&fit.v_hat)
                .map(|(u, v)| u * (v - fit.theta_hat * u))
                .sum();
            assert!(root.abs() <= 1e-8 * suu);
            for i in 0..fit.n {
                assert_eq!(fit.eps_hat[i], fit.v_hat[i] - fit.theta_hat * fit.u_hat[i]);
            }
            let z = normal_quantile(0.975);
            assert!((fit.ci.0 - (fit.theta_hat - z * fit.se)).abs() < 1e-15);
            let parts = decompose_linearization(&ds, &fit).unwrap();
            assert!(parts.r_n.abs() <= 1e-10 * (1.0 + (fit.theta_hat - 1.0).abs()));
        }
    }

    #[test]
    fn noiseless_linear_design_is_exact() {
        let mut s = SeededStream::new(13);
        let n = 300;
        let x = Array2::from_shape_fn((n, 4), |_| s.std_normal());
        let d = Array1::from_shape_fn(n, |i| x[[i, 0]] - 0.5 * x[[i, 2]] + s.std_normal());
        let y = Array1::from_shape_fn(n, |i| 1.0 * d[i] + 2.0 * x[[i, 1]] - x[[i, 3]]);
        let ds = Dataset::new(y, d, x).unwrap();
        let fit = run_dml(&ds, &LearnerSpec::lin(), 5, 0.05, &SeededStream::new(1)).unwrap();
        assert!((fit.theta_hat - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_treatment_is_degenerate() {
        let ds = sample(0.75, 100, 14);
        let ds = Dataset::new(ds.y.clone(), Array1::from_elem(100, 1.5), ds.x.clone()).unwrap();
        assert!(matches!(
            run_dml(&ds, &LearnerSpec::lin(), 5, 0.05, &SeededStream::new(1)),
            Err(Error::DegenerateScore)
        ));
    }

    #[test]
    fn run_dml_preconditions() {
        let ds = sample(0.75, 9, 15);
        assert!(run_dml(&ds, &LearnerSpec::lin(), 5, 0.05, &SeededStream::new(1)).is_err());
        let ds = sample(0.75, 50, 15);
        assert!(run_dml(&ds, &LearnerSpec::lin(), 5, 1.5, &SeededStream::new(1)).is_err());
    }

    #[test]
    fn missing_oracle_blocks_decomposition() {
        let mut ds = sample(0.75, 60, 16);
        let fit = run_dml(&ds, &LearnerSpec::lin(), 5, 0.05, &SeededStream::new(1)).unwrap();
        ds.oracle = None;
        assert!(matches!(decompose_linearization(&ds, &fit), Err(Error::MissingOracle)));
    }

    #[test]
    fn equivariance_under_rescaling() {
        let ds = sample(0.75, 400, 17);
        let stream = SeededStream::new(5);
        let base = run_dml(&ds, &LearnerSpec::lin(), 5, 0.05, &stream).unwrap();
        let c = 2.5;

        let scaled_d = Dataset::new(ds.y.clone(), &ds.d * c, ds.x.clone()).unwrap();
        let f = run_dml(&scaled_d, &LearnerSpec::lin(), 5, 0.05, &stream).unwrap();
        assert!((f.theta_hat - base.theta_hat / c).abs() < 1e-10);
        assert!((f.kappa - base.kappa / (c * c)).abs() < 1e-10);
        assert_eq!(f.covers(1.0 / c), base.covers(1.0));

        let scaled_y = Dataset::new(&ds.y * c, ds.d.clone(), ds.x.clone()).unwrap();
        let f = run_dml(&scaled_y, &LearnerSpec::lin(), 5, 0.05, &stream).unwrap();
        assert!((f.theta_hat - base.theta_hat * c).abs() < 1e-10);
        assert!((f.se - base.se * c).abs() < 1e-10);
        assert_eq!(f.covers(c), base.covers(1.0));
    }

    /// Same covariates, treatment and noise as the low-dimensional design,
    /// but with g₀(X) = γᵀX so that both nuisances are linear.
    fn linear_outcome_sample(n: usize, seed: u64) -> Dataset {
        let spec = make_spec(Design::LowDim, 10, 0.5, 0.75).unwrap();
        let base = gen_sample(&spec, n, &mut SeededStream::new(seed)).unwrap();
        let o = base.oracle.unwrap();
        let true_g = base.x.dot(&Array1::from(spec.gamma.clone()));
        let true_l = &o.true_m * o.theta0 + &true_g;
        let y = &base.d * o.theta0 + &true_g + &o.eps;
        Dataset::new(y, base.d, base.x)
            .unwrap()
            .with_oracle(crate::dgp::Oracle { true_g, true_l, ..o })
            .unwrap()
    }

    #[test]
    fn nuisance_term_shrinks_faster_than_sampling_term() {
        // Median |κBₙ| and |κSₙ| over 50 reps at n=500 and n=2000. With both
        // nuisances correctly specified, Bₙ = O(p/n) while Sₙ = O(n^{-1/2}).
        let mut medians = Vec::new();
        for n in [500, 2000] {
            let mut b = Vec::new();
            let mut s = Vec::new();
            for rep in 0..50u64 {
                let ds = linear_outcome_sample(n, 9000 + rep);
                let fit = run_dml(&ds, &LearnerSpec::lin(), 5, 0.05, &SeededStream::new(rep)).unwrap();
                let parts = decompose_linearization(&ds, &fit).unwrap();
                b.push((parts.kappa * parts.b_n).abs());
                s.push((parts.kappa * parts.s_n).abs());
            }
            medians.push((crate::stats::median(&mut b), crate::stats::median(&mut s)));
        }
        let (b500, s500) = medians[0];
        let (b2000, s2000) = medians[1];
        assert!(b2000 / b500 < s2000 / s500, "b: {b500}->{b2000}, s: {s500}->{s2000}");
    }
}
