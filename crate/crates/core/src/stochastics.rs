//! Seeded random streams, Toeplitz covariances, Cholesky factors and
//! Gaussian sampling.
//!
//! The generator is ChaCha8 (counter based, 64-bit seedable). Normal
//! variates come from the ziggurat sampler in `rand_distr`. Sub-stream seeds
//! are derived with a SplitMix64 finalizer over `(seed, tag...)`, so a stream
//! for any `(cell, replication)` pair can be built up front without touching
//! any other stream.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of tags into a new 64-bit seed.
///
/// `derive_seed(base, &[cell, rep])` is the replication seed rule used by the
/// Monte Carlo driver.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(base), |acc, &t| {
        splitmix64(acc ^ splitmix64(t.wrapping_add(GOLDEN_GAMMA)))
    })
}

/// Single-owner deterministic random stream.
#[derive(Debug, Clone)]
pub struct SeededStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Child stream keyed by `tag`. Depends only on this stream's seed, not on
    /// how much of it has been consumed.
    pub fn fork(&self, tag: u64) -> SeededStream {
        SeededStream::new(derive_seed(self.seed, &[tag]))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn std_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index in `0..bound`.
    pub fn index(&mut self, bound: usize) -> usize {
        self.rng.random_range(0..bound)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Symmetric positive-definite covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: Array2<f64>,
}

impl CovarianceMatrix {
    /// Wraps a square matrix, checking symmetry to 1e-12.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c || r == 0 {
            return Err(Error::InvalidArgument(format!(
                "covariance must be square and non-empty, got {r}x{c}"
            )));
        }
        for j in 0..r {
            for k in 0..j {
                if (entries[[j, k]] - entries[[k, j]]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("covariance not symmetric at ({j},{k})")));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            entries: Array2::eye(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    /// Quadratic form vᵀ Σ v.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let p = self.dim();
        assert_eq!(v.len(), p, "quad_form dimension");
        let mut total = 0.0;
        for j in 0..p {
            let row: f64 = (0..p).map(|k| self.entries[[j, k]] * v[k]).sum();
            total += v[j] * row;
        }
        total
    }
}

/// Σ with entries ρ^|j−k|.
pub fn toeplitz_sigma(p: usize, rho: f64) -> Result<CovarianceMatrix> {
    if p == 0 {
        return Err(Error::InvalidArgument("dimension p must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "Toeplitz correlation must lie in [0, 1), got {rho}"
        )));
    }
    let powers: Vec<f64> = (0..p as i32).map(|k| rho.powi(k)).collect();
    let entries = Array2::from_shape_fn((p, p), |(j, k)| powers[j.abs_diff(k)]);
    Ok(CovarianceMatrix { entries })
}

/// Lower Cholesky factor of an SPD matrix, failing on the first pivot that is
/// not strictly positive.
pub fn chol_lower(m: &CovarianceMatrix) -> Result<Array2<f64>> {
    cholesky(m.entries(), 0.0)
}

/// Cholesky without pivoting. A pivot `<= floor` is reported as a failure.
pub(crate) fn cholesky(a: ArrayView2<'_, f64>, floor: f64) -> Result<Array2<f64>> {
    let p = a.nrows();
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let (upper, lower) = l.split_at_mut((j + 1) * p);
        let row_j = &mut upper[j * p..];
        let diag = row_j[..j].iter().fold(a[[j, j]], |s, v| s - v * v);
        if !(diag > floor) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: diag });
        }
        let ljj = diag.sqrt();
        row_j[j] = ljj;
        let row_j = &row_j[..j];
        for (r, row_i) in lower.chunks_exact_mut(p).enumerate() {
            let s = row_i[..j]
                .iter()
                .zip(row_j)
                .fold(a[[j + 1 + r, j]], |s, (x, y)| s - x * y);
            row_i[j] = s / ljj;
        }
    }
    Ok(Array2::from_shape_vec((p, p), l).expect("square buffer"))
}

/// Factor of the matrix with row and column `i` removed, given the lower
/// factor `l` of the full matrix. O(p²).
pub(crate) fn chol_delete(l: &Array2<f64>, i: usize) -> Array2<f64> {
    let p = l.nrows();
    let keep: Vec<usize> = (0..p).filter(|&r| r != i).collect();
    let mut out = Array2::zeros((p - 1, p - 1));
    for (a, &r) in keep.iter().enumerate() {
        for (b, &c) in keep.iter().enumerate().take(a + 1) {
            out[[a, b]] = l[[r, c]];
        }
    }
    // The trailing block absorbs the removed column as a rank-one update.
    let mut x: Vec<f64> = ((i + 1)..p).map(|r| l[[r, i]]).collect();
    for k in 0..x.len() {
        let kk = i + k;
        let lkk = out[[kk, kk]];
        let r = lkk.hypot(x[k]);
        let (c, s) = (r / lkk, x[k] / lkk);
        out[[kk, kk]] = r;
        for j in (k + 1)..x.len() {
            let jj = i + j;
            let v = (out[[jj, kk]] + s * x[j]) / c;
            out[[jj, kk]] = v;
            x[j] = c * x[j] - s * v;
        }
    }
    out
}

/// Solves (L Lᵀ) x = b given the lower factor.
pub(crate) fn chol_solve(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let p = l.nrows();
    let mut z = b.to_vec();
    for i in 0..p {
        let row = l.row(i);
        let s = (0..i).fold(z[i], |s, k| s - row[k] * z[k]);
        z[i] = s / row[i];
    }
    for i in (0..p).rev() {
        let s = ((i + 1)..p).fold(z[i], |s, k| s - l[[k, i]] * z[k]);
        z[i] = s / l[[i, i]];
    }
    z
}

/// Balanced random partition of `0..n` into `k` groups: a shuffled
/// permutation dealt round-robin, so group sizes differ by at most one.
/// Returns the 0-based group of each index.
pub fn balanced_partition(n: usize, k: usize, stream: &mut SeededStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    stream.shuffle(&mut perm);
    let mut assignment = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        assignment[i] = pos % k;
    }
    assignment
}

pub fn sample_std_normal(n: usize, stream: &mut SeededStream) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| stream.std_normal())
}

/// n i.i.d. rows from N(0, Σ).
pub fn sample_mvn(n: usize, sigma: &CovarianceMatrix, stream: &mut SeededStream) -> Result<Array2<f64>> {
    let l = chol_lower(sigma)?;
    Ok(sample_mvn_with_factor(n, &l, stream))
}

/// Like [`sample_mvn`] with a precomputed lower factor.
pub fn sample_mvn_with_factor(n: usize, l: &Array2<f64>, stream: &mut SeededStream) -> Array2<f64> {
    let p = l.nrows();
    let mut out = Array2::<f64>::zeros((n, p));
    let mut z = vec![0.0; p];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = stream.std_normal();
        }
        let mut row = out.row_mut(i);
        for j in 0..p {
            let lrow = l.row(j);
            let mut s = 0.0;
            for k in 0..=j {
                s += lrow[k] * z[k];
            }
            row[j] = s;
        }
    }
    out
}
