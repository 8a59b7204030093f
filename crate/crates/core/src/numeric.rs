//! Small numerical building blocks shared by the models and estimators.
//!
//! Sample means are computed with Neumaier-compensated sums over fixed-size
//! chunks; chunk partials are combined in index order, so results do not depend
//! on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Samples per reduction chunk. Fixed so that reductions are thread-count independent.
pub const CHUNK: usize = 4096;

/// `ln(2π)/2`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Logistic function `1/(1+e^{-t})`, evaluated without overflow for large `|t|`.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln cosh(a)` without overflow.
pub fn ln_cosh(a: f64) -> f64 {
    let a = a.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Neumaier (improved Kahan) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Vector of compensated sums.
#[derive(Debug, Clone)]
pub struct CompensatedVec(Vec<CompensatedSum>);

impl CompensatedVec {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![CompensatedSum::default(); dim])
    }

    pub fn add(&mut self, xs: &[f64]) {
        for (acc, &x) in self.0.iter_mut().zip(xs) {
            acc.add(x);
        }
    }

    pub fn merge(&mut self, other: &CompensatedVec) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.merge(b);
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(CompensatedSum::value).collect()
    }
}

/// Mean over `0..n` of a vector-valued term of length `dim`.
///
/// `term(k, out)` overwrites `out` with the k-th term.
pub fn mean_vec<F>(n: usize, dim: usize, term: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    assert!(n > 0, "mean over an empty range");
    let chunk_sum = |start: usize| {
        let end = (start + CHUNK).min(n);
        let mut acc = CompensatedVec::zeros(dim);
        let mut buf = vec![0.0; dim];
        for k in start..end {
            term(k, &mut buf);
            acc.add(&buf);
        }
        acc
    };
    let partials: Vec<CompensatedVec> = if n <= CHUNK {
        vec![chunk_sum(0)]
    } else {
        (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| chunk_sum(c * CHUNK))
            .collect()
    };
    let mut total = CompensatedVec::zeros(dim);
    for p in &partials {
        total.merge(p);
    }
    let inv = 1.0 / n as f64;
    total.values().into_iter().map(|v| v * inv).collect()
}

/// Mean over `0..n` of a scalar term.
pub fn mean_scalar<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    mean_vec(n, 1, |k, out| out[0] = term(k))[0]
}

/// Solves `matrix · x = rhs` for symmetric positive-definite `matrix`.
///
/// On a failed or badly conditioned Cholesky factorization, `1e-10·trace/p` is
/// added to the diagonal once before giving up with [`Error::SingularSystem`].
pub fn spd_solve(matrix: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    const MIN_RCOND: f64 = 1e-14;
    let p = matrix.nrows();
    let try_solve = |m: DMatrix<f64>| -> Option<DVector<f64>> {
        let chol = m.cholesky()?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if !(hi > 0.0) || (lo / hi).powi(2) < MIN_RCOND {
            return None;
        }
        let x = chol.solve(rhs);
        x.iter().all(|v| v.is_finite()).then_some(x)
    };
    if let Some(x) = try_solve(matrix.clone()) {
        return Ok(x);
    }
    let jitter = 1e-10 * matrix.trace().abs() / p as f64;
    let mut jittered = matrix.clone();
    for i in 0..p {
        jittered[(i, i)] += jitter;
    }
    // The jittered system always has a usable condition number, so accept its
    // solution only if it still solves the original system.
    try_solve(jittered)
        .filter(|x| {
            let resid = (matrix * x - rhs).norm();
            resid <= 1e-6 * rhs.norm().max(f64::MIN_POSITIVE)
        })
        .ok_or_else(|| Error::SingularSystem {
        iteration: None,
        detail: format!("{p}x{p} second-moment matrix not positive definite after jitter {jitter:.3e}"),
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    matrix
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Ordinary least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of a line through `(xs, ys)`; needs at least two distinct `x`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let m = xs.len();
    if m < 2 || ys.len() != m {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / m as f64;
    let my = ys.iter().sum::<f64>() / m as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (type 7) of a non-empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    values.iter().for_each(|&v| s.add(v));
    s.value() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let mut s = CompensatedSum::default();
    values.iter().for_each(|&v| s.add((v - m) * (v - m)));
    (s.value() / (values.len() - 1) as f64).sqrt()
}
