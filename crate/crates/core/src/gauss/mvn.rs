//! Rectangle probabilities of multivariate normal vectors.
//!
//! Separation of variables after a prioritized Cholesky factorization: the
//! most constrained variable is integrated first so tiny tail probabilities
//! keep their relative accuracy. The remaining `d - 1` dimensions are
//! integrated with randomly shifted rank-1 lattice points (Richtmyer
//! generators, baker's transform), and the spread across shifts gives the
//! error estimate.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{interval_prob, norm_pdf, truncated_quantile};
use crate::error::{Error, Result};

pub const MAX_MVN_DIM: usize = 12;

const PRIMES: [f64; 12] = [2., 3., 5., 7., 11., 13., 17., 19., 23., 29., 31., 37.];

/// `P(lower ≤ X ≤ upper)` for `X ~ N(mean, cov)`; infinite bounds allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnProblem {
    pub cov: DMatrix<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mean: Vec<f64>,
}

impl MvnProblem {
    /// Centered problem.
    pub fn new(cov: DMatrix<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let d = lower.len();
        Self {
            cov,
            lower,
            upper,
            mean: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnSettings {
    /// Lattice points per randomization in the first pass.
    pub points: usize,
    pub randomizations: usize,
    /// Upper bound on lattice points per randomization after doubling.
    pub max_points: usize,
}

impl Default for MvnSettings {
    fn default() -> Self {
        Self {
            points: 1 << 13,
            randomizations: 12,
            max_points: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnResult {
    pub p: f64,
    /// Three standard errors across randomizations.
    pub err_est: f64,
    /// `false` when `err_est` is still above the requested accuracy after the
    /// point budget was exhausted.
    pub converged: bool,
}

/// Rectangle probability with the default sample budget.
pub fn mvn_prob(problem: &MvnProblem, accuracy: f64, seed: u64) -> Result<MvnResult> {
    mvn_prob_with(problem, accuracy, seed, &MvnSettings::default())
}

pub fn mvn_prob_with(
    problem: &MvnProblem,
    accuracy: f64,
    seed: u64,
    settings: &MvnSettings,
) -> Result<MvnResult> {
    let d = problem.dim();
    validate(problem)?;
    let lower: Vec<f64> = (0..d).map(|i| problem.lower[i] - problem.mean[i]).collect();
    let upper: Vec<f64> = (0..d).map(|i| problem.upper[i] - problem.mean[i]).collect();
    let factor = PrioritizedCholesky::new(&problem.cov, lower, upper)?;

    if factor.random_dims() == 0 {
        let p = factor.integrand(&[]);
        return Ok(MvnResult {
            p,
            err_est: rounding_floor(p),
            converged: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = factor.random_dims();
    let gen: Vec<f64> = PRIMES[..m].iter().map(|p| p.sqrt().fract()).collect();
    let mut n = settings.points.max(1);
    loop {
        let mut estimates = Vec::with_capacity(settings.randomizations);
        let mut w = vec![0.0; m];
        for _ in 0..settings.randomizations.max(2) {
            let shift: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            // compensated sum: the integrand is often nearly constant
            let (mut acc, mut comp) = (0.0f64, 0.0f64);
            for k in 1..=n {
                for j in 0..m {
                    let x = (k as f64 * gen[j] + shift[j]).fract();
                    w[j] = (2.0 * x - 1.0).abs();
                }
                let v = factor.integrand(&w);
                let t = acc + v;
                comp += if acc.abs() >= v.abs() { (acc - t) + v } else { (v - t) + acc };
                acc = t;
            }
            estimates.push((acc + comp) / n as f64);
        }
        let r = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / r;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0);
        // a constant integrand has zero spread but still carries rounding
        let err_est = 3.0 * (var / r).sqrt() + rounding_floor(mean);
        if err_est <= accuracy || n * 2 > settings.max_points {
            return Ok(MvnResult {
                p: mean.clamp(0.0, 1.0),
                err_est,
                converged: err_est <= accuracy,
            });
        }
        n *= 2;
    }
}

/// A few ulps of the value: the spread of the randomizations cannot see these.
fn rounding_floor(p: f64) -> f64 {
    8.0 * f64::EPSILON * p.abs()
}

fn validate(problem: &MvnProblem) -> Result<()> {
    let d = problem.dim();
    if d == 0 || d > MAX_MVN_DIM {
        return Err(Error::Capability(format!(
            "MVN dimension {d} outside the supported range 1..={MAX_MVN_DIM}"
        )));
    }
    if problem.upper.len() != d
        || problem.mean.len() != d
        || problem.cov.nrows() != d
        || problem.cov.ncols() != d
    {
        return Err(Error::Config("MVN problem has inconsistent dimensions".into()));
    }
    for i in 0..d {
        if problem.lower[i].is_nan() || problem.upper[i].is_nan() || problem.lower[i] >= problem.upper[i] {
            return Err(Error::Config(format!(
                "MVN bounds for coordinate {} are not increasing",
                i + 1
            )));
        }
    }
    let sym = &problem.cov - problem.cov.transpose();
    let scale = problem.cov.amax().max(f64::MIN_POSITIVE);
    if sym.amax() > 1e-12 * scale {
        return Err(Error::ModelInconsistency("MVN covariance is not symmetric".into()));
    }
    let eig = problem.cov.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::ModelInconsistency(format!(
            "MVN covariance is not positive semi-definite (eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Lower-triangular factor with bounds permuted into integration order.
struct PrioritizedCholesky {
    l: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Whether a column carries fresh randomness (`l_ii > 0`).
    active: Vec<bool>,
}

impl PrioritizedCholesky {
    fn new(cov: &DMatrix<f64>, mut lower: Vec<f64>, mut upper: Vec<f64>) -> Result<Self> {
        let d = lower.len();
        let mut sigma = cov.clone();
        let mut l = DMatrix::<f64>::zeros(d, d);
        let mut y = vec![0.0; d];
        let mut active = vec![true; d];
        let tiny = 1e-12 * sigma.diagonal().amax().max(f64::MIN_POSITIVE);

        for i in 0..d {
            // pick the remaining variable with the smallest conditional probability
            let mut best = i;
            let mut best_p = f64::INFINITY;
            for j in i..d {
                let s: f64 = (0..i).map(|m| l[(j, m)] * y[m]).sum();
                let v = sigma[(j, j)] - (0..i).map(|m| l[(j, m)].powi(2)).sum::<f64>();
                let p = if v > tiny {
                    let sd = v.sqrt();
                    interval_prob((lower[j] - s) / sd, (upper[j] - s) / sd)
                } else {
                    1.0
                };
                if p < best_p {
                    best_p = p;
                    best = j;
                }
            }
            if best != i {
                sigma.swap_rows(i, best);
                sigma.swap_columns(i, best);
                l.swap_rows(i, best);
                lower.swap(i, best);
                upper.swap(i, best);
            }
            let v = sigma[(i, i)] - (0..i).map(|m| l[(i, m)].powi(2)).sum::<f64>();
            let s: f64 = (0..i).map(|m| l[(i, m)] * y[m]).sum();
            if v <= tiny {
                active[i] = false;
                y[i] = 0.0;
                continue;
            }
            let lii = v.sqrt();
            l[(i, i)] = lii;
            for r in (i + 1)..d {
                let dot: f64 = (0..i).map(|m| l[(r, m)] * l[(i, m)]).sum();
                l[(r, i)] = (sigma[(r, i)] - dot) / lii;
            }
            let (a, b) = ((lower[i] - s) / lii, (upper[i] - s) / lii);
            let p = interval_prob(a, b);
            y[i] = if p > 0.0 {
                let pa = if a.is_finite() { norm_pdf(a) } else { 0.0 };
                let pb = if b.is_finite() { norm_pdf(b) } else { 0.0 };
                (pa - pb) / p
            } else if a.is_finite() {
                a
            } else {
                b
            };
        }
        Ok(Self {
            l,
            lower,
            upper,
            active,
        })
    }

    /// Random dimensions needed after the first active variable is
    /// integrated exactly.
    fn random_dims(&self) -> usize {
        let n_active = self.active.iter().filter(|&&a| a).count();
        n_active.saturating_sub(1)
    }

    fn integrand(&self, w: &[f64]) -> f64 {
        let d = self.lower.len();
        let mut y = vec![0.0; d];
        let mut f = 1.0;
        let mut next_w = 0;
        let mut remaining_active = self.active.iter().filter(|&&a| a).count();
        for i in 0..d {
            let s: f64 = (0..i).map(|m| self.l[(i, m)] * y[m]).sum();
            if !self.active[i] {
                if s < self.lower[i] || s > self.upper[i] {
                    return 0.0;
                }
                continue;
            }
            let lii = self.l[(i, i)];
            let (a, b) = ((self.lower[i] - s) / lii, (self.upper[i] - s) / lii);
            let p = interval_prob(a, b);
            f *= p;
            if f == 0.0 {
                return 0.0;
            }
            remaining_active -= 1;
            if remaining_active > 0 {
                y[i] = truncated_quantile(a, b, w[next_w]);
                next_w += 1;
            }
        }
        f
    }
}
