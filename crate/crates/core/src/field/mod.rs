//! Field models and the pointwise covariance machinery.
//!
//! Conventions: `ν(t) = Var X(t)`, `c(t) = E{X(t)∇X(t)} = ½∇ν(t)`,
//! `Λ = Cov ∇X(t)` (constant for stationary increments) and
//! `Λ(t) = ½∇²g(t)`, so that `Λ(t) - Λ = E{X(t)∇²X(t)}`.

mod models;

pub use models::{
    BuiltModel, GaussianIncrementField, ModelSpec, SpectralAtom, SpectralSumField,
};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauss::{spd_inverse, submatrix};
use crate::geometry::{Face, RectDomain};

/// Conditional variances above `-NEGATIVE_VAR_TOL` are clamped to zero.
pub const NEGATIVE_VAR_TOL: f64 = 1e-10;

/// A Gaussian field with stationary increments, described by its variogram
/// `g(h) = E(X(t+h) - X(t))²` and an independent offset variance `σ₀²`.
pub trait FieldModel: Send + Sync {
    fn dim(&self) -> usize;
    fn offset_var(&self) -> f64;
    fn variogram(&self, h: &[f64]) -> f64;
    fn variogram_grad(&self, h: &[f64]) -> DVector<f64>;
    fn variogram_hess(&self, h: &[f64]) -> DMatrix<f64>;

    fn variance(&self, t: &[f64]) -> f64 {
        self.offset_var() + self.variogram(t)
    }

    fn covariance(&self, t: &[f64], s: &[f64]) -> f64 {
        let d: Vec<f64> = t.iter().zip(s).map(|(a, b)| a - b).collect();
        self.offset_var() + 0.5 * (self.variogram(t) + self.variogram(s) - self.variogram(&d))
    }

    fn grad_variance(&self, t: &[f64]) -> DVector<f64> {
        self.variogram_grad(t)
    }

    fn hess_variance(&self, t: &[f64]) -> DMatrix<f64> {
        self.variogram_hess(t)
    }

    fn lambda(&self) -> DMatrix<f64> {
        0.5 * self.variogram_hess(&vec![0.0; self.dim()])
    }

    fn lambda_at(&self, t: &[f64]) -> DMatrix<f64> {
        0.5 * self.variogram_hess(t)
    }

    /// Finite spectral sums can be simulated exactly.
    fn as_spectral(&self) -> Option<&SpectralSumField> {
        None
    }

    fn describe(&self) -> String {
        format!("field model in {} dimensions", self.dim())
    }
}

/// Everything the Kac–Rice integrands need at one point of one face.
#[derive(Debug, Clone)]
pub struct CovarianceAtPoint {
    pub t: Vec<f64>,
    pub face: Face,
    pub nu: f64,
    pub c: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub lambda_t: DMatrix<f64>,
    pub lambda_j: DMatrix<f64>,
    pub lambda_j_t: DMatrix<f64>,
    /// `Var(X(t) | ∇X_J(t))`; equals `ν(t)` on vertices.
    pub theta_sq: f64,
    /// `Var(X(t) | ∇X(t))`.
    pub gamma_sq: f64,
    /// `C_j(t)`: the `(1, j+1)` entry of `Cov(X(t), ∇X(t))⁻¹`.
    pub cvec: DVector<f64>,
}

impl CovarianceAtPoint {
    /// Joint covariance of `(X(t), ∇X(t))`.
    pub fn joint(&self) -> DMatrix<f64> {
        let n = self.c.len();
        DMatrix::from_fn(n + 1, n + 1, |i, j| match (i, j) {
            (0, 0) => self.nu,
            (0, j) => self.c[j - 1],
            (i, 0) => self.c[i - 1],
            (i, j) => self.lambda[(i - 1, j - 1)],
        })
    }
}

/// [`covariance_at_point`] for free coordinates of an open face.
pub fn covariance_at(
    model: &dyn FieldModel,
    domain: &RectDomain,
    face: &Face,
    free: &[f64],
) -> Result<CovarianceAtPoint> {
    let t = face.embed_point(domain, free)?;
    covariance_at_point(model, face, &t)
}

fn clamp_variance(v: f64, what: &str, t: &[f64]) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEGATIVE_VAR_TOL {
        Ok(0.0)
    } else {
        Err(Error::ModelInconsistency(format!(
            "{what} = {v:e} < 0 at t = {t:?}"
        )))
    }
}

/// Covariance quantities at an explicit point `t`, treated as a point of `face`.
pub fn covariance_at_point(
    model: &dyn FieldModel,
    face: &Face,
    t: &[f64],
) -> Result<CovarianceAtPoint> {
    FaceKernel::new(model, face)?.at(t)
}

/// The point-independent part of [`CovarianceAtPoint`] for one face: `Λ`,
/// `Λ_J` and their inverses. Evaluating many points of the same face through
/// one kernel avoids refactoring the constant blocks at every node.
pub struct FaceKernel<'a> {
    model: &'a dyn FieldModel,
    face: Face,
    lambda: DMatrix<f64>,
    lambda_inv: DMatrix<f64>,
    lambda_j: DMatrix<f64>,
    lambda_j_inv: DMatrix<f64>,
}

impl<'a> FaceKernel<'a> {
    pub fn new(model: &'a dyn FieldModel, face: &Face) -> Result<Self> {
        let n = model.dim();
        if face.ambient_dim() != n {
            return Err(Error::Config(format!(
                "face {face} does not belong to a {n}-dimensional domain"
            )));
        }
        let lambda = model.lambda();
        let sigma = face.sigma();
        let lambda_j = submatrix(&lambda, sigma, sigma);
        let lambda_j_inv = spd_inverse(&lambda_j, &format!("Λ restricted to face {face}"))?;
        let lambda_inv = spd_inverse(&lambda, "Λ")?;
        Ok(Self {
            model,
            face: face.clone(),
            lambda,
            lambda_inv,
            lambda_j,
            lambda_j_inv,
        })
    }

    pub fn face(&self) -> &Face {
        &self.face
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn lambda_j(&self) -> &DMatrix<f64> {
        &self.lambda_j
    }

    pub fn lambda_j_inv(&self) -> &DMatrix<f64> {
        &self.lambda_j_inv
    }

    /// `θ²_J(t)` alone, without the rest of the bundle.
    pub fn theta_sq(&self, t: &[f64]) -> Result<f64> {
        let nu = self.model.variance(t);
        let sigma = self.face.sigma();
        if sigma.is_empty() {
            return Ok(nu);
        }
        let g = self.model.grad_variance(t);
        let cj = DVector::from_iterator(sigma.len(), sigma.iter().map(|&j| 0.5 * g[j]));
        clamp_variance(nu - cj.dot(&(&self.lambda_j_inv * &cj)), "θ²", t)
    }

    pub fn at(&self, t: &[f64]) -> Result<CovarianceAtPoint> {
        let n = self.model.dim();
        if t.len() != n {
            return Err(Error::Config(format!(
                "point has {} coordinates, model has {n}",
                t.len()
            )));
        }
        let nu = self.model.variance(t);
        let c = 0.5 * self.model.grad_variance(t);
        let lambda_t = self.model.lambda_at(t);
        let sigma = self.face.sigma();
        let lambda_j_t = submatrix(&lambda_t, sigma, sigma);

        let theta_sq = if sigma.is_empty() {
            nu
        } else {
            let cj = DVector::from_iterator(sigma.len(), sigma.iter().map(|&j| c[j]));
            clamp_variance(nu - cj.dot(&(&self.lambda_j_inv * &cj)), "θ²", t)?
        };

        let lc = &self.lambda_inv * &c;
        let gamma_sq = clamp_variance(nu - c.dot(&lc), "γ²", t)?;
        // c at round-off level (e.g. sin π) counts as exactly zero
        let c_scale = (nu * self.lambda.diagonal().max()).sqrt();
        let cvec = if c.norm() <= 1e-15 * c_scale || gamma_sq < 1e-14 {
            DVector::zeros(n)
        } else {
            -lc / gamma_sq
        };

        Ok(CovarianceAtPoint {
            t: t.to_vec(),
            face: self.face.clone(),
            nu,
            c,
            lambda: self.lambda.clone(),
            lambda_t,
            lambda_j: self.lambda_j.clone(),
            lambda_j_t,
            theta_sq,
            gamma_sq,
            cvec,
        })
    }
}

/// Smallest eigenvalue of `Λ - Λ(t)` over an interior grid.
#[derive(Debug, Clone, PartialEq)]
pub struct H2Report {
    pub min_eigenvalue: f64,
    pub argmin: Vec<f64>,
    pub points: usize,
    pub flagged: bool,
}

pub const H2_THRESHOLD: f64 = 1e-10;

/// Scan the cell midpoints `a + (j + ½)(b - a)/n` of a uniform grid.
pub fn check_h2(model: &dyn FieldModel, domain: &RectDomain, grid_per_axis: usize) -> Result<H2Report> {
    if grid_per_axis < 2 {
        return Err(Error::Config("H2 scan needs at least 2 points per axis".into()));
    }
    let n = domain.dim();
    let lambda = model.lambda();
    let mut best = H2Report {
        min_eigenvalue: f64::INFINITY,
        argmin: Vec::new(),
        points: 0,
        flagged: false,
    };
    for_each_grid_point(n, grid_per_axis, |idx| {
        let t: Vec<f64> = (0..n)
            .map(|i| domain.lower()[i] + (idx[i] as f64 + 0.5) * domain.width(i) / grid_per_axis as f64)
            .collect();
        let m = &lambda - model.lambda_at(&t);
        let ev = m.symmetric_eigen().eigenvalues.min();
        best.points += 1;
        if ev < best.min_eigenvalue {
            best.min_eigenvalue = ev;
            best.argmin = t;
        }
    });
    best.flagged = !(best.min_eigenvalue >= H2_THRESHOLD);
    Ok(best)
}

/// Visit every multi-index of an `m^n` grid, last axis fastest.
pub(crate) fn for_each_grid_point(n: usize, m: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; n];
    loop {
        f(&idx);
        let mut axis = n;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < m {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Location of the maximum variance on the closed rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxVariance {
    pub sigma_sq: f64,
    pub argmax: Vec<f64>,
    pub face: Face,
    /// All distinct local maximizers whose value is within `TIE_TOL` of the
    /// best one (including the best one). More than one entry means a tie.
    pub candidates: Vec<Vec<f64>>,
}

pub const TIE_TOL: f64 = 1e-8;

/// Default scan resolution for [`max_variance`].
pub const MAX_VARIANCE_GRID: usize = 64;

pub fn max_variance(model: &dyn FieldModel, domain: &RectDomain) -> Result<MaxVariance> {
    max_variance_with(model, domain, MAX_VARIANCE_GRID)
}

/// Grid scan (endpoints included) followed by projected Newton ascent from
/// every discrete local maximum.
pub fn max_variance_with(model: &dyn FieldModel, domain: &RectDomain, grid: usize) -> Result<MaxVariance> {
    let n = domain.dim();
    if model.dim() != n {
        return Err(Error::Config("model and domain dimensions differ".into()));
    }
    // keep the scan below ~2M evaluations in high dimension
    let m = grid.min((2.0e6f64.powf(1.0 / n as f64)) as usize).max(2);
    let coord = |i: usize, j: usize| {
        if j + 1 == m {
            domain.upper()[i]
        } else {
            domain.lower()[i] + j as f64 * domain.width(i) / (m - 1) as f64
        }
    };
    let total = m.pow(n as u32);
    let mut values = Vec::with_capacity(total);
    for_each_grid_point(n, m, |idx| {
        let t: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| coord(i, j)).collect();
        values.push(model.variance(&t));
    });

    let stride: Vec<usize> = (0..n).map(|i| m.pow((n - 1 - i) as u32)).collect();
    let mut starts: Vec<(f64, Vec<f64>)> = Vec::new();
    for_each_grid_point(n, m, |idx| {
        let flat: usize = idx.iter().zip(&stride).map(|(a, b)| a * b).sum();
        let v = values[flat];
        let is_local_max = (0..n).all(|i| {
            let lower_ok = idx[i] == 0 || values[flat - stride[i]] <= v;
            let upper_ok = idx[i] + 1 == m || values[flat + stride[i]] <= v;
            lower_ok && upper_ok
        });
        if is_local_max {
            starts.push((v, idx.iter().enumerate().map(|(i, &j)| coord(i, j)).collect()));
        }
    });
    starts.sort_by(|a, b| b.0.total_cmp(&a.0));
    starts.truncate(64);

    let mut refined: Vec<(f64, Vec<f64>)> = Vec::new();
    let diam: f64 = (0..n).map(|i| domain.width(i).powi(2)).sum::<f64>().sqrt();
    for (_, t0) in starts {
        let t = ascend(model, domain, t0);
        let v = model.variance(&t);
        let dup = refined.iter().any(|(_, s)| {
            s.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < 1e-6 * diam
        });
        if !dup {
            refined.push((v, t));
        }
    }
    refined.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (best_v, best_t) = refined[0].clone();
    let candidates: Vec<Vec<f64>> = refined
        .iter()
        .filter(|(v, _)| best_v - v <= TIE_TOL * best_v.abs().max(1.0))
        .map(|(_, t)| t.clone())
        .collect();
    let face = domain.face_of(&best_t, 1e-9)?;
    Ok(MaxVariance {
        sigma_sq: best_v,
        argmax: best_t,
        face,
        candidates,
    })
}

/// Projected Newton/gradient ascent of `ν` on the box.
fn ascend(model: &dyn FieldModel, domain: &RectDomain, mut t: Vec<f64>) -> Vec<f64> {
    let n = t.len();
    let (lo, hi) = (domain.lower(), domain.upper());
    for _ in 0..200 {
        let g = model.grad_variance(&t);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let at_lo = t[i] <= lo[i] && g[i] <= 0.0;
                let at_hi = t[i] >= hi[i] && g[i] >= 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
        if gf.norm() < 1e-10 {
            break;
        }
        let h = submatrix(&model.hess_variance(&t), &free, &free);
        let newton = (-&h)
            .cholesky()
            .map(|ch| ch.solve(&gf))
            .filter(|d| d.iter().all(|x| x.is_finite()));
        let dir = newton.unwrap_or_else(|| gf.clone());
        let v0 = model.variance(&t);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut cand = t.clone();
            for (k, &i) in free.iter().enumerate() {
                cand[i] = (t[i] + step * dir[k]).clamp(lo[i], hi[i]);
            }
            if model.variance(&cand) >= v0 {
                moved = cand != t;
                t = cand;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    t
}

/// Worst relative discrepancies between analytic derivatives and central
/// differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub max_grad_err: f64,
    pub max_hess_err: f64,
    pub points: usize,
    pub tolerance: f64,
}

impl DerivativeCheck {
    pub fn passed(&self) -> bool {
        self.max_grad_err <= self.tolerance && self.max_hess_err <= self.tolerance
    }
}

/// Compare `∇ν` against differences of `ν` and `∇²ν` against differences of
/// `∇ν` at random points of the domain. Errors are relative to
/// `max(1, |analytic|)`.
pub fn derivative_check(
    model: &dyn FieldModel,
    domain: &RectDomain,
    points: usize,
    seed: u64,
) -> DerivativeCheck {
    const STEP: f64 = 1e-5;
    let n = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DerivativeCheck {
        max_grad_err: 0.0,
        max_hess_err: 0.0,
        points,
        tolerance: 1e-5,
    };
    for _ in 0..points {
        let t: Vec<f64> = (0..n)
            .map(|i| domain.lower()[i] + rng.random::<f64>() * domain.width(i))
            .collect();
        let g = model.grad_variance(&t);
        let h = model.hess_variance(&t);
        for i in 0..n {
            let mut tp = t.clone();
            let mut tm = t.clone();
            tp[i] += STEP;
            tm[i] -= STEP;
            let fd = (model.variance(&tp) - model.variance(&tm)) / (2.0 * STEP);
            out.max_grad_err = out.max_grad_err.max((g[i] - fd).abs() / g[i].abs().max(1.0));
            let gp = model.grad_variance(&tp);
            let gm = model.grad_variance(&tm);
            for j in 0..n {
                let fd = (gp[j] - gm[j]) / (2.0 * STEP);
                out.max_hess_err = out.max_hess_err.max((h[(j, i)] - fd).abs() / h[(j, i)].abs().max(1.0));
            }
        }
    }
    out
}
