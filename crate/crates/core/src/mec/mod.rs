//! Kac–Rice face terms, the mean Euler characteristic of excursion sets and
//! the excursion-probability approximations built from them.
//!
//! All face contributions are reported with the sign that makes them
//! non-negative at high levels; the alternating Euler signs cancel and never
//! appear in totals.

mod laplace;

pub use laplace::{
    fd_hessian, laplace_closed_form, laplace_inputs, tau_hessian, Classification, LaplaceInputs,
};

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{max_variance, FaceKernel, FieldModel};
use crate::gauss::{gauss_tail, hermite, mvn_prob, spd_inverse, submatrix, MvnProblem};
use crate::geometry::{enumerate_faces, Face, RectDomain, MAX_ENUM_DIM};
use crate::quad::{integrate_cone, integrate_face, QuadSpec, TailMap};

/// Largest dimension for the full mean-EC integration (nested inner integrals).
pub const MAX_MEAN_EC_DIM: usize = 3;

/// Conditional variances below this are treated as zero: the factor
/// `e^{-u²/(2θ²)}` is then taken to vanish.
pub const VARIANCE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MuApprox,
    MeanEc,
    Laplace,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::MuApprox => "mu_approx",
            Method::MeanEc => "mean_ec",
            Method::Laplace => "laplace",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu_approx" => Ok(Method::MuApprox),
            "mean_ec" => Ok(Method::MeanEc),
            "laplace" => Ok(Method::Laplace),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// A single term with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub value: f64,
    pub err_est: f64,
    pub converged: bool,
}

impl Term {
    fn exact(value: f64) -> Self {
        Self {
            value,
            err_est: 0.0,
            converged: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceContribution {
    pub face: Face,
    pub value: f64,
    pub err_est: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MecResult {
    pub u: f64,
    pub per_face: Vec<FaceContribution>,
    pub total: f64,
    pub method: Method,
    pub err_est: f64,
    pub warnings: Vec<String>,
}

impl MecResult {
    fn assemble(u: f64, method: Method, faces: Vec<Face>, terms: Vec<Term>) -> Self {
        let mut warnings = Vec::new();
        let mut per_face = Vec::with_capacity(faces.len());
        let (mut total, mut err) = (0.0, 0.0);
        for (face, term) in faces.into_iter().zip(terms) {
            if !term.converged {
                warnings.push(format!(
                    "face {face}: tolerance not reached (estimate {:e}, error {:e})",
                    term.value, term.err_est
                ));
            }
            total += term.value;
            err += term.err_est;
            per_face.push(FaceContribution {
                face,
                value: term.value,
                err_est: term.err_est,
            });
        }
        Self {
            u,
            per_face,
            total,
            method,
            err_est: err,
            warnings,
        }
    }

    pub fn contribution(&self, face: &Face) -> Option<f64> {
        self.per_face.iter().find(|c| &c.face == face).map(|c| c.value)
    }
}

fn check_dims(model: &dyn FieldModel, domain: &RectDomain, cap: usize, what: &str) -> Result<()> {
    if model.dim() != domain.dim() {
        return Err(Error::Config(format!(
            "model dimension {} differs from domain dimension {}",
            model.dim(),
            domain.dim()
        )));
    }
    if domain.dim() > cap {
        return Err(Error::Capability(format!(
            "{what} supports dimension up to {cap}, got {}; use the Monte Carlo oracle instead",
            domain.dim()
        )));
    }
    Ok(())
}

fn det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        1.0
    } else {
        m.clone().determinant()
    }
}

/// `(2π)^{-(k+1)/2} |Λ_J|^{-1/2} ∫_J |Λ_J - Λ_J(t)| θ^{-k} H_{k-1}(u/θ) e^{-u²/(2θ²)} dt`.
pub fn face_term_mu(
    model: &dyn FieldModel,
    domain: &RectDomain,
    face: &Face,
    u: f64,
    spec: &QuadSpec,
) -> Result<Term> {
    let k = face.k();
    if k == 0 {
        return Err(Error::Config("face_term_mu needs a face of dimension >= 1".into()));
    }
    let kernel = FaceKernel::new(model, face)?;
    let pref = (2.0 * PI).powf(-((k + 1) as f64) / 2.0) / det(kernel.lambda_j()).sqrt();
    let mut failure = None;
    let r = integrate_face(
        domain,
        face,
        |free| {
            let t = face.embed_unchecked(domain, free);
            match kernel.at(&t) {
                Ok(cp) => {
                    if cp.theta_sq < VARIANCE_FLOOR {
                        return 0.0;
                    }
                    let th = cp.theta_sq.sqrt();
                    let d = det(&(&cp.lambda_j - &cp.lambda_j_t)).max(0.0);
                    d * th.powi(-(k as i32))
                        * hermite(k - 1, u / th)
                        * (-0.5 * u * u / cp.theta_sq).exp()
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        spec,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Term {
        value: pref * r.value,
        err_est: pref * r.err_est,
        converged: r.converged,
    })
}

/// Accuracy requested from the MVN solver, relative to the trivial bound
/// `Ψ(u/√ν)`.
const VERTEX_REL_ACCURACY: f64 = 1e-4;

/// `P(X(t) ≥ u, ∇X(t) ∈ E({t}))` at a vertex.
pub fn vertex_term(
    model: &dyn FieldModel,
    domain: &RectDomain,
    vertex: &Face,
    u: f64,
    seed: u64,
) -> Result<Term> {
    if !vertex.is_vertex() {
        return Err(Error::Config(format!("{vertex} is not a vertex")));
    }
    let t = vertex.embed_point(domain, &[])?;
    let cp = FaceKernel::new(model, vertex)?.at(&t)?;
    if cp.nu < VARIANCE_FLOOR {
        return Ok(Term::exact(if u <= 0.0 { 0.5f64.powi(model.dim() as i32) } else { 0.0 }));
    }
    let joint = cp.joint();
    let n = model.dim();
    let mut sign = vec![1.0; n + 1];
    for (j, s) in vertex.outward_cone().constraints {
        sign[j + 1] = f64::from(s);
    }
    let cov = DMatrix::from_fn(n + 1, n + 1, |i, j| sign[i] * sign[j] * joint[(i, j)]);
    let mut lower = vec![0.0; n + 1];
    lower[0] = u;
    let problem = MvnProblem::new(cov, lower, vec![f64::INFINITY; n + 1]);
    let bound = gauss_tail(u / cp.nu.sqrt());
    let r = mvn_prob(&problem, (VERTEX_REL_ACCURACY * bound).max(1e-300), seed)?;
    Ok(Term {
        value: r.p,
        err_est: r.err_est,
        converged: r.converged,
    })
}

/// Settings of the inner `(x, y)` integrals, derived from the outer ones.
fn inner_spec(spec: &QuadSpec) -> QuadSpec {
    QuadSpec {
        order_per_axis: spec.order_per_axis,
        adaptive: true,
        rel_tol: (spec.rel_tol * 1e-2).max(1e-13),
        max_subdivisions: spec.max_subdivisions.min(8),
    }
}

/// Inner integrand data at one point of a face.
struct InnerKernel {
    s_inv: DMatrix<f64>,
    norm: f64,
    gamma: f64,
    /// `γ C_j` for the fixed coordinates, in cone order.
    slope: Vec<f64>,
}

impl InnerKernel {
    #[inline]
    fn eval(&self, z: &[f64], k: usize) -> f64 {
        let m = z.len();
        let mut q = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..m {
                row += self.s_inv[(i, j)] * z[j];
            }
            q += z[i] * row;
        }
        let dens = self.norm * (-0.5 * q).exp();
        if dens == 0.0 {
            return 0.0;
        }
        let mut arg = z[0] / self.gamma;
        for (s, y) in self.slope.iter().zip(&z[1..]) {
            arg += s * y;
        }
        hermite(k, arg) * dens
    }
}

/// `(2π)^{-k/2} |Λ_J|^{-1/2} ∫_J dt ∫_u^∞ dx ∫_{E(J)} dy |Λ_J - Λ_J(t)| γ^{-k}
/// H_k(x/γ + γ Σ C_j y_j) p(x, y | ∇X_J(t) = 0)`.
pub fn face_term_mean_ec(
    model: &dyn FieldModel,
    domain: &RectDomain,
    face: &Face,
    u: f64,
    spec: &QuadSpec,
) -> Result<Term> {
    let k = face.k();
    if k == 0 {
        return Err(Error::Config("face_term_mean_ec needs a face of dimension >= 1".into()));
    }
    let cone = face.outward_cone();
    if 1 + cone.dim() > crate::quad::MAX_CONE_DIM {
        return Err(Error::Capability(format!(
            "face {face} needs a {}-dimensional inner integral; use the Monte Carlo oracle instead",
            1 + cone.dim()
        )));
    }
    let kernel = FaceKernel::new(model, face)?;
    let pref = (2.0 * PI).powf(-(k as f64) / 2.0) / det(kernel.lambda_j()).sqrt();
    let fixed: Vec<usize> = face.fixed().collect();
    let a_idx: Vec<usize> = std::iter::once(0).chain(fixed.iter().map(|j| j + 1)).collect();
    let b_idx: Vec<usize> = face.sigma().iter().map(|j| j + 1).collect();
    let ispec = inner_spec(spec);
    let signs = cone.signs();
    let mut failure: Option<Error> = None;
    let mut inner_warn = false;

    let mut point_value = |free: &[f64]| -> Result<f64> {
        let t = face.embed_unchecked(domain, free);
        let cp = kernel.at(&t)?;
        if cp.gamma_sq < VARIANCE_FLOOR || cp.theta_sq < VARIANCE_FLOOR {
            return Ok(0.0);
        }
        let joint = cp.joint();
        let s_aa = submatrix(&joint, &a_idx, &a_idx);
        let s_ab = submatrix(&joint, &a_idx, &b_idx);
        let s = &s_aa - &s_ab * kernel.lambda_j_inv() * s_ab.transpose();
        let s = (&s + s.transpose()) * 0.5;
        let s_inv = spd_inverse(&s, &format!("conditional covariance on face {face} at {t:?}"))?;
        let m = a_idx.len();
        let norm = (2.0 * PI).powf(-(m as f64) / 2.0) / det(&s).sqrt();
        let gamma = cp.gamma_sq.sqrt();
        let slope: Vec<f64> = fixed.iter().map(|&j| gamma * cp.cvec[j]).collect();
        let inner = InnerKernel {
            s_inv,
            norm,
            gamma,
            slope,
        };

        let theta = s[(0, 0)].sqrt();
        let x_scale = if u > 0.0 {
            s[(0, 0)] / (u + theta)
        } else {
            theta - u
        };
        // conditional spread of each y_j plus its drift into the cone at x = u
        let y_scales: Vec<f64> = (1..m)
            .map(|j| {
                let beta = s[(j, 0)] / s[(0, 0)];
                let sd = (s[(j, j)] - beta * s[(j, 0)]).max(1e-3 * s[(j, j)]).sqrt();
                sd + (signs[j - 1] * beta * u.max(0.0)).max(0.0)
            })
            .collect();
        let r = integrate_cone(
            &cone,
            Some(TailMap::with_scale(u, x_scale)),
            &y_scales,
            |z| inner.eval(z, k),
            &ispec,
        )?;
        if !r.converged {
            inner_warn = true;
        }
        let d = det(&(&cp.lambda_j - &cp.lambda_j_t)).max(0.0);
        Ok(d * gamma.powi(-(k as i32)) * r.value)
    };

    let r = integrate_face(
        domain,
        face,
        |free| match point_value(free) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        spec,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Term {
        value: pref * r.value,
        err_est: pref * r.err_est,
        converged: r.converged && !inner_warn,
    })
}

fn vertex_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `E{φ(A_u)}`: vertex probabilities plus nested face integrals.
pub fn mean_euler_characteristic(
    model: &dyn FieldModel,
    domain: &RectDomain,
    u: f64,
    spec: &QuadSpec,
    seed: u64,
) -> Result<MecResult> {
    check_dims(model, domain, MAX_MEAN_EC_DIM, "the mean Euler characteristic integration")?;
    let faces = enumerate_faces(domain);
    let terms: Vec<Result<Term>> = faces
        .par_iter()
        .enumerate()
        .map(|(i, face)| {
            if face.is_vertex() {
                vertex_term(model, domain, face, u, vertex_seed(seed, i))
            } else {
                face_term_mean_ec(model, domain, face, u, spec)
            }
        })
        .collect();
    let terms = terms.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MecResult::assemble(u, Method::MeanEc, faces, terms))
}

/// `Σ_vertices Ψ(u/√ν(t)) + Σ_{k≥1} face_term_mu`.
pub fn excursion_prob_mu(
    model: &dyn FieldModel,
    domain: &RectDomain,
    u: f64,
    spec: &QuadSpec,
) -> Result<MecResult> {
    check_dims(model, domain, MAX_ENUM_DIM, "the approximation by mean critical-point counts")?;
    let faces = enumerate_faces(domain);
    let terms: Vec<Result<Term>> = faces
        .par_iter()
        .map(|face| {
            if face.is_vertex() {
                let t = face.embed_point(domain, &[])?;
                let nu = model.variance(&t);
                let p = if nu < VARIANCE_FLOOR {
                    if u <= 0.0 { 1.0 } else { 0.0 }
                } else {
                    gauss_tail(u / nu.sqrt())
                };
                Ok(Term::exact(p))
            } else {
                face_term_mu(model, domain, face, u, spec)
            }
        })
        .collect();
    let terms = terms.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MecResult::assemble(u, Method::MuApprox, faces, terms))
}

/// Outcome of scanning for near-maximal points with a vanishing derivative
/// in a fixed direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub sigma_sq: f64,
    /// Faces with a point within `NEAR_MAX_TOL` of the maximum variance, each
    /// with the fixed directions along which `|ν_j| < FLAT_TOL` there.
    pub near_max: Vec<(Face, Vec<usize>)>,
    pub satisfied: bool,
}

pub const NEAR_MAX_TOL: f64 = 1e-6;
pub const FLAT_TOL: f64 = 1e-8;

pub fn condition_check(model: &dyn FieldModel, domain: &RectDomain) -> Result<ConditionReport> {
    check_dims(model, domain, MAX_ENUM_DIM, "condition_check")?;
    let mv = max_variance(model, domain)?;
    let mut points: Vec<Vec<f64>> = mv.candidates.clone();
    // coarse interior samples of every face as well
    for face in enumerate_faces(domain) {
        let k = face.k();
        let m = match k {
            0 => 1,
            1 => 33,
            2 => 17,
            _ => 5,
        };
        crate::field::for_each_grid_point(k, m, |idx| {
            let free: Vec<f64> = idx
                .iter()
                .zip(face.sigma())
                .map(|(&i, &j)| domain.lower()[j] + (i as f64 + 0.5) * domain.width(j) / m as f64)
                .collect();
            points.push(face.embed_unchecked(domain, &free));
        });
    }
    let mut near_max: Vec<(Face, Vec<usize>)> = Vec::new();
    for t in points {
        if mv.sigma_sq - model.variance(&t) > NEAR_MAX_TOL {
            continue;
        }
        let face = domain.face_of(&t, 1e-9)?;
        let g: DVector<f64> = model.grad_variance(&t);
        let flat: Vec<usize> = face.fixed().filter(|&j| g[j].abs() < FLAT_TOL).collect();
        match near_max.iter_mut().find(|(f, _)| *f == face) {
            Some((_, dirs)) => {
                for j in flat {
                    if !dirs.contains(&j) {
                        dirs.push(j);
                    }
                }
            }
            None => near_max.push((face, flat)),
        }
    }
    let satisfied = near_max.iter().all(|(_, dirs)| dirs.is_empty());
    Ok(ConditionReport {
        sigma_sq: mv.sigma_sq,
        near_max,
        satisfied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{GaussianIncrementField, SpectralAtom, SpectralSumField};
    use approx::assert_relative_eq;

    fn cosine() -> SpectralSumField {
        SpectralSumField::cosine()
    }

    fn rect(b1: f64, b2: f64) -> RectDomain {
        RectDomain::new(vec![0.0, 0.0], vec![b1, b2]).unwrap()
    }

    #[test]
    fn vertex_with_independent_gradient() {
        let d = rect(PI, PI);
        let v = Face::vertex(&[1, 1]);
        let r = vertex_term(&cosine(), &d, &v, 3.0, 0).unwrap();
        let want = 0.25 * gauss_tail(3.0 / 5f64.sqrt());
        assert!((r.value - want).abs() <= (3.0 * r.err_est).max(1e-15 * want));
    }

    #[test]
    fn vertex_at_origin_without_offset() {
        let g = GaussianIncrementField::new(2, 1.0).unwrap();
        let d = RectDomain::cube(2, 0.0, 1.0).unwrap();
        let r = vertex_term(&g, &d, &Face::vertex(&[0, 0]), 2.0, 0).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn mu_term_decays() {
        let d = rect(1.5 * PI, 1.5 * PI);
        let spec = QuadSpec::default();
        let face = Face::interior(2);
        let a = face_term_mu(&cosine(), &d, &face, 8.0, &spec).unwrap().value;
        let b = face_term_mu(&cosine(), &d, &face, 12.0, &spec).unwrap().value;
        assert!(a > b && b > 0.0);
    }

    #[test]
    fn ledger_sums_to_total() {
        let d = rect(PI / 2.0, PI / 2.0);
        let r = excursion_prob_mu(&cosine(), &d, 4.0, &QuadSpec::default()).unwrap();
        assert_eq!(r.per_face.len(), 9);
        let s: f64 = r.per_face.iter().map(|c| c.value).sum();
        assert!((s - r.total).abs() <= 1e-12 * r.total.abs());
    }

    #[test]
    fn one_dimensional_sanity() {
        let m = SpectralSumField::new(vec![SpectralAtom { freq: vec![1.0], weight: 0.5 }], 1.0).unwrap();
        let d = RectDomain::cube(1, 0.2, 2.5).unwrap();
        for &u in &[1.0, 3.0, 5.0] {
            let r = excursion_prob_mu(&m, &d, u, &QuadSpec::default()).unwrap();
            assert!(r.total >= gauss_tail(u / m.variance(&[2.5]).sqrt()));
        }
    }

    #[test]
    fn interior_collapse_in_one_dimension() {
        let m = SpectralSumField::new(vec![SpectralAtom { freq: vec![1.0], weight: 0.5 }], 1.0).unwrap();
        let d = RectDomain::cube(1, 0.3, 2.0).unwrap();
        let spec = QuadSpec::default();
        let face = Face::interior(1);
        for &u in &[2.0, 4.0] {
            let a = face_term_mean_ec(&m, &d, &face, u, &spec).unwrap().value;
            let b = face_term_mu(&m, &d, &face, u, &spec).unwrap().value;
            assert_relative_eq!(a, b, max_relative = 1e-6);
        }
    }

    #[test]
    fn dimension_caps() {
        let m = GaussianIncrementField::new(4, 1.0).unwrap();
        let d = RectDomain::cube(4, 0.5, 1.0).unwrap();
        assert!(matches!(
            mean_euler_characteristic(&m, &d, 3.0, &QuadSpec::default(), 0),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn condition_reports() {
        let r = condition_check(&cosine(), &rect(PI / 2.0, PI / 2.0)).unwrap();
        assert!(r.satisfied);
        let r = condition_check(&cosine(), &rect(PI, PI)).unwrap();
        assert!(!r.satisfied);
        assert!(r.near_max.iter().any(|(f, dirs)| f.is_vertex() && dirs.len() == 2));
        let r = condition_check(&cosine(), &rect(1.5 * PI, 1.5 * PI)).unwrap();
        assert!(r.satisfied);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::MuApprox, Method::MeanEc, Method::Laplace] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("mc".parse::<Method>().is_err());
    }
}
