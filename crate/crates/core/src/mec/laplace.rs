//! First-order Laplace asymptotics at a unique variance maximizer.

use nalgebra::DMatrix;

use super::{det, Method, MecResult, Term};
use crate::error::{Error, Result};
use crate::field::{max_variance, FaceKernel, FieldModel};
use crate::gauss::{gauss_tail, mvn_prob, spd_inverse, submatrix, MvnProblem};
use crate::geometry::{enumerate_faces, Face, RectDomain};

/// Fixed-direction derivatives of `ν` below this count as zero.
const FLAT_GRAD: f64 = 1e-8;

/// Relative finite-difference step for `τ`.
pub const DEFAULT_TAU_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// Maximizer at a vertex with every derivative of `ν` non-zero.
    CornerRegular,
    /// Maximizer inside a face of dimension `1..N-1`, with non-zero derivatives
    /// of `ν` in every fixed direction.
    BoundaryRegular,
    /// Maximizer on a lower-dimensional face with `∇ν = 0` there.
    FaceCritical,
    /// Maximizer in the interior of the rectangle.
    InteriorCritical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceInputs {
    pub t0: Vec<f64>,
    pub face: Face,
    pub sigma_sq: f64,
    /// Hessian of `τ = θ²_J` on the host face (`0×0` for a vertex).
    pub theta: DMatrix<f64>,
    pub classification: Classification,
}

/// Locate the maximizer and classify it.
pub fn laplace_inputs(model: &dyn FieldModel, domain: &RectDomain) -> Result<LaplaceInputs> {
    let mv = max_variance(model, domain)?;
    if mv.candidates.len() > 1 {
        return Err(Error::Ambiguous(format!(
            "{} maximizers of the variance share the value {}: {:?}",
            mv.candidates.len(),
            mv.sigma_sq,
            mv.candidates
        )));
    }
    let face = mv.face.clone();
    let g = model.grad_variance(&mv.argmax);
    let flat = face.fixed().filter(|&j| g[j].abs() < FLAT_GRAD).count();
    let n_fixed = face.fixed().count();
    let classification = if face.is_interior() {
        Classification::InteriorCritical
    } else if flat == n_fixed {
        Classification::FaceCritical
    } else if flat == 0 {
        if face.is_vertex() {
            Classification::CornerRegular
        } else {
            Classification::BoundaryRegular
        }
    } else {
        return Err(Error::Capability(format!(
            "maximizer on face {face} has a vanishing derivative in only some fixed directions; \
             no closed form is available"
        )));
    };
    let theta = tau_hessian(model, domain, &face, &mv.argmax, DEFAULT_TAU_STEP)?;
    Ok(LaplaceInputs {
        t0: mv.argmax,
        face,
        sigma_sq: mv.sigma_sq,
        theta,
        classification,
    })
}

/// Central-difference Hessian with per-coordinate steps, symmetrized.
pub fn fd_hessian<F>(f: F, x: &[f64], steps: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let k = x.len();
    let f0 = f(x);
    let mut h = DMatrix::zeros(k, k);
    let shifted = |d: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in d {
            y[i] += s;
        }
        f(&y)
    };
    for i in 0..k {
        let hi = steps[i];
        h[(i, i)] = (shifted(&[(i, hi)]) - 2.0 * f0 + shifted(&[(i, -hi)])) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let v = (shifted(&[(i, hi), (j, hj)]) - shifted(&[(i, hi), (j, -hj)])
                - shifted(&[(i, -hi), (j, hj)])
                + shifted(&[(i, -hi), (j, -hj)]))
                / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Hessian of `τ(t) = θ²_J(t)` in the free coordinates of `face` at `t0`,
/// with steps `rel_step · (b_j - a_j)`.
///
/// The model is defined on all of `R^N`, so the stencil may cross the
/// boundary of the face when `t0` lies on its closure.
pub fn tau_hessian(
    model: &dyn FieldModel,
    domain: &RectDomain,
    face: &Face,
    t0: &[f64],
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    let sigma = face.sigma();
    let steps: Vec<f64> = sigma.iter().map(|&j| rel_step * domain.width(j)).collect();
    for (&j, &h) in sigma.iter().zip(&steps) {
        if !(h > 1e-12 * t0[j].abs().max(1.0)) {
            return Err(Error::Numeric(format!(
                "finite-difference step {h:e} underflows along axis {}",
                j + 1
            )));
        }
    }
    let kernel = FaceKernel::new(model, face)?;
    let failure = std::cell::RefCell::new(None);
    let x0 = face.project(t0);
    let h = fd_hessian(
        |x| {
            let mut t = t0.to_vec();
            for (&j, &v) in sigma.iter().zip(x) {
                t[j] = v;
            }
            kernel.theta_sq(&t).unwrap_or_else(|e| {
                failure.borrow_mut().get_or_insert(e);
                0.0
            })
        },
        &x0,
        &steps,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(h),
    }
}

fn negative_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() == 0 || (-m).cholesky().is_some()
}

/// `2^{k/2} |Λ_J - Λ_J(t0)| / (|Λ_J|^{1/2} |-Θ_J|^{1/2})`.
fn laplace_factor(model: &dyn FieldModel, face: &Face, t0: &[f64], theta: &DMatrix<f64>) -> Result<f64> {
    let k = face.k();
    if !negative_definite(theta) {
        return Err(Error::Degenerate(format!(
            "Hessian of the conditional variance on face {face} is not negative definite at {t0:?}"
        )));
    }
    let kernel = FaceKernel::new(model, face)?;
    let cp = kernel.at(t0)?;
    let num = det(&(&cp.lambda_j - &cp.lambda_j_t));
    Ok(2f64.powf(k as f64 / 2.0) * num / (det(&cp.lambda_j).sqrt() * det(&(-theta)).sqrt()))
}

/// `P{ε*_j X_j(t0) ≥ 0 for the fixed coordinates of J | ∇X_J(t0) = 0}`.
fn fixed_orthant(model: &dyn FieldModel, face: &Face, seed: u64) -> Result<f64> {
    let fixed: Vec<usize> = face.fixed().collect();
    if fixed.is_empty() {
        return Ok(1.0);
    }
    let lambda = model.lambda();
    let sigma = face.sigma();
    let mut cov = submatrix(&lambda, &fixed, &fixed);
    if !sigma.is_empty() {
        let cross = submatrix(&lambda, &fixed, sigma);
        let inv = spd_inverse(&submatrix(&lambda, sigma, sigma), "Λ_J")?;
        cov -= &cross * inv * cross.transpose();
    }
    let signs = face.outward_cone().signs();
    orthant(&cov, &signs, seed)
}

/// `P{s_i W_i ≥ 0 ∀i}` for `W ~ N(0, cov)`.
fn orthant(cov: &DMatrix<f64>, signs: &[f64], seed: u64) -> Result<f64> {
    let m = cov.nrows();
    let c = DMatrix::from_fn(m, m, |i, j| signs[i] * signs[j] * cov[(i, j)]);
    let r = mvn_prob(
        &MvnProblem::new(c, vec![0.0; m], vec![f64::INFINITY; m]),
        1e-9,
        seed,
    )?;
    Ok(r.p)
}

/// First-order closed form, reported per face. Faces that do not contribute
/// carry 0.
pub fn laplace_closed_form(
    model: &dyn FieldModel,
    domain: &RectDomain,
    u: f64,
    inputs: &LaplaceInputs,
    seed: u64,
) -> Result<MecResult> {
    let faces = enumerate_faces(domain);
    let psi = gauss_tail(u / inputs.sigma_sq.sqrt());
    let host = &inputs.face;
    let mut values = vec![0.0; faces.len()];
    let host_idx = faces
        .iter()
        .position(|f| f == host)
        .ok_or_else(|| Error::Config(format!("face {host} is not a face of the domain")))?;

    match inputs.classification {
        Classification::CornerRegular => values[host_idx] = psi,
        Classification::BoundaryRegular | Classification::InteriorCritical => {
            values[host_idx] = laplace_factor(model, host, &inputs.t0, &inputs.theta)? * psi;
        }
        Classification::FaceCritical => {
            values[host_idx] = laplace_factor(model, host, &inputs.t0, &inputs.theta)?
                * fixed_orthant(model, host, seed)?
                * psi;
            for (i, face) in faces.iter().enumerate() {
                if face == host || !face.closure_contains(host) {
                    continue;
                }
                let theta = tau_hessian(model, domain, face, &inputs.t0, DEFAULT_TAU_STEP)?;
                let factor = laplace_factor(model, face, &inputs.t0, &theta)?;
                // directions freed when moving from the host face into `face`,
                // as positions inside sigma(face)
                let new: Vec<(usize, f64)> = face
                    .sigma()
                    .iter()
                    .enumerate()
                    .filter_map(|(pos, &j)| host.bit(j).map(|b| (pos, 2.0 * f64::from(b) - 1.0)))
                    .collect();
                let w_cov = spd_inverse(&(-&theta), &format!("-Θ on face {face}"))?;
                let idx: Vec<usize> = new.iter().map(|&(p, _)| p).collect();
                let marg = submatrix(&w_cov, &idx, &idx);
                // region ε* W ≤ 0, i.e. the orthant with signs -ε*
                let signs: Vec<f64> = new.iter().map(|&(_, s)| -s).collect();
                let inward = orthant(&marg, &signs, seed.wrapping_add(i as u64))?;
                values[i] = factor * fixed_orthant(model, face, seed)? * inward * psi;
            }
        }
    }
    let terms = values.into_iter().map(Term::exact).collect();
    Ok(MecResult::assemble(u, Method::Laplace, faces, terms))
}
