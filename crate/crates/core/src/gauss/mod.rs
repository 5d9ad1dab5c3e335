//! Scalar and multivariate Gaussian utilities.
//!
//! Hermite polynomials follow the probabilists' convention
//! `H_k(x) = (-1)^k e^{x²/2} d^k/dx^k e^{-x²/2}`, so `H_2(x) = x² - 1`.
//! The physicists' polynomials differ by scaling and must not be mixed in.

mod mvn;

pub use mvn::{mvn_prob, MvnProblem, MvnResult, MvnSettings};

use nalgebra::{DMatrix, DVector};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::quad::{integrate_tail, QuadSpec};

pub const MAX_HERMITE_ORDER: usize = 30;

/// Condition number above which a covariance block is treated as singular.
pub const SINGULAR_COND: f64 = 1e12;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Probabilists' Hermite polynomial `H_k(x)` via the three-term recurrence.
///
/// Orders above [`MAX_HERMITE_ORDER`] are accepted but lose accuracy fast.
pub fn hermite(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for n in 1..k {
                let next = x * cur - n as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Gaussian tail `Ψ(u) = P(Z ≥ u)` for standard normal `Z`.
pub fn gauss_tail(u: f64) -> f64 {
    if u == f64::INFINITY {
        return 0.0;
    }
    if u == f64::NEG_INFINITY {
        return 1.0;
    }
    0.5 * erfc(u / std::f64::consts::SQRT_2)
}

/// Standard normal CDF `Φ(x) = Ψ(-x)`.
pub fn norm_cdf(x: f64) -> f64 {
    gauss_tail(-x)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Inverse of [`norm_cdf`].
pub fn norm_inv_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// `P(a ≤ Z ≤ b)` for standard normal `Z`, evaluated on whichever tail keeps
/// the most significant digits.
pub fn interval_prob(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let p = if a > 0.0 {
        gauss_tail(a) - gauss_tail(b)
    } else if b < 0.0 {
        gauss_tail(-b) - gauss_tail(-a)
    } else {
        1.0 - gauss_tail(-a) - gauss_tail(b)
    };
    p.max(0.0)
}

/// Quantile of `Z` restricted to `[a, b]`: the `z` with
/// `P(a ≤ Z ≤ z) = w · P(a ≤ Z ≤ b)`.
pub fn truncated_quantile(a: f64, b: f64, w: f64) -> f64 {
    let z = if a > 0.0 {
        // upper tail: Ψ(z) = Ψ(a) - w (Ψ(a) - Ψ(b))
        let (ta, tb) = (gauss_tail(a), gauss_tail(b));
        -norm_inv_cdf(ta - w * (ta - tb))
    } else {
        let (ca, cb) = (norm_cdf(a), norm_cdf(b));
        norm_inv_cdf(ca + w * (cb - ca))
    };
    z.clamp(a, b)
}

/// `|∫_u^∞ H_k(x) e^{-x²/2} dx - H_{k-1}(u) e^{-u²/2}|` with the left side
/// evaluated by tail quadrature.
pub fn hermite_tail_identity_check(k: usize, u: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("the Hermite tail identity needs k >= 1".into()));
    }
    let spec = QuadSpec {
        order_per_axis: 32,
        rel_tol: 1e-13,
        ..QuadSpec::default()
    };
    let lhs = integrate_tail(u, |x| hermite(k, x) * (-0.5 * x * x).exp(), &spec)?;
    let rhs = hermite(k - 1, u) * (-0.5 * u * u).exp();
    Ok((lhs.value - rhs).abs())
}

/// Result of conditioning one Gaussian coordinate on others.
#[derive(Debug, Clone, PartialEq)]
pub struct CondGaussian {
    /// Regression coefficients: `E[target | z] = coef · z`.
    pub coef: Vec<f64>,
    /// Schur complement `Σ_tt - Σ_tc Σ_cc⁻¹ Σ_ct`.
    pub variance: f64,
}

/// Symmetric inverse with a condition-number guard.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > 0.0) || max / min > SINGULAR_COND {
        return Err(Error::Degenerate(format!(
            "{what} is numerically singular (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

pub(crate) fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Conditional law of coordinate `target` given the coordinates in
/// `conditioners` under a centered Gaussian with covariance `joint_cov`.
pub fn condition(
    joint_cov: &DMatrix<f64>,
    target: usize,
    conditioners: &[usize],
) -> Result<CondGaussian> {
    let n = joint_cov.nrows();
    if joint_cov.ncols() != n || target >= n || conditioners.iter().any(|&c| c >= n || c == target)
    {
        return Err(Error::Config("invalid conditioning indices".into()));
    }
    if conditioners.is_empty() {
        return Ok(CondGaussian {
            coef: Vec::new(),
            variance: joint_cov[(target, target)],
        });
    }
    let block = submatrix(joint_cov, conditioners, conditioners);
    let inv = spd_inverse(&block, "conditioner block")?;
    let cross = DVector::from_iterator(
        conditioners.len(),
        conditioners.iter().map(|&c| joint_cov[(target, c)]),
    );
    let coef = &inv * &cross;
    let variance = joint_cov[(target, target)] - cross.dot(&coef);
    Ok(CondGaussian {
        coef: coef.iter().copied().collect(),
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn hermite_low_orders() {
        for &x in &[-2.0, 0.0, 0.7, 3.0] {
            assert_eq!(hermite(0, x), 1.0);
            assert_eq!(hermite(1, x), x);
        }
        assert_eq!(hermite(2, 2.0), 3.0);
        assert_eq!(hermite(3, 2.0), 2.0);
    }

    #[test]
    fn hermite_five_matches_expanded_polynomial() {
        let x: f64 = 1.3;
        let expanded = x.powi(5) - 10.0 * x.powi(3) + 15.0 * x;
        assert_relative_eq!(hermite(5, x), expanded, epsilon = 1e-12);
    }

    #[test]
    fn hermite_recurrence_vs_explicit_polynomials() {
        let explicit: [fn(f64) -> f64; 7] = [
            |_| 1.0,
            |x| x,
            |x| x * x - 1.0,
            |x| x.powi(3) - 3.0 * x,
            |x| x.powi(4) - 6.0 * x * x + 3.0,
            |x| x.powi(5) - 10.0 * x.powi(3) + 15.0 * x,
            |x| x.powi(6) - 15.0 * x.powi(4) + 45.0 * x * x - 15.0,
        ];
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            for (k, p) in explicit.iter().enumerate() {
                let want = p(x);
                assert!((hermite(k, x) - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn tail_values() {
        assert_eq!(gauss_tail(0.0), 0.5);
        // 0.5 * erfc(sqrt(2)), 30-digit reference
        assert_relative_eq!(gauss_tail(2.0), 0.022750131948179207200282637166, max_relative = 1e-12);
        // Ψ(10)
        assert_relative_eq!(gauss_tail(10.0), 7.6198530241605260659733432515e-24, max_relative = 1e-12);
        for &u in &[0.5, 1.0, 3.0] {
            assert_relative_eq!(gauss_tail(-u), 1.0 - gauss_tail(u), epsilon = 1e-15);
        }
    }

    #[test]
    fn inverse_cdf_round_trip() {
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.9, 0.999] {
            assert_relative_eq!(norm_cdf(norm_inv_cdf(p)), p, max_relative = 1e-10);
        }
    }

    #[test]
    fn truncated_quantile_in_far_tail() {
        let z = truncated_quantile(6.0, f64::INFINITY, 0.5);
        assert!(z > 6.0);
        assert_relative_eq!(gauss_tail(z), 0.5 * gauss_tail(6.0), max_relative = 1e-9);
    }

    #[test]
    fn hermite_identity_examples() {
        let r1 = hermite_tail_identity_check(1, 1.0).unwrap();
        assert!(r1 < 1e-12);
        assert!(hermite_tail_identity_check(3, 2.0).unwrap() < 1e-8);
        assert!(hermite_tail_identity_check(6, 0.5).unwrap() < 1e-8);
        assert!(hermite_tail_identity_check(0, 0.5).is_err());
    }

    #[test]
    fn conditioning_independent_block() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.5]);
        let c = condition(&cov, 0, &[1]).unwrap();
        assert_eq!(c.variance, 4.0);
        assert_eq!(c.coef, vec![0.0]);
    }

    #[test]
    fn conditioning_cosine_edge() {
        // Cov(X, X_1) for the cosine field at (t1, π/2)
        for &t1 in &[0.3, 1.0, 2.5, 4.0] {
            let nu = 3.0 - f64::cos(t1);
            let c1 = 0.5 * f64::sin(t1);
            let cov = DMatrix::from_row_slice(2, 2, &[nu, c1, c1, 0.5]);
            let want = 3.0 - f64::cos(t1) - 0.5 * f64::sin(t1).powi(2);
            assert_relative_eq!(condition(&cov, 0, &[1]).unwrap().variance, want, epsilon = 1e-13);
        }
    }

    #[test]
    fn singular_conditioner_block() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.1, 0.1, 1.0, 1.0, 0.1, 1.0, 1.0]);
        assert!(matches!(condition(&cov, 0, &[1, 2]), Err(Error::Degenerate(_))));
    }

    fn random_spd(seed: u64, n: usize) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn conditioning_matches_dense_solve() {
        for seed in 0..10 {
            let s = random_spd(seed, 4);
            let c = condition(&s, 1, &[0, 3]).unwrap();
            // independent route: LU solve of Σ22 x = Σ21
            let s22 = DMatrix::from_row_slice(2, 2, &[s[(0, 0)], s[(0, 3)], s[(3, 0)], s[(3, 3)]]);
            let s21 = DVector::from_vec(vec![s[(0, 1)], s[(3, 1)]]);
            let x = s22.lu().solve(&s21).unwrap();
            let want = s[(1, 1)] - s21.dot(&x);
            assert_relative_eq!(c.variance, want, max_relative = 1e-12);
            assert_relative_eq!(c.coef[0], x[0], max_relative = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn conditioning_is_permutation_invariant(seed in 0u64..500) {
            let s = random_spd(seed, 4);
            let a = condition(&s, 0, &[1, 2, 3]).unwrap().variance;
            let b = condition(&s, 0, &[3, 1, 2]).unwrap().variance;
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn interval_prob_consistent(a in -8.0f64..8.0, w in 0.0f64..5.0) {
            let b = a + w;
            let p = interval_prob(a, b);
            let q = norm_cdf(b) - norm_cdf(a);
            prop_assert!((p - q).abs() < 1e-14);
        }
    }
}
