//! Self-checks run before trusting numbers for a given model and domain.
//!
//! Each suite yields one or more [`Check`] rows carrying the measured residual
//! and the tolerance it was held to. Informational rows never fail a run.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{check_h2, covariance_at_point, derivative_check, FieldModel, H2_THRESHOLD};
use crate::gauss::hermite_tail_identity_check;
use crate::geometry::{Face, RectDomain};
use crate::mc::{ec_of_mask, ec_oracle_2d};
use crate::mec::condition_check;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub informational: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `measured <= tolerance`.
    fn at_most(suite: &'static str, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
            informational: false,
            detail: String::new(),
        }
    }

    fn failed(suite: &'static str, name: impl Into<String>, detail: String) -> Self {
        Self {
            suite,
            name: name.into(),
            measured: f64::NAN,
            tolerance: f64::NAN,
            passed: false,
            informational: false,
            detail,
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.informational)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed && !c.informational)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSpec {
    pub seed: u64,
    /// Random points for the pointwise suites.
    pub points: usize,
    pub h2_grid: usize,
    pub ec_masks: usize,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 100,
            h2_grid: 25,
            ec_masks: 500,
        }
    }
}

const LAMBDA_TOL: f64 = 1e-10;
const HERMITE_TOL: f64 = 1e-8;
/// Largest dimension for which every axis subset is conditioned on.
const MAX_SUBSET_DIM: usize = 6;

fn random_point(rng: &mut ChaCha8Rng, domain: &RectDomain) -> Vec<f64> {
    (0..domain.dim())
        .map(|i| domain.lower()[i] + rng.random::<f64>() * domain.width(i))
        .collect()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn hermite_suite() -> Vec<Check> {
    (1..=6)
        .map(|k| {
            let mut worst = 0.0f64;
            for u in [0.5, 1.0, 2.0, 3.0] {
                match hermite_tail_identity_check(k, u) {
                    Ok(r) => worst = worst.max(r),
                    Err(e) => return Check::failed("hermite", format!("k={k}"), e.to_string()),
                }
            }
            Check::at_most("hermite", format!("k={k}"), worst, HERMITE_TOL)
        })
        .collect()
}

/// `Λ`, `Λ(t)` from the atoms against the variogram Hessian.
pub fn lambda_suite(model: &dyn FieldModel, domain: &RectDomain, spec: &ValidationSpec) -> Vec<Check> {
    let Some(field) = model.as_spectral() else {
        return vec![Check {
            informational: true,
            ..Check::at_most("lambda", "spectral/variogram", 0.0, LAMBDA_TOL)
                .with_detail("no spectral representation to compare against")
        }];
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let at_zero = max_abs_diff(&field.spectral_lambda(), &model.lambda());
    let mut at_t = 0.0f64;
    for _ in 0..spec.points {
        let t = random_point(&mut rng, domain);
        at_t = at_t.max(max_abs_diff(&field.spectral_lambda_at(&t), &model.lambda_at(&t)));
    }
    vec![
        Check::at_most("lambda", "Λ", at_zero, LAMBDA_TOL),
        Check::at_most("lambda", "Λ(t)", at_t, LAMBDA_TOL),
    ]
}

pub fn derivative_suite(model: &dyn FieldModel, domain: &RectDomain, spec: &ValidationSpec) -> Vec<Check> {
    let d = derivative_check(model, domain, spec.points, spec.seed);
    vec![
        Check::at_most("derivatives", "∇ν", d.max_grad_err, d.tolerance),
        Check::at_most("derivatives", "∇²ν", d.max_hess_err, d.tolerance),
    ]
}

/// `γ² ≤ θ_J² ≤ ν` for every axis subset `J` at random points. The measured
/// value is the largest violation relative to `ν`.
pub fn conditioning_suite(model: &dyn FieldModel, domain: &RectDomain, spec: &ValidationSpec) -> Vec<Check> {
    const TOL: f64 = 1e-12;
    let n = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED);
    let subsets: Vec<Vec<usize>> = if n <= MAX_SUBSET_DIM {
        (1u32..(1 << n))
            .map(|s| (0..n).filter(|i| s & (1 << i) != 0).collect())
            .collect()
    } else {
        vec![(0..n).collect()]
    };
    let mut worst = 0.0f64;
    for _ in 0..spec.points {
        let t = random_point(&mut rng, domain);
        for sigma in &subsets {
            let face = match Face::new(n, sigma, &vec![0; n]) {
                Ok(f) => f,
                Err(e) => return vec![Check::failed("conditioning", "γ² ≤ θ² ≤ ν", e.to_string())],
            };
            let cp = match covariance_at_point(model, &face, &t) {
                Ok(cp) => cp,
                Err(e) => {
                    return vec![Check::failed("conditioning", "γ² ≤ θ² ≤ ν", format!("{e} (face {})", face.label()))]
                }
            };
            let scale = cp.nu.abs().max(f64::MIN_POSITIVE);
            worst = worst
                .max((cp.gamma_sq - cp.theta_sq) / scale)
                .max((cp.theta_sq - cp.nu) / scale);
        }
    }
    vec![Check::at_most("conditioning", "γ² ≤ θ² ≤ ν", worst.max(0.0), TOL)]
}

/// Cubical count against components minus holes on random 2-D masks. The
/// measured value is the number of disagreements.
pub fn ec_oracle_suite(spec: &ValidationSpec) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xEC);
    let mut mismatches = 0usize;
    for _ in 0..spec.ec_masks {
        let r = rng.random_range(1..=20);
        let c = rng.random_range(1..=20);
        let density: f64 = rng.random_range(0.1..0.9);
        let mask: Vec<bool> = (0..r * c).map(|_| rng.random::<f64>() < density).collect();
        let a = ec_of_mask(&[r, c], &mask).map(|e| e.chi);
        let b = ec_oracle_2d(r, c, &mask);
        if a.is_err() || b.is_err() || a.ok() != b.ok() {
            mismatches += 1;
        }
    }
    vec![Check::at_most("ec_oracle", format!("{} masks", spec.ec_masks), mismatches as f64, 0.0)]
}

pub fn h2_suite(model: &dyn FieldModel, domain: &RectDomain, spec: &ValidationSpec) -> Vec<Check> {
    match check_h2(model, domain, spec.h2_grid) {
        Ok(r) => vec![Check {
            suite: "h2",
            name: "min eig(Λ - Λ(t))".into(),
            measured: r.min_eigenvalue,
            tolerance: H2_THRESHOLD,
            passed: !r.flagged,
            informational: false,
            detail: format!("at {:?} over {} points", r.argmin, r.points),
        }],
        Err(e) => vec![Check::failed("h2", "min eig(Λ - Λ(t))", e.to_string())],
    }
}

/// Reports whether a near-maximal point has a flat fixed direction, which
/// makes the boundary terms degenerate. Never fails a run.
pub fn condition_suite(model: &dyn FieldModel, domain: &RectDomain) -> Vec<Check> {
    let (measured, detail) = match condition_check(model, domain) {
        Ok(r) => {
            let flat: Vec<String> = r
                .near_max
                .iter()
                .filter(|(_, dirs)| !dirs.is_empty())
                .map(|(f, dirs)| format!("{} flat along {:?}", f.label(), dirs))
                .collect();
            let detail = if flat.is_empty() {
                format!("σ_T² = {}", r.sigma_sq)
            } else {
                flat.join("; ")
            };
            (flat.len() as f64, detail)
        }
        Err(e) => (f64::NAN, e.to_string()),
    };
    vec![Check {
        suite: "condition",
        name: "flat directions at the maximum".into(),
        measured,
        tolerance: 0.0,
        passed: measured == 0.0,
        informational: true,
        detail,
    }]
}

/// All suites in a fixed order.
pub fn validate(model: &dyn FieldModel, domain: &RectDomain, spec: &ValidationSpec) -> ValidationReport {
    let mut checks = hermite_suite();
    checks.extend(lambda_suite(model, domain, spec));
    checks.extend(derivative_suite(model, domain, spec));
    checks.extend(conditioning_suite(model, domain, spec));
    checks.extend(ec_oracle_suite(spec));
    checks.extend(h2_suite(model, domain, spec));
    checks.extend(condition_suite(model, domain));
    ValidationReport { checks }
}
