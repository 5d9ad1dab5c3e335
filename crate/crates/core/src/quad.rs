//! Deterministic tensor Gauss–Legendre quadrature.
//!
//! Every integral is pulled back to the unit cube `[0,1)^d` and evaluated with
//! a composite rule of `order_per_axis` nodes on `2^level` equal panels per
//! axis. Adaptive mode raises the level until two successive levels agree to
//! `rel_tol`. Nodes are interior, so integrands are never evaluated on the
//! closure of an open face, and half-lines are reached through the rational
//! map `x = origin + sign · scale · s / (1 - s)`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};
use crate::geometry::{Face, OutwardCone, RectDomain};

/// Largest total dimension handled by [`integrate_cone`].
pub const MAX_CONE_DIM: usize = 4;

/// Evaluation budget per integral; refinement stops before exceeding it.
const MAX_EVALUATIONS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSpec {
    pub order_per_axis: usize,
    pub adaptive: bool,
    pub rel_tol: f64,
    /// Maximum refinement level (each level halves every panel).
    pub max_subdivisions: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            order_per_axis: 24,
            adaptive: true,
            rel_tol: 1e-6,
            max_subdivisions: 12,
        }
    }
}

impl QuadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order_per_axis < 2 {
            return Err(Error::Config("quadrature order must be at least 2".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("relative tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Difference between the last two refinement levels (0 when not adaptive).
    pub err_est: f64,
    /// `false` when the tolerance was not reached; `value` is then the finest
    /// estimate and `previous` the one before it.
    pub converged: bool,
    pub previous: f64,
    pub evaluations: usize,
}

/// Rational half-line map `[0,1) → [origin, ∞)` (or `(-∞, origin]` for a
/// negative sign).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailMap {
    pub origin: f64,
    pub scale: f64,
    pub sign: f64,
}

impl TailMap {
    pub fn new(origin: f64) -> Self {
        Self {
            origin,
            scale: 1.0,
            sign: 1.0,
        }
    }

    pub fn with_scale(origin: f64, scale: f64) -> Self {
        Self {
            origin,
            scale,
            sign: 1.0,
        }
    }

    /// `(x, dx/ds)` at `s ∈ [0, 1)`.
    #[inline]
    pub fn map(&self, s: f64) -> (f64, f64) {
        let r = 1.0 - s;
        (
            self.origin + self.sign * self.scale * s / r,
            self.scale / (r * r),
        )
    }
}

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug)]
pub(crate) struct UnitRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

pub(crate) fn unit_rule(order: usize) -> Arc<UnitRule> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<UnitRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(rule) = cache.read().expect("rule cache poisoned").get(&order) {
        return rule.clone();
    }
    let gl = GaussLegendre::new(order.try_into().expect("order >= 1"));
    let mut pairs: Vec<(f64, f64)> = gl.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rule = Arc::new(UnitRule {
        nodes: pairs.iter().map(|&(x, _)| 0.5 * (x + 1.0)).collect(),
        weights: pairs.iter().map(|&(_, w)| 0.5 * w).collect(),
    });
    cache
        .write()
        .expect("rule cache poisoned")
        .insert(order, rule.clone());
    rule
}

/// Composite nodes and weights on `[0,1]` with `2^level` panels.
fn composite_axis(rule: &UnitRule, level: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = 1usize << level;
    let h = 1.0 / panels as f64;
    let mut nodes = Vec::with_capacity(panels * rule.nodes.len());
    let mut weights = Vec::with_capacity(panels * rule.nodes.len());
    for p in 0..panels {
        let a = p as f64 * h;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            nodes.push(a + h * x);
            weights.push(h * w);
        }
    }
    (nodes, weights)
}

/// One tensor pass over `[0,1)^d`; returns `(∫g, ∫|g|)`.
fn cube_pass<G>(dim: usize, rule: &UnitRule, level: usize, g: &mut G) -> Result<(f64, f64)>
where
    G: FnMut(&[f64]) -> f64,
{
    if dim == 0 {
        let v = g(&[]);
        return Ok((v, v.abs()));
    }
    let (nodes, weights) = composite_axis(rule, level);
    let m = nodes.len();
    let mut idx = vec![0usize; dim];
    let mut s = vec![nodes[0]; dim];
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    loop {
        let w: f64 = idx.iter().map(|&i| weights[i]).product();
        let v = g(&s);
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite integrand value {v} at unit-cube point {s:?}"
            )));
        }
        sum += w * v;
        abs_sum += w * v.abs();
        // odometer, last axis fastest
        let mut axis = dim;
        loop {
            if axis == 0 {
                return Ok((sum, abs_sum));
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < m {
                s[axis] = nodes[idx[axis]];
                break;
            }
            idx[axis] = 0;
            s[axis] = nodes[0];
        }
    }
}

/// Integrate `g` over `[0,1)^dim` at increasing refinement levels.
pub fn integrate_unit_cube<G>(dim: usize, mut g: G, spec: &QuadSpec) -> Result<QuadResult>
where
    G: FnMut(&[f64]) -> f64,
{
    spec.validate()?;
    let rule = unit_rule(spec.order_per_axis);
    let points_at = |level: usize| (spec.order_per_axis << level).pow(dim as u32);
    let (mut prev, _) = cube_pass(dim, &rule, 0, &mut g)?;
    let mut evaluations = points_at(0);
    if !spec.adaptive || dim == 0 {
        return Ok(QuadResult {
            value: prev,
            err_est: 0.0,
            converged: true,
            previous: prev,
            evaluations,
        });
    }
    let mut before = prev;
    for level in 1..=spec.max_subdivisions {
        if evaluations + points_at(level) > MAX_EVALUATIONS {
            break;
        }
        let (cur, abs_mass) = cube_pass(dim, &rule, level, &mut g)?;
        evaluations += points_at(level);
        let diff = (cur - prev).abs();
        if diff <= spec.rel_tol * cur.abs().max(1e-6 * abs_mass) {
            return Ok(QuadResult {
                value: cur,
                err_est: diff,
                converged: true,
                previous: prev,
                evaluations,
            });
        }
        before = prev;
        prev = cur;
    }
    Ok(QuadResult {
        value: prev,
        err_est: (prev - before).abs(),
        converged: false,
        previous: before,
        evaluations,
    })
}

/// `∫_J f dt` over an open face, `f` receiving the free coordinates.
pub fn integrate_face<F>(domain: &RectDomain, face: &Face, mut f: F, spec: &QuadSpec) -> Result<QuadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let k = face.k();
    if k == 0 {
        return Err(Error::Config("face integration needs a face of dimension >= 1".into()));
    }
    let lo: Vec<f64> = face.sigma().iter().map(|&j| domain.lower()[j]).collect();
    let width: Vec<f64> = face.sigma().iter().map(|&j| domain.width(j)).collect();
    let jac: f64 = width.iter().product();
    let mut t = vec![0.0; k];
    let mut res = integrate_unit_cube(
        k,
        |s| {
            for i in 0..k {
                t[i] = lo[i] + width[i] * s[i];
            }
            f(&t)
        },
        spec,
    )
    .map_err(|e| relabel_point(e, &lo, &width))?;
    res.value *= jac;
    res.previous *= jac;
    res.err_est *= jac;
    Ok(res)
}

fn relabel_point(e: Error, lo: &[f64], width: &[f64]) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "{msg} (face box lower {lo:?}, widths {width:?})"
        )),
        other => other,
    }
}

/// `∫_u^∞ g(x) dx` with the unit-scale tail map.
pub fn integrate_tail<G>(u: f64, g: G, spec: &QuadSpec) -> Result<QuadResult>
where
    G: FnMut(f64) -> f64,
{
    integrate_tail_map(&TailMap::new(u), g, spec)
}

/// Half-line integral through an explicit [`TailMap`].
pub fn integrate_tail_map<G>(map: &TailMap, mut g: G, spec: &QuadSpec) -> Result<QuadResult>
where
    G: FnMut(f64) -> f64,
{
    integrate_unit_cube(
        1,
        |s| {
            let (x, jac) = map.map(s[0]);
            let v = g(x);
            if v == 0.0 {
                0.0
            } else {
                v * jac
            }
        },
        spec,
    )
}

/// `∫_{x ≥ u} ∫_{E(J)} h(x, y) dy dx`.
///
/// `x_tail` is `None` when the integrand has no `x` part; the argument passed
/// to `h` is then just `y`. Each `y_j` runs over the half-line selected by the
/// cone sign, mapped with the scale `y_scales[j]`.
pub fn integrate_cone<H>(
    cone: &OutwardCone,
    x_tail: Option<TailMap>,
    y_scales: &[f64],
    mut h: H,
    spec: &QuadSpec,
) -> Result<QuadResult>
where
    H: FnMut(&[f64]) -> f64,
{
    let m = cone.dim();
    if y_scales.len() != m {
        return Err(Error::Config(format!(
            "cone has {m} directions but {} scales were supplied",
            y_scales.len()
        )));
    }
    let off = usize::from(x_tail.is_some());
    let dim = off + m;
    if dim > MAX_CONE_DIM {
        return Err(Error::Capability(format!(
            "nested cone integral of dimension {dim} exceeds the cap {MAX_CONE_DIM}; use the Monte Carlo oracle instead"
        )));
    }
    let maps: Vec<TailMap> = cone
        .constraints
        .iter()
        .zip(y_scales)
        .map(|(&(_, sign), &scale)| TailMap {
            origin: 0.0,
            scale,
            sign: f64::from(sign),
        })
        .collect();
    let mut z = vec![0.0; dim];
    integrate_unit_cube(
        dim,
        |s| {
            let mut jac = 1.0;
            if let Some(xm) = &x_tail {
                let (x, j) = xm.map(s[0]);
                z[0] = x;
                jac *= j;
            }
            for (i, map) in maps.iter().enumerate() {
                let (y, j) = map.map(s[off + i]);
                z[off + i] = y;
                jac *= j;
            }
            let v = h(&z);
            if v == 0.0 {
                0.0
            } else {
                v * jac
            }
        },
        spec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{gauss_tail, hermite};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn square(a: f64, b: f64) -> RectDomain {
        RectDomain::cube(2, a, b).unwrap()
    }

    #[test]
    fn face_measure_and_polynomial() {
        let d = square(0.0, PI);
        let edge = Face::new(2, &[0], &[0, 1]).unwrap();
        let r = integrate_face(&d, &edge, |_| 1.0, &QuadSpec::default()).unwrap();
        assert_relative_eq!(r.value, PI, epsilon = 1e-14);

        let unit = square(0.0, 1.0);
        let r = integrate_face(&unit, &Face::interior(2), |t| t[0] * t[0], &QuadSpec::default()).unwrap();
        assert_relative_eq!(r.value, 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn face_integral_against_monte_carlo() {
        let d = square(0.0, PI);
        let f = |t: &[f64]| (-(3.0 - t[0].cos() - t[1].cos())).exp();
        let r = integrate_face(&d, &Face::interior(2), f, &QuadSpec::default()).unwrap();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 10_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let t = [rng.random::<f64>() * PI, rng.random::<f64>() * PI];
            let v = f(&t) * PI * PI;
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((r.value - mean).abs() < 3.0 * se, "{} vs {mean} ± {se}", r.value);
    }

    #[test]
    fn separable_face_integral() {
        let d = RectDomain::new(vec![0.0, -1.0, 0.5], vec![1.0, 2.0, 1.5]).unwrap();
        let spec = QuadSpec::default();
        let full = integrate_face(&d, &Face::interior(3), |t| t[0].exp() * t[1].cos() * t[2].powi(3), &spec)
            .unwrap()
            .value;
        let want = (1f64.exp() - 1.0) * (2f64.sin() + 1f64.sin()) * (1.5f64.powi(4) - 0.5f64.powi(4)) / 4.0;
        assert_relative_eq!(full, want, max_relative = 1e-10);
    }

    #[test]
    fn tails() {
        let spec = QuadSpec::default();
        let r = integrate_tail(2.0, |x| (-0.5 * x * x).exp(), &spec).unwrap();
        assert_relative_eq!(r.value, (2.0 * PI).sqrt() * gauss_tail(2.0), max_relative = 1e-10);

        let r = integrate_tail(1.0, |x| hermite(3, x) * (-0.5 * x * x).exp(), &spec).unwrap();
        assert!(r.value.abs() < 1e-12, "{}", r.value);

        let r = integrate_tail(0.0, |x| x * (-0.5 * x * x).exp(), &spec).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn hermite_identity_grid() {
        let spec = QuadSpec {
            rel_tol: 1e-12,
            ..QuadSpec::default()
        };
        for k in 1..=6 {
            for &u in &[0.5, 1.0, 2.0, 3.0] {
                let lhs = integrate_tail(u, |x| hermite(k, x) * (-0.5 * x * x).exp(), &spec).unwrap();
                let rhs = hermite(k - 1, u) * (-0.5 * u * u).exp();
                assert!((lhs.value - rhs).abs() < 1e-8, "k={k} u={u}");
            }
        }
    }

    #[test]
    fn cone_orthants() {
        let phi2 = |y: &[f64]| (-0.5 * (y[0] * y[0] + y[1] * y[1])).exp() / (2.0 * PI);
        let spec = QuadSpec::default();
        let pos = OutwardCone {
            constraints: vec![(0, 1), (1, 1)],
        };
        let r = integrate_cone(&pos, None, &[1.0, 1.0], phi2, &spec).unwrap();
        assert_relative_eq!(r.value, 0.25, max_relative = 1e-10);

        let neg = OutwardCone {
            constraints: vec![(0, -1), (1, -1)],
        };
        let r2 = integrate_cone(&neg, None, &[1.0, 1.0], phi2, &spec).unwrap();
        assert_relative_eq!(r2.value, r.value, max_relative = 1e-12);
    }

    #[test]
    fn cone_with_tail() {
        // density of diag(5, 1/2, 1/2) over [2,∞) × [0,∞)²
        let dens = |z: &[f64]| {
            let q = z[0] * z[0] / 5.0 + 2.0 * z[1] * z[1] + 2.0 * z[2] * z[2];
            (-0.5 * q).exp() / ((2.0 * PI).powf(1.5) * (5.0f64 * 0.25).sqrt())
        };
        let cone = OutwardCone {
            constraints: vec![(1, 1), (2, 1)],
        };
        let r = integrate_cone(
            &cone,
            Some(TailMap::with_scale(2.0, 1.5)),
            &[0.7, 0.7],
            dens,
            &QuadSpec::default(),
        )
        .unwrap();
        assert_relative_eq!(r.value, gauss_tail(2.0 / 5f64.sqrt()) / 4.0, max_relative = 1e-8);
    }

    #[test]
    fn cone_dimension_cap() {
        let cone = OutwardCone {
            constraints: vec![(0, 1), (1, 1), (2, 1), (3, 1)],
        };
        let err = integrate_cone(&cone, Some(TailMap::new(0.0)), &[1.0; 4], |_| 0.0, &QuadSpec::default())
            .unwrap_err();
        assert!(matches!(err, Error::Capability(_)));
    }

    #[test]
    fn non_finite_integrand_reported() {
        let d = square(0.0, 1.0);
        let err = integrate_face(&d, &Face::interior(2), |t| 1.0 / (t[0] - t[0]), &QuadSpec::default())
            .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn unconverged_flag() {
        let spec = QuadSpec {
            order_per_axis: 2,
            max_subdivisions: 1,
            rel_tol: 1e-14,
            adaptive: true,
        };
        let r = integrate_tail(0.0, |x| (-x).exp() * (50.0 * x).sin().abs(), &spec).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn doubling_order_is_stable() {
        let d = square(0.0, 1.5 * PI);
        let f = |t: &[f64]| (-32.0 / (5.0 - (t[0] - PI).powi(2) - (t[1] - PI).powi(2)).max(0.5)).exp();
        let base = QuadSpec::default();
        let doubled = QuadSpec {
            order_per_axis: 48,
            ..base
        };
        let a = integrate_face(&d, &Face::interior(2), f, &base).unwrap().value;
        let b = integrate_face(&d, &Face::interior(2), f, &doubled).unwrap().value;
        assert!((a - b).abs() <= base.rel_tol * b.abs());
    }
}
