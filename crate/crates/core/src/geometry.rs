//! Compact rectangles `∏[a_i, b_i]` and their decomposition into open faces.
//!
//! A face of dimension `k` frees the coordinates listed in `sigma` (open
//! intervals `(a_j, b_j)`) and pins every other coordinate to `a_j` or `b_j`
//! according to its bit in `epsilon`. The `3^N` faces partition the rectangle.
//!
//! Coordinates are 0-based in the API and 1-based in the textual
//! serialization (`"1|{1}|{2:1}"`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the dimension for which faces are enumerated.
pub const MAX_ENUM_DIM: usize = 6;

/// A compact rectangle in `R^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl RectDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::Config("domain must have dimension >= 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::Config(format!(
                "lower has {} coordinates but upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Config(format!("axis {}: bounds must be finite", i + 1)));
            }
            if a >= b {
                return Err(Error::Config(format!(
                    "axis {}: lower bound {a} is not below upper bound {b}",
                    i + 1
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[a, b]^dim`.
    pub fn cube(dim: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a; dim], vec![b; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    /// Endpoint of `axis` selected by a face bit (0 → lower, 1 → upper).
    pub fn endpoint(&self, axis: usize, bit: u8) -> f64 {
        if bit == 0 {
            self.lower[axis]
        } else {
            self.upper[axis]
        }
    }

    pub fn contains(&self, t: &[f64]) -> bool {
        t.len() == self.dim()
            && t.iter()
                .enumerate()
                .all(|(i, &x)| x >= self.lower[i] && x <= self.upper[i])
    }

    pub fn contains_origin(&self) -> bool {
        self.contains(&vec![0.0; self.dim()])
    }

    /// Classify a point of the closed rectangle into the unique open face that
    /// contains it. A coordinate counts as sitting on a bound when it is within
    /// `rel_tol * (b - a)` of it.
    pub fn face_of(&self, t: &[f64], rel_tol: f64) -> Result<Face> {
        if t.len() != self.dim() {
            return Err(Error::Domain(format!(
                "point has {} coordinates, domain has {}",
                t.len(),
                self.dim()
            )));
        }
        let mut sigma = Vec::new();
        let mut epsilon = Vec::new();
        for (i, &x) in t.iter().enumerate() {
            let tol = rel_tol * self.width(i);
            if x < self.lower[i] - tol || x > self.upper[i] + tol {
                return Err(Error::Domain(format!(
                    "coordinate {} = {x} lies outside [{}, {}]",
                    i + 1,
                    self.lower[i],
                    self.upper[i]
                )));
            }
            if (x - self.lower[i]).abs() <= tol {
                epsilon.push((i, 0));
            } else if (x - self.upper[i]).abs() <= tol {
                epsilon.push((i, 1));
            } else {
                sigma.push(i);
            }
        }
        Ok(Face::from_parts(self.dim(), sigma, epsilon))
    }
}

/// An open face of a rectangle.
///
/// `sigma` lists the free coordinates in increasing order; `epsilon` holds one
/// `(axis, bit)` pair per fixed coordinate, also in increasing axis order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    dim: usize,
    sigma: Vec<usize>,
    epsilon: Vec<(usize, u8)>,
}

impl Face {
    fn from_parts(dim: usize, sigma: Vec<usize>, epsilon: Vec<(usize, u8)>) -> Self {
        Self {
            dim,
            sigma,
            epsilon,
        }
    }

    /// Build a face from its free coordinates and the bits of the fixed ones.
    /// `bits[j]` is consulted only for `j` not in `sigma`.
    pub fn new(dim: usize, sigma: &[usize], bits: &[u8]) -> Result<Self> {
        if bits.len() != dim {
            return Err(Error::Config(format!(
                "expected {dim} epsilon bits, got {}",
                bits.len()
            )));
        }
        let mut free = vec![false; dim];
        for &j in sigma {
            if j >= dim || free[j] {
                return Err(Error::Config(format!("invalid free coordinate list {sigma:?}")));
            }
            free[j] = true;
        }
        let sigma: Vec<usize> = (0..dim).filter(|&j| free[j]).collect();
        let mut epsilon = Vec::with_capacity(dim - sigma.len());
        for j in (0..dim).filter(|&j| !free[j]) {
            if bits[j] > 1 {
                return Err(Error::Config(format!("epsilon bit {} is not 0 or 1", bits[j])));
            }
            epsilon.push((j, bits[j]));
        }
        Ok(Self::from_parts(dim, sigma, epsilon))
    }

    /// The open interior `∂_N T`.
    pub fn interior(dim: usize) -> Self {
        Self::from_parts(dim, (0..dim).collect(), Vec::new())
    }

    /// The vertex selecting `bits[j]` on every axis.
    pub fn vertex(bits: &[u8]) -> Self {
        Self::from_parts(
            bits.len(),
            Vec::new(),
            bits.iter().enumerate().map(|(j, &b)| (j, b)).collect(),
        )
    }

    /// Face dimension `k = |sigma|`.
    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn epsilon(&self) -> &[(usize, u8)] {
        &self.epsilon
    }

    /// Fixed coordinates `{J_1, …, J_{N-k}}`.
    pub fn fixed(&self) -> impl Iterator<Item = usize> + '_ {
        self.epsilon.iter().map(|&(j, _)| j)
    }

    pub fn is_vertex(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn is_interior(&self) -> bool {
        self.epsilon.is_empty()
    }

    pub fn is_free(&self, axis: usize) -> bool {
        self.sigma.binary_search(&axis).is_ok()
    }

    /// Bit of a fixed coordinate, `None` if the coordinate is free.
    pub fn bit(&self, axis: usize) -> Option<u8> {
        self.epsilon
            .iter()
            .find(|&&(j, _)| j == axis)
            .map(|&(_, b)| b)
    }

    /// Whether `self`'s closure contains the face `other` (equivalently
    /// `other ⊆ closure(self)`): every free axis of `other` is free here and
    /// every axis fixed here is fixed in `other` with the same bit.
    pub fn closure_contains(&self, other: &Face) -> bool {
        self.dim == other.dim
            && other.sigma.iter().all(|&j| self.is_free(j))
            && self
                .epsilon
                .iter()
                .all(|&(j, b)| other.bit(j) == Some(b))
    }

    /// Lebesgue measure of the face in its own dimension (1 for vertices).
    pub fn measure(&self, domain: &RectDomain) -> f64 {
        self.sigma.iter().map(|&j| domain.width(j)).product()
    }

    /// Map free coordinates (in `sigma` order) to a point of `R^N`.
    ///
    /// Free coordinates must lie strictly inside their intervals because faces
    /// are open.
    pub fn embed_point(&self, domain: &RectDomain, free: &[f64]) -> Result<Vec<f64>> {
        if free.len() != self.k() {
            return Err(Error::Domain(format!(
                "face of dimension {} needs {} free coordinates, got {}",
                self.k(),
                self.k(),
                free.len()
            )));
        }
        for (&j, &x) in self.sigma.iter().zip(free) {
            let (a, b) = (domain.lower()[j], domain.upper()[j]);
            if !(x > a && x < b) {
                return Err(Error::Domain(format!(
                    "free coordinate {} = {x} is not inside the open interval ({a}, {b})",
                    j + 1
                )));
            }
        }
        Ok(self.embed_unchecked(domain, free))
    }

    /// As [`Face::embed_point`] without the open-interval check. Used where
    /// finite differences or closures need points on the face boundary.
    pub fn embed_unchecked(&self, domain: &RectDomain, free: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.dim];
        for (&j, &x) in self.sigma.iter().zip(free) {
            t[j] = x;
        }
        for &(j, b) in &self.epsilon {
            t[j] = domain.endpoint(j, b);
        }
        t
    }

    /// Free coordinates of a point, in `sigma` order.
    pub fn project(&self, t: &[f64]) -> Vec<f64> {
        self.sigma.iter().map(|&j| t[j]).collect()
    }

    /// The outward cone `E(J)`.
    pub fn outward_cone(&self) -> OutwardCone {
        OutwardCone {
            constraints: self
                .epsilon
                .iter()
                .map(|&(j, b)| (j, 2 * b as i8 - 1))
                .collect(),
        }
    }

    /// Serialization used in reports: `k|{sigma}|{j:bit,...}` with 1-based axes.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sigma: Vec<String> = self.sigma.iter().map(|j| (j + 1).to_string()).collect();
        let eps: Vec<String> = self
            .epsilon
            .iter()
            .map(|(j, b)| format!("{}:{}", j + 1, b))
            .collect();
        write!(f, "{}|{{{}}}|{{{}}}", self.k(), sigma.join(","), eps.join(","))
    }
}

/// `E(J) = {y : ε*_j y_j ≥ 0 for every fixed coordinate j}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutwardCone {
    /// `(axis, ε*_j)` pairs sorted by axis.
    pub constraints: Vec<(usize, i8)>,
}

impl OutwardCone {
    pub fn dim(&self) -> usize {
        self.constraints.len()
    }

    /// Membership of a vector indexed like `constraints`.
    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.constraints.len()
            && self
                .constraints
                .iter()
                .zip(y)
                .all(|(&(_, s), &v)| f64::from(s) * v >= 0.0)
    }

    pub fn signs(&self) -> Vec<f64> {
        self.constraints.iter().map(|&(_, s)| f64::from(s)).collect()
    }
}

impl fmt::Display for OutwardCone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .constraints
            .iter()
            .map(|&(j, s)| format!("({},{})", j + 1, if s > 0 { "+1" } else { "-1" }))
            .collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// All `3^N` faces, ordered by dimension descending, then `sigma`
/// lexicographically, then `epsilon` bits lexicographically.
pub fn enumerate_faces(domain: &RectDomain) -> Vec<Face> {
    enumerate_faces_of_dim(domain.dim())
}

pub(crate) fn enumerate_faces_of_dim(n: usize) -> Vec<Face> {
    let mut faces = Vec::with_capacity(3usize.pow(n as u32));
    for k in (0..=n).rev() {
        let mut subsets: Vec<Vec<usize>> = (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|&j| m & (1 << j) != 0).collect())
            .collect();
        subsets.sort();
        for sigma in subsets {
            let fixed: Vec<usize> = (0..n).filter(|j| !sigma.contains(j)).collect();
            let m = fixed.len();
            for code in 0u32..(1 << m) {
                // first fixed axis is the most significant bit → lexicographic order
                let epsilon = fixed
                    .iter()
                    .enumerate()
                    .map(|(pos, &j)| (j, ((code >> (m - 1 - pos)) & 1) as u8))
                    .collect();
                faces.push(Face::from_parts(n, sigma.clone(), epsilon));
            }
        }
    }
    faces
}

/// Outward cone of a face, as a free function.
pub fn outward_cone(face: &Face) -> OutwardCone {
    face.outward_cone()
}
