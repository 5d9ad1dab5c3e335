//! Built-in models and their JSON description.
//!
//! All models here are stationary-increment fields
//! `X(t) = σ₀ ξ₀ + Z(t) - Z(0)` described by a variogram `g` and an independent
//! offset variance `σ₀²`. Every variogram below is an analytic function, so the
//! fields are C² and the smoothness requirements of the Kac–Rice formulas hold
//! by construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FieldModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralAtom {
    pub freq: Vec<f64>,
    pub weight: f64,
}

/// Finite sum of spectral atoms, each a pair `±λ_m` carrying total mass `w_m`:
/// `g(h) = 2 Σ w_m (1 - cos⟨h, λ_m⟩)`.
///
/// Exactly simulatable (see [`crate::mc::sample_field`]). Non-degeneracy of the
/// joint law of the field and its derivatives needs enough atoms in general
/// position; the cosine field is tolerated although its mixed second derivative
/// vanishes identically, which does not enter any formula used here.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSumField {
    dim: usize,
    atoms: Vec<SpectralAtom>,
    offset_var: f64,
}

impl SpectralSumField {
    pub fn new(atoms: Vec<SpectralAtom>, offset_var: f64) -> Result<Self> {
        let dim = match atoms.first() {
            Some(a) => a.freq.len(),
            None => return Err(Error::Config("spectral sum needs at least one atom".into())),
        };
        if dim == 0 {
            return Err(Error::Config("atom frequencies must have at least one coordinate".into()));
        }
        for (m, a) in atoms.iter().enumerate() {
            if a.freq.len() != dim {
                return Err(Error::Config(format!(
                    "atom {} has {} frequency coordinates, expected {dim}",
                    m + 1,
                    a.freq.len()
                )));
            }
            if !(a.weight > 0.0) || !a.weight.is_finite() {
                return Err(Error::Config(format!("atom {} has non-positive weight", m + 1)));
            }
            if a.freq.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("atom {} has a non-finite frequency", m + 1)));
            }
        }
        if !(offset_var >= 0.0) || !offset_var.is_finite() {
            return Err(Error::Config("offset variance must be finite and non-negative".into()));
        }
        Ok(Self {
            dim,
            atoms,
            offset_var,
        })
    }

    /// `ξ₀ + Z(t) - Z(0)` with `Z` the sum of two independent unit-frequency
    /// cosine waves: `ν(t) = 3 - cos t₁ - cos t₂`.
    pub fn cosine() -> Self {
        let atom = |freq: Vec<f64>| SpectralAtom { freq, weight: 0.5 };
        Self::new(vec![atom(vec![1.0, 0.0]), atom(vec![0.0, 1.0])], 1.0).expect("valid atoms")
    }

    pub fn atoms(&self) -> &[SpectralAtom] {
        &self.atoms
    }

    /// `Σ w_m λ_m λ_mᵀ`, computed from the atoms rather than the variogram.
    pub fn spectral_lambda(&self) -> DMatrix<f64> {
        self.spectral_lambda_at(&vec![0.0; self.dim])
    }

    /// `Σ w_m cos⟨t, λ_m⟩ λ_m λ_mᵀ`.
    pub fn spectral_lambda_at(&self, t: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for a in &self.atoms {
            let l = DVector::from_column_slice(&a.freq);
            m += (a.weight * dot(t, &a.freq).cos()) * &l * l.transpose();
        }
        m
    }

    /// Multiply the field by `s`: weights and offset scale by `s²`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| SpectralAtom {
                freq: a.freq.clone(),
                weight: a.weight * s * s,
            })
            .collect();
        Self::new(atoms, self.offset_var * s * s)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl FieldModel for SpectralSumField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn offset_var(&self) -> f64 {
        self.offset_var
    }

    fn variogram(&self, h: &[f64]) -> f64 {
        2.0 * self
            .atoms
            .iter()
            .map(|a| a.weight * (1.0 - dot(h, &a.freq).cos()))
            .sum::<f64>()
    }

    fn variogram_grad(&self, h: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for a in &self.atoms {
            let s = 2.0 * a.weight * dot(h, &a.freq).sin();
            for (gi, li) in g.iter_mut().zip(&a.freq) {
                *gi += s * li;
            }
        }
        g
    }

    fn variogram_hess(&self, h: &[f64]) -> DMatrix<f64> {
        2.0 * self.spectral_lambda_at(h)
    }

    fn as_spectral(&self) -> Option<&SpectralSumField> {
        Some(self)
    }

    fn describe(&self) -> String {
        format!("spectral sum ({} atoms, offset {})", self.atoms.len(), self.offset_var)
    }
}

/// `X = Y - Y(0)` for a stationary `Y` with correlation `e^{-‖h/ℓ‖²}`:
/// `g(h) = 2(1 - e^{-‖h/ℓ‖²})`, no offset.
///
/// The Gaussian correlation has a spectral density positive everywhere, so the
/// joint law of `X` and its first two derivatives is non-degenerate away from
/// the origin. It is not a finite spectral sum and cannot be simulated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianIncrementField {
    dim: usize,
    scale: f64,
}

impl GaussianIncrementField {
    pub fn new(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config("scale must be positive".into()));
        }
        Ok(Self { dim, scale })
    }

    fn r2(&self, h: &[f64]) -> f64 {
        h.iter().map(|x| x * x).sum::<f64>() / (self.scale * self.scale)
    }
}

impl FieldModel for GaussianIncrementField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn offset_var(&self) -> f64 {
        0.0
    }

    fn variogram(&self, h: &[f64]) -> f64 {
        -2.0 * (-self.r2(h)).exp_m1()
    }

    fn variogram_grad(&self, h: &[f64]) -> DVector<f64> {
        let l2 = self.scale * self.scale;
        let e = (-self.r2(h)).exp();
        DVector::from_iterator(self.dim, h.iter().map(|x| 4.0 * e * x / l2))
    }

    fn variogram_hess(&self, h: &[f64]) -> DMatrix<f64> {
        let l2 = self.scale * self.scale;
        let e = (-self.r2(h)).exp();
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            4.0 * e / l2 * (delta - 2.0 * h[i] * h[j] / l2)
        })
    }

    fn describe(&self) -> String {
        format!("gaussian increment (N={}, scale {})", self.dim, self.scale)
    }
}

/// JSON model description, tagged by `type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Cosine,
    SpectralSum {
        atoms: Vec<SpectralAtom>,
        #[serde(default)]
        offset_var: f64,
    },
    GaussianIncrement {
        dim: usize,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
}

fn unit_scale() -> f64 {
    1.0
}

/// A model built from a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltModel {
    Spectral(SpectralSumField),
    GaussianIncrement(GaussianIncrementField),
}

impl BuiltModel {
    pub fn as_model(&self) -> &dyn FieldModel {
        match self {
            BuiltModel::Spectral(m) => m,
            BuiltModel::GaussianIncrement(m) => m,
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<BuiltModel> {
        Ok(match self {
            ModelSpec::Cosine => BuiltModel::Spectral(SpectralSumField::cosine()),
            ModelSpec::SpectralSum { atoms, offset_var } => {
                BuiltModel::Spectral(SpectralSumField::new(atoms.clone(), *offset_var)?)
            }
            ModelSpec::GaussianIncrement { dim, scale } => {
                BuiltModel::GaussianIncrement(GaussianIncrementField::new(*dim, *scale)?)
            }
        })
    }
}
