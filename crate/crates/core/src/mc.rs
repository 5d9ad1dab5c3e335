//! Exact simulation of finite spectral sums on grids, empirical excursion
//! probabilities and cubical Euler characteristics.
//!
//! Every replicate owns a ChaCha stream keyed by `(seed, replicate)`, so a
//! realization depends only on its lineage and never on scheduling. Counts
//! are accumulated as integers, which keeps parallel totals bit-stable.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldModel, SpectralSumField};
use crate::geometry::RectDomain;

/// Replicates handled by one parallel task.
const CHUNK: usize = 256;

/// Uniform grid with both endpoints on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub domain: RectDomain,
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn new(domain: RectDomain, points_per_axis: usize) -> Result<Self> {
        if points_per_axis < 2 {
            return Err(Error::Config("a grid needs at least 2 points per axis".into()));
        }
        Ok(Self {
            domain,
            points_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.points_per_axis; self.dim()]
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of grid index `i` along `axis`; the last index hits the
    /// upper bound exactly.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let (a, b) = (self.domain.lower()[axis], self.domain.upper()[axis]);
        if i + 1 == self.points_per_axis {
            b
        } else {
            a + (b - a) * i as f64 / (self.points_per_axis - 1) as f64
        }
    }

    /// All grid points in row-major order (last axis fastest).
    pub fn points(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(self.len());
        crate::field::for_each_grid_point(n, self.points_per_axis, |idx| {
            out.push(idx.iter().enumerate().map(|(a, &i)| self.coord(a, i)).collect());
        });
        out
    }

    /// The grid with `2R - 1` points per axis, which contains this one as its
    /// even-indexed subgrid.
    pub fn refined(&self) -> Self {
        Self {
            domain: self.domain.clone(),
            points_per_axis: 2 * self.points_per_axis - 1,
        }
    }
}

/// One sampled field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub grid: GridSpec,
    /// Row-major values, last axis fastest.
    pub values: Vec<f64>,
    pub seed: u64,
    pub replicate: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RealizationHeader {
    shape: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    dtype: String,
    order: String,
    seed: u64,
    replicate: u64,
}

impl Realization {
    /// Write the values as little-endian `f64` to `path` and a JSON header
    /// next to it (`path` with extension `json`). Returns the header path.
    pub fn export(&self, path: &Path) -> std::io::Result<PathBuf> {
        let mut bytes = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
        let header = RealizationHeader {
            shape: self.grid.shape(),
            lower: self.grid.domain.lower().to_vec(),
            upper: self.grid.domain.upper().to_vec(),
            dtype: "f64-le".into(),
            order: "row-major".into(),
            seed: self.seed,
            replicate: self.replicate,
        };
        let header_path = path.with_extension("json");
        let text = serde_json::to_string_pretty(&header).map_err(std::io::Error::other)?;
        fs::write(&header_path, text)?;
        Ok(header_path)
    }
}

/// Precomputed `cos⟨t, λ_m⟩ - 1` and `sin⟨t, λ_m⟩` at a fixed point set.
pub struct SpectralSampler {
    offset_sd: f64,
    amp: Vec<f64>,
    cos_m1: Vec<Vec<f64>>,
    sin: Vec<Vec<f64>>,
    len: usize,
}

impl SpectralSampler {
    pub fn new(field: &SpectralSumField, points: &[Vec<f64>]) -> Self {
        let mut cos_m1 = Vec::with_capacity(field.atoms().len());
        let mut sin = Vec::with_capacity(field.atoms().len());
        for atom in field.atoms() {
            let phase: Vec<f64> = points
                .iter()
                .map(|t| t.iter().zip(&atom.freq).map(|(a, b)| a * b).sum())
                .collect();
            // cos x - 1 = -2 sin²(x/2) keeps digits near the origin
            cos_m1.push(phase.iter().map(|&x| -2.0 * (0.5 * x).sin().powi(2)).collect());
            sin.push(phase.iter().map(|&x: &f64| x.sin()).collect());
        }
        Self {
            offset_sd: field.offset_var().sqrt(),
            amp: field.atoms().iter().map(|a| a.weight.sqrt()).collect(),
            cos_m1,
            sin,
            len: points.len(),
        }
    }

    pub fn from_model(model: &dyn FieldModel, points: &[Vec<f64>]) -> Result<Self> {
        let field = model.as_spectral().ok_or_else(|| {
            Error::Capability(format!(
                "{} is not a finite spectral sum and cannot be simulated exactly",
                model.describe()
            ))
        })?;
        Ok(Self::new(field, points))
    }

    /// Draw replicate `replicate` of stream family `seed` into `out`.
    pub fn draw(&self, seed: u64, replicate: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        let xi0: f64 = rng.sample(StandardNormal);
        out.iter_mut().for_each(|v| *v = self.offset_sd * xi0);
        for m in 0..self.amp.len() {
            let a: f64 = self.amp[m] * rng.sample::<f64, _>(StandardNormal);
            let b: f64 = self.amp[m] * rng.sample::<f64, _>(StandardNormal);
            for ((v, c), s) in out.iter_mut().zip(&self.cos_m1[m]).zip(&self.sin[m]) {
                *v += a * c + b * s;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// `X(t) = σ₀ξ₀ + Σ √w_m [ξ_m (cos⟨t,λ_m⟩ - 1) + ξ'_m sin⟨t,λ_m⟩]` on the grid.
pub fn sample_field(model: &dyn FieldModel, grid: &GridSpec, seed: u64, replicate: u64) -> Result<Realization> {
    let sampler = SpectralSampler::from_model(model, &grid.points())?;
    let mut values = vec![0.0; grid.len()];
    sampler.draw(seed, replicate, &mut values);
    Ok(Realization {
        grid: grid.clone(),
        values,
        seed,
        replicate,
    })
}

/// Cell counts of the cubical complex spanned by the above-level vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EcCount {
    /// `n[d]` = number of `d`-cells, `d = 0..=N`.
    pub n: Vec<u64>,
    pub chi: i64,
}

/// Euler characteristic of a binary mask on a grid of shape `shape`
/// (row-major, last axis fastest). A `d`-cell is present iff all `2^d` of its
/// corners are.
pub fn ec_of_mask(shape: &[usize], mask: &[bool]) -> Result<EcCount> {
    let n = shape.len();
    if !(1..=3).contains(&n) {
        return Err(Error::Capability(format!(
            "cubical Euler characteristic supports dimension 1 to 3, got {n}"
        )));
    }
    let total: usize = shape.iter().product();
    if mask.len() != total {
        return Err(Error::Config(format!(
            "mask has {} entries, shape {shape:?} needs {total}",
            mask.len()
        )));
    }
    let mut stride = vec![1usize; n];
    for i in (0..n - 1).rev() {
        stride[i] = stride[i + 1] * shape[i + 1];
    }
    // corner offsets of each axis subset
    let subsets: Vec<(usize, Vec<usize>)> = (0u32..(1 << n))
        .map(|s| {
            let axes: Vec<usize> = (0..n).filter(|i| s & (1 << i) != 0).collect();
            let mut offs = vec![0usize];
            for &a in &axes {
                let extra: Vec<usize> = offs.iter().map(|o| o + stride[a]).collect();
                offs.extend(extra);
            }
            (axes.len(), offs)
        })
        .collect();
    let mut counts = vec![0u64; n + 1];
    let mut idx = vec![0usize; n];
    for flat in 0..total {
        if mask[flat] {
            for (s, (d, offs)) in subsets.iter().enumerate() {
                let fits = (0..n).all(|a| s & (1 << a) == 0 || idx[a] + 1 < shape[a]);
                if fits && offs.iter().all(|&o| mask[flat + o]) {
                    counts[*d] += 1;
                }
            }
        }
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    let chi = counts
        .iter()
        .enumerate()
        .map(|(d, &c)| if d % 2 == 0 { c as i64 } else { -(c as i64) })
        .sum();
    Ok(EcCount { n: counts, chi })
}

/// Cubical Euler characteristic of `{t : X(t) ≥ u}` on the realization grid.
pub fn empirical_ec(values: &Realization, u: f64) -> Result<EcCount> {
    let mask: Vec<bool> = values.values.iter().map(|&v| v >= u).collect();
    ec_of_mask(&values.grid.shape(), &mask)
}

/// Union–find with path halving.
struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Components minus holes of a 2-D mask, as an independent check of the
/// cubical count.
///
/// Occupied vertices connect along grid edges (4-neighbours), matching the
/// edges of the complex. The complement uses the dual 8-neighbourhood on a
/// grid padded by one empty ring; every background component except the one
/// touching the padding is a hole.
pub fn ec_oracle_2d(rows: usize, cols: usize, mask: &[bool]) -> Result<i64> {
    if mask.len() != rows * cols {
        return Err(Error::Config("mask size does not match its shape".into()));
    }
    let (pr, pc) = (rows + 2, cols + 2);
    let at = |r: usize, c: usize| -> bool {
        r >= 1 && c >= 1 && r <= rows && c <= cols && mask[(r - 1) * cols + (c - 1)]
    };
    let mut dsu = Dsu::new(pr * pc);
    for r in 0..pr {
        for c in 0..pc {
            let here = at(r, c);
            let id = r * pc + c;
            let neighbours: &[(isize, isize)] = if here {
                &[(0, 1), (1, 0)]
            } else {
                &[(0, 1), (1, 0), (1, 1), (1, -1)]
            };
            for &(dr, dc) in neighbours {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr as usize >= pr || nc as usize >= pc {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if at(nr, nc) == here {
                    dsu.union(id, nr * pc + nc);
                }
            }
        }
    }
    let outside = dsu.find(0);
    let (mut components, mut holes) = (0i64, 0i64);
    for r in 0..pr {
        for c in 0..pc {
            let id = r * pc + c;
            if dsu.find(id) == id {
                if at(r, c) {
                    components += 1;
                } else if id != outside {
                    holes += 1;
                }
            }
        }
    }
    Ok(components - holes)
}

/// Monte Carlo settings shared by the estimators below.
#[derive(Debug, Clone, PartialEq)]
pub struct McSpec {
    pub points_per_axis: usize,
    pub reps: usize,
    pub seed: u64,
    /// Also evaluate the maximum on the nested `2R - 1` grid.
    pub dual_resolution: bool,
    /// Also count Euler characteristics (N ≤ 3).
    pub euler: bool,
}

impl McSpec {
    pub fn new(points_per_axis: usize, reps: usize, seed: u64) -> Self {
        Self {
            points_per_axis,
            reps,
            seed,
            dual_resolution: true,
            euler: true,
        }
    }
}

/// Per-level Monte Carlo summary.
#[derive(Debug, Clone, PartialEq)]
pub struct McLevel {
    pub u: f64,
    pub p_hat: f64,
    pub stderr: f64,
    /// `p̂` on the refined grid (equal to `p_hat` without dual resolution).
    pub p_hat_fine: f64,
    pub stderr_fine: f64,
    /// `p̂_fine - p̂` exceeds twice the standard error of `p̂`.
    pub bias_flag: bool,
    pub mean_chi: Option<f64>,
    pub chi_stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub levels: Vec<McLevel>,
    pub points_per_axis: usize,
    pub fine_points_per_axis: Option<usize>,
    pub reps: usize,
}

#[derive(Default, Clone)]
struct Tally {
    hits: Vec<u64>,
    hits_fine: Vec<u64>,
    chi_sum: Vec<i64>,
    chi_sq: Vec<i128>,
}

impl Tally {
    fn zeros(levels: usize) -> Self {
        Self {
            hits: vec![0; levels],
            hits_fine: vec![0; levels],
            chi_sum: vec![0; levels],
            chi_sq: vec![0; levels],
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for i in 0..self.hits.len() {
            self.hits[i] += other.hits[i];
            self.hits_fine[i] += other.hits_fine[i];
            self.chi_sum[i] += other.chi_sum[i];
            self.chi_sq[i] += other.chi_sq[i];
        }
        self
    }
}

/// Sup probabilities and mean Euler characteristics at several levels from
/// one set of replicates.
pub fn mc_run(model: &dyn FieldModel, domain: &RectDomain, levels: &[f64], spec: &McSpec) -> Result<McReport> {
    if spec.reps == 0 {
        return Err(Error::Config("Monte Carlo needs at least one replicate".into()));
    }
    if model.dim() != domain.dim() {
        return Err(Error::Config("model and domain dimensions differ".into()));
    }
    if spec.euler && domain.dim() > 3 {
        return Err(Error::Capability(format!(
            "empirical Euler characteristics support dimension up to 3, got {}",
            domain.dim()
        )));
    }
    let coarse = GridSpec::new(domain.clone(), spec.points_per_axis)?;
    let grid = if spec.dual_resolution { coarse.refined() } else { coarse.clone() };
    let sampler = SpectralSampler::from_model(model, &grid.points())?;
    let shape = coarse.shape();
    let n = domain.dim();
    let fine_shape = grid.shape();
    // flat indices of the coarse subgrid inside the sampled grid
    let coarse_idx: Vec<usize> = if spec.dual_resolution {
        let mut v = Vec::with_capacity(coarse.len());
        crate::field::for_each_grid_point(n, spec.points_per_axis, |idx| {
            let mut flat = 0;
            for a in 0..n {
                flat = flat * fine_shape[a] + 2 * idx[a];
            }
            v.push(flat);
        });
        v
    } else {
        (0..coarse.len()).collect()
    };

    let nl = levels.len();
    let chunks: Vec<(usize, usize)> = (0..spec.reps)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(spec.reps)))
        .collect();
    let tallies: Vec<Result<Tally>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut tally = Tally::zeros(nl);
            let mut values = vec![0.0; sampler.len()];
            let mut sub = vec![0.0; coarse_idx.len()];
            let mut mask = vec![false; coarse_idx.len()];
            for rep in start..end {
                sampler.draw(spec.seed, rep as u64, &mut values);
                for (s, &i) in sub.iter_mut().zip(&coarse_idx) {
                    *s = values[i];
                }
                let max_c = sub.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let max_f = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (l, &u) in levels.iter().enumerate() {
                    if max_c >= u {
                        tally.hits[l] += 1;
                    }
                    if max_f >= u {
                        tally.hits_fine[l] += 1;
                    }
                    if spec.euler {
                        for (m, &v) in mask.iter_mut().zip(&sub) {
                            *m = v >= u;
                        }
                        let chi = ec_of_mask(&shape, &mask)?.chi;
                        tally.chi_sum[l] += chi;
                        tally.chi_sq[l] += i128::from(chi) * i128::from(chi);
                    }
                }
            }
            Ok(tally)
        })
        .collect();
    let mut total = Tally::zeros(nl);
    for t in tallies {
        total = total.merge(t?);
    }

    let reps = spec.reps as f64;
    let binom_se = |p: f64| (p * (1.0 - p) / reps).sqrt();
    let out = levels
        .iter()
        .enumerate()
        .map(|(l, &u)| {
            let p = total.hits[l] as f64 / reps;
            let pf = total.hits_fine[l] as f64 / reps;
            let se = binom_se(p);
            let (mean_chi, chi_stderr) = if spec.euler {
                let mean = total.chi_sum[l] as f64 / reps;
                let var = if spec.reps > 1 {
                    (total.chi_sq[l] as f64 - reps * mean * mean) / (reps - 1.0)
                } else {
                    0.0
                };
                (Some(mean), Some((var.max(0.0) / reps).sqrt()))
            } else {
                (None, None)
            };
            McLevel {
                u,
                p_hat: p,
                stderr: se,
                p_hat_fine: pf,
                stderr_fine: binom_se(pf),
                bias_flag: spec.dual_resolution && pf - p > 2.0 * se,
                mean_chi,
                chi_stderr,
            }
        })
        .collect();
    Ok(McReport {
        levels: out,
        points_per_axis: spec.points_per_axis,
        fine_points_per_axis: spec.dual_resolution.then(|| grid.points_per_axis),
        reps: spec.reps,
    })
}

/// `(p̂, stderr)` of `P{max over the grid ≥ u}`.
pub fn empirical_sup_prob(
    model: &dyn FieldModel,
    domain: &RectDomain,
    u: f64,
    points_per_axis: usize,
    reps: usize,
    seed: u64,
) -> Result<McLevel> {
    let spec = McSpec {
        euler: false,
        ..McSpec::new(points_per_axis, reps, seed)
    };
    Ok(mc_run(model, domain, &[u], &spec)?.levels.remove(0))
}

/// `(mean χ, stderr)` of the cubical Euler characteristic at level `u`.
pub fn mc_mean_ec(
    model: &dyn FieldModel,
    domain: &RectDomain,
    u: f64,
    points_per_axis: usize,
    reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let spec = McSpec {
        dual_resolution: false,
        ..McSpec::new(points_per_axis, reps, seed)
    };
    let level = mc_run(model, domain, &[u], &spec)?.levels.remove(0);
    Ok((level.mean_chi.unwrap_or(0.0), level.chi_stderr.unwrap_or(0.0)))
}
