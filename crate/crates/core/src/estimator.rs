//! Weights, estimates and closed-form variance diagnostics.
//!
//! For a sampled point `i` with inclusion probability `q(i) = 1 − (1 − p(i)/Z)^N`
//! the weight `w(i) = p(i)/q(i)` is an unbiased estimate of `p(i)` (points outside
//! the sample get weight zero), and `Z⁻¹ Σ_{i∈S} w(i) f(i)` is an unbiased estimate of
//! the average of `f`. The sample average `N⁻¹ Σ c(i) f(i)` is computed alongside for
//! comparison.
//!
//! Covariances are exact when `Z` is known before sampling. When `Z` is solved from
//! the same sample they are diagnostics only, and [`EstimateReport::mode`] says which.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::count_table::{Entry, Key, MassTable};
use crate::numeric::{one_minus_pow1m, pow1m, sum_compensated};
use crate::zsolver::{BoundaryCase, Method, ZSolution, ZValue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension error: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// `q = 1 − (1 − mass/z)^n`: the probability that a point of this mass appears at
/// least once in `n` draws.
pub fn inclusion_prob(mass: f64, z: f64, n: u64) -> Result<f64> {
    if !(mass > 0.0 && mass <= z && z.is_finite()) {
        return Err(EstimatorError::Domain(format!(
            "inclusion probability needs 0 < mass ≤ z, got mass = {mass}, z = {z}"
        )));
    }
    if n == 0 {
        return Err(EstimatorError::Domain("inclusion probability needs n ≥ 1".into()));
    }
    Ok(one_minus_pow1m(mass / z, n))
}

/// `w(i) = p(i)/q(i)` on the sampled points, in key order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    weights: BTreeMap<Key, f64>,
}

impl WeightVector {
    pub fn get(&self, key: &Key) -> Option<f64> {
        self.weights.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, f64)> {
        self.weights.iter().map(|(k, &w)| (k, w))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ w(i)`; equals `φ(z)`.
    pub fn total(&self) -> f64 {
        sum_compensated(self.weights.values().copied())
    }
}

pub fn weights(table: &MassTable, z: f64, n: u64) -> Result<WeightVector> {
    let weights = table
        .iter()
        .map(|(key, e)| Ok((key.clone(), e.mass / inclusion_prob(e.mass, z, n)?)))
        .collect::<Result<_>>()?;
    Ok(WeightVector { weights })
}

/// `z⁻¹ Σ w(i) f(i)` at a given `z`, with `f` read from the table.
pub fn estimate_known_z(table: &MassTable, z: f64) -> Result<f64> {
    estimate_known_z_by(table, z, |_, e| e.fvalue)
}

pub fn estimate_known_z_by<F>(table: &MassTable, z: f64, f: F) -> Result<f64>
where
    F: Fn(&Key, &Entry) -> f64,
{
    let n = table.n_draws();
    let mut terms = Vec::with_capacity(table.len());
    for (key, e) in table {
        terms.push(e.mass / inclusion_prob(e.mass, z, n)? * f(key, e));
    }
    Ok(sum_compensated(terms) / z)
}

/// The mass-aware estimate for a solved sample. `None` for an empty sample.
pub fn estimate_new(table: &MassTable, solution: &ZSolution) -> Option<f64> {
    estimate_new_by(table, solution, |_, e| e.fvalue)
}

/// As [`estimate_new`], for an arbitrary function of the sampled points.
///
/// One draw or one distinct point yields `f` of that point; all-distinct samples
/// yield the sample average; the regular case uses the solved `z`.
pub fn estimate_new_by<F>(table: &MassTable, solution: &ZSolution, f: F) -> Option<f64>
where
    F: Fn(&Key, &Entry) -> f64,
{
    match solution.case {
        BoundaryCase::Empty => None,
        BoundaryCase::SingleDraw | BoundaryCase::Concentrated => {
            let (key, e) = table.iter().next()?;
            Some(f(key, e))
        }
        BoundaryCase::AllDistinct => estimate_blue_by(table, f),
        BoundaryCase::Regular => {
            let z = solution.z.finite()?;
            estimate_known_z_by(table, z, f).ok()
        }
    }
}

/// The sample average `N⁻¹ Σ c(i) f(i)`. `None` for an empty sample.
pub fn estimate_blue(table: &MassTable) -> Option<f64> {
    estimate_blue_by(table, |_, e| e.fvalue)
}

pub fn estimate_blue_by<F>(table: &MassTable, f: F) -> Option<f64>
where
    F: Fn(&Key, &Entry) -> f64,
{
    let n = table.n_draws();
    if n == 0 {
        return None;
    }
    Some(sum_compensated(table.iter().map(|(k, e)| e.count as f64 * f(k, e))) / n as f64)
}

/// Variance of `c(i)/N`: `N⁻¹ (p/Z)(1 − p/Z)`.
pub fn var_diag_blue(mass: f64, z: f64, n: u64) -> Result<f64> {
    if !(mass >= 0.0 && mass <= z && z > 0.0) || n == 0 {
        return Err(EstimatorError::Domain(format!(
            "needs 0 ≤ mass ≤ z, n ≥ 1; got mass = {mass}, z = {z}, n = {n}"
        )));
    }
    let x = mass / z;
    Ok(x * (1.0 - x) / n as f64)
}

/// Variance of `w(i)/Z`: `(p/Z)² (1/q − 1) = (p/Z)² (1 − p/Z)^N / q`.
pub fn var_diag_new(mass: f64, z: f64, n: u64) -> Result<f64> {
    let q = inclusion_prob(mass, z, n)?;
    let x = mass / z;
    Ok(x * x * pow1m(x, n) / q)
}

/// Dense symmetric matrix, row-major, with a legend naming each index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    pub dim: usize,
    pub legend: Vec<String>,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            legend: (0..dim).map(|i| i.to_string()).collect(),
            data: vec![0.0; dim * dim],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        sum_compensated(self.data[i * self.dim..(i + 1) * self.dim].iter().copied())
    }

    /// `vᵀ A v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.dim);
        sum_compensated(
            (0..self.dim).flat_map(|i| (0..self.dim).map(move |j| v[i] * self.get(i, j) * v[j])),
        )
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_masses(masses: &[f64], z: f64, n: u64) -> Result<()> {
    if masses.is_empty() {
        return Err(EstimatorError::Dimension("no masses".into()));
    }
    if n == 0 || !(z > 0.0 && z.is_finite()) {
        return Err(EstimatorError::Domain(format!("needs z > 0, n ≥ 1; got z = {z}, n = {n}")));
    }
    if let Some(&bad) = masses.iter().find(|&&p| !(p > 0.0 && p <= z)) {
        return Err(EstimatorError::Domain(format!("mass {bad} outside (0, z = {z}]")));
    }
    Ok(())
}

/// Covariance of the vector `c/N`:
/// `N⁻¹ (δ_ij (p_i/Z)(1 − p_i/Z) − (1 − δ_ij) p_i p_j / Z²)`.
pub fn cov_matrix_blue(masses: &[f64], z: f64, n: u64) -> Result<Matrix> {
    check_masses(masses, z, n)?;
    let nf = n as f64;
    let mut out = Matrix::zeros(masses.len());
    for (i, &pi) in masses.iter().enumerate() {
        for (j, &pj) in masses.iter().enumerate() {
            let (xi, xj) = (pi / z, pj / z);
            let value = if i == j {
                xi * (1.0 - xi) / nf
            } else {
                -xi * xj / nf
            };
            out.set(i, j, value);
        }
    }
    Ok(out)
}

/// Covariance of the vector `w/Z` with `Z` known:
/// diagonal `(p_i/Z)² (1/q_i − 1)`, off-diagonal
/// `−(p_i p_j / Z²)/(q_i q_j) · ((1 − p_i/Z − p_j/Z + p_i p_j/Z²)^N − (1 − p_i/Z − p_j/Z)^N)`.
pub fn cov_matrix_new(masses: &[f64], z: f64, n: u64) -> Result<Matrix> {
    cov_matrix_new_signed(masses, z, n, 1.0)
}

/// [`cov_matrix_new`] with the off-diagonal sign multiplied by `offdiag_sign`.
/// Only the verification negative control uses a sign other than `1`.
#[doc(hidden)]
pub fn cov_matrix_new_signed(masses: &[f64], z: f64, n: u64, offdiag_sign: f64) -> Result<Matrix> {
    check_masses(masses, z, n)?;
    let q: Vec<f64> = masses
        .iter()
        .map(|&p| inclusion_prob(p, z, n))
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros(masses.len());
    for (i, &pi) in masses.iter().enumerate() {
        let xi = pi / z;
        out.set(i, i, xi * xi * pow1m(xi, n) / q[i]);
        for (j, &pj) in masses.iter().enumerate().skip(i + 1) {
            let xj = pj / z;
            let value = -offdiag_sign * (xi * xj / (q[i] * q[j])) * joint_absence_gap(xi, xj, n);
            out.set(i, j, value);
            out.set(j, i, value);
        }
    }
    Ok(out)
}

/// `(1 − x − y + xy)^N − (1 − x − y)^N`. With `a = (1 − x)(1 − y)` this is
/// `a^N (1 − (1 − xy/a)^N)`, which never forms `1 − x − y`: that difference is pure
/// rounding residue when the two points carry almost all the mass.
fn joint_absence_gap(x: f64, y: f64, n: u64) -> f64 {
    let log_a = (-x).ln_1p() + (-y).ln_1p();
    if log_a == f64::NEG_INFINITY {
        return 0.0;
    }
    let r = (x * y / log_a.exp()).min(1.0);
    (n as f64 * log_a).exp() * -(n as f64 * (-r).ln_1p()).exp_m1()
}

/// Whether `z` was supplied before sampling or solved from the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMode {
    KnownZ,
    SolvedZ,
}

/// Both estimates of one sample with per-point diagonal variance diagnostics.
/// Serializes to a flat JSON object; undefined estimates serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub mode: ZMode,
    pub case: BoundaryCase,
    pub z_used: ZValue,
    pub method: Option<Method>,
    pub iterations: usize,
    pub residual: f64,
    pub n_draws: u64,
    pub n_distinct: u64,
    pub n_singletons: u64,
    pub mass_on_sample: f64,
    pub fbar_new: Option<f64>,
    pub fbar_blue: Option<f64>,
    pub per_point_var_new: BTreeMap<String, f64>,
    pub per_point_var_blue: BTreeMap<String, f64>,
}

impl EstimateReport {
    /// Report for a solved sample. Per-point variances are filled in only when the
    /// solved `z` is finite.
    pub fn solved(table: &MassTable, solution: &ZSolution) -> Self {
        let summary = &solution.summary;
        let (var_new, var_blue) = match solution.z.finite() {
            Some(z) => per_point_variances(table, z).unwrap_or_default(),
            None => Default::default(),
        };
        Self {
            mode: ZMode::SolvedZ,
            case: solution.case,
            z_used: solution.z,
            method: Some(solution.method),
            iterations: solution.iterations,
            residual: solution.residual,
            n_draws: summary.n_draws,
            n_distinct: summary.n_distinct,
            n_singletons: summary.n_singletons,
            mass_on_sample: summary.mass_on_sample,
            fbar_new: estimate_new(table, solution),
            fbar_blue: estimate_blue(table),
            per_point_var_new: var_new,
            per_point_var_blue: var_blue,
        }
    }

    /// Report at a `z` known in advance; every point must satisfy `mass ≤ z`.
    pub fn known_z(table: &MassTable, z: f64) -> Result<Self> {
        let summary = table.summarize();
        let (fbar_new, (var_new, var_blue)) = if table.is_empty() {
            (None, Default::default())
        } else {
            (
                Some(estimate_known_z(table, z)?),
                per_point_variances(table, z)?,
            )
        };
        Ok(Self {
            mode: ZMode::KnownZ,
            case: crate::zsolver::classify(&summary),
            z_used: ZValue::Finite(z),
            method: None,
            iterations: 0,
            residual: 0.0,
            n_draws: summary.n_draws,
            n_distinct: summary.n_distinct,
            n_singletons: summary.n_singletons,
            mass_on_sample: summary.mass_on_sample,
            fbar_new,
            fbar_blue: estimate_blue(table),
            per_point_var_new: var_new,
            per_point_var_blue: var_blue,
        })
    }
}

type VarianceMaps = (BTreeMap<String, f64>, BTreeMap<String, f64>);

fn per_point_variances(table: &MassTable, z: f64) -> Result<VarianceMaps> {
    let n = table.n_draws();
    let mut var_new = BTreeMap::new();
    let mut var_blue = BTreeMap::new();
    for (key, e) in table {
        var_new.insert(key.to_hex(), var_diag_new(e.mass, z, n)?);
        var_blue.insert(key.to_hex(), var_diag_blue(e.mass, z, n)?);
    }
    Ok((var_new, var_blue))
}
