//! Brute-force verification.
//!
//! On a small explicit domain every count vector `c` with `Σ c = N` is enumerated with
//! its multinomial probability `N!/c! · Π (p_i/Z)^{c_i}`, which gives exact means and
//! covariances of the per-point estimator vectors. Larger regimes are covered by
//! seeded Monte Carlo replication, which is deterministic in `(seed, replicates, N)`
//! whatever the number of worker threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::count_table::{Key, MassTable, SampleRecord, TableError};
use crate::estimator::{
    cov_matrix_blue, cov_matrix_new_signed, estimate_blue, estimate_new, inclusion_prob,
    EstimatorError, Matrix,
};
use crate::numeric::{fmt17, sum_compensated};
use crate::zsolver::{solve_z, BoundaryCase, Method, SolveError, ZValue};

/// Largest explicit domain accepted for enumeration.
pub const MAX_DOMAIN_SIZE: usize = 12;

/// Largest number of count vectors enumerated.
pub const MAX_COMPOSITIONS: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{count} count vectors exceed the enumeration cap of {cap}")]
    TooLarge { count: u128, cap: u128 },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error(transparent)]
    Solve(#[from] SolveError),

    #[error(transparent)]
    Table(#[from] TableError),

    #[error(transparent)]
    Estimator(#[from] EstimatorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// A fully specified finite distribution: masses and values of every point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplicitDomain {
    masses: Vec<f64>,
    fvalues: Vec<f64>,
    z: f64,
}

impl ExplicitDomain {
    pub fn new(masses: Vec<f64>, fvalues: Vec<f64>) -> Result<Self> {
        if masses.is_empty() || masses.len() > MAX_DOMAIN_SIZE {
            return Err(OracleError::InvalidDomain(format!(
                "size {} outside 1..={MAX_DOMAIN_SIZE}",
                masses.len()
            )));
        }
        if masses.len() != fvalues.len() {
            return Err(OracleError::InvalidDomain(format!(
                "{} masses but {} values",
                masses.len(),
                fvalues.len()
            )));
        }
        if let Some(bad) = masses.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(OracleError::InvalidDomain(format!("mass {bad} is not positive")));
        }
        if let Some(bad) = fvalues.iter().find(|f| !f.is_finite()) {
            return Err(OracleError::InvalidDomain(format!("value {bad} is not finite")));
        }
        let z = sum_compensated(masses.iter().copied());
        Ok(Self { masses, fvalues, z })
    }

    /// Domain with `f ≡ 0`, for moment computations that do not need values.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        let n = masses.len();
        Self::new(masses, vec![0.0; n])
    }

    /// `size` points with masses log-uniform in `[lo, hi]` and values uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, size: usize, lo: f64, hi: f64) -> Result<Self> {
        let (llo, lhi) = (lo.ln(), hi.ln());
        let masses = (0..size)
            .map(|_| (llo + (lhi - llo) * rng.random::<f64>()).exp())
            .collect();
        let fvalues = (0..size).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        Self::new(masses, fvalues)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn fvalues(&self) -> &[f64] {
        &self.fvalues
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    fn key(index: usize) -> Key {
        Key::from_uint(index as u128, 4).expect("index fits in four bytes")
    }

    /// The sample table of an outcome.
    pub fn table_for(&self, counts: &[u32]) -> Result<MassTable> {
        let mut table = MassTable::new();
        for (i, &c) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            let record = SampleRecord::new(Self::key(i), self.masses[i], self.fvalues[i])?;
            table.insert_counted(record, c as u64)?;
        }
        Ok(table)
    }
}

/// One count vector and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub counts: Vec<u32>,
    pub probability: f64,
}

/// `C(n + k − 1, k − 1)`, saturating.
pub fn composition_count(k: usize, n: u64) -> u128 {
    if k == 0 {
        return if n == 0 { 1 } else { 0 };
    }
    let (top, r) = (n as u128 + k as u128 - 1, (k - 1) as u128);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = match acc.checked_mul(top - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Every count vector with `Σ c = n`, in lexicographically decreasing order of the
/// first coordinate.
pub fn enumerate_counts(domain: &ExplicitDomain, n: u64) -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    for_each_outcome(domain, n, |counts, probability| {
        out.push(Outcome {
            counts: counts.to_vec(),
            probability,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Visits every count vector with its probability.
pub fn for_each_outcome<F>(domain: &ExplicitDomain, n: u64, mut visit: F) -> Result<()>
where
    F: FnMut(&[u32], f64) -> Result<()>,
{
    let k = domain.len();
    let count = composition_count(k, n);
    if count > MAX_COMPOSITIONS {
        return Err(OracleError::TooLarge {
            count,
            cap: MAX_COMPOSITIONS,
        });
    }
    let probs: Vec<f64> = domain.masses.iter().map(|p| p / domain.z).collect();
    let ln_probs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let ln_fact = ln_factorials(n);
    let mut counts = vec![0u32; k];

    let probability = |counts: &[u32]| -> f64 {
        if n <= 33 {
            // Exact integer coefficient; 34! is the largest factorial below u128::MAX.
            let coef = factorial(n) / counts.iter().map(|&c| factorial(c as u64)).product::<u128>();
            let mut p = coef as f64;
            for (&c, &pi) in counts.iter().zip(&probs) {
                p *= pi.powi(c as i32);
            }
            p
        } else {
            let mut lp = ln_fact[n as usize];
            for (&c, &lpi) in counts.iter().zip(&ln_probs) {
                lp += c as f64 * lpi - ln_fact[c as usize];
            }
            lp.exp()
        }
    };

    fn recurse<F, P>(
        idx: usize,
        remaining: u64,
        counts: &mut [u32],
        probability: &P,
        visit: &mut F,
    ) -> Result<()>
    where
        F: FnMut(&[u32], f64) -> Result<()>,
        P: Fn(&[u32]) -> f64,
    {
        if idx + 1 == counts.len() {
            counts[idx] = remaining as u32;
            let p = probability(counts);
            return visit(counts, p);
        }
        for c in (0..=remaining).rev() {
            counts[idx] = c as u32;
            recurse(idx + 1, remaining - c, counts, probability, visit)?;
        }
        counts[idx] = 0;
        Ok(())
    }

    recurse(0, n, &mut counts, &probability, &mut visit)
}

fn factorial(n: u64) -> u128 {
    (1..=n as u128).product()
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// Which per-point estimator vector the moments describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// `c(i)/N`.
    Blue,
    /// `w(i)/Z` with the true `Z`.
    NewKnownZ,
    /// `w(i)/ẑ` with `ẑ` solved per outcome, including the closed-form fallbacks.
    NewSolvedZ,
}

/// Exact mean and covariance of a per-point estimator vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactMoments {
    pub kind: EstimatorKind,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub total_probability: f64,
}

impl ExactMoments {
    /// Mean of the estimate of `Σ p f / Z`.
    pub fn mean_of(&self, f: &[f64]) -> f64 {
        sum_compensated(self.mean.iter().zip(f).map(|(m, f)| m * f))
    }

    /// Variance of the estimate of `Σ p f / Z`.
    pub fn variance_of(&self, f: &[f64]) -> f64 {
        self.covariance.quadratic_form(f)
    }
}

/// The per-point estimator vector `v` of one outcome, so that the estimate of the
/// average of `f` is `vᵀ f`.
pub fn estimator_vector(
    domain: &ExplicitDomain,
    counts: &[u32],
    kind: EstimatorKind,
) -> Result<Vec<f64>> {
    let n: u64 = counts.iter().map(|&c| c as u64).sum();
    let k = domain.len();
    let mut v = vec![0.0; k];
    match kind {
        EstimatorKind::Blue => {
            for (vi, &c) in v.iter_mut().zip(counts) {
                *vi = c as f64 / n as f64;
            }
        }
        EstimatorKind::NewKnownZ => {
            let z = domain.z;
            for i in (0..k).filter(|&i| counts[i] > 0) {
                let p = domain.masses[i];
                v[i] = p / inclusion_prob(p, z, n)? / z;
            }
        }
        EstimatorKind::NewSolvedZ => {
            let table = domain.table_for(counts)?;
            let solution = solve_z(&table, Method::Newton)?;
            match solution.case {
                BoundaryCase::Empty => {}
                BoundaryCase::SingleDraw | BoundaryCase::Concentrated => {
                    let i = counts.iter().position(|&c| c > 0).expect("one point drawn");
                    v[i] = 1.0;
                }
                BoundaryCase::AllDistinct => {
                    for (vi, &c) in v.iter_mut().zip(counts) {
                        *vi = c as f64 / n as f64;
                    }
                }
                BoundaryCase::Regular => {
                    let z = solution.z.finite().expect("regular case has finite z");
                    for i in (0..k).filter(|&i| counts[i] > 0) {
                        let p = domain.masses[i];
                        v[i] = p / inclusion_prob(p, z, n)? / z;
                    }
                }
            }
        }
    }
    Ok(v)
}

/// Exact moments by summation over every outcome (weighted Welford update).
pub fn exact_moments(domain: &ExplicitDomain, n: u64, kind: EstimatorKind) -> Result<ExactMoments> {
    if n == 0 {
        return Err(OracleError::InvalidOptions("n must be at least 1".into()));
    }
    let k = domain.len();
    let mut total = 0.0;
    let mut mean = vec![0.0; k];
    let mut comoment = vec![0.0; k * k];
    let mut delta = vec![0.0; k];
    for_each_outcome(domain, n, |counts, prob| {
        if prob == 0.0 {
            return Ok(());
        }
        let v = estimator_vector(domain, counts, kind)?;
        total += prob;
        let ratio = prob / total;
        for i in 0..k {
            delta[i] = v[i] - mean[i];
            mean[i] += ratio * delta[i];
        }
        for i in 0..k {
            for j in 0..k {
                comoment[i * k + j] += prob * delta[i] * (v[j] - mean[j]);
            }
        }
        Ok(())
    })?;

    let mut covariance = Matrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            // symmetrize the accumulated rounding
            let c = 0.5 * (comoment[i * k + j] + comoment[j * k + i]) / total;
            covariance.set(i, j, c);
        }
    }
    Ok(ExactMoments {
        kind,
        mean,
        covariance,
        total_probability: total,
    })
}

/// Largest entrywise gaps between enumeration and the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormulaCheck {
    pub blue_mean: f64,
    pub blue_cov: f64,
    pub new_mean: f64,
    pub new_cov: f64,
}

impl FormulaCheck {
    pub fn worst(&self) -> f64 {
        self.blue_mean
            .max(self.blue_cov)
            .max(self.new_mean)
            .max(self.new_cov)
    }
}

/// Compares exact moments with the closed-form means (`p/Z` for both estimators) and
/// covariances. `offdiag_sign` flips the new-estimator off-diagonal closed form for
/// negative-control runs; pass `1.0` otherwise.
pub fn check_formulas(domain: &ExplicitDomain, n: u64, offdiag_sign: f64) -> Result<FormulaCheck> {
    let z = domain.z;
    let target: Vec<f64> = domain.masses.iter().map(|p| p / z).collect();
    let mean_gap = |m: &ExactMoments| {
        m.mean
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let blue = exact_moments(domain, n, EstimatorKind::Blue)?;
    let new = exact_moments(domain, n, EstimatorKind::NewKnownZ)?;
    Ok(FormulaCheck {
        blue_mean: mean_gap(&blue),
        blue_cov: blue
            .covariance
            .max_abs_diff(&cov_matrix_blue(&domain.masses, z, n)?),
        new_mean: mean_gap(&new),
        new_cov: new
            .covariance
            .max_abs_diff(&cov_matrix_new_signed(&domain.masses, z, n, offdiag_sign)?),
    })
}

/// Largest entrywise difference between the known-`Z` and solved-`Z` covariances.
pub fn solved_z_covariance_gap(domain: &ExplicitDomain, n: u64) -> Result<f64> {
    let known = exact_moments(domain, n, EstimatorKind::NewKnownZ)?;
    let solved = exact_moments(domain, n, EstimatorKind::NewSolvedZ)?;
    Ok(known.covariance.max_abs_diff(&solved.covariance))
}

/// Writes one row per outcome: counts, probability and both final estimates
/// (the mass-aware one with `Z` solved from the outcome).
pub fn write_outcomes_csv<W: Write>(domain: &ExplicitDomain, n: u64, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["outcome", "probability", "estimate_blue", "estimate_new"])
        .map_err(csv_io)?;
    for_each_outcome(domain, n, |counts, prob| {
        let table = domain.table_for(counts)?;
        let solution = solve_z(&table, Method::Newton)?;
        let blue = estimate_blue(&table).unwrap_or(f64::NAN);
        let new = estimate_new(&table, &solution).unwrap_or(f64::NAN);
        let outcome = counts
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(";");
        wtr.write_record([outcome, fmt17(prob), fmt17(blue), fmt17(new)])
            .map_err(csv_io)?;
        Ok(())
    })?;
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> OracleError {
    OracleError::Io(std::io::Error::other(e))
}

/// Anything that can produce i.i.d. draws.
pub trait PointSource: Sync {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleRecord;
}

impl PointSource for ExplicitDomain {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleRecord {
        let target = rng.random::<f64>() * self.z;
        let mut acc = 0.0;
        let mut index = self.masses.len() - 1;
        for (i, &p) in self.masses.iter().enumerate() {
            acc += p;
            if target < acc {
                index = i;
                break;
            }
        }
        SampleRecord {
            key: Self::key(index),
            mass: self.masses[index],
            fvalue: self.fvalues[index],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateOptions {
    pub n_draws: u64,
    pub replicates: u64,
    pub seed: u64,
    pub method: Method,
}

/// Final estimates of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub case: BoundaryCase,
    pub z: ZValue,
    pub n_distinct: u64,
    pub fbar_new: f64,
    pub fbar_blue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorStats {
    pub mean: f64,
    /// Unbiased sample variance across replicates.
    pub variance: f64,
    /// Standard error of the mean.
    pub std_error: f64,
}

impl EstimatorStats {
    pub fn from_values(values: &[f64]) -> Self {
        let r = values.len() as f64;
        let mean = sum_compensated(values.iter().copied()) / r;
        let variance = if values.len() > 1 {
            sum_compensated(values.iter().map(|v| (v - mean) * (v - mean))) / (r - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            std_error: (variance / r).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateSummary {
    pub replicates: u64,
    pub n_draws: u64,
    pub new: EstimatorStats,
    pub blue: EstimatorStats,
    /// `var(new) / var(blue)`; `None` when the sample-average variance is zero.
    pub variance_ratio: Option<f64>,
}

/// The generator of replicate `r`: ChaCha8 seeded from `seed`, on stream `r`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Draws one sample of `n` points from `source`.
pub fn draw_table<S: PointSource, R: Rng + ?Sized>(
    source: &S,
    n: u64,
    rng: &mut R,
) -> Result<MassTable> {
    let mut table = MassTable::new();
    for _ in 0..n {
        table.insert(source.draw(rng))?;
    }
    Ok(table)
}

/// Runs `replicates` independent samples of `n_draws` points, solving `Z` and
/// producing both estimates for each. Replicates run in parallel on the current
/// rayon pool; results are identical for any pool size.
pub fn replicate_mc<S: PointSource>(
    source: &S,
    options: &ReplicateOptions,
) -> Result<(Vec<ReplicateRecord>, ReplicateSummary)> {
    if options.replicates < 2 {
        return Err(OracleError::InvalidOptions("need at least 2 replicates".into()));
    }
    if options.n_draws == 0 {
        return Err(OracleError::InvalidOptions("need at least 1 draw".into()));
    }
    let records = (0..options.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(options.seed, r);
            let table = draw_table(source, options.n_draws, &mut rng)?;
            let solution = solve_z(&table, options.method)?;
            Ok(ReplicateRecord {
                replicate: r,
                case: solution.case,
                z: solution.z,
                n_distinct: solution.summary.n_distinct,
                fbar_new: estimate_new(&table, &solution).expect("n ≥ 1"),
                fbar_blue: estimate_blue(&table).expect("n ≥ 1"),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let new: Vec<f64> = records.iter().map(|r| r.fbar_new).collect();
    let blue: Vec<f64> = records.iter().map(|r| r.fbar_blue).collect();
    let new = EstimatorStats::from_values(&new);
    let blue = EstimatorStats::from_values(&blue);
    let summary = ReplicateSummary {
        replicates: options.replicates,
        n_draws: options.n_draws,
        new,
        blue,
        variance_ratio: (blue.variance > 0.0).then(|| new.variance / blue.variance),
    };
    Ok((records, summary))
}
