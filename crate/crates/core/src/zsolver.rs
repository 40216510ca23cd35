//! The normalization constant.
//!
//! Requiring the estimator to be exact on the constant function gives the fixpoint
//! equation `Z = φ(Z)` with
//!
//! ```text
//! φ(Z) = Σ_{i∈S} p(i) / (1 − (1 − p(i)/Z)^N).
//! ```
//!
//! On `P(S) ≤ Z` the map is increasing and strictly convex, `φ(P(S)) > P(S)` and
//! `φ(Z)/Z → M/N`, so in the main case `2 ≤ M < N` it has a unique fixpoint which
//! Picard, secant and Newton iteration all reach. The four degenerate samples
//! (no data, one draw, one distinct point, all points distinct) have closed answers
//! and are reported through [`BoundaryCase`] rather than iterated.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::count_table::{MassTable, SampleSummary};
use crate::numeric::{one_minus_pow1m, pow1m, CompensatedSum};

/// Relative tolerance on both the step and the residual `|φ(z) − z| / z`.
pub const TOLERANCE: f64 = 1e-12;

/// Iteration cap of the fixpoint solver.
pub const MAX_ITERATIONS: usize = 200;

/// Ratio between the two starting points of the secant method.
pub const SECANT_SECOND_POINT: f64 = 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations (z = {z}, residual = {residual:e})")]
    NoConvergence {
        iterations: usize,
        z: f64,
        residual: f64,
    },
}

pub type Result<T> = std::result::Result<T, SolveError>;

/// Classification of a sample by `(N, M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryCase {
    /// `N = 0`.
    Empty,
    /// `N = 1`: `Z` is undetermined beyond `Z ≥ P(S)`.
    SingleDraw,
    /// `M = 1`, `N ≥ 2`: the fixpoint is `Z = P(S)`.
    Concentrated,
    /// `M = N ≥ 2`: the iteration diverges and the sample average is recovered.
    AllDistinct,
    /// `2 ≤ M < N`.
    Regular,
}

impl fmt::Display for BoundaryCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub fn classify(summary: &SampleSummary) -> BoundaryCase {
    match (summary.n_draws, summary.n_distinct) {
        (0, _) => BoundaryCase::Empty,
        (1, _) => BoundaryCase::SingleDraw,
        (_, 1) => BoundaryCase::Concentrated,
        (n, m) if m == n => BoundaryCase::AllDistinct,
        _ => BoundaryCase::Regular,
    }
}

/// Value of the normalization constant, with the non-finite outcomes kept apart from
/// floating-point infinities so that they cannot leak into arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZValue {
    /// No data.
    Zero,
    Finite(f64),
    /// Unbounded (`Z → ∞`).
    Unbounded,
    /// Any value `≥ P(S)` is consistent with the data.
    Undetermined,
}

impl ZValue {
    pub fn finite(&self) -> Option<f64> {
        match *self {
            ZValue::Finite(z) => Some(z),
            _ => None,
        }
    }
}

impl fmt::Display for ZValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZValue::Zero => f.write_str("0"),
            ZValue::Finite(z) => write!(f, "{z}"),
            ZValue::Unbounded => f.write_str("+inf"),
            ZValue::Undetermined => f.write_str("undetermined"),
        }
    }
}

/// Serialized as a number when finite, otherwise as one of the strings
/// `"zero"`, `"+inf"`, `"undetermined"`.
impl Serialize for ZValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            ZValue::Finite(z) => s.serialize_f64(z),
            ZValue::Zero => s.serialize_str("zero"),
            ZValue::Unbounded => s.serialize_str("+inf"),
            ZValue::Undetermined => s.serialize_str("undetermined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Fixpoint iteration `z ← φ(z)` with Aitken Δ² extrapolation.
    Picard,
    Secant,
    #[default]
    Newton,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Picard, Method::Secant, Method::Newton];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Picard => "picard",
            Method::Secant => "secant",
            Method::Newton => "newton",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "picard" => Ok(Method::Picard),
            "secant" => Ok(Method::Secant),
            "newton" => Ok(Method::Newton),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// Starting point of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    /// `Z₀ = P(S) / (1 − M′/N)`.
    #[default]
    GoodTuring,
    /// `Z₀ = P(S)`.
    MassOnSample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    pub init: InitialGuess,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::Newton,
            init: InitialGuess::GoodTuring,
            tolerance: TOLERANCE,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

impl SolverOptions {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub z: f64,
    pub phi: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZSolution {
    pub z: ZValue,
    pub case: BoundaryCase,
    pub iterations: usize,
    pub method: Method,
    /// `|φ(z) − z| / z` at exit; zero for the closed-form cases.
    pub residual: f64,
    pub summary: SampleSummary,
    /// Row 0 is the starting point; empty for the closed-form cases.
    pub trace: Vec<IterationRecord>,
}

/// The map `φ` of a particular sample, with the masses laid out once.
#[derive(Debug, Clone)]
pub struct FixpointMap {
    masses: Vec<f64>,
    n_draws: u64,
    mass_on_sample: f64,
}

impl FixpointMap {
    pub fn new(table: &MassTable) -> Self {
        Self {
            masses: table.values().map(|e| e.mass).collect(),
            n_draws: table.n_draws(),
            mass_on_sample: table.mass_on_sample(),
        }
    }

    pub fn mass_on_sample(&self) -> f64 {
        self.mass_on_sample
    }

    fn check(&self, z: f64) -> Result<()> {
        if self.n_draws == 0 {
            return Err(SolveError::Domain("φ needs at least one draw".into()));
        }
        if !(z.is_finite() && z >= self.mass_on_sample) {
            return Err(SolveError::Domain(format!(
                "z = {z} outside [P(S), ∞) with P(S) = {}",
                self.mass_on_sample
            )));
        }
        Ok(())
    }

    /// `φ(z)`.
    pub fn value(&self, z: f64) -> Result<f64> {
        self.check(z)?;
        Ok(self.value_unchecked(z))
    }

    fn value_unchecked(&self, z: f64) -> f64 {
        let n = self.n_draws;
        let mut acc = CompensatedSum::new();
        for &p in &self.masses {
            acc.add(p / one_minus_pow1m(p / z, n));
        }
        acc.value()
    }

    /// `φ′(z) = Σ N (p/z)² (1 − p/z)^{N−1} / q²`.
    pub fn derivative(&self, z: f64) -> Result<f64> {
        self.check(z)?;
        Ok(self.derivative_unchecked(z))
    }

    fn derivative_unchecked(&self, z: f64) -> f64 {
        let n = self.n_draws;
        let mut acc = CompensatedSum::new();
        for &p in &self.masses {
            let x = p / z;
            let q = one_minus_pow1m(x, n);
            acc.add(n as f64 * x * x * pow1m(x, n - 1) / (q * q));
        }
        acc.value()
    }
}

/// `φ(z)` for the sample in `table`.
pub fn phi(z: f64, table: &MassTable) -> Result<f64> {
    FixpointMap::new(table).value(z)
}

/// `dφ/dz`; requires `z > P(S)`.
pub fn phi_prime(z: f64, table: &MassTable) -> Result<f64> {
    let map = FixpointMap::new(table);
    if z <= map.mass_on_sample {
        return Err(SolveError::Domain(format!(
            "φ′ needs z > P(S) = {}, got {z}",
            map.mass_on_sample
        )));
    }
    map.derivative(z)
}

/// Good-Turing starting point: the missing mass `1 − P(S)/Z` is estimated by `M′/N`.
pub fn good_turing_init(summary: &SampleSummary) -> ZValue {
    let n = summary.n_draws;
    let singletons = summary.n_singletons;
    if n == 0 {
        ZValue::Zero
    } else if singletons >= n {
        ZValue::Unbounded
    } else {
        ZValue::Finite(summary.mass_on_sample * n as f64 / (n - singletons) as f64)
    }
}

/// Solves for `Z` with the default options for `method`.
pub fn solve_z(table: &MassTable, method: Method) -> Result<ZSolution> {
    solve_z_with(table, &SolverOptions::with_method(method))
}

pub fn solve_z_with(table: &MassTable, options: &SolverOptions) -> Result<ZSolution> {
    let summary = table.summarize();
    let case = classify(&summary);
    let closed = |z| ZSolution {
        z,
        case,
        iterations: 0,
        method: options.method,
        residual: 0.0,
        summary,
        trace: Vec::new(),
    };
    match case {
        BoundaryCase::Empty => Ok(closed(ZValue::Zero)),
        BoundaryCase::SingleDraw => Ok(closed(ZValue::Undetermined)),
        BoundaryCase::Concentrated => Ok(closed(ZValue::Finite(summary.mass_on_sample))),
        BoundaryCase::AllDistinct => Ok(closed(ZValue::Unbounded)),
        BoundaryCase::Regular => {
            let map = FixpointMap::new(table);
            let start = match options.init {
                InitialGuess::GoodTuring => good_turing_init(&summary)
                    .finite()
                    .unwrap_or(summary.mass_on_sample),
                InitialGuess::MassOnSample => summary.mass_on_sample,
            }
            .max(summary.mass_on_sample);
            let (z, iterations, residual, trace) = iterate(&map, start, options)?;
            Ok(ZSolution {
                z: ZValue::Finite(z),
                case,
                iterations,
                method: options.method,
                residual,
                summary,
                trace,
            })
        }
    }
}

/// Root bracket of `g(z) = φ(z) − z`: `g(lo) > 0 > g(hi)`.
struct Bracket {
    lo: f64,
    hi: f64,
}

impl Bracket {
    fn update(&mut self, z: f64, g: f64) {
        if g > 0.0 {
            self.lo = self.lo.max(z);
        } else if g < 0.0 {
            self.hi = self.hi.min(z);
        }
    }

    fn contains(&self, z: f64) -> bool {
        z > self.lo && z < self.hi
    }

    fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

fn iterate(
    map: &FixpointMap,
    start: f64,
    options: &SolverOptions,
) -> Result<(f64, usize, f64, Vec<IterationRecord>)> {
    let tol = options.tolerance;
    let ps = map.mass_on_sample;

    // φ(P(S)) > P(S) whenever M ≥ 2; find the upper end by doubling.
    let mut bracket = Bracket {
        lo: ps,
        hi: f64::INFINITY,
    };
    let mut z = start;
    let mut phi_z = map.value_unchecked(z);
    bracket.update(z, phi_z - z);
    let mut probe = z;
    while !bracket.hi.is_finite() {
        probe *= 2.0;
        if !probe.is_finite() {
            return Err(SolveError::NoConvergence {
                iterations: 0,
                z: probe,
                residual: f64::NAN,
            });
        }
        let phi_probe = map.value_unchecked(probe);
        bracket.update(probe, phi_probe - probe);
    }

    let mut trace = vec![IterationRecord {
        k: 0,
        z,
        phi: phi_z,
        residual: (phi_z - z).abs() / z,
    }];
    let mut prev: Option<(f64, f64)> = None;
    let mut prev_step = f64::INFINITY;

    for k in 1..=options.max_iterations {
        let g = phi_z - z;
        let candidate = match options.method {
            Method::Newton => {
                let slope = map.derivative_unchecked(z) - 1.0;
                if slope < 0.0 {
                    z - g / slope
                } else {
                    f64::NAN
                }
            }
            Method::Secant => {
                let (z_prev, g_prev) = match prev {
                    Some(p) => p,
                    None => {
                        let z1 = SECANT_SECOND_POINT * z;
                        let g1 = map.value_unchecked(z1) - z1;
                        bracket.update(z1, g1);
                        (z1, g1)
                    }
                };
                if g != g_prev {
                    z - g * (z - z_prev) / (g - g_prev)
                } else {
                    f64::NAN
                }
            }
            Method::Picard => {
                // z1 = φ(z) is already known; extrapolate from z, z1, φ(z1).
                let z1 = phi_z;
                if bracket.contains(z1) || z1 == bracket.lo || z1 == bracket.hi {
                    let z2 = map.value_unchecked(z1);
                    bracket.update(z1, z2 - z1);
                    let denom = z2 - 2.0 * z1 + z;
                    let aitken = if denom != 0.0 {
                        z - (z1 - z) * (z1 - z) / denom
                    } else {
                        f64::NAN
                    };
                    if bracket.contains(aitken) {
                        aitken
                    } else {
                        z2
                    }
                } else {
                    f64::NAN
                }
            }
        };
        let next = if bracket.contains(candidate) {
            candidate
        } else {
            bracket.midpoint()
        };

        let phi_next = map.value_unchecked(next);
        let g_next = phi_next - next;
        bracket.update(next, g_next);
        let step = (next - z).abs() / next;
        let residual = g_next.abs() / next;
        trace.push(IterationRecord {
            k,
            z: next,
            phi: phi_next,
            residual,
        });

        prev = Some((z, g));
        z = next;
        phi_z = phi_next;

        let collapsed = bracket.hi - bracket.lo <= tol * z;
        // Once the residual is at tolerance, a step that stops shrinking means the
        // iteration is moving within the rounding noise of φ.
        let noise_floor = step >= prev_step;
        if residual <= tol && (g_next == 0.0 || step <= tol || collapsed || noise_floor) {
            return Ok((z, k, residual, trace));
        }
        prev_step = step;
    }

    Err(SolveError::NoConvergence {
        iterations: options.max_iterations,
        z,
        residual: (phi_z - z).abs() / z,
    })
}

/// `ψ(t) = 1 / (1 − (1 − t/N)^N)` on `0 < t ≤ N`; each term of `φ` is
/// `p ψ(N p / Z)`.
pub fn psi(t: f64, n: u64) -> Result<f64> {
    check_psi_domain(t, n)?;
    Ok(1.0 / one_minus_pow1m(t / n as f64, n))
}

/// `ψ′(t) = −(1 − t/N)^{N−1} ψ(t)²`.
pub fn psi_prime(t: f64, n: u64) -> Result<f64> {
    let s = psi(t, n)?;
    Ok(-pow1m(t / n as f64, n - 1) * s * s)
}

/// Factorized form of `t² (t² ψ′(t))′`:
///
/// ```text
/// t³ · (−ψ′) · ψ · (1 − t/N)^{−1} · (2 + t − t/N) · [(1 − t/N)^N − (2 − t − t/N)/(2 + t − t/N)]
/// ```
///
/// The pole of `(1 − t/N)^{−1}` at `t = N` cancels against `ψ′`.
pub fn psi_curvature(t: f64, n: u64) -> Result<f64> {
    let s = psi(t, n)?;
    if n == 1 {
        // ψ = 1/t, and the bracketed factor vanishes identically.
        return Ok(0.0);
    }
    let nf = n as f64;
    let neg_psi_prime_over = pow1m(t / nf, n - 2) * s * s;
    Ok(t.powi(3) * neg_psi_prime_over * s * (2.0 + t - t / nf) * pade_error_factor(t, n)?)
}

/// `(1 − t/N)^N − (2 − t − t/N) / (2 + t − t/N)`, positive for `0 < t < N`, `N ≥ 2`.
pub fn pade_error_factor(t: f64, n: u64) -> Result<f64> {
    if n == 0 || !(0.0..=n as f64).contains(&t) {
        return Err(SolveError::Domain(format!("t = {t} outside [0, {n}]")));
    }
    let nf = n as f64;
    Ok(pow1m(t / nf, n) - (2.0 - t - t / nf) / (2.0 + t - t / nf))
}

/// `η(t) = 1 / (1 − e^{−t})`, the `N → ∞` limit of `ψ`.
pub fn eta(t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(SolveError::Domain(format!("η needs t > 0, got {t}")));
    }
    Ok(-1.0 / (-t).exp_m1())
}

/// `η′(t) = −e^{−t} η(t)²`.
pub fn eta_prime(t: f64) -> Result<f64> {
    let e = eta(t)?;
    Ok(-(-t).exp() * e * e)
}

/// Factorized form of `t² (t² η′(t))′`:
/// `t³ · e^{−t} η(t)³ · (2 + t) · (e^{−t} − (1 − t/2)/(1 + t/2))`.
pub fn eta_curvature(t: f64) -> Result<f64> {
    let e = eta(t)?;
    let decay = (-t).exp();
    let pade = decay - (1.0 - t / 2.0) / (1.0 + t / 2.0);
    Ok(t.powi(3) * decay * e.powi(3) * (2.0 + t) * pade)
}

fn check_psi_domain(t: f64, n: u64) -> Result<()> {
    if n == 0 || !(t > 0.0 && t <= n as f64) {
        return Err(SolveError::Domain(format!("ψ needs 0 < t ≤ {n}, got {t}")));
    }
    Ok(())
}
