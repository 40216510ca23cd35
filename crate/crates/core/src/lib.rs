//! `massweight`: linear unbiased estimation of averages over discrete distributions
//! when the (possibly unnormalized) mass of every sampled point is known.
//!
//! Given `N` i.i.d. draws from `p / Z`, the classical sample average `N⁻¹ Σ c(i) f(i)`
//! ignores the masses `p(i)`. When they are available, each distinct sampled point
//! can instead be weighted by `w(i) = p(i) / q(i)`, where
//! `q(i) = 1 − (1 − p(i)/Z)^N` is its inclusion probability. `w` is an unbiased
//! estimate of `p`, and `Z⁻¹ Σ w(i) f(i)` is an unbiased estimate of the average of `f`
//! whose per-point variance is never larger than that of the sample average, and
//! vanishes exponentially on points that are expected to be sampled many times.
//!
//! The normalization constant `Z` is usually unknown; it is recovered from the sample
//! as the fixpoint of `Z = Σ_{i∈S} p(i) / q(i; Z)`, i.e. by requiring the estimator to
//! be exact on constants.
//!
//! ## Modules
//!
//! - [`count_table`]: deduplicated accumulation of `(key, mass, f)` draws.
//! - [`zsolver`]: boundary-case classification and the fixpoint solver for `Z`.
//! - [`estimator`]: weights, both estimates and the closed-form covariance diagnostics.
//! - [`oracle`]: exact enumeration over small domains and seeded Monte Carlo replication.
//! - [`synthetic`]: heavy-tailed test distribution on a 96-bit integer domain.
//!
//! ## Quick example
//!
//! ```
//! use massweight::count_table::{MassTable, SampleRecord};
//! use massweight::estimator::{estimate_blue, estimate_new};
//! use massweight::zsolver::{solve_z, Method};
//!
//! let mut table = MassTable::new();
//! for (key, f) in [("0a", 1.0), ("0a", 1.0), ("0b", 3.0)] {
//!     table.insert(SampleRecord::from_hex(key, 1.0, f).unwrap()).unwrap();
//! }
//! let solution = solve_z(&table, Method::Newton).unwrap();
//! let z = solution.z.finite().unwrap();
//! assert!((z - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
//!
//! let fbar = estimate_new(&table, &solution).unwrap();
//! assert!((fbar - 2.0).abs() < 1e-12);
//! assert!((estimate_blue(&table).unwrap() - 5.0 / 3.0).abs() < 1e-15);
//! ```

#![forbid(unsafe_code)]

pub mod count_table;
pub mod estimator;
pub mod numeric;
pub mod oracle;
pub mod synthetic;
pub mod zsolver;

pub use count_table::{Key, MassTable, SampleRecord, SampleSummary, TableError};
pub use estimator::{EstimateReport, EstimatorError};
pub use zsolver::{BoundaryCase, Method, SolveError, ZSolution, ZValue};
