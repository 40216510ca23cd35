//! Synthetic heavy-tailed test problems.
//!
//! The domain is the 96-bit unsigned integers; key `i` stands for the real number
//! `x = i + 1/2`. Masses come from finite differences of the survival function
//! `S(x) = (1 + x/a)^{−b}`, so `p(i) = S(i) − S(i + 1)` decays like
//! `(b/a)(1 + x/a)^{−b−1}` and sums to exactly one. Keys are drawn by inverting the
//! cumulative distribution, and the test function `cos(2π m F(x))` integrates to
//! zero against the continuous density for every `m ≥ 1`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::count_table::{Key, SampleRecord};
use crate::numeric::{one_minus_pow1m, CompensatedSum};
use crate::oracle::{replicate_rng, PointSource};

/// Number of bits of the key domain.
pub const KEY_BITS: u32 = 96;

/// Width in bytes of the encoded key.
pub const KEY_BYTES: usize = 12;

/// Survival level below which brute-force reference sums stop.
pub const REFERENCE_CUTOFF: f64 = 1e-15;

/// Bound on the neglected remainder of [`expected_sampled_mass`].
pub const SAMPLED_MASS_TOL: f64 = 1e-10;

const TWO_POW_32: f64 = 4_294_967_296.0;
const EXACT_INTEGER_LIMIT: u128 = 1 << 53;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid key: {0}")]
    InvalidKey(String),
}

pub type Result<T> = std::result::Result<T, SyntheticError>;

/// A point of the 96-bit domain, stored as three 32-bit limbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WideKey(u128);

impl WideKey {
    pub const MAX: WideKey = WideKey((1u128 << KEY_BITS) - 1);

    pub fn new(value: u128) -> Result<Self> {
        if value > Self::MAX.0 {
            return Err(SyntheticError::InvalidKey(format!("{value} exceeds 96 bits")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u128 {
        self.0
    }

    /// Limbs, most significant first.
    pub fn limbs(self) -> [u32; 3] {
        [(self.0 >> 64) as u32, (self.0 >> 32) as u32, self.0 as u32]
    }

    pub fn from_limbs(limbs: [u32; 3]) -> Self {
        Self(((limbs[0] as u128) << 64) | ((limbs[1] as u128) << 32) | limbs[2] as u128)
    }

    /// The key as a float, evaluated on the limbs: `(hi · 2³² + mid) · 2³² + lo`.
    pub fn to_f64(self) -> f64 {
        let [hi, mid, lo] = self.limbs();
        (hi as f64 * TWO_POW_32 + mid as f64) * TWO_POW_32 + lo as f64
    }

    /// `x = i + 1/2`.
    pub fn midpoint(self) -> f64 {
        self.to_f64() + 0.5
    }

    /// 24 lower-case hex digits.
    pub fn to_hex(self) -> String {
        format!("{:024x}", self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 2 * KEY_BYTES {
            return Err(SyntheticError::InvalidKey(format!(
                "{s:?} is not {} hex digits",
                2 * KEY_BYTES
            )));
        }
        let value = u128::from_str_radix(s, 16)
            .map_err(|e| SyntheticError::InvalidKey(format!("{s:?}: {e}")))?;
        Self::new(value)
    }

    pub fn to_key(self) -> Key {
        Key::from_uint(self.0, KEY_BYTES).expect("96-bit value fits in 12 bytes")
    }
}

impl fmt::Display for WideKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Discretized generalized-Pareto tail with scale `a` and exponent `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailDistribution {
    a: f64,
    b: f64,
}

impl TailDistribution {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SyntheticError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `S(x) = (1 + x/a)^{−b}`.
    pub fn survival(&self, x: f64) -> f64 {
        (-self.b * (x / self.a).ln_1p()).exp()
    }

    /// `F(x) = 1 − S(x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        -(-self.b * (x / self.a).ln_1p()).exp_m1()
    }

    /// `p(i) = S(i) − S(i + 1) = S(i) · (1 − exp(−b · log1p(1/(a + i))))`.
    /// Underflows to exactly zero only far beyond any reachable key.
    pub fn pmf(&self, key: WideKey) -> f64 {
        self.pmf_at(key.to_f64())
    }

    fn pmf_at(&self, i: f64) -> f64 {
        self.survival(i) * -(-self.b * (1.0 / (self.a + i)).ln_1p()).exp_m1()
    }

    /// Inverse-CDF draw: `u ∈ [F(i), F(i + 1))` maps to key `i`.
    pub fn sample_key(&self, u: f64) -> WideKey {
        debug_assert!((0.0..1.0).contains(&u));
        let s = 1.0 - u;
        let x = self.a * (s.powf(-1.0 / self.b) - 1.0);
        let max = WideKey::MAX.0 as f64;
        let mut i = if x.is_nan() || x <= 0.0 {
            0
        } else if x >= max {
            WideKey::MAX.0
        } else {
            x.floor() as u128
        };
        // Snap to the interval S(i + 1) < s ≤ S(i) where integers are exact floats.
        if i < EXACT_INTEGER_LIMIT {
            while i > 0 && self.survival(i as f64) < s {
                i -= 1;
            }
            while i + 1 < EXACT_INTEGER_LIMIT && self.survival((i + 1) as f64) >= s {
                i += 1;
            }
        }
        WideKey(i)
    }

    /// `cos(2π m F(i + 1/2))`.
    pub fn test_function(&self, key: WideKey, m: u32) -> f64 {
        if m == 0 {
            return 1.0;
        }
        (TAU * m as f64 * self.cdf(key.midpoint())).cos()
    }

    /// First key whose survival is below `level`.
    pub fn survival_cutoff(&self, level: f64) -> u128 {
        let x = self.a * (level.powf(-1.0 / self.b) - 1.0);
        let mut i = x.max(0.0).ceil().min(WideKey::MAX.0 as f64) as u128;
        while i > 0 && self.survival((i - 1) as f64) < level {
            i -= 1;
        }
        while self.survival(i as f64) >= level && i < WideKey::MAX.0 {
            i += 1;
        }
        i
    }

    /// Brute-force `Σ_i p(i) cos(2π m F(i + 1/2))` over the keys with
    /// `S(i) ≥ REFERENCE_CUTOFF`. Summed in fixed blocks (in parallel) and combined in
    /// block order, so the result does not depend on the thread count.
    pub fn reference_mean(&self, m: u32) -> f64 {
        const BLOCK: u128 = 1 << 20;
        let end = self.survival_cutoff(REFERENCE_CUTOFF);
        let blocks = end.div_ceil(BLOCK) as u64;
        let partials: Vec<f64> = (0..blocks)
            .into_par_iter()
            .map(|blk| {
                let start = blk as u128 * BLOCK;
                let stop = (start + BLOCK).min(end);
                let mut acc = CompensatedSum::new();
                for i in start..stop {
                    let key = WideKey(i);
                    acc.add(self.pmf(key) * self.test_function(key, m));
                }
                acc.value()
            })
            .collect();
        partials.into_iter().collect::<CompensatedSum>().value()
    }
}

/// Largest number of terms summed by [`expected_sampled_mass`].
pub const SAMPLED_MASS_MAX_TERMS: u128 = 1 << 27;

/// Expected mass of the points that appear at least once in `n` draws,
/// `Σ_i p(i) (1 − (1 − p(i))^n)`, summed until the remainder bound
/// `q(i) S(i)` falls below [`SAMPLED_MASS_TOL`]. Very slowly decaying tails stop
/// after [`SAMPLED_MASS_MAX_TERMS`] terms instead; the neglected remainder is still
/// at most `q(i) S(i)` at the last key.
pub fn expected_sampled_mass(dist: &TailDistribution, n: u64) -> f64 {
    let mut acc = CompensatedSum::new();
    let mut i: u128 = 0;
    loop {
        let x = i as f64;
        let p = dist.pmf_at(x);
        let q = one_minus_pow1m(p, n);
        if q * dist.survival(x) < SAMPLED_MASS_TOL || p == 0.0 || i >= SAMPLED_MASS_MAX_TERMS {
            break;
        }
        acc.add(p * q);
        i += 1;
    }
    acc.value()
}

/// Named parameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Most of the mass is expected to be sampled.
    Concentrated,
    Intermediate,
    /// Most of the mass is in the unsampled tail.
    TailDominated,
}

impl Regime {
    pub const ALL: [Regime; 3] = [
        Regime::Concentrated,
        Regime::Intermediate,
        Regime::TailDominated,
    ];
}

impl Regime {
    /// `(a, b, N)` of the preset.
    pub fn parameters(self) -> (f64, f64, u64) {
        match self {
            Regime::Concentrated => (2.0, 3.0, 10_000),
            Regime::Intermediate => (50.0, 1.5, 1_000),
            Regime::TailDominated => (10_000.0, 0.8, 100),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Concentrated => "concentrated",
            Regime::Intermediate => "intermediate",
            Regime::TailDominated => "tail_dominated",
        })
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "concentrated" => Ok(Regime::Concentrated),
            "intermediate" => Ok(Regime::Intermediate),
            "tail_dominated" | "tail-dominated" => Ok(Regime::TailDominated),
            other => Err(format!("unknown regime {other:?}")),
        }
    }
}

/// Default oscillation count of the test function.
pub const DEFAULT_M: u32 = 4;

/// Default seed of the presets.
pub const DEFAULT_SEED: u64 = 1;

/// Parameters of a synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub a: f64,
    pub b: f64,
    pub n_draws: u64,
    #[serde(default = "default_m")]
    pub m: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub regime: Option<Regime>,
    /// Filled in by [`regime_config`] and [`SyntheticConfig::with_expected_mass`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_sampled_mass: Option<f64>,
}

fn default_m() -> u32 {
    DEFAULT_M
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl SyntheticConfig {
    pub fn distribution(&self) -> Result<TailDistribution> {
        TailDistribution::new(self.a, self.b)
    }

    pub fn validate(&self) -> Result<()> {
        self.distribution()?;
        if self.n_draws == 0 {
            return Err(SyntheticError::InvalidParameter("n_draws must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_expected_mass(mut self) -> Result<Self> {
        let dist = self.distribution()?;
        self.expected_sampled_mass = Some(expected_sampled_mass(&dist, self.n_draws));
        Ok(self)
    }

    pub fn source(&self) -> Result<SyntheticSource> {
        Ok(SyntheticSource {
            dist: self.distribution()?,
            m: self.m,
        })
    }
}

/// Preset parameters: concentrated `(a, b, N) = (2, 3, 10⁴)`, intermediate
/// `(50, 1.5, 10³)`, tail-dominated `(10⁴, 0.8, 10²)`; all with `m = 4`.
pub fn regime_config(regime: Regime) -> SyntheticConfig {
    let (a, b, n_draws) = regime.parameters();
    SyntheticConfig {
        a,
        b,
        n_draws,
        m: DEFAULT_M,
        seed: DEFAULT_SEED,
        regime: Some(regime),
        expected_sampled_mass: None,
    }
    .with_expected_mass()
    .expect("preset parameters are valid")
}

/// Draws keys from a [`TailDistribution`] and attaches mass and test-function value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSource {
    pub dist: TailDistribution,
    pub m: u32,
}

impl PointSource for SyntheticSource {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleRecord {
        let key = self.dist.sample_key(rng.random::<f64>());
        SampleRecord {
            key: key.to_key(),
            mass: self.dist.pmf(key),
            fvalue: self.dist.test_function(key, self.m),
        }
    }
}

/// The draws of one sample for `config`, from replicate stream 0 of its seed.
pub fn generate_sample(config: &SyntheticConfig) -> Result<Vec<SampleRecord>> {
    config.validate()?;
    let source = config.source()?;
    let mut rng = replicate_rng(config.seed, 0);
    Ok((0..config.n_draws).map(|_| source.draw(&mut rng)).collect())
}
