//! Small numerical kernels shared by the solver, the estimator and the oracle.
//!
//! Every formula in this crate is built from `(1 − x)^n` and `1 − (1 − x)^n` with
//! `x = p/Z` often tiny and `n` often large. Direct powering loses all precision in
//! that regime, so both are evaluated through `log1p`/`expm1`.

/// `(1 − x)^n`, evaluated as `exp(n · log1p(−x))`.
///
/// Defined for any real `x`; for `x > 1` the base is negative and the sign follows
/// the parity of `n`. `n = 0` gives exactly 1.
pub fn pow1m(x: f64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if x <= 1.0 {
        // x == 1 gives log1p(-1) = -inf and exp(-inf) = 0.
        (n as f64 * (-x).ln_1p()).exp()
    } else {
        let magnitude = (n as f64 * (x - 1.0).ln()).exp();
        if n.is_multiple_of(2) {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// `1 − (1 − x)^n` for `x ≤ 1`, evaluated as `−expm1(n · log1p(−x))`.
pub fn one_minus_pow1m(x: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    debug_assert!(x <= 1.0);
    -(n as f64 * (-x).ln_1p()).exp_m1()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of an iterator of `f64`.
pub fn sum_compensated<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

/// Formats a float with 17 significant digits, the lossless width for `f64`.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Relative closeness test used for key-consistency checks.
pub(crate) fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}
