//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use massweight::count_table::{Key, MassTable, SampleRecord};
use massweight::zsolver::psi;
use rand::Rng;

/// `(count, mass, fvalue)` rows under keys 0, 1, 2, ...
pub fn table_from(rows: &[(u64, f64, f64)]) -> MassTable {
    let mut t = MassTable::new();
    for (i, &(count, mass, fvalue)) in rows.iter().enumerate() {
        let key = Key::from_uint(i as u128, 4).unwrap();
        t.insert_counted(SampleRecord::new(key, mass, fvalue).unwrap(), count)
            .unwrap();
    }
    t
}

/// Masses 1, 1 with counts 2, 1 and values 1, 3: `Z = (3 + √5)/2`.
pub fn two_key_fixture() -> MassTable {
    table_from(&[(2, 1.0, 1.0), (1, 1.0, 3.0)])
}

pub fn golden_z() -> f64 {
    (3.0 + 5f64.sqrt()) / 2.0
}

pub fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

/// A table with `2 ≤ M < N ≤ max_n` and masses log-uniform on `[1e-3, 1]`.
pub fn random_regular_table<R: Rng + ?Sized>(rng: &mut R, max_n: u64) -> MassTable {
    let n = rng.random_range(3..=max_n);
    let m = rng.random_range(2..n) as usize;
    let mut counts = vec![1u64; m];
    for _ in 0..(n as usize - m) {
        counts[rng.random_range(0..m)] += 1;
    }
    let rows: Vec<_> = counts
        .into_iter()
        .map(|c| (c, log_uniform(rng, 1e-3, 1.0), 0.0))
        .collect();
    table_from(&rows)
}

/// `count` points from `lo` to `hi` with constant ratio.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    (0..count).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// Fourth-order central difference of `f` at `t`.
pub fn derivative5(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (-f(t + 2.0 * h) + 8.0 * f(t + h) - 8.0 * f(t - h) + f(t - 2.0 * h)) / (12.0 * h)
}

/// `t² (t² ψ′)′` from nested fourth-order central differences of `ψ` alone, with
/// steps proportional to `t`. Accurate to about 1e-6 relative for
/// `0.05 ≤ t ≤ 0.8 N`; closer to `t = N` the factor `(1 − t/N)^{N−2}` makes the
/// value too small for difference quotients.
pub fn curvature_by_differences(t: f64, n: u64) -> f64 {
    let h = 1e-3 * t;
    let g = |s: f64| s * s * derivative5(|u| psi(u, n).unwrap(), s, h);
    t * t * derivative5(g, t, h)
}
