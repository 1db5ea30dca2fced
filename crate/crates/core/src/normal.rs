//! Standard normal quantile.

use statrs::distribution::{ContinuousCDF, Normal};

/// `Φ⁻¹(p)` for `p` in `(0, 1)`; infinite at the endpoints, NaN outside.
pub fn quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(p)
}

/// `Φ(z)`.
pub fn cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}
