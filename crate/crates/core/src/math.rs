//! Float helpers that work with and without `std`.

pub use libm::{cos, exp, fabs as abs, log, pow, sin, sqrt};

/// `sign(x) * |x|^a`, continuous and odd in `x`.
pub fn signed_pow(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * pow(abs(x), a)
    }
}

/// Derivative of [`signed_pow`] with respect to `x`: `a * |x|^(a-1)`.
pub fn signed_pow_derivative(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        if a > 1.0 {
            0.0
        } else if a == 1.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a * pow(abs(x), a - 1.0)
    }
}

pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
