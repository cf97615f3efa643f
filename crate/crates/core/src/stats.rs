//! Chi-square quantiles and the truncated Gaussian used for physical parameters.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math::{abs, exp, log};
use crate::{Error, Result};

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let ln_prefactor = a * log(x) - x - libm::lgamma(a);
    if x < a + 1.0 {
        // series
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if abs(term) < abs(sum) * 1e-17 {
                break;
            }
        }
        (sum * exp(ln_prefactor)).clamp(0.0, 1.0)
    } else {
        // continued fraction for Q(a, x), modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if abs(d) < tiny {
                d = tiny;
            }
            c = b + an / c;
            if abs(c) < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if abs(delta - 1.0) < 1e-17 {
                break;
            }
        }
        (1.0 - exp(ln_prefactor) * h).clamp(0.0, 1.0)
    }
}

pub fn chi_square_cdf(dof: f64, x: f64) -> f64 {
    regularized_gamma_p(0.5 * dof, 0.5 * x)
}

/// Quantile of the chi-square distribution with `dof` degrees of freedom at
/// probability `p`, found by bisection on the CDF (absolute accuracy 1e-10).
pub fn chi_square_quantile(dof: f64, p: f64) -> Result<f64> {
    if !(dof > 0.0) {
        return Err(Error::InvalidArgument("chi-square degrees of freedom must be positive".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument("chi-square probability must lie in (0, 1)".into()));
    }
    let mut lo = 0.0;
    let mut hi = dof.max(1.0);
    while chi_square_cdf(dof, hi) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi_square_cdf(dof, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Upper limit on total rejections before [`TruncatedGaussian::sample`] gives up.
pub const MAX_REJECTIONS: usize = 1_000_000;

/// `N(mean, sd^2)` restricted to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedGaussian {
    pub fn new(mean: f64, sd: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(sd >= 0.0) || !(lower <= upper) || !mean.is_finite() {
            return Err(Error::InvalidArgument("invalid truncated Gaussian".into()));
        }
        Ok(Self {
            mean,
            sd,
            lower,
            upper,
        })
    }

    /// Point mass at `value`.
    pub fn degenerate(value: f64) -> Self {
        Self {
            mean: value,
            sd: 0.0,
            lower: value,
            upper: value,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper || self.sd == 0.0
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    /// Rejection sampling from the untruncated Gaussian.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<f64>> {
        if self.lower == self.upper {
            return Ok(alloc::vec![self.lower; count]);
        }
        if self.sd == 0.0 {
            return if self.contains(self.mean) {
                Ok(alloc::vec![self.mean; count])
            } else {
                Err(Error::RejectionLimit(0))
            };
        }
        let mut out = Vec::with_capacity(count);
        let mut rejections = 0;
        while out.len() < count {
            let z: f64 = StandardNormal.sample(rng);
            let v = self.mean + self.sd * z;
            if self.contains(v) {
                out.push(v);
            } else {
                rejections += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(Error::RejectionLimit(rejections));
                }
            }
        }
        Ok(out)
    }
}

/// Deterministic sampling with a seeded ChaCha8 stream.
pub fn sample_parameter(dist: &TruncatedGaussian, seed: u64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dist.sample(&mut rng, count)
}

/// Independent RNG stream for `(seed, index)` pairs.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_known_quantiles() {
        // 2 dof has a closed form: -2 ln(1 - p)
        let q = chi_square_quantile(2.0, 0.95).unwrap();
        assert!((q - (-2.0 * (0.05_f64).ln())).abs() < 1e-8);
        assert!((q - 5.991).abs() < 1e-3);
        let q1 = chi_square_quantile(1.0, 0.95).unwrap();
        assert!((q1 - 3.841458820694124).abs() < 1e-8);
    }

    #[test]
    fn chi_square_rejects_bad_input() {
        assert!(chi_square_quantile(0.0, 0.5).is_err());
        assert!(chi_square_quantile(2.0, 1.0).is_err());
        assert!(chi_square_quantile(2.0, 0.0).is_err());
    }

    #[test]
    fn truncated_samples_respect_support_and_seed() {
        let d = TruncatedGaussian::new(1.0, 0.3, 0.1, 1.9).unwrap();
        let a = sample_parameter(&d, 7, 500).unwrap();
        let b = sample_parameter(&d, 7, 500).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.1..=1.9).contains(v)));
        assert_eq!(sample_parameter(&d, 7, 50).unwrap().len(), 50);
        assert!(sample_parameter(&d, 7, 0).is_err());
    }

    #[test]
    fn impossible_support_hits_rejection_limit() {
        let d = TruncatedGaussian::new(0.0, 1.0, 50.0, 51.0).unwrap();
        assert!(matches!(sample_parameter(&d, 1, 1), Err(Error::RejectionLimit(_))));
    }

    #[test]
    fn degenerate_distribution_is_constant() {
        let d = TruncatedGaussian::degenerate(0.5);
        assert_eq!(sample_parameter(&d, 3, 4).unwrap(), alloc::vec![0.5; 4]);
    }
}
