//! Probit reparameterization of bounded parameters.
//!
//! A natural value on `[a, b]` is rescaled linearly to the unit interval and
//! mapped to the real line with `Φ⁻¹`. Random-walk proposals act on the real
//! scale; the Jacobian of the inverse map enters the Metropolis ratio.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::priors::PriorSpec;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Log standard normal density.
pub fn ln_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal quantile, polished with one Newton step against the
/// `erfc`-based CDF so that `Φ(Φ⁻¹(p))` round-trips at machine precision.
pub fn std_normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let n = Normal::new(0.0, 1.0).unwrap();
    let x = n.inverse_cdf(p);
    let pdf = ln_std_normal_pdf(x).exp();
    if pdf > 0.0 {
        x - (std_normal_cdf(x) - p) / pdf
    } else {
        x
    }
}

/// A bounded parameter viewed simultaneously in natural, unit-interval, and
/// unconstrained (probit) coordinates.
#[derive(Debug, Clone, Copy)]
pub struct TransformedParam {
    pub natural: f64,
    pub unit: f64,
    pub real: f64,
    pub prior: PriorSpec,
}

impl TransformedParam {
    pub fn from_natural(prior: PriorSpec, natural: f64) -> Result<Self> {
        let (a, b) = prior.bounds();
        if !(natural > a && natural < b) {
            return Err(Error::invalid(
                "natural",
                natural,
                format!("must lie strictly inside ({a}, {b})"),
            ));
        }
        let unit = (natural - a) / (b - a);
        if unit <= 0.0 || unit >= 1.0 {
            return Err(Error::invalid("natural", natural, "maps onto the unit boundary"));
        }
        Ok(TransformedParam {
            natural,
            unit,
            real: std_normal_quantile(unit),
            prior,
        })
    }

    pub fn from_real(prior: PriorSpec, real: f64) -> Result<Self> {
        if !real.is_finite() {
            return Err(Error::invalid("real", real, "must be finite"));
        }
        let (a, b) = prior.bounds();
        let unit = std_normal_cdf(real);
        if unit <= 0.0 || unit >= 1.0 {
            return Err(Error::invalid("real", real, "pushes the unit value onto the boundary"));
        }
        Ok(TransformedParam {
            natural: a + (b - a) * unit,
            unit,
            real,
            prior,
        })
    }
}

/// Natural value at real-coordinate `r` for a prior's bounds.
pub fn from_real(prior: &PriorSpec, r: f64) -> f64 {
    let (a, b) = prior.bounds();
    a + (b - a) * std_normal_cdf(r)
}

/// Real coordinate for a natural value strictly inside the support.
pub fn to_real(prior: &PriorSpec, natural: f64) -> Result<f64> {
    Ok(TransformedParam::from_natural(*prior, natural)?.real)
}

/// `log |d(natural)/d(real)| = log(b − a) + log φ(real)` for the linear
/// rescaling convention.
pub fn log_jacobian(prior: &PriorSpec, real: f64) -> f64 {
    let (a, b) = prior.bounds();
    (b - a).ln() + ln_std_normal_pdf(real)
}
