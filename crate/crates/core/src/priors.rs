//! Marginal prior distributions on bounded supports, used for calibration
//! parameters and (implicitly, as uniforms) for GP hyperparameters.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous};

use crate::error::{Error, Result};
use crate::mcmc::transform::std_normal_cdf;

/// A univariate prior on a finite interval `[a, b]`, in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorSpec {
    Uniform { a: f64, b: f64 },
    /// `N(mu, sigma2)` truncated to `[a, b]`.
    TruncNormal { mu: f64, sigma2: f64, a: f64, b: f64 },
    /// `Beta(alpha, beta)` shifted and scaled to `[a, b]`.
    ScaledBeta { alpha: f64, beta: f64, a: f64, b: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.bounds();
        if !a.is_finite() || !b.is_finite() || a >= b {
            return Err(Error::invalid("prior bounds", format!("[{a}, {b}]"), "need finite a < b"));
        }
        match *self {
            PriorSpec::Uniform { .. } => {}
            PriorSpec::TruncNormal { sigma2, .. } => {
                if sigma2 <= 0.0 {
                    return Err(Error::invalid("sigma2", sigma2, "must be > 0"));
                }
            }
            PriorSpec::ScaledBeta { alpha, beta, .. } => {
                if alpha <= 0.0 || beta <= 0.0 {
                    return Err(Error::invalid("alpha/beta", format!("({alpha}, {beta})"), "must be > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            PriorSpec::Uniform { a, b }
            | PriorSpec::TruncNormal { a, b, .. }
            | PriorSpec::ScaledBeta { a, b, .. } => (a, b),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let (a, b) = self.bounds();
        x >= a && x <= b
    }

    /// Log density at `x` in natural units; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return f64::NEG_INFINITY;
        }
        match *self {
            PriorSpec::Uniform { a, b } => -(b - a).ln(),
            PriorSpec::TruncNormal { mu, sigma2, a, b } => {
                let sigma = sigma2.sqrt();
                let z = (x - mu) / sigma;
                let mass = std_normal_cdf((b - mu) / sigma) - std_normal_cdf((a - mu) / sigma);
                -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - mass.ln()
            }
            PriorSpec::ScaledBeta { alpha, beta, a, b } => {
                let u = (x - a) / (b - a);
                // Beta density is infinite at the endpoints for α or β < 1;
                // the supported priors all have α, β > 1 in practice, but the
                // endpoints are handled by the transform layer regardless.
                Beta::new(alpha, beta).expect("validated").ln_pdf(u) - (b - a).ln()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrates_to_one(p: &PriorSpec) {
        // Composite Simpson over the support.
        let (a, b) = p.bounds();
        let n = 4000;
        let h = (b - a) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            let x0 = a + i as f64 * h;
            let xm = x0 + 0.5 * h;
            let x1 = x0 + h;
            total += h / 6.0 * (p.ln_pdf(x0).exp() + 4.0 * p.ln_pdf(xm).exp() + p.ln_pdf(x1).exp());
        }
        // Beta endpoints have fractional-power behavior that slows Simpson.
        assert!((total - 1.0).abs() < 1e-4, "integral {total}");
    }

    #[test]
    fn densities_integrate_to_one() {
        integrates_to_one(&PriorSpec::Uniform { a: -2.0, b: 5.0 });
        integrates_to_one(&PriorSpec::TruncNormal { mu: 1.0, sigma2: 4.0, a: -1.0, b: 2.5 });
        integrates_to_one(&PriorSpec::ScaledBeta { alpha: 4.5, beta: 3.3, a: 108.0, b: 125.0 });
    }

    #[test]
    fn support_is_enforced() {
        let p = PriorSpec::Uniform { a: 0.0, b: 3.0 };
        assert_eq!(p.ln_pdf(3.5), f64::NEG_INFINITY);
        assert_eq!(p.ln_pdf(-0.1), f64::NEG_INFINITY);
        assert!((p.ln_pdf(1.0) - (1.0f64 / 3.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn validation_catches_bad_bounds() {
        assert!(PriorSpec::Uniform { a: 1.0, b: 1.0 }.validate().is_err());
        assert!(PriorSpec::TruncNormal { mu: 0.0, sigma2: 0.0, a: 0.0, b: 1.0 }
            .validate()
            .is_err());
        assert!(PriorSpec::ScaledBeta { alpha: 0.0, beta: 1.0, a: 0.0, b: 1.0 }
            .validate()
            .is_err());
    }
}
