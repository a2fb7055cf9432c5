//! Analysis configuration: one JSON document drives every pipeline.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::classifier::SliceMode;
use crate::design::{equispaced_1d, maximin_lhs, Design};
use crate::error::{Error, Result};
use crate::kernels::CorrFamily;
use crate::mcmc::{stream, substream};
use crate::priors::PriorSpec;
use crate::toy::ToySpec;

fn default_iterations() -> u64 {
    120_000
}
fn default_burnin() -> u64 {
    20_000
}
fn default_thin() -> u64 {
    3
}
fn default_seed() -> u64 {
    1
}
fn default_chains() -> u64 {
    1
}
fn default_loocv_stride() -> u64 {
    200
}
fn default_init_proposal_sd() -> f64 {
    0.1
}
fn default_xtilde_size() -> usize {
    200
}
fn default_lhs_restarts() -> usize {
    40
}
fn default_low_cut() -> f64 {
    0.1
}
fn default_high_cut() -> f64 {
    0.9
}
fn default_bmatrix_draws() -> usize {
    200
}

/// Kernel family per process.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelChoices {
    pub eta: CorrFamily,
    pub delta: CorrFamily,
    pub zeta: CorrFamily,
}

impl Default for KernelChoices {
    fn default() -> Self {
        KernelChoices {
            eta: CorrFamily::SquaredExponential,
            delta: CorrFamily::SquaredExponential,
            zeta: CorrFamily::Matern32,
        }
    }
}

/// How the admissibility slice design over the x-space is built (C2 only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XtildeKind {
    /// Maximin Latin hypercube, regenerated once per analysis.
    Lhs,
    /// Equispaced points; only valid for one-dimensional x.
    Equispaced,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XtildeConfig {
    #[serde(default = "default_xtilde_size")]
    pub size: usize,
    #[serde(default = "XtildeConfig::default_kind")]
    pub kind: XtildeKind,
    #[serde(default = "default_lhs_restarts")]
    pub lhs_restarts: usize,
}

impl XtildeConfig {
    fn default_kind() -> XtildeKind {
        XtildeKind::Lhs
    }
}

impl Default for XtildeConfig {
    fn default() -> Self {
        XtildeConfig {
            size: default_xtilde_size(),
            kind: XtildeKind::Lhs,
            lhs_restarts: default_lhs_restarts(),
        }
    }
}

/// Input files and the natural ranges of the x-columns. The t-columns are
/// scaled by the calibration prior bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default)]
    pub field: Option<PathBuf>,
    #[serde(default)]
    pub simulator: Option<PathBuf>,
    #[serde(default)]
    pub failures: Option<PathBuf>,
    /// One [low, high] pair per x-column.
    pub x_ranges: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BMatrixConfig {
    /// Chain archive (CSV) of a classifier fit with recorded latent vectors.
    pub classifier_chain: PathBuf,
    /// Chain archive of an unconstrained calibration fit.
    pub calibration_chain: PathBuf,
    /// Evenly-spaced subsample sizes taken from each archive.
    #[serde(default = "default_bmatrix_draws")]
    pub latent_draws: usize,
    #[serde(default = "default_bmatrix_draws")]
    pub theta_draws: usize,
    #[serde(default = "default_low_cut")]
    pub low_cut: f64,
    #[serde(default = "default_high_cut")]
    pub high_cut: f64,
}

/// The full analysis configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_burnin")]
    pub burnin: u64,
    #[serde(default = "default_thin")]
    pub thin: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: u64,
    #[serde(default = "AnalysisConfig::default_slice_mode")]
    pub slice_mode: SliceMode,
    #[serde(default)]
    pub ptol: f64,
    #[serde(default)]
    pub xtilde: XtildeConfig,
    #[serde(default)]
    pub kernels: KernelChoices,
    #[serde(default = "default_loocv_stride")]
    pub loocv_stride: u64,
    #[serde(default)]
    pub freeze_after_burnin: bool,
    #[serde(default = "default_init_proposal_sd")]
    pub init_proposal_sd: f64,
    /// Priors for the calibration parameters, in column order.
    #[serde(default)]
    pub theta_priors: Vec<PriorSpec>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub warm_start: Vec<PathBuf>,
    #[serde(default)]
    pub bmatrix: Option<BMatrixConfig>,
    #[serde(default)]
    pub toy: Option<ToySpec>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl AnalysisConfig {
    fn default_slice_mode() -> SliceMode {
        SliceMode::C2
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AnalysisConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if self.iterations > 0 && self.burnin >= self.iterations {
            return Err(Error::Config("burnin must be < iterations".into()));
        }
        if !(0.0..=1.0).contains(&self.ptol) {
            return Err(Error::Config(format!("ptol {} outside [0,1]", self.ptol)));
        }
        for p in &self.theta_priors {
            p.validate()?;
        }
        if let Some(d) = &self.data {
            for (k, r) in d.x_ranges.iter().enumerate() {
                if !(r[0] < r[1]) {
                    return Err(Error::Config(format!("x_ranges[{k}] needs low < high")));
                }
            }
        }
        Ok(())
    }

    pub fn d_x(&self) -> usize {
        self.data.as_ref().map_or(1, |d| d.x_ranges.len())
    }

    pub fn d_t(&self) -> usize {
        self.theta_priors.len().max(1)
    }

    /// Uniform(0,1) priors for unit-cube problems when none are configured.
    pub fn theta_priors_or_unit(&self, d_t: usize) -> Vec<PriorSpec> {
        if self.theta_priors.is_empty() {
            vec![PriorSpec::Uniform { a: 0.0, b: 1.0 }; d_t]
        } else {
            self.theta_priors.clone()
        }
    }

    /// The slice design over the x-space for C2 admissibility, built once
    /// per analysis from a dedicated substream of the seed.
    pub fn build_xtilde(&self, d_x: usize) -> Result<Design> {
        match self.xtilde.kind {
            XtildeKind::Equispaced => {
                if d_x != 1 {
                    return Err(Error::Config(
                        "equispaced xtilde requires one x dimension".into(),
                    ));
                }
                Ok(equispaced_1d(self.xtilde.size))
            }
            XtildeKind::Lhs => {
                let mut rng = substream(self.seed, 0, stream::PREDICT);
                Ok(maximin_lhs(self.xtilde.size, d_x, self.xtilde.lhs_restarts, &mut rng))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = AnalysisConfig::from_json("{}").unwrap();
        assert_eq!(cfg.iterations, 120_000);
        assert_eq!(cfg.burnin, 20_000);
        assert_eq!(cfg.thin, 3);
        assert_eq!(cfg.loocv_stride, 200);
        assert_eq!(cfg.slice_mode, SliceMode::C2);
        assert_eq!(cfg.ptol, 0.0);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        assert!(AnalysisConfig::from_json(r#"{"thin": 0}"#).is_err());
        assert!(AnalysisConfig::from_json(r#"{"iterations": 10, "burnin": 10}"#).is_err());
        assert!(AnalysisConfig::from_json(r#"{"ptol": 1.5}"#).is_err());
    }

    #[test]
    fn xtilde_builders() {
        let mut cfg = AnalysisConfig::from_json(
            r#"{"xtilde": {"size": 7, "kind": "equispaced"}}"#,
        )
        .unwrap();
        let d = cfg.build_xtilde(1).unwrap();
        assert_eq!(d.n_rows(), 7);
        assert!(cfg.build_xtilde(2).is_err());

        cfg.xtilde.kind = XtildeKind::Lhs;
        cfg.xtilde.size = 20;
        let lhs1 = cfg.build_xtilde(3).unwrap();
        let lhs2 = cfg.build_xtilde(3).unwrap();
        assert_eq!(lhs1.matrix(), lhs2.matrix());
        assert_eq!(lhs1.n_rows(), 20);
        assert_eq!(lhs1.dim(), 3);
    }

    #[test]
    fn priors_parse_all_families() {
        let cfg = AnalysisConfig::from_json(
            r#"{"theta_priors": [
                {"type": "uniform", "a": 0.0, "b": 5.5},
                {"type": "trunc_normal", "mu": -250.0, "sigma2": 625.0, "a": -320.0, "b": -200.0},
                {"type": "scaled_beta", "alpha": 4.5, "beta": 3.3, "a": 108.0, "b": 125.0}
            ]}"#,
        )
        .unwrap();
        assert_eq!(cfg.theta_priors.len(), 3);
        let (a, b) = cfg.theta_priors[2].bounds();
        assert_eq!((a, b), (108.0, 125.0));
    }
}
