//! Synthetic one-x/one-t test problem: the "simulator" is a single GP
//! realization on the unit square, field data live on the slice t = 0.4
//! with a fixed polynomial discrepancy, and a block of grid runs is marked
//! as failed in two corner blobs whose t-extent pins the all-success band.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationDataset;
use crate::classifier::FailureDataset;
use crate::design::Design;
use crate::error::Result;
use crate::kernels::{chol_jitter, cov_matrix, CorrFamily, ProductKernel};
use crate::mcmc::{stream, substream};

/// Generator settings. Defaults reproduce the standard configuration:
/// an 18 × 8 grid, θ_true = 0.4, a smooth high-variance surface, and 30
/// failed runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToySpec {
    pub n_x: usize,
    pub n_t: usize,
    pub theta_true: f64,
    pub sigma2_eta: f64,
    pub lambda_eta_x: f64,
    pub lambda_eta_t: f64,
    pub sigma2_eps: f64,
    pub with_failures: bool,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            n_x: 18,
            n_t: 8,
            theta_true: 0.4,
            sigma2_eta: 10.0,
            lambda_eta_x: 1.0,
            lambda_eta_t: 2.0,
            sigma2_eps: 0.002,
            with_failures: true,
        }
    }
}

/// Fixed discrepancy between reality and the simulator slice.
pub fn discrepancy(x: f64) -> f64 {
    0.1 * (x - 0.2) * (x - 0.2) - 0.5 * (x - 0.2)
}

/// What the generator knows and an analysis should recover.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta_true: f64,
    /// Open t-interval with no failures at any x: (largest failing low-t,
    /// smallest failing high-t).
    pub band: (f64, f64),
    pub n: usize,
    pub m: usize,
    pub m0: usize,
}

/// Raw generated data in natural units plus the ground truth. Kept in file
/// layout so writing and re-ingesting round-trips exactly.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub field_y: Vec<f64>,
    pub field_x: Vec<f64>,
    /// Successful runs only.
    pub sim_eta: Vec<f64>,
    pub sim_x: Vec<f64>,
    pub sim_t: Vec<f64>,
    /// Every grid run with its outcome, in grid order.
    pub fail_z: Vec<bool>,
    pub fail_x: Vec<f64>,
    pub fail_t: Vec<f64>,
    pub truth: GroundTruth,
}

impl ToyData {
    pub fn calibration_dataset(&self) -> Result<CalibrationDataset> {
        CalibrationDataset::from_natural(
            self.field_y.clone(),
            Design::from_rows(&self.field_x.iter().map(|&v| vec![v]).collect::<Vec<_>>())?,
            self.sim_eta.clone(),
            Design::from_rows(&self.sim_x.iter().map(|&v| vec![v]).collect::<Vec<_>>())?,
            Design::from_rows(&self.sim_t.iter().map(|&v| vec![v]).collect::<Vec<_>>())?,
        )
    }

    /// `None` when the generator was run with failures disabled.
    pub fn failure_dataset(&self) -> Result<Option<FailureDataset>> {
        if self.fail_z.iter().all(|&b| b) {
            return Ok(None);
        }
        let rows: Vec<Vec<f64>> = self
            .fail_x
            .iter()
            .zip(self.fail_t.iter())
            .map(|(&x, &t)| vec![x, t])
            .collect();
        Ok(Some(FailureDataset::new(
            self.fail_z.clone(),
            Design::from_rows(&rows)?,
            1,
            1,
        )?))
    }
}

/// Grid indices (x-index, t-index) marked as failures: two triangular
/// corner blobs, one at low x/low t and one at high x/high t. With the
/// default 18 × 8 grid this is 30 points whose t-extent reaches 2/7 on the
/// low side and 5/7 on the high side, leaving the all-success band
/// (2/7, 5/7) ≈ (0.286, 0.714).
fn failure_mask(n_x: usize, n_t: usize) -> Vec<(usize, usize)> {
    let mut mask = Vec::new();
    // Rows of the low blob per t-level: widths 7, 5, 3 from t-index 0 up.
    let widths = [7usize, 5, 3];
    for (j, &w) in widths.iter().enumerate() {
        if j >= n_t {
            break;
        }
        for i in 0..w.min(n_x) {
            mask.push((i, j));
        }
    }
    for (j_back, &w) in widths.iter().enumerate() {
        if j_back >= n_t {
            break;
        }
        let j = n_t - 1 - j_back;
        for k in 0..w.min(n_x) {
            let i = n_x - 1 - k;
            mask.push((i, j));
        }
    }
    mask
}

/// Draws one surface realization and assembles the datasets. The RNG is a
/// dedicated substream of the master seed, so generation is reproducible
/// and independent of later analysis draws.
pub fn generate_toy(spec: &ToySpec, master_seed: u64) -> Result<ToyData> {
    let mut rng = substream(master_seed, 0, stream::DATA);
    let n_x = spec.n_x;
    let n_t = spec.n_t;
    let x_grid: Vec<f64> = (0..n_x).map(|i| i as f64 / (n_x - 1) as f64).collect();
    let t_grid: Vec<f64> = (0..n_t).map(|j| j as f64 / (n_t - 1) as f64).collect();

    // Joint GP draw over the grid and the field slice (x_i, θ_true).
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n_x * n_t + n_x);
    for &x in &x_grid {
        for &t in &t_grid {
            points.push(vec![x, t]);
        }
    }
    for &x in &x_grid {
        points.push(vec![x, spec.theta_true]);
    }
    let design = Design::from_rows(&points)?;
    let kernel = ProductKernel::isotropic_family(
        CorrFamily::SquaredExponential,
        &[spec.lambda_eta_x, spec.lambda_eta_t],
        spec.sigma2_eta,
    )?;
    let cov = cov_matrix(&kernel, &design)?;
    let factor = chol_jitter(&cov)?;
    let surface = factor.draw(&DVector::zeros(points.len()), &mut rng);

    // Field data along the slice.
    let noise_sd = spec.sigma2_eps.sqrt();
    let mut field_y = Vec::with_capacity(n_x);
    for (n, &x) in x_grid.iter().enumerate() {
        let eps: f64 = rng.sample::<f64, _>(StandardNormal) * noise_sd;
        field_y.push(surface[n_x * n_t + n] + discrepancy(x) + eps);
    }

    // Grid runs and the failure pattern.
    let failed: std::collections::BTreeSet<(usize, usize)> = if spec.with_failures {
        failure_mask(n_x, n_t).into_iter().collect()
    } else {
        Default::default()
    };
    let mut sim_eta = Vec::new();
    let mut sim_x = Vec::new();
    let mut sim_t = Vec::new();
    let mut fail_z = Vec::with_capacity(n_x * n_t);
    let mut fail_x = Vec::with_capacity(n_x * n_t);
    let mut fail_t = Vec::with_capacity(n_x * n_t);
    let mut low_max_t: f64 = f64::NEG_INFINITY;
    let mut high_min_t: f64 = f64::INFINITY;
    for (i, &x) in x_grid.iter().enumerate() {
        for (j, &t) in t_grid.iter().enumerate() {
            let ok = !failed.contains(&(i, j));
            fail_z.push(ok);
            fail_x.push(x);
            fail_t.push(t);
            if ok {
                sim_eta.push(surface[i * n_t + j]);
                sim_x.push(x);
                sim_t.push(t);
            } else if t < spec.theta_true {
                low_max_t = low_max_t.max(t);
            } else {
                high_min_t = high_min_t.min(t);
            }
        }
    }
    let band = if failed.is_empty() {
        (0.0, 1.0)
    } else {
        (low_max_t, high_min_t)
    };

    let truth = GroundTruth {
        theta_true: spec.theta_true,
        band,
        n: n_x,
        m: sim_eta.len(),
        m0: failed.len(),
    };
    Ok(ToyData { field_y, field_x: x_grid, sim_eta, sim_x, sim_t, fail_z, fail_x, fail_t, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts_match() {
        let toy = generate_toy(&ToySpec::default(), 1).unwrap();
        assert_eq!(toy.truth.n, 18);
        assert_eq!(toy.truth.m, 114);
        assert_eq!(toy.truth.m0, 30);
        assert_eq!(toy.field_y.len(), 18);
        assert_eq!(toy.sim_eta.len(), 114);
        assert_eq!(toy.fail_z.len(), 144);
        let cal = toy.calibration_dataset().unwrap();
        assert_eq!(cal.n(), 18);
        assert_eq!(cal.m(), 114);
        let fails = toy.failure_dataset().unwrap().unwrap();
        assert_eq!(fails.total(), 144);
        assert_eq!(fails.n_success(), 114);
        assert_eq!(fails.n_failure(), 30);
    }

    #[test]
    fn realized_band_is_two_sevenths() {
        let toy = generate_toy(&ToySpec::default(), 3).unwrap();
        assert!((toy.truth.band.0 - 2.0 / 7.0).abs() < 1e-12);
        assert!((toy.truth.band.1 - 5.0 / 7.0).abs() < 1e-12);
        // θ_true sits inside the band.
        assert!(toy.truth.band.0 < toy.truth.theta_true);
        assert!(toy.truth.theta_true < toy.truth.band.1);
    }

    #[test]
    fn discrepancy_root_at_two_tenths() {
        assert_eq!(discrepancy(0.2), 0.0);
        assert!((discrepancy(1.0) - (0.1 * 0.64 - 0.5 * 0.8)).abs() < 1e-15);
    }

    #[test]
    fn failures_disabled_keeps_all_runs() {
        let spec = ToySpec { with_failures: false, ..ToySpec::default() };
        let toy = generate_toy(&spec, 1).unwrap();
        assert_eq!(toy.truth.m, 144);
        assert_eq!(toy.truth.m0, 0);
        assert!(toy.failure_dataset().unwrap().is_none());
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let a = generate_toy(&ToySpec::default(), 42).unwrap();
        let b = generate_toy(&ToySpec::default(), 42).unwrap();
        assert_eq!(a.field_y, b.field_y);
        assert_eq!(a.sim_eta, b.sim_eta);
        let c = generate_toy(&ToySpec::default(), 43).unwrap();
        assert_ne!(a.field_y, c.field_y);
    }

    #[test]
    fn failure_blobs_touch_expected_levels() {
        let mask = failure_mask(18, 8);
        assert_eq!(mask.len(), 30);
        // Contiguity anchors: both corners present.
        assert!(mask.contains(&(0, 0)));
        assert!(mask.contains(&(17, 7)));
        // t-extent: levels 2 and 5 are hit, 3 and 4 are not.
        assert!(mask.iter().any(|&(_, j)| j == 2));
        assert!(mask.iter().any(|&(_, j)| j == 5));
        assert!(!mask.iter().any(|&(_, j)| j == 3 || j == 4));
    }
}
