//! Correlation functions, product covariance kernels, covariance assembly,
//! and guarded Cholesky factorization shared by every GP in the crate.
//!
//! Correlation lengths are always expressed on inputs pre-scaled to `[0,1]`;
//! a length above 1 means a very smooth process.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};

/// One-dimensional correlation families supported by every process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrFamily {
    /// `R(l; λ) = exp(−(l/λ)²)`
    SquaredExponential,
    /// Matérn ν = 3/2 in the √6 parameterization:
    /// `R(l; λ) = (1 + √6|l|/λ)·exp(−√6|l|/λ)`
    Matern32,
}

/// A one-dimensional correlation function with its length parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    family: CorrFamily,
    lengthscale: f64,
}

impl CorrelationSpec {
    pub fn new(family: CorrFamily, lengthscale: f64) -> Result<Self> {
        if !lengthscale.is_finite() || lengthscale <= 0.0 {
            return Err(Error::invalid("lengthscale", lengthscale, "must be finite and > 0"));
        }
        Ok(CorrelationSpec { family, lengthscale })
    }

    pub fn family(&self) -> CorrFamily {
        self.family
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Correlation at (signed) distance `l`. Even in `l`, equal to 1 at 0,
    /// nonincreasing in `|l|`.
    pub fn corr(&self, l: f64) -> Result<f64> {
        if !l.is_finite() {
            return Err(Error::invalid("l", l, "distance must be finite"));
        }
        Ok(self.corr_unchecked(l))
    }

    #[inline]
    fn corr_unchecked(&self, l: f64) -> f64 {
        let a = l.abs() / self.lengthscale;
        match self.family {
            CorrFamily::SquaredExponential => (-a * a).exp(),
            CorrFamily::Matern32 => {
                let s = 6.0_f64.sqrt() * a;
                (1.0 + s) * (-s).exp()
            }
        }
    }
}

/// Product of per-dimension correlations, scaled by a process variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductKernel {
    per_dimension: Vec<CorrelationSpec>,
    scale: f64,
}

impl ProductKernel {
    pub fn new(per_dimension: Vec<CorrelationSpec>, scale: f64) -> Result<Self> {
        if per_dimension.is_empty() {
            return Err(Error::invalid("per_dimension", 0, "kernel needs at least one dimension"));
        }
        if !scale.is_finite() || scale < 0.0 {
            return Err(Error::invalid("scale", scale, "must be finite and >= 0"));
        }
        Ok(ProductKernel { per_dimension, scale })
    }

    /// All dimensions share one family; lengthscales vary per dimension.
    pub fn isotropic_family(family: CorrFamily, lengthscales: &[f64], scale: f64) -> Result<Self> {
        let dims = lengthscales
            .iter()
            .map(|&l| CorrelationSpec::new(family, l))
            .collect::<Result<Vec<_>>>()?;
        ProductKernel::new(dims, scale)
    }

    pub fn dim(&self) -> usize {
        self.per_dimension.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `σ²·∏_d R(|p1_d − p2_d|; λ_d)`.
    pub fn kernel_eval(&self, p1: &[f64], p2: &[f64]) -> Result<f64> {
        if p1.len() != self.dim() {
            return Err(Error::dim("kernel_eval p1", self.dim(), p1.len()));
        }
        if p2.len() != self.dim() {
            return Err(Error::dim("kernel_eval p2", self.dim(), p2.len()));
        }
        Ok(self.eval_unchecked(p1, p2))
    }

    #[inline]
    fn eval_unchecked(&self, p1: &[f64], p2: &[f64]) -> f64 {
        let mut v = self.scale;
        for (d, spec) in self.per_dimension.iter().enumerate() {
            v *= spec.corr_unchecked(p1[d] - p2[d]);
        }
        v
    }
}

/// Dense symmetric covariance matrix plus a record of any diagonal nugget
/// applied during factorization.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
    jitter_applied: f64,
}

impl CovMatrix {
    /// Wraps an already-symmetric matrix.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::dim("CovMatrix", entries.nrows(), entries.ncols()));
        }
        Ok(CovMatrix { entries, jitter_applied: 0.0 })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }
}

/// Covariance of a design with itself. Exactly symmetric: the upper triangle
/// is computed and mirrored.
pub fn cov_matrix(k: &ProductKernel, a: &Design) -> Result<CovMatrix> {
    if a.dim() != k.dim() {
        return Err(Error::dim("cov_matrix design", k.dim(), a.dim()));
    }
    let n = a.n_rows();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let ri = a.matrix().row(i);
        for j in i..n {
            let rj = a.matrix().row(j);
            let mut v = k.scale();
            for (d, spec) in k.per_dimension.iter().enumerate() {
                v *= spec.corr_unchecked(ri[d] - rj[d]);
            }
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    CovMatrix::new(m)
}

/// Rectangular covariance block between two designs: entry `(i,j)` is
/// `kernel_eval(k, a_i, b_j)`.
pub fn cov_block(k: &ProductKernel, a: &Design, b: &Design) -> Result<DMatrix<f64>> {
    if a.dim() != k.dim() {
        return Err(Error::dim("cov_block a", k.dim(), a.dim()));
    }
    if b.dim() != k.dim() {
        return Err(Error::dim("cov_block b", k.dim(), b.dim()));
    }
    let (n, m) = (a.n_rows(), b.n_rows());
    let mut out = DMatrix::zeros(n, m);
    for i in 0..n {
        let ri = a.matrix().row(i);
        for j in 0..m {
            let rj = b.matrix().row(j);
            let mut v = k.scale();
            for (d, spec) in k.per_dimension.iter().enumerate() {
                v *= spec.corr_unchecked(ri[d] - rj[d]);
            }
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor of `C + jitter·I`, with the nugget that
/// made it work.
#[derive(Debug, Clone)]
pub struct CholFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

/// Relative jitter ladder: the first attempt adds nothing, then the nugget
/// starts at `1e-8·mean(diag)` and escalates tenfold up to `1e-4·mean(diag)`.
const JITTER_STEPS: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Absolute floor for the jitter scale so the ladder still terminates on
/// degenerate near-zero matrices (e.g. a conditional covariance at an
/// interpolation point, where mean(diag) underflows the rounding noise).
const JITTER_SCALE_FLOOR: f64 = 1e-12;

/// Factorizes a symmetric matrix, escalating a diagonal nugget on failure.
pub fn chol_jitter(c: &CovMatrix) -> Result<CholFactor> {
    let n = c.size();
    if n == 0 {
        return Err(Error::invalid("C", 0, "cannot factor an empty matrix"));
    }
    let mean_diag = c.entries.diagonal().iter().sum::<f64>() / n as f64;
    let scale = mean_diag.abs().max(JITTER_SCALE_FLOOR);
    let mut attempted = Vec::new();
    for step in JITTER_STEPS {
        let jitter = step * scale;
        attempted.push(jitter);
        let mut m = c.entries.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = nalgebra::Cholesky::new(m) {
            return Ok(CholFactor { l: chol.unpack(), jitter });
        }
    }
    Err(Error::Factorization {
        attempted,
        context: format!("{n}x{n} covariance, mean diagonal {mean_diag:.3e}"),
    })
}

impl CholFactor {
    pub fn size(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `log det(C + jitter·I) = 2·Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Solves `(C + jI)·x = b` by forward/backward substitution.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = b.clone();
        self.l.solve_lower_triangular_mut(&mut y);
        self.l.tr_solve_lower_triangular_mut(&mut y);
        y
    }

    /// Solves `(C + jI)·X = B` column-wise.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = b.clone();
        self.l.solve_lower_triangular_mut(&mut y);
        self.l.tr_solve_lower_triangular_mut(&mut y);
        y
    }

    /// Forward substitution only: `L·y = b`.
    pub fn forward_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = b.clone();
        self.l.solve_lower_triangular_mut(&mut y);
        y
    }

    /// Full inverse `(C + jI)⁻¹` built from the factor.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.size();
        self.solve_matrix(&DMatrix::identity(n, n))
    }

    /// Draw `mean + L·z`, `z ~ N(0, I)`.
    pub fn draw<R: Rng>(&self, mean: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.size(), |_, _| rng.sample(StandardNormal));
        mean + &self.l * z
    }
}

/// Log density of `N(mean, C)` at `d`, with `C` given by its factor.
pub fn mvn_logpdf(d: &DVector<f64>, mean: &DVector<f64>, factor: &CholFactor) -> f64 {
    let n = d.len() as f64;
    let resid = d - mean;
    let mut y = resid;
    factor.lower().solve_lower_triangular_mut(&mut y);
    let quad = y.dot(&y);
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + factor.log_det() + quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::equispaced_1d;

    fn sqexp(l: f64) -> CorrelationSpec {
        CorrelationSpec::new(CorrFamily::SquaredExponential, l).unwrap()
    }

    fn matern(l: f64) -> CorrelationSpec {
        CorrelationSpec::new(CorrFamily::Matern32, l).unwrap()
    }

    #[test]
    fn corr_zero_distance_identity() {
        assert_eq!(matern(1.0).corr(0.0).unwrap(), 1.0);
        assert_eq!(sqexp(0.3).corr(0.0).unwrap(), 1.0);
    }

    #[test]
    fn corr_matern_closed_form() {
        // l = 1/√6 puts the scaled distance at exactly 1: (1+1)·e⁻¹.
        let l = 1.0 / 6.0_f64.sqrt();
        let v = matern(1.0).corr(l).unwrap();
        assert!((v - 2.0 * (-1.0_f64).exp()).abs() < 1e-12);
        assert!((v - 0.735_758_882_342_884_6).abs() < 1e-12);
    }

    #[test]
    fn corr_sqexp_closed_form() {
        let v = sqexp(0.5).corr(0.5).unwrap();
        assert!((v - (-1.0_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn corr_rejects_bad_args() {
        assert!(CorrelationSpec::new(CorrFamily::Matern32, 0.0).is_err());
        assert!(CorrelationSpec::new(CorrFamily::Matern32, -1.0).is_err());
        assert!(matern(1.0).corr(f64::NAN).is_err());
        assert!(matern(1.0).corr(f64::INFINITY).is_err());
    }

    #[test]
    fn kernel_eval_identical_points_gives_scale() {
        let k = ProductKernel::isotropic_family(CorrFamily::SquaredExponential, &[1.0, 2.0], 3.5)
            .unwrap();
        let p = [0.3, 0.7];
        assert_eq!(k.kernel_eval(&p, &p).unwrap(), 3.5);
    }

    #[test]
    fn kernel_eval_product_of_factors() {
        let k = ProductKernel::isotropic_family(CorrFamily::SquaredExponential, &[1.0, 1.0], 1.0)
            .unwrap();
        let v = k.kernel_eval(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-2.0_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_eval_symmetric_and_checks_dims() {
        let k = ProductKernel::isotropic_family(CorrFamily::Matern32, &[0.7, 1.3], 2.0).unwrap();
        let a = [0.1, 0.9];
        let b = [0.4, 0.2];
        assert_eq!(k.kernel_eval(&a, &b).unwrap(), k.kernel_eval(&b, &a).unwrap());
        assert!(k.kernel_eval(&a, &[0.1]).is_err());
    }

    #[test]
    fn cov_matrix_single_point() {
        let k = ProductKernel::isotropic_family(CorrFamily::SquaredExponential, &[1.0], 2.0)
            .unwrap();
        let d = Design::single(&[0.5]);
        let c = cov_matrix(&k, &d).unwrap();
        assert_eq!(c.size(), 1);
        assert_eq!(c.entries()[(0, 0)], 2.0);
    }

    #[test]
    fn cov_matrix_two_points_sqexp() {
        let k = ProductKernel::isotropic_family(CorrFamily::SquaredExponential, &[1.0], 1.5)
            .unwrap();
        let d = Design::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = cov_matrix(&k, &d).unwrap();
        let off = 1.5 * (-1.0_f64).exp();
        assert_eq!(c.entries()[(0, 0)], 1.5);
        assert_eq!(c.entries()[(1, 1)], 1.5);
        assert!((c.entries()[(0, 1)] - off).abs() < 1e-13);
        assert_eq!(c.entries()[(0, 1)], c.entries()[(1, 0)]);
    }

    #[test]
    fn cov_block_matches_double_loop() {
        let k = ProductKernel::isotropic_family(CorrFamily::Matern32, &[0.6, 1.1], 0.9).unwrap();
        let a = Design::from_rows(&[vec![0.0, 0.1], vec![0.5, 0.9], vec![1.0, 0.3]]).unwrap();
        let b = Design::from_rows(&[vec![0.2, 0.2], vec![0.8, 0.8]]).unwrap();
        let block = cov_block(&k, &a, &b).unwrap();
        assert_eq!((block.nrows(), block.ncols()), (3, 2));
        for i in 0..3 {
            for j in 0..2 {
                let want = k.kernel_eval(&a.row(i), &b.row(j)).unwrap();
                assert!((block[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn chol_identity_no_jitter() {
        let c = CovMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let f = chol_jitter(&c).unwrap();
        assert_eq!(f.jitter(), 0.0);
        assert!((f.lower() - DMatrix::identity(3, 3)).abs().max() < 1e-14);
    }

    #[test]
    fn chol_diagonal_hand_factor() {
        let c = CovMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0])))
            .unwrap();
        let f = chol_jitter(&c).unwrap();
        assert_eq!(f.jitter(), 0.0);
        let s = 2.0_f64.sqrt();
        assert!((f.lower()[(0, 0)] - s).abs() < 1e-14);
        assert!((f.lower()[(1, 1)] - s).abs() < 1e-14);
    }

    #[test]
    fn chol_singular_needs_jitter_then_reconstructs() {
        let c = CovMatrix::new(DMatrix::from_element(2, 2, 1.0)).unwrap();
        let f = chol_jitter(&c).unwrap();
        assert!(f.jitter() > 0.0);
        let rebuilt = f.lower() * f.lower().transpose();
        let mut target = c.entries().clone();
        target[(0, 0)] += f.jitter();
        target[(1, 1)] += f.jitter();
        assert!((rebuilt - target).abs().max() < 1e-12);
    }

    #[test]
    fn chol_reports_ladder_on_failure() {
        // Indefinite no matter the nugget size allowed by the ladder.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]);
        let err = chol_jitter(&CovMatrix::new(m).unwrap()).unwrap_err();
        match err {
            Error::Factorization { attempted, .. } => assert_eq!(attempted.len(), 6),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn mvn_logpdf_scalar_standard_normal() {
        let c = CovMatrix::new(DMatrix::identity(1, 1)).unwrap();
        let f = chol_jitter(&c).unwrap();
        let v = mvn_logpdf(&DVector::zeros(1), &DVector::zeros(1), &f);
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn grid_cov_reconstruction_error_small() {
        let k = ProductKernel::isotropic_family(CorrFamily::SquaredExponential, &[0.4], 2.0)
            .unwrap();
        let d = equispaced_1d(12);
        let c = cov_matrix(&k, &d).unwrap();
        let f = chol_jitter(&c).unwrap();
        let mut target = c.entries().clone();
        for i in 0..12 {
            target[(i, i)] += f.jitter();
        }
        let err = (f.lower() * f.lower().transpose() - target).abs().max();
        assert!(err < 1e-9 * k.scale());
    }
}
