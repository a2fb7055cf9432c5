//! Clipped-GP model of simulator success/failure: a binary outcome is 1
//! exactly when a latent GP is positive. Inference runs by data
//! augmentation — truncated-normal Gibbs sweeps over the latent vector,
//! a Gibbs step for its mean, and Metropolis updates for the correlation
//! lengths — with MVN posterior prediction at new sites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::kernels::{
    chol_jitter, cov_block, cov_matrix, CholFactor, CorrFamily, CovMatrix, ProductKernel,
};
use crate::mcmc::transform::{from_real, log_jacobian, std_normal_cdf, std_normal_quantile, to_real};
use crate::mcmc::{AdaptiveProposal, Chain};
use crate::priors::PriorSpec;

pub use crate::calibration::{LAMBDA_MAX, LAMBDA_MIN};

/// Binary outcomes over the augmented design `[X*₀, T*₀]`, canonicalized so
/// the successes come first.
#[derive(Debug, Clone)]
pub struct FailureDataset {
    z: Vec<bool>,
    design0: Design,
    d_x: usize,
    d_t: usize,
    n_success: usize,
}

impl FailureDataset {
    /// Reorders rows successes-first (stable within each group).
    pub fn new(z: Vec<bool>, design0: Design, d_x: usize, d_t: usize) -> Result<Self> {
        if design0.dim() != d_x + d_t {
            return Err(Error::dim("failure design columns", d_x + d_t, design0.dim()));
        }
        if z.len() != design0.n_rows() {
            return Err(Error::dim("failure outcomes", design0.n_rows(), z.len()));
        }
        let n_success = z.iter().filter(|&&b| b).count();
        let n_failure = z.len() - n_success;
        if n_success == 0 || n_failure == 0 {
            return Err(Error::invalid(
                "z",
                format!("{n_success} successes, {n_failure} failures"),
                "need at least one success and one failure",
            ));
        }
        let order: Vec<usize> = (0..z.len())
            .filter(|&i| z[i])
            .chain((0..z.len()).filter(|&i| !z[i]))
            .collect();
        let design0 = design0.select_rows(&order);
        let mut zc = vec![true; n_success];
        zc.extend(std::iter::repeat(false).take(n_failure));
        Ok(FailureDataset { z: zc, design0, d_x, d_t, n_success })
    }

    pub fn total(&self) -> usize {
        self.z.len()
    }

    pub fn n_success(&self) -> usize {
        self.n_success
    }

    pub fn n_failure(&self) -> usize {
        self.z.len() - self.n_success
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn design0(&self) -> &Design {
        &self.design0
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_t(&self) -> usize {
        self.d_t
    }
}

/// Whether the latent kernel sees the variable inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceMode {
    /// Kernel over `t` only; a slice check is a single-point prediction.
    C1,
    /// Kernel over `(x, t)`; a slice check scans a space-filling design.
    C2,
}

/// Latent vector and classifier hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentState {
    pub zeta: Vec<f64>,
    pub mu_zeta: f64,
    pub lambda_zeta: Vec<f64>,
}

impl LatentState {
    /// Sign-consistent start: +0.5 at successes, −0.5 at failures.
    pub fn init(data: &FailureDataset, mode: SliceMode) -> Self {
        let zeta = data.z.iter().map(|&b| if b { 0.5 } else { -0.5 }).collect();
        let k = match mode {
            SliceMode::C1 => data.d_t,
            SliceMode::C2 => data.d_x + data.d_t,
        };
        LatentState { zeta, mu_zeta: 0.0, lambda_zeta: vec![1.0; k] }
    }

    /// True when `ζ_m > 0 ⟺ z_m = 1` on every coordinate (ties count as
    /// failures).
    pub fn signs_consistent(&self, z: &[bool]) -> bool {
        self.zeta.iter().zip(z.iter()).all(|(&v, &b)| (v > 0.0) == b)
    }
}

/// The classifier model: data, slice mode, and latent kernel family.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    data: FailureDataset,
    mode: SliceMode,
    family: CorrFamily,
    /// Columns of `design0` the kernel actually sees.
    active: Design,
}

impl ClassifierModel {
    pub fn new(data: FailureDataset, mode: SliceMode, family: CorrFamily) -> Self {
        let active = match mode {
            SliceMode::C1 => {
                let cols: Vec<usize> = (data.d_x..data.d_x + data.d_t).collect();
                data.design0.select_cols(&cols)
            }
            SliceMode::C2 => data.design0.clone(),
        };
        ClassifierModel { data, mode, family, active }
    }

    pub fn data(&self) -> &FailureDataset {
        &self.data
    }

    pub fn mode(&self) -> SliceMode {
        self.mode
    }

    pub fn family(&self) -> CorrFamily {
        self.family
    }

    /// Dimension of the latent kernel input (and of λ_ζ).
    pub fn active_dim(&self) -> usize {
        self.active.dim()
    }

    pub fn lambda_priors(&self) -> Vec<PriorSpec> {
        vec![PriorSpec::Uniform { a: LAMBDA_MIN, b: LAMBDA_MAX }; self.active_dim()]
    }

    /// Unit-variance latent kernel at the given correlation lengths.
    pub fn kernel(&self, lambda: &[f64]) -> Result<ProductKernel> {
        if lambda.len() != self.active_dim() {
            return Err(Error::dim("lambda_zeta", self.active_dim(), lambda.len()));
        }
        ProductKernel::isotropic_family(self.family, lambda, 1.0)
    }

    /// Latent prior covariance Σ* over the observed (active) design.
    pub fn sigma_star(&self, lambda: &[f64]) -> Result<CovMatrix> {
        cov_matrix(&self.kernel(lambda)?, &self.active)
    }

    /// Factor and precision of Σ*; computed once per hyperparameter state.
    pub fn factor(&self, lambda: &[f64]) -> Result<LatentFactor> {
        let chol = chol_jitter(&self.sigma_star(lambda)?)?;
        LatentFactor::from_chol(chol)
    }

    /// Log posterior density (up to the flat-prior constant) of the latent
    /// state: the clipped-data indicator, the latent MVN prior, and the
    /// hyperparameter priors. Sign or support violations return `-inf`.
    pub fn latent_log_posterior(&self, state: &LatentState) -> Result<f64> {
        if !state.signs_consistent(&self.data.z) {
            return Ok(f64::NEG_INFINITY);
        }
        let priors = self.lambda_priors();
        let lp: f64 = priors
            .iter()
            .zip(state.lambda_zeta.iter())
            .map(|(p, &l)| p.ln_pdf(l))
            .sum();
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let factor = self.factor(&state.lambda_zeta)?;
        Ok(self.latent_mvn_logpdf(state, &factor) + lp)
    }

    fn latent_mvn_logpdf(&self, state: &LatentState, factor: &LatentFactor) -> f64 {
        let zeta = DVector::from_column_slice(&state.zeta);
        let mean = DVector::from_element(zeta.len(), state.mu_zeta);
        crate::kernels::mvn_logpdf(&zeta, &mean, &factor.chol)
    }

    /// One full Gibbs sweep over the latent coordinates in canonical index
    /// order. The running vector `r = Q(ζ − μ1)` is updated after every
    /// coordinate so each full conditional costs O(n).
    pub fn gibbs_sweep_latent<R: Rng>(
        &self,
        state: &mut LatentState,
        factor: &LatentFactor,
        rng: &mut R,
    ) -> Result<()> {
        let n = self.data.total();
        let q = &factor.q;
        let mu = state.mu_zeta;
        let mut centered = DVector::from_fn(n, |i, _| state.zeta[i] - mu);
        let mut r = q * &centered;
        for i in 0..n {
            let qii = q[(i, i)];
            if !(qii > 0.0) {
                return Err(Error::Factorization {
                    attempted: vec![],
                    context: format!("nonpositive precision diagonal q_{i}{i} = {qii}"),
                });
            }
            let cond_mean = mu + centered[i] - r[i] / qii;
            let cond_var = 1.0 / qii;
            let region = if self.data.z[i] { HalfLine::Positive } else { HalfLine::NonPositive };
            let new = trunc_normal_draw(cond_mean, cond_var, region, rng)?;
            let delta = new - state.zeta[i];
            if delta != 0.0 {
                state.zeta[i] = new;
                centered[i] += delta;
                for k in 0..n {
                    r[k] += q[(k, i)] * delta;
                }
            }
        }
        Ok(())
    }

    /// Gibbs draw of μ_ζ under its flat prior:
    /// `N((1ᵀQζ)/(1ᵀQ1), 1/(1ᵀQ1))`.
    pub fn gibbs_mu_zeta<R: Rng>(&self, state: &mut LatentState, factor: &LatentFactor, rng: &mut R) {
        let zeta = DVector::from_column_slice(&state.zeta);
        let mean = factor.q_row_sums.dot(&zeta) / factor.q_total;
        let sd = (1.0 / factor.q_total).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        state.mu_zeta = mean + sd * z;
    }

    /// Metropolis update for λ_ζ on the probit scale. Returns the refreshed
    /// factor when the move is accepted so Σ* is inverted only once per
    /// hyperparameter state.
    pub fn metropolis_lambda_zeta<R: Rng>(
        &self,
        state: &mut LatentState,
        proposal: &AdaptiveProposal,
        rng: &mut R,
    ) -> Result<(bool, Option<LatentFactor>)> {
        let cur_factor = self.factor(&state.lambda_zeta)?;
        self.metropolis_lambda_zeta_with_factor(state, &cur_factor, proposal, rng)
    }

    /// Same update using the cached factor of the current λ_ζ, sparing one
    /// factorization per iteration. Bit-identical to the uncached path.
    pub fn metropolis_lambda_zeta_with_factor<R: Rng>(
        &self,
        state: &mut LatentState,
        cur_factor: &LatentFactor,
        proposal: &AdaptiveProposal,
        rng: &mut R,
    ) -> Result<(bool, Option<LatentFactor>)> {
        let priors = self.lambda_priors();
        let cur_real: Vec<f64> = priors
            .iter()
            .zip(state.lambda_zeta.iter())
            .map(|(p, &l)| to_real(p, l))
            .collect::<Result<Vec<f64>>>()?;
        let cur_pj: f64 = priors
            .iter()
            .zip(state.lambda_zeta.iter())
            .map(|(p, &l)| p.ln_pdf(l))
            .sum::<f64>()
            + priors
                .iter()
                .zip(cur_real.iter())
                .map(|(p, &r)| log_jacobian(p, r))
                .sum::<f64>();
        let cur_target = self.latent_mvn_logpdf(state, cur_factor) + cur_pj;
        let cand_real = proposal.propose(&cur_real, rng);
        let (cand_target, cand) = self.lambda_log_target(state, &cand_real)?;

        if crate::calibration::accept_move(cur_target, cand_target, rng) {
            let (lambda, factor) = cand.expect("finite target implies a factor");
            state.lambda_zeta = lambda;
            Ok((true, Some(factor)))
        } else {
            Ok((false, None))
        }
    }

    #[allow(clippy::type_complexity)]
    fn lambda_log_target(
        &self,
        state: &LatentState,
        reals: &[f64],
    ) -> Result<(f64, Option<(Vec<f64>, LatentFactor)>)> {
        if reals.iter().any(|r| !r.is_finite() || r.abs() > 8.0) {
            return Ok((f64::NEG_INFINITY, None));
        }
        let priors = self.lambda_priors();
        let lambda: Vec<f64> = priors
            .iter()
            .zip(reals.iter())
            .map(|(p, &r)| from_real(p, r))
            .collect();
        let lp: f64 = priors
            .iter()
            .zip(lambda.iter())
            .map(|(p, &l)| p.ln_pdf(l))
            .sum();
        if lp == f64::NEG_INFINITY {
            return Ok((f64::NEG_INFINITY, None));
        }
        let factor = self.factor(&lambda)?;
        let jac: f64 = priors
            .iter()
            .zip(reals.iter())
            .map(|(p, &r)| log_jacobian(p, r))
            .sum();
        let trial = LatentState { lambda_zeta: lambda.clone(), ..state.clone() };
        let target = self.latent_mvn_logpdf(&trial, &factor) + lp + jac;
        Ok((target, Some((lambda, factor))))
    }

    /// Draw from the posterior predictive latent process at new sites.
    /// `new_design` must have `active_dim()` columns (t-space for C1,
    /// (x,t)-space for C2).
    pub fn predictive_draw<R: Rng>(
        &self,
        state: &LatentState,
        factor: &LatentFactor,
        new_design: &Design,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let (mean, cond) = self.predictive_moments(state, factor, new_design)?;
        let cond_factor = chol_jitter(&cond)?;
        Ok(cond_factor.draw(&mean, rng))
    }

    /// Conditional mean and covariance of the latent process at new sites.
    pub fn predictive_moments(
        &self,
        state: &LatentState,
        factor: &LatentFactor,
        new_design: &Design,
    ) -> Result<(DVector<f64>, CovMatrix)> {
        if new_design.dim() != self.active_dim() {
            return Err(Error::dim("predictive design", self.active_dim(), new_design.dim()));
        }
        let kernel = self.kernel(&state.lambda_zeta)?;
        let cross = cov_block(&kernel, &self.active, new_design)?; // M_tot × M̃
        let prior_new = cov_matrix(&kernel, new_design)?;

        let a = factor.chol.forward_solve(&cross); // L⁻¹Σ̃
        let n = self.data.total();
        let centered = DMatrix::from_fn(n, 1, |i, _| state.zeta[i] - state.mu_zeta);
        let b = factor.chol.forward_solve(&centered);
        let mean = DVector::from_element(new_design.n_rows(), state.mu_zeta)
            + a.transpose() * b.column(0);

        let mut cond = prior_new.entries() - a.transpose() * &a;
        // Symmetrize and clamp tiny negative diagonals left by cancellation.
        for i in 0..cond.nrows() {
            for j in (i + 1)..cond.ncols() {
                let v = 0.5 * (cond[(i, j)] + cond[(j, i)]);
                cond[(i, j)] = v;
                cond[(j, i)] = v;
            }
            if cond[(i, i)] < 0.0 {
                cond[(i, i)] = 0.0;
            }
        }
        Ok((mean, CovMatrix::new(cond)?))
    }

    /// Leave-one-out classification rate under the current state: each
    /// held-out coordinate gets an untruncated conditional draw from the
    /// single inversion of Σ*, predicted success iff the draw is positive.
    pub fn loocv_rate<R: Rng>(&self, state: &LatentState, factor: &LatentFactor, rng: &mut R) -> f64 {
        let n = self.data.total();
        let q = &factor.q;
        let mu = state.mu_zeta;
        let centered = DVector::from_fn(n, |i, _| state.zeta[i] - mu);
        let r = q * &centered;
        let mut correct = 0usize;
        for i in 0..n {
            let qii = q[(i, i)];
            let cond_mean = mu + centered[i] - r[i] / qii;
            let cond_sd = (1.0 / qii).sqrt();
            let z: f64 = rng.sample(StandardNormal);
            let draw = cond_mean + cond_sd * z;
            if (draw > 0.0) == self.data.z[i] {
                correct += 1;
            }
        }
        correct as f64 / n as f64
    }
}

/// Cholesky factor of Σ* together with its full precision matrix and the
/// row sums needed by the μ_ζ Gibbs step.
#[derive(Debug, Clone)]
pub struct LatentFactor {
    pub chol: CholFactor,
    pub q: DMatrix<f64>,
    q_row_sums: DVector<f64>,
    q_total: f64,
}

impl LatentFactor {
    pub fn from_chol(chol: CholFactor) -> Result<Self> {
        let q = chol.inverse();
        let ones = DVector::from_element(q.nrows(), 1.0);
        let q_row_sums = &q * &ones;
        let q_total = q_row_sums.sum();
        if !(q_total > 0.0) {
            return Err(Error::Factorization {
                attempted: vec![],
                context: format!("nonpositive precision mass 1ᵀQ1 = {q_total}"),
            });
        }
        Ok(LatentFactor { chol, q, q_row_sums, q_total })
    }
}

/// Truncation regions for the latent full conditionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfLine {
    /// `(-∞, 0]` — failures.
    NonPositive,
    /// `(0, ∞)` — successes.
    Positive,
}

/// Tail mass below which the inverse-CDF method gives way to exponential
/// rejection sampling.
const FAR_TAIL_MASS: f64 = 1e-10;

/// Exact draw from a univariate normal truncated to a half-line.
pub fn trunc_normal_draw<R: Rng>(mean: f64, var: f64, region: HalfLine, rng: &mut R) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::invalid("var", var, "must be finite and > 0"));
    }
    let sd = var.sqrt();
    match region {
        HalfLine::Positive => Ok(mean + sd * std_lower_truncated(-mean / sd, rng)),
        HalfLine::NonPositive => Ok(mean - sd * std_lower_truncated(mean / sd, rng)),
    }
}

/// Standard normal conditioned on `Z > a`: inverse CDF through the upper
/// tail while the untruncated mass is workable, exponential rejection
/// (Robert-style) in the far tail.
fn std_lower_truncated<R: Rng>(a: f64, rng: &mut R) -> f64 {
    let tail = 0.5 * statrs::function::erf::erfc(a / std::f64::consts::SQRT_2);
    if tail >= FAR_TAIL_MASS {
        let v: f64 = rng.random();
        let w = (1.0 - v) * tail; // in (0, tail]
        -std_normal_quantile(w)
    } else {
        let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
            let z = a - u1.ln() / alpha;
            let u2: f64 = rng.random();
            let d = z - alpha;
            if u2 <= (-0.5 * d * d).exp() {
                return z;
            }
        }
    }
}

/// Configuration for a standalone classifier fit.
#[derive(Debug, Clone)]
pub struct ClassifierRunConfig {
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    /// Run LOOCV every this many iterations.
    pub loocv_stride: Option<u64>,
    /// Record the full latent vector in the chain (needed downstream for
    /// admissibility prediction).
    pub record_zeta: bool,
    pub freeze_after_burnin: bool,
    pub init_proposal_sd: f64,
}

/// Final state plus tuned proposal, exported for warm starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierState {
    pub latent: LatentState,
    pub lambda_proposal: AdaptiveProposal,
}

pub struct ClassifierRun {
    pub chain: Chain,
    pub state: ClassifierState,
}

pub fn classifier_columns(active_dim: usize, m_tot: usize, record_zeta: bool) -> Vec<String> {
    let mut names = vec!["mu_zeta".to_string()];
    names.extend((1..=active_dim).map(|k| format!("lambda_zeta_{k}")));
    names.push("acc_lambda".into());
    if record_zeta {
        names.extend((1..=m_tot).map(|k| format!("zeta_{k}")));
    }
    names
}

/// Metropolis-within-Gibbs for the classification model: per iteration a
/// Gibbs step for μ_ζ, a Metropolis update for λ_ζ, then a full truncated
/// Gibbs sweep of ζ, with LOOCV on its own stride and RNG stream.
pub fn run_classifier_mcmc(
    model: &ClassifierModel,
    cfg: &ClassifierRunConfig,
    warm: Option<&ClassifierState>,
    master_seed: u64,
    chain_index: u64,
) -> Result<ClassifierRun> {
    let mut rng_latent =
        crate::mcmc::substream(master_seed, chain_index, crate::mcmc::stream::LATENT);
    let mut rng_loocv =
        crate::mcmc::substream(master_seed, chain_index, crate::mcmc::stream::LOOCV);

    let (mut state, mut proposal) = match warm {
        Some(w) => (w.latent.clone(), w.lambda_proposal.clone()),
        None => (
            LatentState::init(model.data(), model.mode()),
            AdaptiveProposal::new(model.active_dim(), cfg.init_proposal_sd),
        ),
    };
    let mut factor = model.factor(&state.lambda_zeta)?;

    let names = classifier_columns(model.active_dim(), model.data().total(), cfg.record_zeta);
    let mut chain = Chain::new(names, cfg.iterations, cfg.burnin, cfg.thin)?;
    if factor.chol.jitter() > 0.0 {
        chain.jitter_events += 1;
    }

    for iter in 1..=cfg.iterations {
        model.gibbs_mu_zeta(&mut state, &factor, &mut rng_latent);

        let (accepted, new_factor) =
            model.metropolis_lambda_zeta_with_factor(&mut state, &factor, &proposal, &mut rng_latent)?;
        chain.tally("lambda_zeta", accepted);
        if let Some(f) = new_factor {
            if f.chol.jitter() > 0.0 {
                chain.jitter_events += 1;
            }
            factor = f;
        }
        let lambda_reals: Vec<f64> = model
            .lambda_priors()
            .iter()
            .zip(state.lambda_zeta.iter())
            .map(|(p, &l)| to_real(p, l))
            .collect::<Result<Vec<f64>>>()?;
        proposal.adapt_update(&lambda_reals);

        model.gibbs_sweep_latent(&mut state, &factor, &mut rng_latent)?;
        debug_assert!(state.signs_consistent(model.data().z()));

        if let Some(stride) = cfg.loocv_stride {
            if stride > 0 && iter % stride == 0 {
                let rate = model.loocv_rate(&state, &factor, &mut rng_loocv);
                chain.loocv.push((iter, rate));
            }
        }

        if cfg.freeze_after_burnin && iter == cfg.burnin {
            proposal.freeze();
        }

        if chain.should_record(iter) {
            let mut row = vec![state.mu_zeta];
            row.extend_from_slice(&state.lambda_zeta);
            row.push(accepted as u8 as f64);
            if cfg.record_zeta {
                row.extend_from_slice(&state.zeta);
            }
            chain.record(iter, row);
        }
    }

    Ok(ClassifierRun {
        chain,
        state: ClassifierState { latent: state, lambda_proposal: proposal },
    })
}

/// `P(success)` for an independent latent coordinate with mean `mu` and unit
/// variance — the analytic LOOCV oracle for diagonal Σ*.
pub fn success_probability(mu: f64) -> f64 {
    std_normal_cdf(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{stream, substream};

    fn two_point_data() -> FailureDataset {
        FailureDataset::new(
            vec![true, false],
            Design::from_rows(&[vec![0.2, 0.3], vec![0.8, 0.7]]).unwrap(),
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn canonical_ordering_successes_first() {
        let data = FailureDataset::new(
            vec![false, true, false, true],
            Design::from_rows(&[vec![0.1, 0.0], vec![0.2, 0.1], vec![0.3, 0.2], vec![0.4, 0.3]])
                .unwrap(),
            1,
            1,
        )
        .unwrap();
        assert_eq!(data.z(), &[true, true, false, false]);
        assert_eq!(data.design0().row(0), vec![0.2, 0.1]);
        assert_eq!(data.design0().row(1), vec![0.4, 0.3]);
        assert_eq!(data.design0().row(2), vec![0.1, 0.0]);
        assert_eq!(data.n_success(), 2);
        assert_eq!(data.n_failure(), 2);
    }

    #[test]
    fn all_one_class_rejected() {
        let d = Design::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        assert!(FailureDataset::new(vec![true, true], d.clone(), 1, 1).is_err());
        assert!(FailureDataset::new(vec![false, false], d, 1, 1).is_err());
    }

    #[test]
    fn sign_violation_is_neg_inf() {
        let model = ClassifierModel::new(two_point_data(), SliceMode::C2, CorrFamily::Matern32);
        let mut state = LatentState::init(model.data(), SliceMode::C2);
        state.zeta[0] = -0.5; // z₁ = 1 but ζ₁ < 0
        assert_eq!(model.latent_log_posterior(&state).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn lambda_out_of_support_is_neg_inf() {
        let model = ClassifierModel::new(two_point_data(), SliceMode::C2, CorrFamily::Matern32);
        let mut state = LatentState::init(model.data(), SliceMode::C2);
        state.lambda_zeta = vec![6.0, 1.0];
        assert_eq!(model.latent_log_posterior(&state).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn scalar_log_posterior_closed_form() {
        // Distant points at a tiny lengthscale: effectively independent
        // N(±0.5; 0, 1) coordinates plus the uniform-λ constants.
        let data = FailureDataset::new(
            vec![true, false],
            Design::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            1,
            1,
        )
        .unwrap();
        let model = ClassifierModel::new(data, SliceMode::C2, CorrFamily::SquaredExponential);
        let state = LatentState {
            zeta: vec![0.5, -0.5],
            mu_zeta: 0.0,
            lambda_zeta: vec![0.1, 0.1],
        };
        let got = model.latent_log_posterior(&state).unwrap();
        let want = 2.0 * (-0.918_938_533_204_672_7 - 0.125) + 2.0 * (1.0f64 / 4.9).ln();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn trunc_normal_respects_region() {
        let mut rng = substream(5, 0, stream::LATENT);
        for _ in 0..2000 {
            let d = trunc_normal_draw(0.3, 2.0, HalfLine::NonPositive, &mut rng).unwrap();
            assert!(d <= 0.0);
            let u = trunc_normal_draw(-0.7, 0.5, HalfLine::Positive, &mut rng).unwrap();
            assert!(u > 0.0);
        }
    }

    #[test]
    fn trunc_normal_rejects_bad_variance() {
        let mut rng = substream(5, 0, stream::LATENT);
        assert!(trunc_normal_draw(0.0, 0.0, HalfLine::Positive, &mut rng).is_err());
        assert!(trunc_normal_draw(0.0, -1.0, HalfLine::Positive, &mut rng).is_err());
    }

    #[test]
    fn half_normal_moment() {
        let mut rng = substream(11, 0, stream::LATENT);
        let reps = 1_000_000usize;
        let mut sum = 0.0;
        for _ in 0..reps {
            sum += trunc_normal_draw(0.0, 1.0, HalfLine::Positive, &mut rng).unwrap();
        }
        let mean = sum / reps as f64;
        let want = (2.0 / std::f64::consts::PI).sqrt();
        let sd = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!((mean - want).abs() < 3.0 * se, "{mean} vs {want}");
    }

    #[test]
    fn negligible_truncation_keeps_mean() {
        let mut rng = substream(12, 0, stream::LATENT);
        let reps = 200_000usize;
        let mut sum = 0.0;
        for _ in 0..reps {
            sum += trunc_normal_draw(8.0, 1.0, HalfLine::Positive, &mut rng).unwrap();
        }
        let mean = sum / reps as f64;
        let se = 1.0 / (reps as f64).sqrt();
        assert!((mean - 8.0).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn far_tail_branch_matches_mills_ratio() {
        // Standardized lower bound a = 8 forces the rejection branch;
        // E[Z | Z > a] = φ(a)/Φ̄(a).
        let mut rng = substream(13, 0, stream::LATENT);
        let reps = 100_000usize;
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        for _ in 0..reps {
            let d = trunc_normal_draw(-8.0, 1.0, HalfLine::Positive, &mut rng).unwrap();
            sum += d;
            min = min.min(d);
        }
        assert!(min > 0.0);
        let mean = sum / reps as f64 + 8.0; // back on the standardized scale
        let a: f64 = 8.0;
        let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let tail = 0.5 * statrs::function::erf::erfc(a / std::f64::consts::SQRT_2);
        let want = phi / tail;
        assert!((mean - want).abs() < 0.01, "{mean} vs {want}");
    }

    #[test]
    fn sweep_keeps_signs_consistent() {
        let data = FailureDataset::new(
            vec![true, true, false, true, false],
            Design::from_rows(&[
                vec![0.1, 0.2],
                vec![0.3, 0.1],
                vec![0.9, 0.8],
                vec![0.2, 0.4],
                vec![0.7, 0.9],
            ])
            .unwrap(),
            1,
            1,
        )
        .unwrap();
        let model = ClassifierModel::new(data, SliceMode::C2, CorrFamily::Matern32);
        let mut state = LatentState::init(model.data(), SliceMode::C2);
        let factor = model.factor(&state.lambda_zeta).unwrap();
        let mut rng = substream(21, 0, stream::LATENT);
        for _ in 0..200 {
            model.gibbs_sweep_latent(&mut state, &factor, &mut rng).unwrap();
            assert!(state.signs_consistent(model.data().z()));
        }
    }

    #[test]
    fn sweep_running_update_matches_naive() {
        let data = FailureDataset::new(
            vec![true, false, true, false],
            Design::from_rows(&[
                vec![0.0, 0.1],
                vec![0.4, 0.6],
                vec![0.8, 0.2],
                vec![0.5, 0.9],
            ])
            .unwrap(),
            1,
            1,
        )
        .unwrap();
        let model = ClassifierModel::new(data, SliceMode::C2, CorrFamily::SquaredExponential);
        let state0 = LatentState {
            zeta: vec![0.3, -0.2, 1.1, -0.6],
            mu_zeta: 0.1,
            lambda_zeta: vec![0.8, 1.2],
        };
        let factor = model.factor(&state0.lambda_zeta).unwrap();

        let mut fast = state0.clone();
        let mut rng_a = substream(31, 0, stream::LATENT);
        model.gibbs_sweep_latent(&mut fast, &factor, &mut rng_a).unwrap();

        // Naive path: recompute Q(ζ−μ1) from scratch at every coordinate,
        // consuming the identical RNG stream.
        let mut slow = state0.clone();
        let mut rng_b = substream(31, 0, stream::LATENT);
        let q = &factor.q;
        for i in 0..4 {
            let centered = DVector::from_fn(4, |k, _| slow.zeta[k] - slow.mu_zeta);
            let r = q * &centered;
            let qii = q[(i, i)];
            let cond_mean = slow.mu_zeta + centered[i] - r[i] / qii;
            let region =
                if model.data().z()[i] { HalfLine::Positive } else { HalfLine::NonPositive };
            slow.zeta[i] = trunc_normal_draw(cond_mean, 1.0 / qii, region, &mut rng_b).unwrap();
        }
        for i in 0..4 {
            assert!((fast.zeta[i] - slow.zeta[i]).abs() < 1e-10, "coordinate {i}");
        }
    }

    #[test]
    fn mu_zeta_conjugate_formula() {
        // Σ* ≈ I (tiny lengthscale over spread points), ζ = 1: N(1, 1/n).
        let data = FailureDataset::new(
            vec![true, true, true, false],
            Design::from_rows(&[vec![0.0], vec![0.33], vec![0.66], vec![1.0]]).unwrap(),
            0,
            1,
        )
        .unwrap();
        let model = ClassifierModel::new(data, SliceMode::C1, CorrFamily::SquaredExponential);
        let factor = model.factor(&[0.1]).unwrap();
        let mut state = LatentState {
            zeta: vec![1.0; 4],
            mu_zeta: 0.0,
            lambda_zeta: vec![0.1],
        };
        let mut rng = substream(41, 0, stream::LATENT);
        let reps = 50_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..reps {
            model.gibbs_mu_zeta(&mut state, &factor, &mut rng);
            sum += state.mu_zeta;
            sumsq += state.mu_zeta * state.mu_zeta;
        }
        let mean = sum / reps as f64;
        let var = sumsq / reps as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!((var - 0.25).abs() < 0.02, "{var}");
    }

    #[test]
    fn predictive_interpolates_observed_site() {
        let model = ClassifierModel::new(two_point_data(), SliceMode::C2, CorrFamily::Matern32);
        let state = LatentState {
            zeta: vec![0.9, -0.4],
            mu_zeta: 0.2,
            lambda_zeta: vec![1.0, 1.0],
        };
        let factor = model.factor(&state.lambda_zeta).unwrap();
        let new = Design::from_rows(&[vec![0.2, 0.3]]).unwrap();
        let (mean, cov) = model.predictive_moments(&state, &factor, &new).unwrap();
        assert!((mean[0] - 0.9).abs() < 1e-6);
        assert!(cov.entries()[(0, 0)] <= 1e-8);
    }

    #[test]
    fn predictive_reverts_to_prior_far_away() {
        let data = FailureDataset::new(
            vec![true, false],
            Design::from_rows(&[vec![0.0, 0.0], vec![0.05, 0.05]]).unwrap(),
            1,
            1,
        )
        .unwrap();
        let model = ClassifierModel::new(data, SliceMode::C2, CorrFamily::Matern32);
        let state = LatentState {
            zeta: vec![0.8, -0.3],
            mu_zeta: -0.15,
            lambda_zeta: vec![0.1, 0.1],
        };
        let factor = model.factor(&state.lambda_zeta).unwrap();
        let new = Design::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let (mean, cov) = model.predictive_moments(&state, &factor, &new).unwrap();
        assert!((mean[0] - state.mu_zeta).abs() < 1e-6, "{}", mean[0]);
        assert!((cov.entries()[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn loocv_rate_in_unit_interval_and_deterministic() {
        let model = ClassifierModel::new(two_point_data(), SliceMode::C2, CorrFamily::Matern32);
        let state = LatentState::init(model.data(), SliceMode::C2);
        let factor = model.factor(&state.lambda_zeta).unwrap();
        let mut r1 = substream(51, 0, stream::LOOCV);
        let mut r2 = substream(51, 0, stream::LOOCV);
        let a = model.loocv_rate(&state, &factor, &mut r1);
        let b = model.loocv_rate(&state, &factor, &mut r2);
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn zero_iteration_run_is_empty() {
        let model = ClassifierModel::new(two_point_data(), SliceMode::C2, CorrFamily::Matern32);
        let cfg = ClassifierRunConfig {
            iterations: 0,
            burnin: 0,
            thin: 1,
            loocv_stride: None,
            record_zeta: true,
            freeze_after_burnin: false,
            init_proposal_sd: 0.1,
        };
        let run = run_classifier_mcmc(&model, &cfg, None, 1, 0).unwrap();
        assert!(run.chain.is_empty());
    }

    #[test]
    fn equal_seeds_identical_chains() {
        let model = ClassifierModel::new(two_point_data(), SliceMode::C2, CorrFamily::Matern32);
        let cfg = ClassifierRunConfig {
            iterations: 80,
            burnin: 20,
            thin: 3,
            loocv_stride: Some(10),
            record_zeta: true,
            freeze_after_burnin: false,
            init_proposal_sd: 0.1,
        };
        let r1 = run_classifier_mcmc(&model, &cfg, None, 99, 0).unwrap();
        let r2 = run_classifier_mcmc(&model, &cfg, None, 99, 0).unwrap();
        assert_eq!(r1.chain.rows, r2.chain.rows);
        assert_eq!(r1.chain.loocv, r2.chain.loocv);
        assert_eq!(r1.chain.len() as u64, (80 - 20) / 3);
    }
}
