//! Coupling of calibration and classification through a selection-model
//! prior: θ proposals must be predicted successful along their slice of the
//! latent process before the usual Metropolis ratio is evaluated. Also the
//! B-matrix diagnostics that quantify how informative the failures are.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    accept_move, calibration_columns, calibration_row, gibbs_means_and_loglik, log_lik,
    metropolis_etadelta_step, metropolis_theta_step, theta_log_target, theta_prior_jac,
    CalKernels, CalibrationDataset, CalibrationState, EtaDeltaParams, MhOutcome, Theta,
};
use crate::classifier::{
    ClassifierModel, ClassifierState, LatentFactor, LatentState, SliceMode,
};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::mcmc::transform::to_real;
use crate::mcmc::{stream, substream, AdaptiveProposal, Chain};
use crate::priors::PriorSpec;

/// How a proposed θ is checked against the latent classifier.
#[derive(Debug, Clone)]
pub struct AdmissibilityConfig {
    pub mode: SliceMode,
    /// Space-filling design over the x-space (C2 only).
    pub xtilde: Option<Design>,
    /// Weights of the x-slice discretization; uniform when empty.
    pub weights: Vec<f64>,
    /// Tolerated failure probability along the slice.
    pub p_tol: f64,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl AdmissibilityConfig {
    pub fn c1(p_tol: f64) -> Result<Self> {
        let cfg = AdmissibilityConfig { mode: SliceMode::C1, xtilde: None, weights: vec![1.0], p_tol };
        cfg.validated()
    }

    pub fn c2(xtilde: Design, weights: Option<Vec<f64>>, p_tol: f64) -> Result<Self> {
        let n = xtilde.n_rows();
        let weights = weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        let cfg = AdmissibilityConfig { mode: SliceMode::C2, xtilde: Some(xtilde), weights, p_tol };
        cfg.validated()
    }

    fn validated(self) -> Result<Self> {
        if !(0.0..=1.0).contains(&self.p_tol) {
            return Err(Error::invalid("p_tol", self.p_tol, "must lie in [0, 1]"));
        }
        match self.mode {
            SliceMode::C1 => {
                if self.weights.len() != 1 {
                    return Err(Error::dim("C1 weights", 1, self.weights.len()));
                }
            }
            SliceMode::C2 => {
                let xt = self.xtilde.as_ref().ok_or_else(|| {
                    Error::invalid("xtilde", "none", "C2 admissibility needs a slice design")
                })?;
                if xt.n_rows() == 0 {
                    return Err(Error::invalid("xtilde", 0, "slice design must be nonempty"));
                }
                if self.weights.len() != xt.n_rows() {
                    return Err(Error::dim("weights", xt.n_rows(), self.weights.len()));
                }
            }
        }
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("weights", "negative entry", "must be nonnegative"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid("weights", sum, "must sum to 1"));
        }
        Ok(self)
    }

    /// The prediction design along the slice `t = θ` (unit cube).
    pub fn slice_design(&self, theta_unit: &[f64]) -> Design {
        match self.mode {
            SliceMode::C1 => Design::single(theta_unit),
            SliceMode::C2 => self
                .xtilde
                .as_ref()
                .expect("validated C2 config")
                .with_fixed_cols(theta_unit),
        }
    }

    /// Admissibility of a latent slice draw: the weighted failure mass
    /// `Σ_m w_m·𝕀{ζ̃_m ≤ 0}` may not exceed `p_tol`. With uniform weights
    /// and `p_tol = 0` this is exactly `min ζ̃ > 0`.
    pub fn admissible(&self, slice_draw: &DVector<f64>) -> Result<bool> {
        if slice_draw.len() != self.weights.len() {
            return Err(Error::dim("slice draw", self.weights.len(), slice_draw.len()));
        }
        let failure_mass: f64 = self
            .weights
            .iter()
            .zip(slice_draw.iter())
            .filter(|(_, &v)| v <= 0.0)
            .map(|(w, _)| w)
            .sum();
        Ok(failure_mass <= self.p_tol + WEIGHT_SUM_TOL)
    }
}

/// One gated Metropolis step on real-scale coordinates. The gate runs on
/// its own RNG stream, so a vacuous gate leaves the move stream identical
/// to the ungated kernel's.
pub struct GatedStep {
    pub real: Vec<f64>,
    pub log_target: f64,
    pub accepted: bool,
    pub gate_passed: bool,
}

pub fn gated_mh_step<R1: Rng, R2: Rng>(
    cur_real: &[f64],
    cur_target: f64,
    proposal: &AdaptiveProposal,
    mut target: impl FnMut(&[f64]) -> Result<f64>,
    mut gate: impl FnMut(&[f64], &mut R2) -> Result<bool>,
    rng_move: &mut R1,
    rng_gate: &mut R2,
) -> Result<GatedStep> {
    let cand = proposal.propose(cur_real, rng_move);
    if !gate(&cand, rng_gate)? {
        return Ok(GatedStep {
            real: cur_real.to_vec(),
            log_target: cur_target,
            accepted: false,
            gate_passed: false,
        });
    }
    let cand_target = target(&cand)?;
    if accept_move(cur_target, cand_target, rng_move) {
        Ok(GatedStep { real: cand, log_target: cand_target, accepted: true, gate_passed: true })
    } else {
        Ok(GatedStep {
            real: cur_real.to_vec(),
            log_target: cur_target,
            accepted: false,
            gate_passed: true,
        })
    }
}

/// Metropolis update of θ behind the admissibility gate: a fresh latent
/// predictive draw on the proposal's slice decides whether the usual
/// likelihood ratio is evaluated at all.
#[allow(clippy::too_many_arguments)]
pub fn metropolis_theta_gated(
    data: &CalibrationDataset,
    kernels: CalKernels,
    theta: &Theta,
    params: &EtaDeltaParams,
    priors: &[PriorSpec],
    model: &ClassifierModel,
    latent: &LatentState,
    factor: &LatentFactor,
    cfg: &AdmissibilityConfig,
    proposal: &AdaptiveProposal,
    rng_theta: &mut ChaCha8Rng,
    rng_gate: &mut ChaCha8Rng,
) -> Result<(MhOutcome<Theta>, bool)> {
    let step = metropolis_theta_gated_step(
        data, kernels, theta, params, priors, model, latent, factor, cfg, None, proposal,
        rng_theta, rng_gate,
    )?;
    Ok((
        MhOutcome { value: step.theta, accepted: step.accepted, log_target: step.log_lik },
        step.gate_passed,
    ))
}

/// Gated θ update with a log-likelihood cache threaded through, mirroring
/// the ungated step function.
pub struct GatedThetaStep {
    pub theta: Theta,
    pub accepted: bool,
    pub gate_passed: bool,
    pub log_lik: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn metropolis_theta_gated_step(
    data: &CalibrationDataset,
    kernels: CalKernels,
    theta: &Theta,
    params: &EtaDeltaParams,
    priors: &[PriorSpec],
    model: &ClassifierModel,
    latent: &LatentState,
    factor: &LatentFactor,
    cfg: &AdmissibilityConfig,
    cur_loglik: Option<f64>,
    proposal: &AdaptiveProposal,
    rng_theta: &mut ChaCha8Rng,
    rng_gate: &mut ChaCha8Rng,
) -> Result<GatedThetaStep> {
    let cur_real: Vec<f64> = priors
        .iter()
        .zip(theta.natural().iter())
        .map(|(p, &x)| to_real(p, x))
        .collect::<Result<Vec<f64>>>()?;
    let cur_ll = match cur_loglik {
        Some(v) => v,
        None => log_lik(data, kernels, theta, params)?,
    };
    let cur_target = cur_ll
        + theta_prior_jac(priors, &cur_real)?
            .map(|(_, pj)| pj)
            .unwrap_or(f64::NEG_INFINITY);

    // Candidate log likelihood captured on the way through the target
    // closure so the accepted state refreshes the cache.
    let mut cand_ll = f64::NAN;
    let step = gated_mh_step(
        &cur_real,
        cur_target,
        proposal,
        |reals| match theta_prior_jac(priors, reals)? {
            None => Ok(f64::NEG_INFINITY),
            Some((cand, pj)) => {
                let ll = log_lik(data, kernels, &cand, params)?;
                cand_ll = ll;
                Ok(ll + pj)
            }
        },
        |reals, rng| {
            let cand = match theta_prior_jac(priors, reals)? {
                // Out-of-support proposals die before the latent draw.
                None => return Ok(false),
                Some((cand, _)) => cand,
            };
            let slice = cfg.slice_design(cand.unit());
            let draw = model.predictive_draw(latent, factor, &slice, rng)?;
            cfg.admissible(&draw)
        },
        rng_theta,
        rng_gate,
    )?;

    if step.accepted {
        let (cand_theta, _) = theta_prior_jac(priors, &step.real)?
            .expect("accepted move has a decoded state");
        Ok(GatedThetaStep { theta: cand_theta, accepted: true, gate_passed: true, log_lik: cand_ll })
    } else {
        Ok(GatedThetaStep {
            theta: theta.clone(),
            accepted: false,
            gate_passed: step.gate_passed,
            log_lik: cur_ll,
        })
    }
}

/// Settings for a coupled run.
#[derive(Debug, Clone)]
pub struct CoupledRunConfig {
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    pub loocv_stride: Option<u64>,
    /// `None` disables the gate entirely (plain calibration inside the
    /// coupled driver).
    pub admissibility: Option<AdmissibilityConfig>,
    pub freeze_after_burnin: bool,
    pub init_proposal_sd: f64,
}

/// Resumable snapshot of every sampler component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledState {
    pub calibration: CalibrationState,
    pub classifier: ClassifierState,
    pub completed_iterations: u64,
}

pub struct CoupledRun {
    pub chain: Chain,
    pub state: CoupledState,
    /// Populated when the run stopped early on a numerical failure; the
    /// chain then holds everything recorded up to the abort.
    pub aborted: Option<String>,
}

pub fn coupled_columns(d_x: usize, d_t: usize, latent_dim: usize) -> Vec<String> {
    let mut names = calibration_columns(d_x, d_t);
    names.push("mu_zeta".into());
    names.extend((1..=latent_dim).map(|k| format!("lambda_zeta_{k}")));
    names.push("acc_lambda".into());
    names.push("admissible".into());
    names
}

/// Algorithm: per iteration the classifier block (μ_ζ Gibbs, λ_ζ
/// Metropolis, latent sweep), the emulator/discrepancy block (means Gibbs,
/// hyperparameter Metropolis), then the gated θ update using a fresh latent
/// predictive draw on the proposal slice.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled_mcmc(
    cal_data: &CalibrationDataset,
    model: &ClassifierModel,
    kernels: CalKernels,
    theta_priors: &[PriorSpec],
    cfg: &CoupledRunConfig,
    warm: Option<&CoupledState>,
    master_seed: u64,
    chain_index: u64,
) -> Result<CoupledRun> {
    if let Some(adm) = &cfg.admissibility {
        if adm.mode != model.mode() {
            return Err(Error::Config(format!(
                "admissibility mode {:?} does not match classifier mode {:?}",
                adm.mode,
                model.mode()
            )));
        }
        if let Some(xt) = &adm.xtilde {
            if xt.dim() != cal_data.d_x() {
                return Err(Error::dim("xtilde columns", cal_data.d_x(), xt.dim()));
            }
        }
    }

    let mut rng_latent = substream(master_seed, chain_index, stream::LATENT);
    let mut rng_emu = substream(master_seed, chain_index, stream::EMULATOR);
    let mut rng_theta = substream(master_seed, chain_index, stream::THETA);
    let mut rng_gate = substream(master_seed, chain_index, stream::GATE);
    let mut rng_loocv = substream(master_seed, chain_index, stream::LOOCV);

    let d_x = cal_data.d_x();
    let d_t = cal_data.d_t();

    let (mut latent, mut lambda_prop) = match warm {
        Some(w) => (w.classifier.latent.clone(), w.classifier.lambda_proposal.clone()),
        None => (
            LatentState::init(model.data(), model.mode()),
            AdaptiveProposal::new(model.active_dim(), cfg.init_proposal_sd),
        ),
    };
    let (mut params, mut theta, mut etadelta_prop, mut theta_prop) = match warm {
        Some(w) => (
            w.calibration.params.clone(),
            Theta::from_natural(theta_priors, w.calibration.theta_natural.clone())?,
            w.calibration.etadelta_proposal.clone(),
            w.calibration.theta_proposal.clone(),
        ),
        None => (
            EtaDeltaParams::init(d_x, d_t),
            Theta::from_unit(theta_priors, vec![0.5; d_t])?,
            AdaptiveProposal::new(3 + 2 * d_x + d_t, cfg.init_proposal_sd),
            AdaptiveProposal::new(d_t, cfg.init_proposal_sd),
        ),
    };

    let mut chain = Chain::new(
        coupled_columns(d_x, d_t, model.active_dim()),
        cfg.iterations,
        cfg.burnin,
        cfg.thin,
    )?;

    let mut factor = model.factor(&latent.lambda_zeta)?;
    if factor.chol.jitter() > 0.0 {
        chain.jitter_events += 1;
    }

    // Admissibility of the recorded θ: refreshed whenever a proposal passes
    // the gate and is accepted; checked once here for the starting value.
    let mut theta_admissible = match &cfg.admissibility {
        Some(adm) => {
            let slice = adm.slice_design(theta.unit());
            let draw = model.predictive_draw(&latent, &factor, &slice, &mut rng_gate)?;
            adm.admissible(&draw)?
        }
        None => true,
    };

    let mut aborted = None;
    let mut completed = 0u64;

    'outer: for iter in 1..=cfg.iterations {
        macro_rules! try_or_abort {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(err) => {
                        aborted = Some(err.to_string());
                        break 'outer;
                    }
                }
            };
        }

        // <2.1> classifier updates
        model.gibbs_mu_zeta(&mut latent, &factor, &mut rng_latent);
        let (acc_lambda, new_factor) = try_or_abort!(model.metropolis_lambda_zeta_with_factor(
            &mut latent,
            &factor,
            &lambda_prop,
            &mut rng_latent
        ));
        chain.tally("lambda_zeta", acc_lambda);
        if let Some(f) = new_factor {
            if f.chol.jitter() > 0.0 {
                chain.jitter_events += 1;
            }
            factor = f;
        }
        let lambda_reals: Vec<f64> = model
            .lambda_priors()
            .iter()
            .zip(latent.lambda_zeta.iter())
            .map(|(p, &l)| to_real(p, l))
            .collect::<Result<Vec<f64>>>()?;
        lambda_prop.adapt_update(&lambda_reals);
        try_or_abort!(model.gibbs_sweep_latent(&mut latent, &factor, &mut rng_latent));

        if let Some(stride) = cfg.loocv_stride {
            if stride > 0 && iter % stride == 0 {
                let rate = model.loocv_rate(&latent, &factor, &mut rng_loocv);
                chain.loocv.push((iter, rate));
            }
        }

        // <2.2> emulator and discrepancy updates
        let (mu_eta, mu_delta, loglik) =
            try_or_abort!(gibbs_means_and_loglik(cal_data, kernels, &theta, &params, &mut rng_emu));
        params.mu_eta = mu_eta;
        params.mu_delta = mu_delta;
        let estep = try_or_abort!(metropolis_etadelta_step(
            cal_data,
            kernels,
            &theta,
            &params,
            Some(loglik),
            &etadelta_prop,
            &mut rng_emu
        ));
        chain.tally("etadelta", estep.accepted);
        let acc_ed = estep.accepted;
        let loglik = estep.log_lik;
        params = estep.params;
        let block_reals: Vec<f64> = EtaDeltaParams::block_priors(d_x, d_t)
            .iter()
            .zip(params.block_naturals().iter())
            .map(|(p, &x)| to_real(p, x))
            .collect::<Result<Vec<f64>>>()?;
        etadelta_prop.adapt_update(&block_reals);

        // <2.3> gated θ update
        let acc_theta;
        match &cfg.admissibility {
            Some(adm) => {
                let outcome = try_or_abort!(metropolis_theta_gated_step(
                    cal_data,
                    kernels,
                    &theta,
                    &params,
                    theta_priors,
                    model,
                    &latent,
                    &factor,
                    adm,
                    Some(loglik),
                    &theta_prop,
                    &mut rng_theta,
                    &mut rng_gate,
                ));
                // A gate rejection is a rejection for adaptation purposes.
                chain.tally("theta", outcome.accepted);
                acc_theta = outcome.accepted;
                if outcome.accepted {
                    theta_admissible = true;
                }
                theta = outcome.theta;
            }
            None => {
                let outcome = try_or_abort!(metropolis_theta_step(
                    cal_data,
                    kernels,
                    &theta,
                    &params,
                    theta_priors,
                    Some(loglik),
                    &theta_prop,
                    &mut rng_theta
                ));
                chain.tally("theta", outcome.accepted);
                acc_theta = outcome.accepted;
                theta = outcome.theta;
            }
        }
        let theta_reals: Vec<f64> = theta_priors
            .iter()
            .zip(theta.natural().iter())
            .map(|(p, &x)| to_real(p, x))
            .collect::<Result<Vec<f64>>>()?;
        theta_prop.adapt_update(&theta_reals);

        if cfg.freeze_after_burnin && iter == cfg.burnin {
            lambda_prop.freeze();
            etadelta_prop.freeze();
            theta_prop.freeze();
        }

        if chain.should_record(iter) {
            let mut row = calibration_row(&theta, &params, acc_ed, acc_theta);
            row.push(latent.mu_zeta);
            row.extend_from_slice(&latent.lambda_zeta);
            row.push(acc_lambda as u8 as f64);
            row.push(theta_admissible as u8 as f64);
            chain.record(iter, row);
        }
        completed = iter;
    }

    Ok(CoupledRun {
        chain,
        state: CoupledState {
            calibration: CalibrationState {
                theta_natural: theta.natural().to_vec(),
                params,
                etadelta_proposal: etadelta_prop,
                theta_proposal: theta_prop,
            },
            classifier: ClassifierState { latent, lambda_proposal: lambda_prop },
            completed_iterations: completed,
        },
        aborted,
    })
}

/// One recorded draw of the classification posterior, as needed to realize
/// predictive slices.
#[derive(Debug, Clone)]
pub struct LatentDraw {
    pub state: LatentState,
}

/// Binary admissibility predictions: rows are latent-posterior draws,
/// columns are θ draws from the unconstrained calibration posterior.
#[derive(Debug, Clone)]
pub struct BMatrix {
    entries: Vec<Vec<u8>>,
    n_cols: usize,
}

impl BMatrix {
    pub fn from_entries(entries: Vec<Vec<u8>>) -> Result<Self> {
        if entries.is_empty() || entries[0].is_empty() {
            return Err(Error::invalid("B", "empty", "matrix needs rows and columns"));
        }
        let n_cols = entries[0].len();
        for (i, row) in entries.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::dim(format!("B row {i}"), n_cols, row.len()));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(Error::invalid("B", "entry > 1", "matrix must be binary"));
            }
        }
        Ok(BMatrix { entries, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.entries.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn entry(&self, i: usize, j: usize) -> u8 {
        self.entries[i][j]
    }

    /// Per-latent-draw estimates of the constrained posterior's normalizing
    /// constant π.
    pub fn row_means(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).sum::<f64>() / self.n_cols as f64)
            .collect()
    }

    /// Pointwise admissibility probabilities π̂_j, usable as resampling
    /// weights for the unconstrained θ draws.
    pub fn col_means(&self) -> Vec<f64> {
        let n = self.n_rows() as f64;
        (0..self.n_cols)
            .map(|j| self.entries.iter().map(|r| r[j] as f64).sum::<f64>() / n)
            .collect()
    }
}

/// Builds the B-matrix: entry (i, j) is the admissibility of θ_j under one
/// fresh predictive realization of latent draw i. Rows run in parallel;
/// each cell owns a substream keyed by (i, j) so the result is identical to
/// the sequential loop.
pub fn build_b_matrix(
    model: &ClassifierModel,
    latent_draws: &[LatentDraw],
    theta_draws: &[Theta],
    cfg: &AdmissibilityConfig,
    master_seed: u64,
) -> Result<BMatrix> {
    if latent_draws.is_empty() || theta_draws.is_empty() {
        return Err(Error::invalid("draws", "empty", "need latent and theta draws"));
    }
    let bmat_master = master_seed ^ 0xb11a_7e5e_ed0c_ebu64;
    let rows: Result<Vec<Vec<u8>>> = latent_draws
        .par_iter()
        .enumerate()
        .map(|(i, ld)| {
            let factor = model.factor(&ld.state.lambda_zeta)?;
            let mut row = Vec::with_capacity(theta_draws.len());
            for (j, theta) in theta_draws.iter().enumerate() {
                let mut rng = substream(bmat_master, i as u64, j as u64);
                let slice = cfg.slice_design(theta.unit());
                let draw = model.predictive_draw(&ld.state, &factor, &slice, &mut rng)?;
                row.push(cfg.admissible(&draw)? as u8);
            }
            Ok(row)
        })
        .collect();
    BMatrix::from_entries(rows?)
}

/// Fraction of draws inside a fixed admissible set — the Monte Carlo
/// estimate of the constrained posterior's normalizing constant.
pub fn pi_hat(theta_draws: &[Theta], in_set: impl Fn(&Theta) -> bool) -> f64 {
    if theta_draws.is_empty() {
        return 0.0;
    }
    theta_draws.iter().filter(|t| in_set(t)).count() as f64 / theta_draws.len() as f64
}

/// Distribution summaries of the B-matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilitySummary {
    /// Fraction of θ draws with π̂_j at or below the low cut — almost always
    /// classified as failures.
    pub frac_always_fail: f64,
    /// Fraction with π̂_j at or above the high cut — admissible with or
    /// without the failure data.
    pub frac_always_success: f64,
    pub low_cut: f64,
    pub high_cut: f64,
    /// Pointwise admissibility probabilities (resampling weights).
    pub col_means: Vec<f64>,
    /// Per-latent-draw π estimates.
    pub row_means: Vec<f64>,
}

pub fn admissibility_summary(b: &BMatrix, low_cut: f64, high_cut: f64) -> AdmissibilitySummary {
    let col_means = b.col_means();
    let row_means = b.row_means();
    let n = col_means.len() as f64;
    let frac_always_fail = col_means.iter().filter(|&&v| v <= low_cut).count() as f64 / n;
    let frac_always_success = col_means.iter().filter(|&&v| v >= high_cut).count() as f64 / n;
    AdmissibilitySummary {
        frac_always_fail,
        frac_always_success,
        low_cut,
        high_cut,
        col_means,
        row_means,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::FailureDataset;
    use crate::kernels::CorrFamily;

    fn uniform_cfg(n: usize, p_tol: f64) -> AdmissibilityConfig {
        AdmissibilityConfig::c2(crate::design::equispaced_1d(n), None, p_tol).unwrap()
    }

    #[test]
    fn admissible_all_positive_and_all_negative() {
        let cfg = uniform_cfg(10, 0.0);
        let pos = DVector::from_element(10, 1.0);
        let neg = DVector::from_element(10, -1.0);
        assert!(cfg.admissible(&pos).unwrap());
        assert!(!cfg.admissible(&neg).unwrap());
    }

    #[test]
    fn admissible_fraction_thresholds() {
        let cfg_strict = uniform_cfg(10, 0.05);
        let cfg_loose = uniform_cfg(10, 0.15);
        // 9 of 10 positive → failure mass 0.1.
        let mut v = vec![1.0; 10];
        v[3] = -0.2;
        let draw = DVector::from_vec(v);
        assert!(!cfg_strict.admissible(&draw).unwrap());
        assert!(cfg_loose.admissible(&draw).unwrap());
    }

    #[test]
    fn admissible_monotone_in_ptol() {
        let mut v = vec![1.0; 8];
        v[0] = -1.0;
        v[5] = 0.0; // tie counts as failure
        let draw = DVector::from_vec(v);
        let mut was_admissible = false;
        for k in 0..=10 {
            let p = k as f64 / 10.0;
            let adm = uniform_cfg(8, p).admissible(&draw).unwrap();
            assert!(!was_admissible || adm, "lost admissibility at p_tol {p}");
            was_admissible = adm;
        }
        assert!(was_admissible);
    }

    #[test]
    fn weight_validation() {
        let xt = crate::design::equispaced_1d(3);
        assert!(AdmissibilityConfig::c2(xt.clone(), Some(vec![0.5, 0.5]), 0.0).is_err());
        assert!(AdmissibilityConfig::c2(xt.clone(), Some(vec![0.5, 0.3, 0.3]), 0.0).is_err());
        assert!(AdmissibilityConfig::c2(xt, Some(vec![0.5, 0.3, 0.2]), 0.0).is_ok());
        assert!(AdmissibilityConfig::c1(1.5).is_err());
    }

    #[test]
    fn bmatrix_hand_case_means() {
        let b = BMatrix::from_entries(vec![vec![1, 0], vec![1, 1]]).unwrap();
        assert_eq!(b.row_means(), vec![0.5, 1.0]);
        assert_eq!(b.col_means(), vec![1.0, 0.5]);
    }

    #[test]
    fn bmatrix_row_col_duality_random() {
        let mut rng = substream(8, 0, stream::BMATRIX);
        for _ in 0..20 {
            let rows = 1 + (rng.random::<u64>() % 6) as usize;
            let cols = 1 + (rng.random::<u64>() % 6) as usize;
            let entries: Vec<Vec<u8>> = (0..rows)
                .map(|_| (0..cols).map(|_| (rng.random::<f64>() < 0.5) as u8).collect())
                .collect();
            let b = BMatrix::from_entries(entries.clone()).unwrap();
            let total: f64 = entries.iter().flatten().map(|&v| v as f64).sum();
            let via_rows: f64 = b.row_means().iter().sum::<f64>() * cols as f64;
            let via_cols: f64 = b.col_means().iter().sum::<f64>() * rows as f64;
            assert!((via_rows - total).abs() < 1e-12);
            assert!((via_cols - total).abs() < 1e-12);
        }
    }

    #[test]
    fn pi_hat_edges() {
        let priors = vec![PriorSpec::Uniform { a: 0.0, b: 1.0 }];
        let draws: Vec<Theta> = (0..10)
            .map(|k| Theta::from_natural(&priors, vec![0.05 + 0.09 * k as f64]).unwrap())
            .collect();
        assert_eq!(pi_hat(&draws, |_| true), 1.0);
        assert_eq!(pi_hat(&draws, |_| false), 0.0);
        let inside = pi_hat(&draws, |t| t.natural()[0] > 0.25 && t.natural()[0] < 0.75);
        assert!((inside - 0.5).abs() < 1e-12);
    }

    #[test]
    fn summary_all_ones() {
        let b = BMatrix::from_entries(vec![vec![1, 1, 1], vec![1, 1, 1]]).unwrap();
        let s = admissibility_summary(&b, 0.1, 0.9);
        assert_eq!(s.frac_always_fail, 0.0);
        assert_eq!(s.frac_always_success, 1.0);
    }

    #[test]
    fn bmatrix_parallel_matches_sequential_substreams() {
        let data = FailureDataset::new(
            vec![true, true, false, false],
            Design::from_rows(&[
                vec![0.1, 0.2],
                vec![0.5, 0.4],
                vec![0.9, 0.9],
                vec![0.8, 0.95],
            ])
            .unwrap(),
            1,
            1,
        )
        .unwrap();
        let model = ClassifierModel::new(data, SliceMode::C2, CorrFamily::Matern32);
        let latent_draws: Vec<LatentDraw> = (0..3)
            .map(|k| LatentDraw {
                state: LatentState {
                    zeta: vec![0.5 + 0.1 * k as f64, 0.4, -0.3, -0.6],
                    mu_zeta: 0.0,
                    lambda_zeta: vec![1.0, 0.8],
                },
            })
            .collect();
        let priors = vec![PriorSpec::Uniform { a: 0.0, b: 1.0 }];
        let thetas: Vec<Theta> = (0..4)
            .map(|k| Theta::from_natural(&priors, vec![0.2 + 0.2 * k as f64]).unwrap())
            .collect();
        let cfg = AdmissibilityConfig::c2(crate::design::equispaced_1d(5), None, 0.0).unwrap();

        let b1 = build_b_matrix(&model, &latent_draws, &thetas, &cfg, 123).unwrap();
        // Sequential reference with the same per-cell substreams.
        let bmat_master = 123u64 ^ 0xb11a_7e5e_ed0c_ebu64;
        for i in 0..3 {
            let factor = model.factor(&latent_draws[i].state.lambda_zeta).unwrap();
            for (j, theta) in thetas.iter().enumerate() {
                let mut rng = substream(bmat_master, i as u64, j as u64);
                let slice = cfg.slice_design(theta.unit());
                let draw = model
                    .predictive_draw(&latent_draws[i].state, &factor, &slice, &mut rng)
                    .unwrap();
                let want = cfg.admissible(&draw).unwrap() as u8;
                assert_eq!(b1.entry(i, j), want, "cell ({i},{j})");
            }
        }
    }
}
