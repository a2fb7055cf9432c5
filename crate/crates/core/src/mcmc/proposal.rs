//! Adaptive multivariate-normal random-walk proposals (Haario-style).
//!
//! The proposal covariance is `s_d·(Ĉov + ε·I)` where `Ĉov` is the running
//! sample covariance of the chain history and `s_d = 2.4²/d`. Before `n₀`
//! history points have accumulated, a fixed diagonal is used.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Haario regularizer added to the sample covariance.
pub const ADAPT_EPSILON: f64 = 1e-6;
/// History size before adaptation turns on.
pub const ADAPT_START: usize = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveProposal {
    dim: usize,
    /// Number of history points pushed so far.
    n: usize,
    mean: Vec<f64>,
    /// Running sum of outer products of deviations (unnormalized covariance).
    m2: Vec<Vec<f64>>,
    scale: f64,
    epsilon: f64,
    adaptation_start: usize,
    init_sd: f64,
    frozen: bool,
}

impl AdaptiveProposal {
    /// `init_sd` is the per-coordinate standard deviation used before the
    /// adaptation threshold is reached.
    pub fn new(dim: usize, init_sd: f64) -> Self {
        AdaptiveProposal {
            dim,
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![vec![0.0; dim]; dim],
            scale: 2.4 * 2.4 / dim as f64,
            epsilon: ADAPT_EPSILON,
            adaptation_start: ADAPT_START,
            init_sd,
            frozen: false,
        }
    }

    pub fn with_adaptation_start(mut self, n0: usize) -> Self {
        self.adaptation_start = n0;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_seen(&self) -> usize {
        self.n
    }

    /// Permanently stops adaptation; the kernel is fixed from here on.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Welford update of the running mean and covariance. No-op when frozen.
    pub fn adapt_update(&mut self, point: &[f64]) {
        assert_eq!(point.len(), self.dim);
        if self.frozen {
            return;
        }
        self.n += 1;
        let n = self.n as f64;
        let mut delta = vec![0.0; self.dim];
        for (k, d) in delta.iter_mut().enumerate() {
            *d = point[k] - self.mean[k];
        }
        for (k, d) in delta.iter().enumerate() {
            self.mean[k] += d / n;
        }
        // m2 += delta_pre ⊗ delta_post
        for i in 0..self.dim {
            let post_i = point[i] - self.mean[i];
            for j in 0..self.dim {
                self.m2[i][j] += delta[j] * post_i;
            }
        }
    }

    /// Unbiased sample covariance of the history (zeros until two points).
    pub fn sample_cov(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.dim, self.dim);
        if self.n >= 2 {
            let denom = (self.n - 1) as f64;
            for i in 0..self.dim {
                for j in 0..self.dim {
                    c[(i, j)] = self.m2[i][j] / denom;
                }
            }
        }
        c
    }

    /// Covariance of the proposal actually used at the current history size.
    pub fn proposal_cov(&self) -> DMatrix<f64> {
        if self.n < self.adaptation_start.max(2) {
            DMatrix::from_diagonal_element(self.dim, self.dim, self.init_sd * self.init_sd)
        } else {
            let mut c = self.sample_cov() * self.scale;
            for i in 0..self.dim {
                c[(i, i)] += self.scale * self.epsilon;
            }
            c
        }
    }

    /// Proposes `current + L·z` with `L·Lᵀ` the proposal covariance.
    pub fn propose<R: Rng>(&self, current: &[f64], rng: &mut R) -> Vec<f64> {
        assert_eq!(current.len(), self.dim);
        let cov = self.proposal_cov();
        let chol = nalgebra::Cholesky::new(cov)
            .expect("proposal covariance is positive definite by construction");
        let z = DVector::from_fn(self.dim, |_, _| rng.sample(StandardNormal));
        let step = chol.l() * z;
        current.iter().zip(step.iter()).map(|(c, s)| c + s).collect()
    }
}
