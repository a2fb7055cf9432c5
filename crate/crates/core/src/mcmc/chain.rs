//! Chain storage, thinning/burn-in bookkeeping, and empirical summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recorded draws of a single MCMC run, with acceptance bookkeeping and
/// per-iteration diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chain {
    pub names: Vec<String>,
    /// One row per recorded draw, aligned with `names`.
    pub rows: Vec<Vec<f64>>,
    /// Iteration number (1-based) of each recorded row.
    pub iters: Vec<u64>,
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    /// (accepted, attempted) per named update.
    pub accept: BTreeMap<String, (u64, u64)>,
    /// LOOCV classification rates as (iteration, rate) pairs.
    pub loocv: Vec<(u64, f64)>,
    /// Count of factorizations that needed a nonzero nugget.
    pub jitter_events: u64,
}

impl Chain {
    pub fn new(names: Vec<String>, iterations: u64, burnin: u64, thin: u64) -> Result<Self> {
        if thin == 0 {
            return Err(Error::invalid("thin", 0, "must be >= 1"));
        }
        if burnin >= iterations && iterations > 0 {
            return Err(Error::invalid("burnin", burnin, "must be < iterations"));
        }
        Ok(Chain {
            names,
            rows: Vec::new(),
            iters: Vec::new(),
            iterations,
            burnin,
            thin,
            accept: BTreeMap::new(),
            loocv: Vec::new(),
            jitter_events: 0,
        })
    }

    /// Whether iteration `iter` (1-based) lands on the recording stride.
    pub fn should_record(&self, iter: u64) -> bool {
        iter > self.burnin && (iter - self.burnin) % self.thin == 0
    }

    /// Records one snapshot; call only when `should_record` is true.
    pub fn record(&mut self, iter: u64, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.names.len());
        self.iters.push(iter);
        self.rows.push(row);
    }

    pub fn tally(&mut self, update: &str, accepted: bool) {
        let e = self.accept.entry(update.to_string()).or_insert((0, 0));
        e.1 += 1;
        if accepted {
            e.0 += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn acceptance_rate(&self, update: &str) -> Option<f64> {
        self.accept
            .get(update)
            .map(|&(acc, att)| if att == 0 { 0.0 } else { acc as f64 / att as f64 })
    }
}

/// Empirical summary of one scalar series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub q025: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q975: f64,
}

/// Quantile by linear interpolation of order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn summarize_series(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyChain);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(Summary {
        mean,
        sd: var.sqrt(),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        q025: quantile(&sorted, 0.025),
        q25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q75: quantile(&sorted, 0.75),
        q975: quantile(&sorted, 0.975),
    })
}

/// Summaries for every column of a chain, in column order.
pub fn chain_summaries(chain: &Chain) -> Result<Vec<(String, Summary)>> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    chain
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col: Vec<f64> = chain.rows.iter().map(|r| r[k]).collect();
            Ok((name.clone(), summarize_series(&col)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recorded_length_formula() {
        for (iters, burnin, thin) in [(10u64, 2u64, 3u64), (100, 0, 1), (7, 3, 2), (120, 20, 3)] {
            let c = Chain::new(vec!["x".into()], iters, burnin, thin).unwrap();
            let recorded = (1..=iters).filter(|&t| c.should_record(t)).count() as u64;
            assert_eq!(recorded, (iters - burnin) / thin, "{iters} {burnin} {thin}");
        }
    }

    #[test]
    fn constant_chain_quantiles() {
        let s = summarize_series(&[2.5; 40]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q025, 2.5);
        assert_eq!(s.q975, 2.5);
        assert_eq!(s.sd, 0.0);
    }

    #[test]
    fn interpolated_median_of_1_to_100() {
        let vals: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let s = summarize_series(&vals).unwrap();
        assert!((s.median - 50.5).abs() < 1e-12);
    }

    #[test]
    fn acceptance_rate_exact() {
        let mut c = Chain::new(vec![], 10, 0, 1).unwrap();
        for k in 0..10 {
            c.tally("theta", k % 3 == 0);
        }
        assert_eq!(c.acceptance_rate("theta").unwrap(), 0.4);
    }

    #[test]
    fn empty_chain_errors() {
        let c = Chain::new(vec!["x".into()], 10, 0, 1).unwrap();
        assert!(chain_summaries(&c).is_err());
    }
}
