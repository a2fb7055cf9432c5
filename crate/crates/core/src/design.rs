//! Input designs: matrices whose rows are points in the (scaled) input space.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A design matrix. Each row is one input configuration; columns are input
/// dimensions, scaled to the unit cube upstream.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    m: DMatrix<f64>,
}

impl Design {
    pub fn new(m: DMatrix<f64>) -> Self {
        Design { m }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("rows", 0, "design needs at least one row"));
        }
        let d = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::dim(format!("design row {i}"), d, r.len()));
            }
        }
        let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Ok(Design { m })
    }

    /// Single-point design.
    pub fn single(point: &[f64]) -> Self {
        Design {
            m: DMatrix::from_fn(1, point.len(), |_, j| point[j]),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn dim(&self) -> usize {
        self.m.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.m.row(i).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Side-by-side column concatenation `[self, other]`.
    pub fn concat_cols(&self, other: &Design) -> Result<Design> {
        if self.n_rows() != other.n_rows() {
            return Err(Error::dim("concat_cols rows", self.n_rows(), other.n_rows()));
        }
        let (n, d1, d2) = (self.n_rows(), self.dim(), other.dim());
        let m = DMatrix::from_fn(n, d1 + d2, |i, j| {
            if j < d1 {
                self.m[(i, j)]
            } else {
                other.m[(i, j - d1)]
            }
        });
        Ok(Design { m })
    }

    /// Row-wise concatenation (augmentation) `[self; other]`.
    pub fn concat_rows(&self, other: &Design) -> Result<Design> {
        if self.dim() != other.dim() {
            return Err(Error::dim("concat_rows dims", self.dim(), other.dim()));
        }
        let (n1, n2, d) = (self.n_rows(), other.n_rows(), self.dim());
        let m = DMatrix::from_fn(n1 + n2, d, |i, j| {
            if i < n1 {
                self.m[(i, j)]
            } else {
                other.m[(i - n1, j)]
            }
        });
        Ok(Design { m })
    }

    /// Sub-design with the given columns, in order.
    pub fn select_cols(&self, cols: &[usize]) -> Design {
        let m = DMatrix::from_fn(self.n_rows(), cols.len(), |i, j| self.m[(i, cols[j])]);
        Design { m }
    }

    /// Sub-design with the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Design {
        let m = DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.m[(rows[i], j)]);
        Design { m }
    }

    /// Repeats `point` as extra trailing columns on every row of `self`.
    /// Used to build slice designs `[X̃, 1·θ]`.
    pub fn with_fixed_cols(&self, point: &[f64]) -> Design {
        let (n, d1, d2) = (self.n_rows(), self.dim(), point.len());
        let m = DMatrix::from_fn(n, d1 + d2, |i, j| {
            if j < d1 {
                self.m[(i, j)]
            } else {
                point[j - d1]
            }
        });
        Design { m }
    }

    /// Errors if any entry falls outside `[0, 1]`, naming the first bad row.
    pub fn validate_unit(&self, what: &str) -> Result<()> {
        for i in 0..self.n_rows() {
            for j in 0..self.dim() {
                let v = self.m[(i, j)];
                if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                    return Err(Error::invalid(
                        "design",
                        v,
                        format!("{what} row {i} column {j} outside [0,1]"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `n` equispaced points on `[0, 1]` (endpoints included), as a 1-d design.
pub fn equispaced_1d(n: usize) -> Design {
    assert!(n >= 1);
    let m = if n == 1 {
        DMatrix::from_element(1, 1, 0.5)
    } else {
        DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64)
    };
    Design::new(m)
}

/// A maximin Latin hypercube on the unit cube: the best of `restarts`
/// random Latin hypercubes by minimum pairwise distance.
pub fn maximin_lhs(n: usize, dim: usize, restarts: usize, rng: &mut ChaCha8Rng) -> Design {
    assert!(n >= 1 && dim >= 1);
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let cand = random_lhs(n, dim, rng);
        let score = min_pairwise_dist(&cand);
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    Design::new(best.unwrap().1)
}

fn random_lhs(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, dim);
    for j in 0..dim {
        // Fisher-Yates permutation of the n strata.
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let k = rng.random_range(0..=i);
            perm.swap(i, k);
        }
        for i in 0..n {
            let u: f64 = rng.random();
            m[(i, j)] = (perm[i] as f64 + u) / n as f64;
        }
    }
    m
}

fn min_pairwise_dist(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n < 2 {
        return f64::INFINITY;
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for k in 0..m.ncols() {
                let d = m[(i, k)] - m[(j, k)];
                d2 += d * d;
            }
            best = best.min(d2);
        }
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn equispaced_endpoints() {
        let d = equispaced_1d(5);
        assert_eq!(d.n_rows(), 5);
        assert_eq!(d.row(0)[0], 0.0);
        assert_eq!(d.row(4)[0], 1.0);
        assert!((d.row(1)[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lhs_is_latin() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20;
        let d = maximin_lhs(n, 3, 10, &mut rng);
        assert_eq!(d.n_rows(), n);
        d.validate_unit("lhs").unwrap();
        // One point per stratum in every dimension.
        for j in 0..3 {
            let mut strata: Vec<usize> = (0..n)
                .map(|i| (d.matrix()[(i, j)] * n as f64).floor() as usize)
                .collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn validate_unit_names_row() {
        let d = Design::from_rows(&[vec![0.2, 0.3], vec![0.5, 1.4]]).unwrap();
        let err = d.validate_unit("test design").unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn slice_design_tiles_theta() {
        let xt = equispaced_1d(3).with_fixed_cols(&[0.4, 0.7]);
        assert_eq!(xt.dim(), 3);
        assert_eq!(xt.row(2), vec![1.0, 0.4, 0.7]);
    }
}
