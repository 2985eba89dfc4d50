//! Multivariate reduced-rank regression with GIC rank selection.
//!
//! For a target block `M2` (n x q) and a design `M1` (n x p) the rank-`r`
//! estimator is `B_ols * V_r * V_r^T`, where `B_ols` is the minimum-norm
//! least-squares coefficient and `V_r` holds the top right singular vectors
//! of the fitted values `M1 * B_ols`. Because the least-squares residual is
//! orthogonal to the column space of `M1`, the residual sum of squares at
//! every rank follows from the singular values of the fitted values alone:
//!
//! ```text
//! RSS(r) = RSS_ols + sum_{i > r} sigma_i^2
//! ```
//!
//! which is what [`select_rank`] uses to score a whole grid from one SVD.

use crate::error::{MvoprError, Result};
use crate::numerics::{min_norm_lstsq, svd_all, DenseMatrix, ThinSvd};

/// Floor on the mean squared residual inside the GIC logarithm.
pub const GIC_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RrrFit {
    /// p x q coefficient matrix.
    pub b_hat: DenseMatrix,
    pub rank: usize,
    /// n x q, exactly `m2 - m1 * b_hat`.
    pub residuals: DenseMatrix,
    /// `(rank, score)` for every candidate examined; a lone fit carries its own score.
    pub gic_scores: Vec<(usize, f64)>,
}

/// Candidate ranks, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankGrid {
    ranks: Vec<usize>,
}

impl RankGrid {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(MvoprError::invalid("rank grid is empty"));
        }
        if ranks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MvoprError::invalid("rank grid must be strictly increasing"));
        }
        Ok(Self { ranks })
    }

    /// `0..=min(p, q, n - 1)`, optionally capped.
    pub fn full(n: usize, p: usize, q: usize, cap: Option<usize>) -> Self {
        let mut top = p.min(q).min(n.saturating_sub(1));
        if let Some(c) = cap {
            top = top.min(c);
        }
        Self { ranks: (0..=top).collect() }
    }

    /// `full` further capped so every candidate has fewer free parameters,
    /// `r (p + q - r)`, than the `n q` observed entries. Larger ranks can
    /// interpolate the response when `p >= n` and win the criterion through
    /// its residual floor.
    pub fn identifiable(n: usize, p: usize, q: usize) -> Self {
        let mut grid = Self::full(n, p, q, None);
        grid.ranks.retain(|&r| r * (p + q - r) < n * q || r == 0);
        grid
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    fn check(&self, n: usize, p: usize, q: usize) -> Result<()> {
        let limit = p.min(q).min(n.saturating_sub(1));
        match self.ranks.last() {
            Some(&top) if top > limit => Err(MvoprError::invalid(format!(
                "rank grid reaches {top} but min(p, q, n - 1) = {limit}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Everything rank-independent about one regression: the least-squares
/// coefficient, the SVD of its fitted values and the least-squares RSS.
struct LinkDecomposition {
    b_ols: DenseMatrix,
    fitted_svd: ThinSvd,
    rss_ols: f64,
}

impl LinkDecomposition {
    fn new(m1: &DenseMatrix, m2: &DenseMatrix) -> Result<Self> {
        check_rows(m1, m2)?;
        let b_ols = min_norm_lstsq(m1, m2)?;
        let fitted = m1 * &b_ols;
        let rss_ols = (m2 - &fitted).norm_squared();
        let fitted_svd = svd_all(&fitted);
        Ok(Self { b_ols, fitted_svd, rss_ols })
    }

    fn rss_at(&self, rank: usize) -> f64 {
        self.rss_ols
            + self.fitted_svd.singular_values.iter().skip(rank).map(|s| s * s).sum::<f64>()
    }

    fn fit(&self, m1: &DenseMatrix, m2: &DenseMatrix, rank: usize) -> RrrFit {
        let (p, q) = (m1.ncols(), m2.ncols());
        let b_hat = if rank == 0 {
            DenseMatrix::zeros(p, q)
        } else {
            let vr = self.fitted_svd.v.columns(0, rank.min(self.fitted_svd.rank()));
            &self.b_ols * vr * vr.transpose()
        };
        let residuals = m2 - m1 * &b_hat;
        RrrFit { b_hat, rank, residuals, gic_scores: Vec::new() }
    }
}

fn check_rows(m1: &DenseMatrix, m2: &DenseMatrix) -> Result<()> {
    if m1.nrows() != m2.nrows() {
        return Err(MvoprError::shape(format!(
            "design has {} rows but response block has {}",
            m1.nrows(),
            m2.nrows()
        )));
    }
    Ok(())
}

pub fn fit_rrr(m1: &DenseMatrix, m2: &DenseMatrix, rank: usize) -> Result<RrrFit> {
    check_rows(m1, m2)?;
    let limit = m1.ncols().min(m2.ncols());
    if rank > limit {
        return Err(MvoprError::invalid(format!("rank {rank} exceeds min(p, q) = {limit}")));
    }
    let decomposition = LinkDecomposition::new(m1, m2)?;
    let mut fit = decomposition.fit(m1, m2, rank);
    let score = gic_score(m1, m2, &fit);
    fit.gic_scores = vec![(rank, score)];
    Ok(fit)
}

fn gic_from_rss(rss: f64, n: usize, p: usize, q: usize, rank: usize) -> f64 {
    let (nf, pf, qf, rf) = (n as f64, p as f64, q as f64, rank as f64);
    let df = rf * (pf + qf - rf);
    let mse = (rss / (nf * qf)).max(GIC_FLOOR);
    mse.ln() + df * (nf.max(3.0).ln()).ln() * (pf * qf).ln() / (nf * qf)
}

/// `log(max(RSS / nq, 1e-12)) + r(p + q - r) * log(log(max(n, 3))) * log(pq) / (nq)`.
pub fn gic_score(m1: &DenseMatrix, m2: &DenseMatrix, fit: &RrrFit) -> f64 {
    gic_from_rss(fit.residuals.norm_squared(), m2.nrows(), m1.ncols(), m2.ncols(), fit.rank)
}

/// Scores every rank in `grid` and returns the GIC minimizer; ties go to the
/// smaller rank.
pub fn select_rank(m1: &DenseMatrix, m2: &DenseMatrix, grid: &RankGrid) -> Result<RrrFit> {
    check_rows(m1, m2)?;
    let (n, p, q) = (m1.nrows(), m1.ncols(), m2.ncols());
    grid.check(n, p, q)?;
    let decomposition = LinkDecomposition::new(m1, m2)?;
    let scores: Vec<(usize, f64)> = grid
        .ranks()
        .iter()
        .map(|&r| (r, gic_from_rss(decomposition.rss_at(r), n, p, q, r)))
        .collect();
    let (best_rank, _) = scores
        .iter()
        .copied()
        .fold(None::<(usize, f64)>, |best, (r, s)| match best {
            Some((_, bs)) if bs <= s => best,
            _ => Some((r, s)),
        })
        .expect("grid is nonempty");
    let mut fit = decomposition.fit(m1, m2, best_rank);
    fit.gic_scores = scores;
    Ok(fit)
}
