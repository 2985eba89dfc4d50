//! Dense kernels shared by every other module: structured covariances,
//! reproducible Gaussian sampling, thin SVD and minimum-norm least squares.
//!
//! Matrices are `nalgebra::DMatrix<f64>`; the alias [`DenseMatrix`] is used
//! throughout the crate so signatures read in domain terms.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MvoprError, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular values at or below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Structured correlation pattern with unit diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovarianceKind {
    Identity,
    /// Entry `(i, j)` is `rho^|i-j|`.
    Ar1 { rho: f64 },
    /// Unit diagonal, constant `mu` off the diagonal.
    CompoundSymmetry { mu: f64 },
}

impl CovarianceKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CovarianceKind::Identity => Ok(()),
            CovarianceKind::Ar1 { rho } if rho.is_finite() && rho > -1.0 && rho < 1.0 => Ok(()),
            CovarianceKind::Ar1 { rho } => Err(MvoprError::InvalidSpec(format!(
                "ar1 rho must lie in (-1, 1), got {rho}"
            ))),
            CovarianceKind::CompoundSymmetry { mu } if mu.is_finite() && (0.0..1.0).contains(&mu) => {
                Ok(())
            }
            CovarianceKind::CompoundSymmetry { mu } => Err(MvoprError::InvalidSpec(format!(
                "compound symmetry mu must lie in [0, 1), got {mu}"
            ))),
        }
    }
}

impl std::fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovarianceKind::Identity => write!(f, "identity"),
            CovarianceKind::Ar1 { rho } => write!(f, "ar1:{rho}"),
            CovarianceKind::CompoundSymmetry { mu } => write!(f, "cs:{mu}"),
        }
    }
}

impl std::str::FromStr for CovarianceKind {
    type Err = MvoprError;

    /// Parses `identity`, `ar1:<rho>` or `cs:<mu>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let parse_arg = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| MvoprError::InvalidSpec(format!("`{s}` needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| MvoprError::InvalidSpec(format!("`{s}`: {e}")))
        };
        let kind = match name {
            "identity" => CovarianceKind::Identity,
            "ar1" => CovarianceKind::Ar1 { rho: parse_arg(arg)? },
            "cs" | "compound_symmetry" => CovarianceKind::CompoundSymmetry { mu: parse_arg(arg)? },
            other => {
                return Err(MvoprError::InvalidSpec(format!(
                    "unknown covariance kind `{other}`"
                )))
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub dim: usize,
}

impl CovarianceSpec {
    pub fn new(kind: CovarianceKind, dim: usize) -> Self {
        Self { kind, dim }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(CovarianceKind::Identity, dim)
    }
}

pub fn build_covariance(spec: &CovarianceSpec) -> Result<DenseMatrix> {
    if spec.dim == 0 {
        return Err(MvoprError::InvalidSpec("dimension must be at least 1".into()));
    }
    spec.kind.validate()?;
    let d = spec.dim;
    let m = match spec.kind {
        CovarianceKind::Identity => DenseMatrix::identity(d, d),
        CovarianceKind::Ar1 { rho } => {
            DenseMatrix::from_fn(d, d, |i, j| rho.powi(i.abs_diff(j) as i32))
        }
        CovarianceKind::CompoundSymmetry { mu } => {
            DenseMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { mu })
        }
    };
    Ok(m)
}

/// Immutable descriptor of a random stream. Replication `r` uses
/// `stream_id = r`; the generator is ChaCha8 with the stream word set, so
/// streams never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// A stream for a sub-task (e.g. CV fold shuffling) that is independent
    /// of the parent stream and of other tags.
    pub fn child(&self, tag: u64) -> RngStream {
        RngStream {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5EED))),
            stream_id: self.stream_id,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// `n x p` matrix of standard normal draws, filled row by row.
pub fn standard_normal_matrix<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DenseMatrix {
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        data.push(rng.sample::<f64, _>(StandardNormal));
    }
    DenseMatrix::from_row_slice(n, p, &data)
}

/// Draws `n` zero-mean rows with covariance `spec` from an explicit generator.
pub fn sample_mvn_with<R: Rng + ?Sized>(
    n: usize,
    spec: &CovarianceSpec,
    rng: &mut R,
) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(MvoprError::invalid("sample count must be at least 1"));
    }
    let sigma = build_covariance(spec)?;
    let z = standard_normal_matrix(n, spec.dim, rng);
    if spec.kind == CovarianceKind::Identity {
        return Ok(z);
    }
    let chol = Cholesky::new(sigma)
        .ok_or_else(|| MvoprError::Numerical("covariance is not positive definite".into()))?;
    // rows x ~ N(0, L L^T)  <=>  X = Z L^T
    Ok(z * chol.l().transpose())
}

pub fn sample_mvn(n: usize, spec: &CovarianceSpec, stream: RngStream) -> Result<DenseMatrix> {
    let mut rng = stream.rng();
    sample_mvn_with(n, spec, &mut rng)
}

/// Top singular triplets of a matrix.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(&self, r: usize) -> ThinSvd {
        let r = r.min(self.rank());
        ThinSvd {
            u: self.u.columns(0, r).into_owned(),
            singular_values: self.singular_values[..r].to_vec(),
            v: self.v.columns(0, r).into_owned(),
        }
    }

    /// Count of singular values above `RANK_TOL * sigma_max`.
    pub fn numerical_rank(&self) -> usize {
        numerical_rank_of(&self.singular_values)
    }
}

pub fn numerical_rank_of(singular_values: &[f64]) -> usize {
    let top = singular_values.first().copied().unwrap_or(0.0);
    if top <= 0.0 || !top.is_finite() {
        return 0;
    }
    singular_values.iter().take_while(|&&s| s > RANK_TOL * top).count()
}

/// Full thin SVD with `min(rows, cols)` triplets sorted by decreasing
/// singular value. Empty inputs yield an empty decomposition.
pub fn svd_all(m: &DenseMatrix) -> ThinSvd {
    let (n, p) = m.shape();
    if n == 0 || p == 0 {
        return ThinSvd {
            u: DenseMatrix::zeros(n, 0),
            singular_values: Vec::new(),
            v: DenseMatrix::zeros(p, 0),
        };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v requested").transpose();
    ThinSvd {
        u,
        singular_values: svd.singular_values.iter().copied().collect(),
        v,
    }
}

pub fn thin_svd(m: &DenseMatrix, rank: usize) -> Result<ThinSvd> {
    let max_rank = m.nrows().min(m.ncols());
    if rank == 0 || rank > max_rank {
        return Err(MvoprError::invalid(format!(
            "rank {rank} outside 1..={max_rank} for a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(svd_all(m).truncate(rank))
}

/// Minimum-norm least-squares solution of `design * X = rhs` through the
/// SVD pseudoinverse with the crate-wide rank threshold.
pub fn min_norm_lstsq(design: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    if design.nrows() != rhs.nrows() {
        return Err(MvoprError::shape(format!(
            "design has {} rows but right-hand side has {}",
            design.nrows(),
            rhs.nrows()
        )));
    }
    let svd = svd_all(design);
    let r = svd.numerical_rank();
    let mut coef = DenseMatrix::zeros(design.ncols(), rhs.ncols());
    if r == 0 {
        return Ok(coef);
    }
    let u = svd.u.columns(0, r);
    let v = svd.v.columns(0, r);
    let mut utb = u.transpose() * rhs;
    for (i, s) in svd.singular_values[..r].iter().enumerate() {
        utb.row_mut(i).scale_mut(1.0 / s);
    }
    coef += v * utb;
    Ok(coef)
}

/// Orthonormal basis of the column span (numerical rank threshold applied).
pub fn orthonormal_basis(m: &DenseMatrix) -> DenseMatrix {
    let svd = svd_all(m);
    let r = svd.numerical_rank();
    svd.u.columns(0, r).into_owned()
}

/// Horizontal concatenation; all blocks must share the row count.
pub fn hcat(blocks: &[&DenseMatrix]) -> Result<DenseMatrix> {
    let Some(first) = blocks.first() else {
        return Err(MvoprError::invalid("no blocks to concatenate"));
    };
    let n = first.nrows();
    if let Some(bad) = blocks.iter().find(|b| b.nrows() != n) {
        return Err(MvoprError::shape(format!(
            "cannot concatenate blocks with {} and {} rows",
            n,
            bad.nrows()
        )));
    }
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DenseMatrix::zeros(n, total);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    Ok(out)
}

/// Vertical concatenation; all blocks must share the column count.
pub fn vcat(blocks: &[&DenseMatrix]) -> Result<DenseMatrix> {
    let Some(first) = blocks.first() else {
        return Err(MvoprError::invalid("no blocks to concatenate"));
    };
    let p = first.ncols();
    if blocks.iter().any(|b| b.ncols() != p) {
        return Err(MvoprError::shape("vertical blocks disagree on column count"));
    }
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DenseMatrix::zeros(total, p);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(*b);
        at += b.nrows();
    }
    Ok(out)
}

pub fn column_means(m: &DenseMatrix) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}

/// Subtracts per-column means in place and returns them.
pub fn center_columns(m: &mut DenseMatrix) -> Vec<f64> {
    let means = column_means(m);
    for (mut col, mu) in m.column_iter_mut().zip(&means) {
        col.add_scalar_mut(-mu);
    }
    means
}

pub fn all_finite(m: &DenseMatrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Largest absolute cosine between a column of `a` and a column of `b`.
/// Columns with negligible norm are skipped; returns 0 when nothing is left.
pub fn max_normalized_inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return 0.0;
    }
    let norms_a: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let norms_b: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();
    let scale_a = norms_a.iter().cloned().fold(0.0, f64::max);
    let scale_b = norms_b.iter().cloned().fold(0.0, f64::max);
    let gram = a.transpose() * b;
    let mut worst: f64 = 0.0;
    for i in 0..a.ncols() {
        if norms_a[i] <= 1e-12 * scale_a.max(1e-300) {
            continue;
        }
        for j in 0..b.ncols() {
            if norms_b[j] <= 1e-12 * scale_b.max(1e-300) {
                continue;
            }
            worst = worst.max(gram[(i, j)].abs() / (norms_a[i] * norms_b[j]));
        }
    }
    worst
}

/// Max-abs entry of `a^T a - I`.
pub fn orthonormality_defect(a: &DenseMatrix) -> f64 {
    let g = a.transpose() * a;
    let k = g.nrows();
    (g - DenseMatrix::identity(k, k)).amax()
}
