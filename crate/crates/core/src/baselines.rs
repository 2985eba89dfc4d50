//! Competitor methods: cooperative regularized regression and the two
//! factor-adjusted regressions.

use crate::error::{MvoprError, Result};
use crate::numerics::{center_columns, hcat, svd_all, vcat, DenseMatrix, Vector};
use crate::penalized::{fit_path, solve_path, PathOptions, PenaltySpec, RegularizationPath};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CooperativeConfig {
    pub rho: f64,
}

impl CooperativeConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(MvoprError::invalid(format!("agreement strength must be finite and >= 0, got {rho}")));
        }
        Ok(Self { rho })
    }
}

/// Agreement strengths swept in experiments.
pub const COOPERATIVE_RHO_GRID: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

/// `[[M1, M2], [-sqrt(rho) M1, sqrt(rho) M2]]` with response `[y; 0]`.
pub fn cooperative_design(m1: &DenseMatrix, m2: &DenseMatrix, y: &Vector, rho: f64) -> Result<(DenseMatrix, Vector)> {
    let cfg = CooperativeConfig::new(rho)?;
    let n = m1.nrows();
    if m2.nrows() != n || y.len() != n {
        return Err(MvoprError::shape(format!(
            "modalities have {} and {} rows, response {}",
            n,
            m2.nrows(),
            y.len()
        )));
    }
    let s = cfg.rho.sqrt();
    let top = hcat(&[m1, m2])?;
    let bottom = hcat(&[&(m1 * -s), &(m2 * s)])?;
    let design = vcat(&[&top, &bottom])?;
    let mut response = Vector::zeros(2 * n);
    response.rows_mut(0, n).copy_from(y);
    Ok((design, response))
}

fn standardize_in_place(m: &mut DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    let means = center_columns(m);
    let mut scales = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let s = (col.norm_squared() / n).sqrt();
        if s > 1e-12 {
            col.scale_mut(1.0 / s);
            scales.push(s);
        } else {
            col.fill(0.0);
            scales.push(1.0);
        }
    }
    (means, scales)
}

/// Cooperative fit with a shared lambda. Each block is standardized on the
/// original samples before augmentation, and the augmented system is scaled
/// by sqrt(2) so the objective reads
/// `(1/2n)(|y - M1 b1 - M2 b2|^2 + rho |M1 b1 - M2 b2|^2) + lambda |b|_w`.
/// The returned path predicts on the raw `[M1, M2]` scale.
pub fn fit_cooperative(
    m1: &DenseMatrix,
    m2: &DenseMatrix,
    y: &Vector,
    rho: f64,
    penalty: &PenaltySpec,
    lambdas: Option<&[f64]>,
    options: &PathOptions,
) -> Result<RegularizationPath> {
    let mut s1 = m1.clone();
    let mut s2 = m2.clone();
    let (mean1, scale1) = standardize_in_place(&mut s1);
    let (mean2, scale2) = standardize_in_place(&mut s2);
    let y_mean = y.mean();
    let yc = y.add_scalar(-y_mean);
    let (design, response) = cooperative_design(&s1, &s2, &yc, rho)?;
    let design = design * std::f64::consts::SQRT_2;
    let response = response * std::f64::consts::SQRT_2;
    let raw = PathOptions { standardize: false, ..*options };
    let nuisance = DenseMatrix::zeros(design.nrows(), 0);
    let mut path = match lambdas {
        Some(l) => solve_path(&design, &nuisance, &response, penalty, l, &raw)?,
        None => fit_path(&design, &nuisance, &response, penalty, &raw)?,
    };
    path.x_means = mean1.into_iter().chain(mean2).collect();
    path.x_scales = scale1.into_iter().chain(scale2).collect();
    path.y_mean = y_mean;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct FactorDecomposition {
    pub factors: DenseMatrix,
    pub loadings: DenseMatrix,
    pub idiosyncratic: DenseMatrix,
    pub k: usize,
    /// Column means of the input, used to extract factors for new samples.
    pub means: Vec<f64>,
}

impl FactorDecomposition {
    /// Factor scores and idiosyncratic part for new rows, via least squares on
    /// the loadings.
    pub fn apply(&self, m: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        if m.ncols() != self.loadings.nrows() {
            return Err(MvoprError::shape(format!(
                "new data has {} columns, decomposition {}",
                m.ncols(),
                self.loadings.nrows()
            )));
        }
        if self.k == 0 {
            return Ok((DenseMatrix::zeros(m.nrows(), 0), m.clone()));
        }
        let mut centered = m.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.means[j]);
        }
        let gram = self.loadings.transpose() * &self.loadings;
        let rhs = (&centered * &self.loadings).transpose();
        let f = gram
            .cholesky()
            .ok_or_else(|| MvoprError::Numerical("factor loadings are rank deficient".into()))?
            .solve(&rhs)
            .transpose();
        let idio = m - &f * self.loadings.transpose();
        Ok((f, idio))
    }
}

/// Principal-components factor estimate on the column-centered matrix.
pub fn estimate_factors(m: &DenseMatrix, k: usize) -> Result<FactorDecomposition> {
    let (n, p) = m.shape();
    if k > n.min(p) {
        return Err(MvoprError::invalid(format!("{k} factors requested for a {n}x{p} matrix")));
    }
    let mut centered = m.clone();
    let means = center_columns(&mut centered);
    if k == 0 {
        return Ok(FactorDecomposition {
            factors: DenseMatrix::zeros(n, 0),
            loadings: DenseMatrix::zeros(p, 0),
            idiosyncratic: m.clone(),
            k,
            means,
        });
    }
    let svd = svd_all(&centered);
    let factors = svd.u.columns(0, k).into_owned() * (n as f64).sqrt();
    let loadings = m.transpose() * &factors / n as f64;
    let idiosyncratic = m - &factors * loadings.transpose();
    Ok(FactorDecomposition { factors, loadings, idiosyncratic, k, means })
}

pub fn default_k_max(n: usize, p: usize) -> usize {
    let m = n.min(p);
    8.min(m / 2).min(m.saturating_sub(1))
}

/// Information criterion `log V(k) + k (n+p)/(np) log(np/(n+p))`, minimized
/// over `0..=k_max`.
pub fn select_num_factors(m: &DenseMatrix, k_max: usize) -> usize {
    let (n, p) = m.shape();
    let k_max = k_max.min(n.min(p).saturating_sub(1));
    if k_max == 0 || n == 0 || p == 0 {
        return 0;
    }
    let mut centered = m.clone();
    center_columns(&mut centered);
    let sv: Vec<f64> = svd_all(&centered).singular_values.iter().map(|s| s * s).collect();
    let total: f64 = sv.iter().sum();
    let (nf, pf) = (n as f64, p as f64);
    let penalty = (nf + pf) / (nf * pf) * (nf * pf / (nf + pf)).ln();
    let mut removed = 0.0;
    let mut best = (0usize, f64::INFINITY);
    for k in 0..=k_max {
        if k > 0 {
            removed += sv.get(k - 1).copied().unwrap_or(0.0);
        }
        let v = ((total - removed).max(0.0) / (nf * pf)).max(f64::MIN_POSITIVE);
        let ic = v.ln() + k as f64 * penalty;
        if ic < best.1 {
            best = (k, ic);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorCount {
    /// Information-criterion choice with the given cap (default cap when None).
    Auto(Option<usize>),
    Fixed(usize),
}

impl Default for FactorCount {
    fn default() -> Self {
        FactorCount::Auto(None)
    }
}

fn decompose(m: &DenseMatrix, count: FactorCount) -> Result<FactorDecomposition> {
    let k = match count {
        FactorCount::Fixed(k) => k,
        FactorCount::Auto(cap) => {
            let cap = cap.unwrap_or_else(|| default_k_max(m.nrows(), m.ncols()));
            select_num_factors(m, cap)
        }
    };
    estimate_factors(m, k)
}

#[derive(Debug, Clone)]
pub struct FactorFit {
    pub path: RegularizationPath,
    /// One decomposition for the concatenated design, or one per modality.
    pub decompositions: Vec<FactorDecomposition>,
}

impl FactorFit {
    pub fn factor_counts(&self) -> Vec<usize> {
        self.decompositions.iter().map(|d| d.k).collect()
    }

    /// Design and nuisance for new samples given per-modality blocks.
    pub fn transform_new(&self, modalities: &[DenseMatrix]) -> Result<(DenseMatrix, DenseMatrix)> {
        let blocks: Vec<DenseMatrix> = if self.decompositions.len() == 1 {
            let refs: Vec<&DenseMatrix> = modalities.iter().collect();
            vec![hcat(&refs)?]
        } else {
            modalities.to_vec()
        };
        if blocks.len() != self.decompositions.len() {
            return Err(MvoprError::shape("modality count differs from the fitted decomposition"));
        }
        let mut idio = Vec::new();
        let mut fac = Vec::new();
        for (b, d) in blocks.iter().zip(&self.decompositions) {
            let (f, i) = d.apply(b)?;
            fac.push(f);
            idio.push(i);
        }
        Ok((hcat(&idio.iter().collect::<Vec<_>>())?, hcat(&fac.iter().collect::<Vec<_>>())?))
    }
}

fn solve_on(
    design: &DenseMatrix,
    nuisance: &DenseMatrix,
    y: &Vector,
    penalty: &PenaltySpec,
    lambdas: Option<&[f64]>,
    options: &PathOptions,
) -> Result<RegularizationPath> {
    match lambdas {
        Some(l) => solve_path(design, nuisance, y, penalty, l, options),
        None => fit_path(design, nuisance, y, penalty, options),
    }
}

/// Global factors on the concatenated design; idiosyncratic part penalized,
/// factors unpenalized.
pub fn fit_factor_adjusted(
    modalities: &[DenseMatrix],
    y: &Vector,
    penalty: &PenaltySpec,
    lambdas: Option<&[f64]>,
    count: FactorCount,
    options: &PathOptions,
) -> Result<FactorFit> {
    if modalities.is_empty() {
        return Err(MvoprError::invalid("no modalities"));
    }
    let refs: Vec<&DenseMatrix> = modalities.iter().collect();
    let m = hcat(&refs)?;
    let dec = decompose(&m, count)?;
    let path = solve_on(&dec.idiosyncratic, &dec.factors, y, penalty, lambdas, options)?;
    Ok(FactorFit { path, decompositions: vec![dec] })
}

/// Per-modality factors; idiosyncratic blocks concatenated as the design and
/// all factors as the nuisance block.
pub fn fit_integrative_factor(
    modalities: &[DenseMatrix],
    y: &Vector,
    penalty: &PenaltySpec,
    lambdas: Option<&[f64]>,
    count: FactorCount,
    options: &PathOptions,
) -> Result<FactorFit> {
    if modalities.is_empty() {
        return Err(MvoprError::invalid("no modalities"));
    }
    let n = modalities[0].nrows();
    if modalities.iter().any(|m| m.nrows() != n) {
        return Err(MvoprError::shape("modalities do not share rows"));
    }
    let decs = modalities.iter().map(|m| decompose(m, count)).collect::<Result<Vec<_>>>()?;
    let design = hcat(&decs.iter().map(|d| &d.idiosyncratic).collect::<Vec<_>>())?;
    let nuisance = hcat(&decs.iter().map(|d| &d.factors).collect::<Vec<_>>())?;
    let path = solve_on(&design, &nuisance, y, penalty, lambdas, options)?;
    Ok(FactorFit { path, decompositions: decs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{standard_normal_matrix, RngStream};

    fn rand(n: usize, p: usize, seed: u64) -> DenseMatrix {
        standard_normal_matrix(n, p, &mut RngStream::new(seed, 0).rng())
    }

    #[test]
    fn cooperative_blocks() {
        let m1 = rand(5, 2, 1);
        let m2 = rand(5, 3, 2);
        let y = Vector::from_fn(5, |i, _| i as f64);
        let (d, r) = cooperative_design(&m1, &m2, &y, 0.25).unwrap();
        assert_eq!(d.shape(), (10, 5));
        assert_eq!(d.view((0, 0), (5, 2)), m1);
        assert_eq!(d.view((0, 2), (5, 3)), m2);
        assert_eq!(d.view((5, 0), (5, 2)), &m1 * -0.5);
        assert_eq!(d.view((5, 2), (5, 3)), &m2 * 0.5);
        assert!(r.rows(5, 5).iter().all(|v| *v == 0.0));
        let (d, _) = cooperative_design(&m1, &m2, &y, 1.0).unwrap();
        assert_eq!(d.view((5, 0), (5, 2)), -&m1);
        let (d, _) = cooperative_design(&m1, &m2, &y, 0.0).unwrap();
        assert!(d.rows(5, 5).iter().all(|v| *v == 0.0));
        assert!(cooperative_design(&m1, &m2, &y, -0.1).is_err());
        assert!(cooperative_design(&m1, &rand(4, 3, 3), &y, 0.1).is_err());
    }

    #[test]
    fn factors_rank_one_and_null() {
        let mut a = rand(30, 1, 4);
        center_columns(&mut a);
        let b = rand(1, 8, 5);
        let m = &a * &b;
        let d = estimate_factors(&m, 1).unwrap();
        assert!(d.idiosyncratic.amax() <= 1e-8);
        let gram = d.factors.transpose() * &d.factors / 30.0;
        assert!((gram - DenseMatrix::identity(1, 1)).amax() <= 1e-8);
        let z = estimate_factors(&m, 0).unwrap();
        assert_eq!(z.idiosyncratic, m);
        assert!(estimate_factors(&m, 9).is_err());
        assert_eq!(select_num_factors(&m, 0), 0);
    }

    #[test]
    fn factor_apply_reproduces_training_split() {
        let m = rand(40, 6, 6);
        let d = estimate_factors(&m, 2).unwrap();
        let (f, i) = d.apply(&m).unwrap();
        assert!((f - &d.factors).amax() < 1e-8);
        assert!((i - &d.idiosyncratic).amax() < 1e-8);
    }
}
