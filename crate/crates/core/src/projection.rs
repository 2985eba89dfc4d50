//! Chain residualization and orthogonal projection of ordered modalities.
//!
//! Given modalities `M1 -> M2 -> ... -> Mk` (upstream first), every
//! downstream block is regressed on the concatenation of its predecessors
//! with reduced-rank regression. The fitted link coefficients that leave
//! block `i` span a low-rank signal `D_i * B'_i` (with `D_1 = M1` and
//! `D_i = E_i` for `i >= 2`); its leading left singular vectors `U_i` form
//! the nuisance block. Each modality is then projected onto the orthogonal
//! complement of the nuisance span, so the transformed blocks and the
//! nuisance columns are exactly orthogonal.

use crate::error::{MvoprError, Result};
use crate::numerics::{
    all_finite, hcat, max_normalized_inner, numerical_rank_of, svd_all, DenseMatrix, RANK_TOL,
};
use crate::rrr::{select_rank, RankGrid, RrrFit};

/// Residual norm ratio below which a link is reported as nearly
/// unidentifiable.
pub const DEGENERATE_LINK_RATIO: f64 = 1e-6;

/// Ordered modality blocks sharing the sample axis.
#[derive(Debug, Clone)]
pub struct ModalityChain {
    modalities: Vec<DenseMatrix>,
    names: Vec<String>,
}

impl ModalityChain {
    pub fn new(modalities: Vec<DenseMatrix>, names: Vec<String>) -> Result<Self> {
        if modalities.is_empty() {
            return Err(MvoprError::invalid("a chain needs at least one modality"));
        }
        if names.len() != modalities.len() {
            return Err(MvoprError::invalid("one name per modality is required"));
        }
        let n = modalities[0].nrows();
        for (m, name) in modalities.iter().zip(&names) {
            if m.nrows() != n {
                return Err(MvoprError::shape(format!(
                    "modality `{name}` has {} rows, expected {n}",
                    m.nrows()
                )));
            }
            if m.nrows() == 0 || m.ncols() == 0 {
                return Err(MvoprError::shape(format!("modality `{name}` is empty")));
            }
            if !all_finite(m) {
                return Err(MvoprError::invalid(format!("modality `{name}` has non-finite entries")));
            }
        }
        Ok(Self { modalities, names })
    }

    /// Names default to `m1`, `m2`, ...
    pub fn unnamed(modalities: Vec<DenseMatrix>) -> Result<Self> {
        let names = (1..=modalities.len()).map(|i| format!("m{i}")).collect();
        Self::new(modalities, names)
    }

    pub fn len(&self) -> usize {
        self.modalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modalities.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.modalities[0].nrows()
    }

    pub fn modalities(&self) -> &[DenseMatrix] {
        &self.modalities
    }

    pub fn modality(&self, j: usize) -> &DenseMatrix {
        &self.modalities[j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.ncols()).collect()
    }

    /// Column offsets of each modality in the concatenated design.
    pub fn offsets(&self) -> Vec<usize> {
        offsets_of(&self.dims())
    }

    pub fn concatenated(&self) -> DenseMatrix {
        let refs: Vec<&DenseMatrix> = self.modalities.iter().collect();
        hcat(&refs).expect("rows checked at construction")
    }

    /// Concatenation of the first `count` modalities.
    pub fn upstream_of(&self, count: usize) -> DenseMatrix {
        let refs: Vec<&DenseMatrix> = self.modalities[..count].iter().collect();
        hcat(&refs).expect("rows checked at construction")
    }

    /// Default link grids: ranks in `0..=min(p_upstream, p_j, n - 1)` whose
    /// fits leave residual degrees of freedom.
    pub fn default_grids(&self) -> Vec<RankGrid> {
        let dims = self.dims();
        let n = self.n_samples();
        (1..self.len())
            .map(|j| RankGrid::identifiable(n, dims[..j].iter().sum(), dims[j]))
            .collect()
    }
}

pub(crate) fn offsets_of(dims: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    dims.iter()
        .map(|d| {
            let at = acc;
            acc += d;
            at
        })
        .collect()
}

/// `m - u (u^T m)` for `u` with orthonormal columns.
pub fn project_out(u: &DenseMatrix, m: &DenseMatrix) -> Result<DenseMatrix> {
    if u.nrows() != m.nrows() {
        return Err(MvoprError::shape(format!(
            "projection basis has {} rows but target has {}",
            u.nrows(),
            m.nrows()
        )));
    }
    if u.ncols() == 0 {
        return Ok(m.clone());
    }
    Ok(m - u * (u.transpose() * m))
}

/// Fits every link `M_j ~ (M_1, ..., M_{j-1})`, `j = 2..k`, with GIC rank
/// selection over the matching grid. The returned fits are indexed by
/// `j - 2`.
pub fn chain_residualize(chain: &ModalityChain, grids: &[RankGrid]) -> Result<Vec<RrrFit>> {
    if grids.len() + 1 != chain.len() {
        return Err(MvoprError::invalid(format!(
            "{} modalities need {} rank grids, got {}",
            chain.len(),
            chain.len() - 1,
            grids.len()
        )));
    }
    (1..chain.len())
        .map(|j| select_rank(&chain.upstream_of(j), chain.modality(j), &grids[j - 1]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct NuisanceBlock {
    /// `U_1 .. U_{k-1}`; a block is empty (n x 0) when its links carry no rank.
    pub u_blocks: Vec<DenseMatrix>,
    pub concatenated: DenseMatrix,
}

impl NuisanceBlock {
    pub fn ncols(&self) -> usize {
        self.concatenated.ncols()
    }
}

/// Out-of-sample replay of the transform: every step is a fixed linear map
/// learned on the training rows.
#[derive(Debug, Clone)]
struct TransformMaps {
    /// `u_i = D_i * w_i`, with `w_i = B'_i V_i S_i^{-1}`.
    u_maps: Vec<DenseMatrix>,
    /// `Q = U * q_map` is an orthonormal basis of the nuisance span.
    q_map: DenseMatrix,
    /// `M*_j = D_j - Q * coeffs[j]`.
    coeffs: Vec<DenseMatrix>,
}

#[derive(Debug, Clone)]
pub struct TransformedDesign {
    pub blocks: Vec<DenseMatrix>,
    pub nuisance: NuisanceBlock,
    pub link_fits: Vec<RrrFit>,
    pub diagnostics: Vec<String>,
    maps: TransformMaps,
}

impl TransformedDesign {
    pub fn design(&self) -> DenseMatrix {
        let refs: Vec<&DenseMatrix> = self.blocks.iter().collect();
        hcat(&refs).expect("blocks share rows")
    }

    pub fn link_ranks(&self) -> Vec<usize> {
        self.link_fits.iter().map(|f| f.rank).collect()
    }

    /// Largest normalized inner product between any transformed block column
    /// and any nuisance column.
    pub fn orthogonality_defect(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| max_normalized_inner(b, &self.nuisance.concatenated))
            .fold(0.0, f64::max)
    }

    /// Applies the training-fitted transform to new rows of the same
    /// modalities, returning the transformed blocks and nuisance columns.
    pub fn transform_new(&self, modalities: &[DenseMatrix]) -> Result<(Vec<DenseMatrix>, DenseMatrix)> {
        let k = self.blocks.len();
        if modalities.len() != k {
            return Err(MvoprError::invalid(format!(
                "expected {k} modalities, got {}",
                modalities.len()
            )));
        }
        let rows = modalities[0].nrows();
        for (j, (m, b)) in modalities.iter().zip(&self.blocks).enumerate() {
            if m.ncols() != b.ncols() || m.nrows() != rows {
                return Err(MvoprError::shape(format!("modality {} has shape {:?}", j + 1, m.shape())));
            }
        }
        let bases = residual_bases(modalities, &self.link_fits)?;
        let u_parts: Vec<DenseMatrix> = self
            .maps
            .u_maps
            .iter()
            .zip(&bases)
            .map(|(w, d)| d * w)
            .collect();
        let nuisance = concat_or_empty(&u_parts, rows);
        let q = &nuisance * &self.maps.q_map;
        let blocks = bases
            .iter()
            .zip(&self.maps.coeffs)
            .map(|(d, c)| d - &q * c)
            .collect();
        Ok((blocks, nuisance))
    }
}

/// `D_1 = M_1`, `D_j = M_j - (M_1 .. M_{j-1}) B_j` for `j >= 2`.
fn residual_bases(modalities: &[DenseMatrix], fits: &[RrrFit]) -> Result<Vec<DenseMatrix>> {
    let mut bases = Vec::with_capacity(modalities.len());
    bases.push(modalities[0].clone());
    for j in 1..modalities.len() {
        let refs: Vec<&DenseMatrix> = modalities[..j].iter().collect();
        let upstream = hcat(&refs)?;
        bases.push(&modalities[j] - upstream * &fits[j - 1].b_hat);
    }
    Ok(bases)
}

fn concat_or_empty(parts: &[DenseMatrix], rows: usize) -> DenseMatrix {
    if parts.is_empty() {
        return DenseMatrix::zeros(rows, 0);
    }
    let refs: Vec<&DenseMatrix> = parts.iter().collect();
    hcat(&refs).expect("parts share rows")
}

/// Builds nuisance blocks and projected modalities from fitted links.
pub fn build_transform(chain: &ModalityChain, fits: &[RrrFit]) -> Result<TransformedDesign> {
    let k = chain.len();
    let n = chain.n_samples();
    let dims = chain.dims();
    if fits.len() + 1 != k {
        return Err(MvoprError::invalid(format!(
            "{k} modalities need {} link fits, got {}",
            k - 1,
            fits.len()
        )));
    }
    for (idx, fit) in fits.iter().enumerate() {
        let j = idx + 1;
        let upstream: usize = dims[..j].iter().sum();
        if fit.b_hat.shape() != (upstream, dims[j]) || fit.residuals.shape() != (n, dims[j]) {
            return Err(MvoprError::invalid(format!(
                "link fit {} does not match the chain (b_hat {:?}, residuals {:?})",
                j + 1,
                fit.b_hat.shape(),
                fit.residuals.shape()
            )));
        }
    }

    let offsets = offsets_of(&dims);
    let mut bases: Vec<DenseMatrix> = Vec::with_capacity(k);
    bases.push(chain.modality(0).clone());
    bases.extend(fits.iter().map(|f| f.residuals.clone()));

    let mut diagnostics = Vec::new();
    for (idx, fit) in fits.iter().enumerate() {
        let j = idx + 1;
        let total = chain.modality(j).norm();
        if fit.residuals.norm() <= DEGENERATE_LINK_RATIO * total {
            diagnostics.push(format!(
                "link into `{}` leaves a near-zero residual (|E| <= {DEGENERATE_LINK_RATIO:e} |M|); \
                 its coefficients are nearly unidentifiable",
                chain.names()[j]
            ));
        }
    }

    let mut u_blocks = Vec::with_capacity(k.saturating_sub(1));
    let mut u_maps = Vec::with_capacity(k);
    for i in 0..k.saturating_sub(1) {
        // Row block i of every downstream link coefficient, side by side.
        let downstream: Vec<DenseMatrix> = fits[i..]
            .iter()
            .map(|f| f.b_hat.rows(offsets[i], dims[i]).into_owned())
            .collect();
        let cap: usize = fits[i..].iter().map(|f| f.rank).sum();
        let b_prime = concat_cols(&downstream, dims[i]);
        let (u, w) = if cap == 0 {
            (DenseMatrix::zeros(n, 0), DenseMatrix::zeros(dims[i], 0))
        } else {
            let signal = &bases[i] * &b_prime;
            let svd = svd_all(&signal);
            let r = numerical_rank_of(&svd.singular_values).min(cap);
            let vr = svd.v.columns(0, r);
            let mut w = &b_prime * vr;
            for (c, s) in svd.singular_values[..r].iter().enumerate() {
                w.column_mut(c).scale_mut(1.0 / s);
            }
            (svd.u.columns(0, r).into_owned(), w)
        };
        u_blocks.push(u);
        u_maps.push(w);
    }
    // The last modality contributes no nuisance columns.
    u_maps.push(DenseMatrix::zeros(dims[k - 1], 0));

    let concatenated = concat_or_empty(&u_blocks, n);
    let (q, q_map) = orthonormalize(&concatenated);

    let mut blocks = Vec::with_capacity(k);
    let mut coeffs = Vec::with_capacity(k);
    for base in &bases {
        let c = q.transpose() * base;
        let mut block = base - &q * &c;
        // columns lying in the nuisance span are round-off after projection
        for (mut col, orig) in block.column_iter_mut().zip(base.column_iter()) {
            if col.norm() <= RANK_TOL * orig.norm() {
                col.fill(0.0);
            }
        }
        blocks.push(block);
        coeffs.push(c);
    }

    Ok(TransformedDesign {
        blocks,
        nuisance: NuisanceBlock { u_blocks, concatenated },
        link_fits: fits.to_vec(),
        diagnostics,
        maps: TransformMaps { u_maps, q_map, coeffs },
    })
}

fn concat_cols(parts: &[DenseMatrix], rows: usize) -> DenseMatrix {
    let total: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DenseMatrix::zeros(rows, total);
    let mut at = 0;
    for p in parts {
        out.columns_mut(at, p.ncols()).copy_from(p);
        at += p.ncols();
    }
    out
}

/// Orthonormal basis `Q = m * map` of the column span of `m`.
fn orthonormalize(m: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    if m.ncols() == 0 {
        return (DenseMatrix::zeros(m.nrows(), 0), DenseMatrix::zeros(0, 0));
    }
    let svd = svd_all(m);
    let r = svd.numerical_rank();
    let mut map = svd.v.columns(0, r).into_owned();
    for (c, s) in svd.singular_values[..r].iter().enumerate() {
        map.column_mut(c).scale_mut(1.0 / s);
    }
    (svd.u.columns(0, r).into_owned(), map)
}

/// Residualize with the default grids and build the transform.
pub fn transform_chain(chain: &ModalityChain) -> Result<TransformedDesign> {
    let fits = chain_residualize(chain, &chain.default_grids())?;
    build_transform(chain, &fits)
}
