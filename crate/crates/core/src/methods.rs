//! Uniform fit/predict interface over MVOPR and the competitor methods.

use std::fmt;
use std::str::FromStr;

use crate::baselines::{fit_cooperative, fit_factor_adjusted, fit_integrative_factor, FactorCount, FactorFit};
use crate::error::{MvoprError, Result};
use crate::numerics::{center_columns, hcat, DenseMatrix, Vector};
use crate::penalized::{fit_path, solve_path, PathOptions, PenaltySpec, RegularizationPath};
use crate::projection::{transform_chain, ModalityChain, TransformedDesign};

/// Agreement strength used when a cooperative fit is requested without one.
pub const DEFAULT_COOPERATIVE_RHO: f64 = 0.5;

/// A variable-selection procedure producing a regularization path over the
/// concatenated modality columns.
pub trait SelectionMethod: Send + Sync {
    fn label(&self) -> String;

    /// Fits on the given rows. `lambdas` fixes the grid; otherwise the method
    /// builds its default grid.
    fn fit(&self, modalities: &[DenseMatrix], y: &Vector, lambdas: Option<&[f64]>) -> Result<Box<dyn FittedSelection>>;
}

pub trait FittedSelection: Send {
    fn path(&self) -> &RegularizationPath;

    /// Predicted response for new rows at path point `index`.
    fn predict(&self, index: usize, modalities: &[DenseMatrix]) -> Result<Vector>;

    /// Key-value facts worth reporting (selected ranks, factor counts, ...).
    fn notes(&self) -> Vec<(String, String)> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodKind {
    Mvopr,
    MvoprAdaptive,
    Lasso,
    AdaptiveLasso,
    /// `None` sweeps the agreement grid in benchmarks and uses the default
    /// strength elsewhere.
    Cooperative(Option<f64>),
    FactorAdjusted,
    IntegrativeFactor,
}

impl MethodKind {
    pub fn id(&self) -> String {
        match self {
            MethodKind::Mvopr => "mvopr".into(),
            MethodKind::MvoprAdaptive => "mvopr-adaptive".into(),
            MethodKind::Lasso => "lasso".into(),
            MethodKind::AdaptiveLasso => "adaptive".into(),
            MethodKind::Cooperative(None) => "cooperative".into(),
            MethodKind::Cooperative(Some(r)) => format!("cooperative:{r}"),
            MethodKind::FactorAdjusted => "factor".into(),
            MethodKind::IntegrativeFactor => "integfactor".into(),
        }
    }

    fn penalty(&self) -> PenaltySpec {
        match self {
            MethodKind::MvoprAdaptive | MethodKind::AdaptiveLasso => PenaltySpec::adaptive(1.0),
            _ => PenaltySpec::l1(),
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for MethodKind {
    type Err = MvoprError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "mvopr" => MethodKind::Mvopr,
            "mvopr-adaptive" => MethodKind::MvoprAdaptive,
            "lasso" => MethodKind::Lasso,
            "adaptive" | "adaptive-lasso" => MethodKind::AdaptiveLasso,
            "cooperative" => MethodKind::Cooperative(None),
            "factor" => MethodKind::FactorAdjusted,
            "integfactor" => MethodKind::IntegrativeFactor,
            other => match other.strip_prefix("cooperative:") {
                Some(r) => {
                    let rho: f64 = r.parse().map_err(|_| MvoprError::invalid(format!("bad agreement strength in `{s}`")))?;
                    if !(rho.is_finite() && rho >= 0.0) {
                        return Err(MvoprError::invalid(format!("agreement strength must be >= 0 in `{s}`")));
                    }
                    MethodKind::Cooperative(Some(rho))
                }
                None => return Err(MvoprError::invalid(format!("unknown method `{s}`"))),
            },
        })
    }
}

pub fn parse_method_list(s: &str) -> Result<Vec<MethodKind>> {
    let methods = s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(MvoprError::invalid("method list is empty"));
    }
    Ok(methods)
}

fn path_for(
    design: &DenseMatrix,
    nuisance: &DenseMatrix,
    y: &Vector,
    penalty: &PenaltySpec,
    lambdas: Option<&[f64]>,
) -> Result<RegularizationPath> {
    let opts = PathOptions::default();
    match lambdas {
        Some(l) => solve_path(design, nuisance, y, penalty, l, &opts),
        None => fit_path(design, nuisance, y, penalty, &opts),
    }
}

/// Every transformed column lies in the nuisance span (e.g. a modality that
/// copies its upstream one): nothing is left to select, so the path is all
/// zeros and only the nuisance part is fitted.
fn absorbed_path(
    design: &DenseMatrix,
    nuisance: &DenseMatrix,
    y: &Vector,
    penalty: &PenaltySpec,
) -> Result<RegularizationPath> {
    let opts = PathOptions::default();
    let n = opts.n_lambdas.max(2);
    let step = opts.lambda_min_ratio.ln() / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| (step * i as f64).exp()).collect();
    let mut path = solve_path(design, nuisance, y, penalty, &grid, &opts)?;
    path.degenerate = true;
    Ok(path)
}

fn concat(modalities: &[DenseMatrix]) -> Result<DenseMatrix> {
    let refs: Vec<&DenseMatrix> = modalities.iter().collect();
    hcat(&refs)
}

struct MvoprFit {
    path: RegularizationPath,
    means: Vec<Vec<f64>>,
    transform: TransformedDesign,
}

impl FittedSelection for MvoprFit {
    fn path(&self) -> &RegularizationPath {
        &self.path
    }

    fn predict(&self, index: usize, modalities: &[DenseMatrix]) -> Result<Vector> {
        if modalities.len() != self.means.len() {
            return Err(MvoprError::shape("modality count differs from the fit"));
        }
        let mut centered = Vec::with_capacity(modalities.len());
        for (m, mu) in modalities.iter().zip(&self.means) {
            if m.ncols() != mu.len() {
                return Err(MvoprError::shape("modality width differs from the fit"));
            }
            let mut c = m.clone();
            for (j, mut col) in c.column_iter_mut().enumerate() {
                col.add_scalar_mut(-mu[j]);
            }
            centered.push(c);
        }
        let (blocks, nuisance) = self.transform.transform_new(&centered)?;
        Ok(self.path.predictor(index).predict(&concat(&blocks)?, &nuisance))
    }

    fn notes(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .transform
            .link_ranks()
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("link_rank_m{}", i + 2), r.to_string()))
            .collect();
        out.push(("nuisance_columns".into(), self.transform.nuisance.ncols().to_string()));
        out.extend(self.transform.diagnostics.iter().map(|d| ("diagnostic".to_string(), d.clone())));
        out
    }
}

/// Plain penalized fit on the raw concatenated design.
struct DirectFit {
    path: RegularizationPath,
}

impl FittedSelection for DirectFit {
    fn path(&self) -> &RegularizationPath {
        &self.path
    }

    fn predict(&self, index: usize, modalities: &[DenseMatrix]) -> Result<Vector> {
        let x = concat(modalities)?;
        if x.ncols() != self.path.n_features() {
            return Err(MvoprError::shape("feature count differs from the fit"));
        }
        Ok(self.path.predictor(index).predict(&x, &DenseMatrix::zeros(x.nrows(), 0)))
    }
}

struct FactorFitted {
    fit: FactorFit,
}

impl FittedSelection for FactorFitted {
    fn path(&self) -> &RegularizationPath {
        &self.fit.path
    }

    fn predict(&self, index: usize, modalities: &[DenseMatrix]) -> Result<Vector> {
        let (design, nuisance) = self.fit.transform_new(modalities)?;
        Ok(self.fit.path.predictor(index).predict(&design, &nuisance))
    }

    fn notes(&self) -> Vec<(String, String)> {
        let counts = self.fit.factor_counts();
        if counts.len() == 1 {
            vec![("factors".into(), counts[0].to_string())]
        } else {
            counts.iter().enumerate().map(|(i, k)| (format!("factors_m{}", i + 1), k.to_string())).collect()
        }
    }
}

impl SelectionMethod for MethodKind {
    fn label(&self) -> String {
        self.id()
    }

    fn fit(&self, modalities: &[DenseMatrix], y: &Vector, lambdas: Option<&[f64]>) -> Result<Box<dyn FittedSelection>> {
        if modalities.is_empty() {
            return Err(MvoprError::invalid("no modalities"));
        }
        let penalty = self.penalty();
        match *self {
            MethodKind::Mvopr | MethodKind::MvoprAdaptive => {
                let mut centered = modalities.to_vec();
                let means = centered.iter_mut().map(center_columns).collect();
                let chain = ModalityChain::unnamed(centered)?;
                let transform = transform_chain(&chain)?;
                let design = transform.design();
                let nuisance = &transform.nuisance.concatenated;
                let path = match path_for(&design, nuisance, y, &penalty, lambdas) {
                    Err(MvoprError::DegenerateGrid(_)) if lambdas.is_none() => {
                        absorbed_path(&design, nuisance, y, &penalty)?
                    }
                    other => other?,
                };
                Ok(Box::new(MvoprFit { path, means, transform }))
            }
            MethodKind::Lasso | MethodKind::AdaptiveLasso => {
                let x = concat(modalities)?;
                let path = path_for(&x, &DenseMatrix::zeros(x.nrows(), 0), y, &penalty, lambdas)?;
                Ok(Box::new(DirectFit { path }))
            }
            MethodKind::Cooperative(rho) => {
                if modalities.len() != 2 {
                    return Err(MvoprError::invalid(format!(
                        "cooperative fits take exactly 2 modalities, got {}",
                        modalities.len()
                    )));
                }
                let rho = rho.unwrap_or(DEFAULT_COOPERATIVE_RHO);
                let path = fit_cooperative(&modalities[0], &modalities[1], y, rho, &penalty, lambdas, &PathOptions::default())?;
                Ok(Box::new(DirectFit { path }))
            }
            MethodKind::FactorAdjusted => {
                let fit = fit_factor_adjusted(modalities, y, &penalty, lambdas, FactorCount::default(), &PathOptions::default())?;
                Ok(Box::new(FactorFitted { fit }))
            }
            MethodKind::IntegrativeFactor => {
                let fit =
                    fit_integrative_factor(modalities, y, &penalty, lambdas, FactorCount::default(), &PathOptions::default())?;
                Ok(Box::new(FactorFitted { fit }))
            }
        }
    }
}
