//! Weighted-L1 regularization paths with an unpenalized nuisance block.
//!
//! Objective at each lambda, on the standardized scale:
//!
//! ```text
//! (1 / 2n) |y - X b - U g|^2 + lambda * sum_j w_j |b_j|
//! ```
//!
//! The nuisance coefficients `g` are profiled out exactly: `X` and `y` are
//! projected onto the orthogonal complement of `U`, coordinate descent runs
//! on the projected Gram matrix, and `g` is recovered by least squares on the
//! partial residual. This is the same minimizer as block coordinate descent
//! with an exact nuisance step.

use crate::error::{MvoprError, Result};
use crate::numerics::{all_finite, center_columns, min_norm_lstsq, orthonormal_basis, DenseMatrix, Vector};

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    L1,
    AdaptiveL1 { gamma_exponent: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    /// Per-column weights; computed from a ridge pilot fit when absent for
    /// the adaptive kind.
    pub weights: Option<Vec<f64>>,
}

impl PenaltySpec {
    pub fn l1() -> Self {
        Self { kind: PenaltyKind::L1, weights: None }
    }

    pub fn adaptive(gamma_exponent: f64) -> Self {
        Self { kind: PenaltyKind::AdaptiveL1 { gamma_exponent }, weights: None }
    }

    fn validate(&self) -> Result<()> {
        if let PenaltyKind::AdaptiveL1 { gamma_exponent } = self.kind {
            if !(gamma_exponent > 0.0 && gamma_exponent.is_finite()) {
                return Err(MvoprError::invalid("adaptive exponent must be positive"));
            }
        }
        if let Some(w) = &self.weights {
            if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(MvoprError::invalid("penalty weights must be finite and positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    /// Center response and columns, scale penalized columns to `x^T x / n = 1`.
    /// When false the inputs are used exactly as given (no intercept).
    pub standardize: bool,
    pub n_lambdas: usize,
    /// Smallest lambda as a fraction of lambda_max.
    pub lambda_min_ratio: f64,
    pub tol: f64,
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            standardize: true,
            n_lambdas: 100,
            lambda_min_ratio: 1e-3,
            tol: 1e-7,
            kkt_tol: 1e-6,
            max_sweeps: 100_000,
        }
    }
}

/// The problem exactly as the solver sees it.
#[derive(Debug, Clone)]
pub struct StandardizedProblem {
    pub design: DenseMatrix,
    pub nuisance: DenseMatrix,
    pub y: Vector,
    pub x_means: Vec<f64>,
    pub x_scales: Vec<f64>,
    pub u_means: Vec<f64>,
    pub y_mean: f64,
}

impl StandardizedProblem {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn objective(&self, beta: &[f64], gamma: &[f64], lambda: f64, weights: &[f64]) -> f64 {
        let r = residual(&self.design, &self.nuisance, &self.y, beta, gamma);
        let pen: f64 = beta.iter().zip(weights).map(|(b, w)| w * b.abs()).sum();
        r.norm_squared() / (2.0 * self.n() as f64) + lambda * pen
    }

    pub fn kkt(&self, beta: &[f64], gamma: &[f64], lambda: f64, weights: &[f64]) -> f64 {
        kkt_residual(&self.design, &self.nuisance, &self.y, beta, gamma, lambda, weights)
    }
}

fn check_shapes(design: &DenseMatrix, nuisance: &DenseMatrix, y: &Vector) -> Result<()> {
    let n = y.len();
    if design.nrows() != n || nuisance.nrows() != n {
        return Err(MvoprError::shape(format!(
            "design {} rows, nuisance {} rows, response {} entries",
            design.nrows(),
            nuisance.nrows(),
            n
        )));
    }
    if n == 0 {
        return Err(MvoprError::shape("no samples"));
    }
    if !all_finite(design) || !all_finite(nuisance) || y.iter().any(|v| !v.is_finite()) {
        return Err(MvoprError::invalid("inputs contain non-finite values"));
    }
    Ok(())
}

pub fn standardize_problem(
    design: &DenseMatrix,
    nuisance: &DenseMatrix,
    y: &Vector,
    standardize: bool,
) -> Result<StandardizedProblem> {
    check_shapes(design, nuisance, y)?;
    let n = y.len() as f64;
    let mut x = design.clone();
    let mut u = nuisance.clone();
    let mut yc = y.clone();
    let (x_means, x_scales, u_means, y_mean) = if standardize {
        let xm = center_columns(&mut x);
        let um = center_columns(&mut u);
        let ym = yc.mean();
        yc.add_scalar_mut(-ym);
        let mut scales = Vec::with_capacity(x.ncols());
        for mut col in x.column_iter_mut() {
            let s = (col.norm_squared() / n).sqrt();
            // constant columns stay zero and never enter the model
            if s > 1e-12 {
                col.scale_mut(1.0 / s);
                scales.push(s);
            } else {
                col.fill(0.0);
                scales.push(1.0);
            }
        }
        (xm, scales, um, ym)
    } else {
        (vec![0.0; x.ncols()], vec![1.0; x.ncols()], vec![0.0; u.ncols()], 0.0)
    };
    Ok(StandardizedProblem { design: x, nuisance: u, y: yc, x_means, x_scales, u_means, y_mean })
}

fn residual(x: &DenseMatrix, u: &DenseMatrix, y: &Vector, beta: &[f64], gamma: &[f64]) -> Vector {
    let b = Vector::from_column_slice(beta);
    let g = Vector::from_column_slice(gamma);
    let mut r = y - x * b;
    if u.ncols() > 0 {
        r -= u * g;
    }
    r
}

/// Largest violation of the optimality conditions, penalized columns and
/// nuisance gradient combined.
pub fn kkt_residual(
    design: &DenseMatrix,
    nuisance: &DenseMatrix,
    y: &Vector,
    beta: &[f64],
    gamma: &[f64],
    lambda: f64,
    weights: &[f64],
) -> f64 {
    let n = y.len() as f64;
    let r = residual(design, nuisance, y, beta, gamma);
    let grad = design.transpose() * &r / (-n);
    let mut worst: f64 = 0.0;
    for j in 0..beta.len() {
        let g = grad[j];
        let lw = lambda * weights[j];
        let v = if beta[j] == 0.0 {
            (g.abs() - lw).max(0.0)
        } else {
            (g + lw * beta[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    if nuisance.ncols() > 0 {
        let gu = nuisance.transpose() * &r / n;
        worst = worst.max(gu.amax());
    }
    worst
}

/// Projected problem used by coordinate descent.
struct Profiled {
    gram: DenseMatrix,
    xty: Vec<f64>,
    /// `g = pinv(U) (y - X b)` recovers the nuisance coefficients.
    u_pinv_y: Vec<f64>,
    u_pinv_x: DenseMatrix,
}

impl Profiled {
    fn new(p: &StandardizedProblem) -> Result<Self> {
        let n = p.n() as f64;
        let q = if p.nuisance.ncols() > 0 {
            orthonormal_basis(&p.nuisance)
        } else {
            DenseMatrix::zeros(p.n(), 0)
        };
        let (xt, yt) = if q.ncols() > 0 {
            (&p.design - &q * (q.transpose() * &p.design), &p.y - &q * (q.transpose() * &p.y))
        } else {
            (p.design.clone(), p.y.clone())
        };
        let gram = xt.transpose() * &xt / n;
        let xty = (xt.transpose() * &yt / n).iter().copied().collect();
        let (u_pinv_y, u_pinv_x) = if p.nuisance.ncols() > 0 {
            let ym = DenseMatrix::from_column_slice(p.n(), 1, p.y.as_slice());
            let gy = min_norm_lstsq(&p.nuisance, &ym)?;
            let gx = min_norm_lstsq(&p.nuisance, &p.design)?;
            (gy.iter().copied().collect(), gx)
        } else {
            (Vec::new(), DenseMatrix::zeros(0, p.design.ncols()))
        };
        Ok(Self { gram, xty, u_pinv_y, u_pinv_x })
    }

    fn lambda_max(&self, weights: &[f64]) -> f64 {
        self.xty.iter().zip(weights).map(|(c, w)| c.abs() / w).fold(0.0, f64::max)
    }

    fn gamma(&self, beta: &[f64]) -> Vec<f64> {
        if self.u_pinv_y.is_empty() {
            return Vec::new();
        }
        let b = Vector::from_column_slice(beta);
        let gx = &self.u_pinv_x * b;
        self.u_pinv_y.iter().zip(gx.iter()).map(|(a, c)| a - c).collect()
    }
}

/// Descending log-spaced grid from lambda_max to `ratio * lambda_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid(pub Vec<f64>);

fn log_grid(lambda_max: f64, ratio: f64, length: usize) -> Vec<f64> {
    let lo = (lambda_max * ratio).ln();
    let hi = lambda_max.ln();
    (0..length)
        .map(|i| {
            if i == 0 {
                lambda_max
            } else {
                (hi + (lo - hi) * i as f64 / (length - 1) as f64).exp()
            }
        })
        .collect()
}

fn degenerate_check(prof: &Profiled, problem: &StandardizedProblem, weights: &[f64]) -> Result<f64> {
    let lmax = prof.lambda_max(weights);
    let y_scale = (problem.y.norm_squared() / problem.n() as f64).sqrt();
    if prof.gram.diagonal().iter().all(|d| *d <= 1e-24) {
        return Err(MvoprError::DegenerateGrid("all penalized columns are zero".into()));
    }
    if !(lmax > 1e-10 * y_scale) || lmax == 0.0 {
        return Err(MvoprError::DegenerateGrid(format!(
            "lambda_max = {lmax:e}: response is orthogonal to every penalized column"
        )));
    }
    Ok(lmax)
}

/// Unit-weight grid under the default standardization.
pub fn lambda_grid(design: &DenseMatrix, nuisance: &DenseMatrix, y: &Vector, length: usize) -> Result<Vec<f64>> {
    let opts = PathOptions { n_lambdas: length, ..PathOptions::default() };
    lambda_grid_with(design, nuisance, y, &opts, None)
}

/// Grid under explicit options; with weights, lambda_max is `max |c_j| / w_j`
/// so every coefficient is zero at the first point.
pub fn lambda_grid_with(
    design: &DenseMatrix,
    nuisance: &DenseMatrix,
    y: &Vector,
    options: &PathOptions,
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if options.n_lambdas < 2 {
        return Err(MvoprError::invalid("lambda grid needs at least 2 points"));
    }
    let problem = standardize_problem(design, nuisance, y, options.standardize)?;
    let prof = Profiled::new(&problem)?;
    let unit = vec![1.0; problem.design.ncols()];
    let w = weights.unwrap_or(&unit);
    let lmax = degenerate_check(&prof, &problem, w)?;
    Ok(log_grid(lmax, options.lambda_min_ratio, options.n_lambdas))
}

/// Ridge pilot (penalty `1e-3 n`, nuisance unpenalized) then
/// `w_j = 1 / (|b_j| + 1e-6)^gamma`.
pub fn adaptive_weights(design: &DenseMatrix, nuisance: &DenseMatrix, y: &Vector, gamma_exponent: f64) -> Result<Vec<f64>> {
    let problem = standardize_problem(design, nuisance, y, true)?;
    adaptive_weights_for(&problem, gamma_exponent)
}

pub fn adaptive_weights_for(problem: &StandardizedProblem, gamma_exponent: f64) -> Result<Vec<f64>> {
    if !(gamma_exponent > 0.0) {
        return Err(MvoprError::invalid("adaptive exponent must be positive"));
    }
    let prof = Profiled::new(problem)?;
    let p = prof.gram.ncols();
    let a = &prof.gram + DenseMatrix::identity(p, p) * 1e-3;
    let c = Vector::from_column_slice(&prof.xty);
    let pilot = a
        .cholesky()
        .ok_or_else(|| MvoprError::Numerical("ridge pilot system not positive definite".into()))?
        .solve(&c);
    Ok(weights_from_pilot(pilot.as_slice(), gamma_exponent))
}

pub fn weights_from_pilot(pilot: &[f64], gamma_exponent: f64) -> Vec<f64> {
    pilot.iter().map(|b| 1.0 / (b.abs() + 1e-6).powf(gamma_exponent)).collect()
}

#[derive(Debug, Clone)]
pub struct RegularizationPath {
    pub lambdas: Vec<f64>,
    /// Standardized-scale coefficients, one vector per lambda.
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub kkt: Vec<f64>,
    pub x_means: Vec<f64>,
    pub x_scales: Vec<f64>,
    pub u_means: Vec<f64>,
    pub y_mean: f64,
    /// Response carried no signal along the penalized columns; all beta are zero.
    pub degenerate: bool,
}

/// Linear predictor on the original scale of the inputs.
#[derive(Debug, Clone)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl LinearPredictor {
    pub fn predict(&self, design: &DenseMatrix, nuisance: &DenseMatrix) -> Vector {
        let mut out = design * Vector::from_column_slice(&self.beta);
        if !self.gamma.is_empty() {
            out += nuisance * Vector::from_column_slice(&self.gamma);
        }
        out.add_scalar_mut(self.intercept);
        out
    }
}

impl RegularizationPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn nonzero(&self, index: usize) -> Vec<usize> {
        self.beta[index].iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
    }

    pub fn predictor(&self, index: usize) -> LinearPredictor {
        let beta: Vec<f64> = self.beta[index].iter().zip(&self.x_scales).map(|(b, s)| b / s).collect();
        let gamma = self.gamma[index].clone();
        let intercept = self.y_mean
            - beta.iter().zip(&self.x_means).map(|(b, m)| b * m).sum::<f64>()
            - gamma.iter().zip(&self.u_means).map(|(g, m)| g * m).sum::<f64>();
        LinearPredictor { intercept, beta, gamma }
    }

    /// Index of the path point whose lambda is closest to `lambda` on a log scale.
    pub fn closest_index(&self, lambda: f64) -> usize {
        let target = lambda.max(1e-300).ln();
        (0..self.len())
            .min_by(|&a, &b| {
                let da = (self.lambdas[a].ln() - target).abs();
                let db = (self.lambdas[b].ln() - target).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap_or(0)
    }
}

fn resolve_weights(problem: &StandardizedProblem, penalty: &PenaltySpec) -> Result<Vec<f64>> {
    penalty.validate()?;
    let p = problem.design.ncols();
    let w = match (&penalty.weights, penalty.kind) {
        (Some(w), _) => w.clone(),
        (None, PenaltyKind::L1) => vec![1.0; p],
        (None, PenaltyKind::AdaptiveL1 { gamma_exponent }) => adaptive_weights_for(problem, gamma_exponent)?,
    };
    if w.len() != p {
        return Err(MvoprError::shape(format!("{} weights for {p} penalized columns", w.len())));
    }
    Ok(w)
}

/// Solves the path over the given strictly decreasing lambdas with warm starts.
pub fn solve_path(
    design: &DenseMatrix,
    nuisance: &DenseMatrix,
    y: &Vector,
    penalty: &PenaltySpec,
    lambdas: &[f64],
    options: &PathOptions,
) -> Result<RegularizationPath> {
    if lambdas.is_empty() {
        return Err(MvoprError::invalid("empty lambda sequence"));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) || lambdas.windows(2).any(|w| w[0] <= w[1]) {
        return Err(MvoprError::invalid("lambdas must be positive and strictly decreasing"));
    }
    let problem = standardize_problem(design, nuisance, y, options.standardize)?;
    let weights = resolve_weights(&problem, penalty)?;
    let prof = Profiled::new(&problem)?;
    run_path(&problem, &prof, weights, lambdas, options, false)
}

/// Builds the default grid and solves it. A response with no signal along
/// the penalized columns yields an all-zero path flagged `degenerate`; an
/// all-zero design is still an error.
pub fn fit_path(
    design: &DenseMatrix,
    nuisance: &DenseMatrix,
    y: &Vector,
    penalty: &PenaltySpec,
    options: &PathOptions,
) -> Result<RegularizationPath> {
    let problem = standardize_problem(design, nuisance, y, options.standardize)?;
    let weights = resolve_weights(&problem, penalty)?;
    let prof = Profiled::new(&problem)?;
    match degenerate_check(&prof, &problem, &weights) {
        Ok(lmax) => {
            let grid = log_grid(lmax, options.lambda_min_ratio, options.n_lambdas.max(2));
            run_path(&problem, &prof, weights, &grid, options, false)
        }
        Err(MvoprError::DegenerateGrid(msg)) if !msg.contains("all penalized columns") => {
            let grid = log_grid(1.0, options.lambda_min_ratio, options.n_lambdas.max(2));
            run_path(&problem, &prof, weights, &grid, options, true)
        }
        Err(e) => Err(e),
    }
}

fn run_path(
    problem: &StandardizedProblem,
    prof: &Profiled,
    weights: Vec<f64>,
    lambdas: &[f64],
    options: &PathOptions,
    degenerate: bool,
) -> Result<RegularizationPath> {
    let p = problem.design.ncols();
    let mut beta = vec![0.0; p];
    // grad_j = c_j - (G beta)_j
    let mut grad = prof.xty.clone();
    let mut betas = Vec::with_capacity(lambdas.len());
    let mut gammas = Vec::with_capacity(lambdas.len());
    let mut kkts = Vec::with_capacity(lambdas.len());
    for (li, &lambda) in lambdas.iter().enumerate() {
        if !degenerate {
            coordinate_descent(prof, &weights, lambda, &mut beta, &mut grad, options, li)?;
        }
        let gamma = prof.gamma(&beta);
        kkts.push(problem.kkt(&beta, &gamma, lambda, &weights));
        betas.push(beta.clone());
        gammas.push(gamma);
    }
    Ok(RegularizationPath {
        lambdas: lambdas.to_vec(),
        beta: betas,
        gamma: gammas,
        weights,
        kkt: kkts,
        x_means: problem.x_means.clone(),
        x_scales: problem.x_scales.clone(),
        u_means: problem.u_means.clone(),
        y_mean: problem.y_mean,
        degenerate,
    })
}

fn update_coord(prof: &Profiled, w: &[f64], lambda: f64, j: usize, beta: &mut [f64], grad: &mut [f64]) -> f64 {
    let gjj = prof.gram[(j, j)];
    if gjj <= 1e-24 {
        return 0.0;
    }
    let old = beta[j];
    let z = grad[j] + gjj * old;
    let new = soft_threshold(z, lambda * w[j]) / gjj;
    let delta = new - old;
    if delta != 0.0 {
        beta[j] = new;
        let col = prof.gram.column(j);
        for (g, c) in grad.iter_mut().zip(col.iter()) {
            *g -= c * delta;
        }
    }
    delta.abs()
}

fn profiled_kkt(prof: &Profiled, w: &[f64], lambda: f64, beta: &[f64], grad: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..beta.len() {
        if prof.gram[(j, j)] <= 1e-24 {
            continue;
        }
        let lw = lambda * w[j];
        let v = if beta[j] == 0.0 {
            (grad[j].abs() - lw).max(0.0)
        } else {
            (grad[j] - lw * beta[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Exact minimizer on the face given by the current support and signs:
/// `G_AA b = c_A - lambda w_A s_A`. Taken only when every sign survives, in
/// which case the point is the minimizer over that closed orthant face and
/// cannot raise the objective. Refreshes the gradient from scratch.
fn polish(prof: &Profiled, w: &[f64], lambda: f64, beta: &mut [f64], grad: &mut [f64]) -> bool {
    let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    if active.is_empty() {
        return false;
    }
    let k = active.len();
    let g_aa = DenseMatrix::from_fn(k, k, |a, b| prof.gram[(active[a], active[b])]);
    let rhs = Vector::from_fn(k, |a, _| {
        let j = active[a];
        prof.xty[j] - lambda * w[j] * beta[j].signum()
    });
    let Some(chol) = g_aa.cholesky() else {
        return false;
    };
    let b = chol.solve(&rhs);
    if active.iter().enumerate().any(|(a, &j)| !(b[a] * beta[j] > 0.0)) {
        return false;
    }
    for (a, &j) in active.iter().enumerate() {
        beta[j] = b[a];
    }
    for (i, g) in grad.iter_mut().enumerate() {
        *g = prof.xty[i] - active.iter().map(|&j| prof.gram[(i, j)] * beta[j]).sum::<f64>();
    }
    true
}

const POLISH_EVERY: usize = 25;

fn coordinate_descent(
    prof: &Profiled,
    w: &[f64],
    lambda: f64,
    beta: &mut [f64],
    grad: &mut [f64],
    options: &PathOptions,
    lambda_index: usize,
) -> Result<()> {
    let p = beta.len();
    let mut sweeps = 0usize;
    let mut tol = options.tol;
    loop {
        // full sweep
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            max_change = max_change.max(update_coord(prof, w, lambda, j, beta, grad));
        }
        sweeps += 1;
        if max_change > tol {
            // iterate on the active set until it settles
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            let mut inner = 0usize;
            loop {
                let mut change: f64 = 0.0;
                for &j in &active {
                    change = change.max(update_coord(prof, w, lambda, j, beta, grad));
                }
                sweeps += 1;
                inner += 1;
                if change <= tol {
                    break;
                }
                // slow progress usually means an ill-conditioned active block
                if inner % POLISH_EVERY == 0
                    && polish(prof, w, lambda, beta, grad)
                    && profiled_kkt(prof, w, lambda, beta, grad) <= options.kkt_tol
                {
                    return Ok(());
                }
                if sweeps >= options.max_sweeps {
                    return Err(MvoprError::Convergence { lambda_index, sweeps });
                }
            }
        } else if profiled_kkt(prof, w, lambda, beta, grad) <= options.kkt_tol {
            return Ok(());
        } else if polish(prof, w, lambda, beta, grad) && profiled_kkt(prof, w, lambda, beta, grad) <= options.kkt_tol {
            return Ok(());
        } else {
            tol *= 0.1;
        }
        if sweeps >= options.max_sweeps {
            return Err(MvoprError::Convergence { lambda_index, sweeps });
        }
    }
}
