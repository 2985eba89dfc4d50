//! Path scoring, selection stability and the leave-one-out protocol.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{MvoprError, Result};
use crate::methods::{FittedSelection, MethodKind, SelectionMethod};
use crate::numerics::{DenseMatrix, RngStream, Vector};
use crate::penalized::RegularizationPath;
use crate::simulation::{simulate_scenario, ScenarioConfig, SimulatedDataset};
use crate::baselines::COOPERATIVE_RHO_GRID;

/// Default selection-frequency threshold for the leave-one-out report.
pub const DEFAULT_THRESHOLD: f64 = 0.85;

/// Area under the (FPR, TPR) curve traced by the nonzero patterns of the
/// path, with (0,0) and (1,1) added and points sorted by FPR then TPR.
/// `true_support` holds column indices of the whole design; `slice`
/// restricts the evaluation to a column range.
pub fn selection_auc(path: &RegularizationPath, true_support: &[usize], slice: Option<Range<usize>>) -> Result<f64> {
    if path.is_empty() {
        return Err(MvoprError::invalid("empty path"));
    }
    let p = path.n_features();
    let range = slice.unwrap_or(0..p);
    if range.end > p || range.start > range.end {
        return Err(MvoprError::invalid(format!("slice {range:?} outside {p} features")));
    }
    if let Some(j) = true_support.iter().find(|&&j| j >= p) {
        return Err(MvoprError::invalid(format!("support index {j} outside {p} features")));
    }
    let truth: BTreeSet<usize> = true_support.iter().copied().filter(|j| range.contains(j)).collect();
    let positives = truth.len();
    let negatives = range.len() - positives;
    if positives == 0 {
        return Err(MvoprError::UndefinedMetric("no true features in range".into()));
    }
    if negatives == 0 {
        return Err(MvoprError::UndefinedMetric("no null features in range".into()));
    }
    let mut points = vec![(0.0, 0.0), (1.0, 1.0)];
    for beta in &path.beta {
        let (mut tp, mut fp) = (0usize, 0usize);
        for j in range.clone() {
            if beta[j] != 0.0 {
                if truth.contains(&j) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
    Ok(points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum())
}

fn overlap(a: &[usize], b: &[usize]) -> (usize, usize, usize) {
    let sa: BTreeSet<usize> = a.iter().copied().collect();
    let sb: BTreeSet<usize> = b.iter().copied().collect();
    (sa.intersection(&sb).count(), sa.len(), sb.len())
}

/// `|A ∩ B| / |A ∪ B|`; 1 for two empty sets.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (i, na, nb) = overlap(a, b);
    if na + nb == 0 {
        return 1.0;
    }
    i as f64 / (na + nb - i) as f64
}

/// `|A ∩ B| / sqrt(|A| |B|)`; 1 for two empty sets, 0 if exactly one is empty.
pub fn ochiai(a: &[usize], b: &[usize]) -> f64 {
    let (i, na, nb) = overlap(a, b);
    match (na, nb) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => i as f64 / ((na * nb) as f64).sqrt(),
    }
}

/// `2 |A ∩ B| / (|A| + |B|)`; 1 for two empty sets.
pub fn dice(a: &[usize], b: &[usize]) -> f64 {
    let (i, na, nb) = overlap(a, b);
    if na + nb == 0 {
        return 1.0;
    }
    2.0 * i as f64 / (na + nb) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub jaccard: f64,
    pub ochiai: f64,
    pub dice: f64,
}

/// Mean of each similarity over all unordered pairs.
pub fn stability_summary(sets: &[Vec<usize>]) -> Result<Stability> {
    if sets.len() < 2 {
        return Err(MvoprError::invalid(format!("stability needs at least 2 sets, got {}", sets.len())));
    }
    let (mut j, mut o, mut d, mut pairs) = (0.0, 0.0, 0.0, 0usize);
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            j += jaccard(&sets[a], &sets[b]);
            o += ochiai(&sets[a], &sets[b]);
            d += dice(&sets[a], &sets[b]);
            pairs += 1;
        }
    }
    let m = pairs as f64;
    Ok(Stability { jaccard: j / m, ochiai: o / m, dice: d / m })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaRule {
    /// Use exactly this lambda.
    Fixed(f64),
    /// Minimize K-fold prediction error over the training fold's own grid.
    InnerCv { folds: usize, seed: u64 },
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::InnerCv { folds: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub method: String,
    pub n_folds: usize,
    pub fold_errors: Vec<(usize, String)>,
    pub loo_mse: f64,
    pub stability: Stability,
    pub selection_frequencies: Vec<f64>,
    pub selected_features: Vec<usize>,
    /// Selected set of each successful fold, in held-out sample order.
    pub fold_sets: Vec<Vec<usize>>,
    pub fold_lambdas: Vec<f64>,
}

fn take_rows(modalities: &[DenseMatrix], rows: &[usize]) -> Vec<DenseMatrix> {
    modalities.iter().map(|m| m.select_rows(rows)).collect()
}

fn take_entries(y: &Vector, rows: &[usize]) -> Vector {
    Vector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]))
}

fn inner_cv_index(
    method: &dyn SelectionMethod,
    modalities: &[DenseMatrix],
    y: &Vector,
    lambdas: &[f64],
    folds: usize,
    stream: RngStream,
) -> Result<usize> {
    let n = y.len();
    let folds = folds.clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream.rng());
    let mut sse = vec![0.0; lambdas.len()];
    let mut used = 0usize;
    for f in 0..folds {
        let test: Vec<usize> = order.iter().enumerate().filter(|(i, _)| i % folds == f).map(|(_, &r)| r).collect();
        let train: Vec<usize> = order.iter().enumerate().filter(|(i, _)| i % folds != f).map(|(_, &r)| r).collect();
        let fitted = match method.fit(&take_rows(modalities, &train), &take_entries(y, &train), Some(lambdas)) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let test_m = take_rows(modalities, &test);
        let test_y = take_entries(y, &test);
        let mut ok = true;
        let mut fold_sse = vec![0.0; lambdas.len()];
        for (l, s) in fold_sse.iter_mut().enumerate().take(fitted.path().len()) {
            match fitted.predict(l, &test_m) {
                Ok(pred) => *s = (pred - &test_y).norm_squared(),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && fitted.path().len() == lambdas.len() {
            used += 1;
            for (a, b) in sse.iter_mut().zip(fold_sse) {
                *a += b;
            }
        }
    }
    if used == 0 {
        return Err(MvoprError::Numerical("every inner fold failed".into()));
    }
    // first minimum keeps the larger lambda on ties
    let mut best = 0;
    for (i, v) in sse.iter().enumerate() {
        if *v < sse[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Path index minimizing K-fold prediction error on a fixed grid; ties keep
/// the larger lambda.
pub fn cv_select_index(
    method: &dyn SelectionMethod,
    modalities: &[DenseMatrix],
    y: &Vector,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
) -> Result<usize> {
    inner_cv_index(method, modalities, y, lambdas, folds, RngStream::new(seed, u64::MAX))
}

struct FoldOutcome {
    selected: Vec<usize>,
    sq_error: f64,
    lambda: f64,
}

fn run_fold(
    method: &dyn SelectionMethod,
    modalities: &[DenseMatrix],
    y: &Vector,
    held_out: usize,
    rule: LambdaRule,
) -> Result<FoldOutcome> {
    let n = y.len();
    let train: Vec<usize> = (0..n).filter(|&i| i != held_out).collect();
    let train_m = take_rows(modalities, &train);
    let train_y = take_entries(y, &train);
    let (fitted, index): (Box<dyn FittedSelection>, usize) = match rule {
        LambdaRule::Fixed(l) => {
            let fitted = method.fit(&train_m, &train_y, Some(&[l]))?;
            let last = fitted.path().len().checked_sub(1).ok_or_else(|| MvoprError::invalid("empty path"))?;
            (fitted, last)
        }
        LambdaRule::InnerCv { folds, seed } => {
            let fitted = method.fit(&train_m, &train_y, None)?;
            let lambdas = fitted.path().lambdas.clone();
            let idx = inner_cv_index(method, &train_m, &train_y, &lambdas, folds, RngStream::new(seed, held_out as u64))?;
            (fitted, idx)
        }
    };
    let pred = fitted.predict(index, &take_rows(modalities, &[held_out]))?;
    Ok(FoldOutcome {
        selected: fitted.path().nonzero(index),
        sq_error: (pred[0] - y[held_out]).powi(2),
        lambda: fitted.path().lambdas[index],
    })
}

/// Leave-one-out refits with the whole pipeline rerun on each training set.
pub fn loo_evaluate(
    modalities: &[DenseMatrix],
    y: &Vector,
    method: &dyn SelectionMethod,
    rule: LambdaRule,
    threshold: f64,
) -> Result<SelectionReport> {
    let n = y.len();
    if n < 3 {
        return Err(MvoprError::invalid(format!("leave-one-out needs at least 3 samples, got {n}")));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MvoprError::invalid(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    if modalities.is_empty() || modalities.iter().any(|m| m.nrows() != n) {
        return Err(MvoprError::shape("modalities must share the response's rows"));
    }
    let p: usize = modalities.iter().map(|m| m.ncols()).sum();
    let outcomes: Vec<Result<FoldOutcome>> =
        with_worker_pool(|| (0..n).into_par_iter().map(|i| run_fold(method, modalities, y, i, rule)).collect());

    let mut fold_errors = Vec::new();
    let mut sets = Vec::new();
    let mut lambdas = Vec::new();
    let mut sse = 0.0;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                sse += o.sq_error;
                lambdas.push(o.lambda);
                sets.push(o.selected);
            }
            Err(e) => fold_errors.push((i, e.to_string())),
        }
    }
    if sets.len() < 2 {
        return Err(MvoprError::Numerical(format!("only {} of {n} folds succeeded", sets.len())));
    }
    let mut counts = vec![0usize; p];
    for s in &sets {
        for &j in s {
            counts[j] += 1;
        }
    }
    let l = sets.len() as f64;
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / l).collect();
    let selected = (0..p).filter(|&j| freqs[j] >= threshold).collect();
    Ok(SelectionReport {
        method: method.label(),
        n_folds: n,
        fold_errors,
        loo_mse: sse / l,
        stability: stability_summary(&sets)?,
        selection_frequencies: freqs,
        selected_features: selected,
        fold_sets: sets,
        fold_lambdas: lambdas,
    })
}

/// Runs `f` on a pool capped by `MVOPR_THREADS` when that is set.
pub fn with_worker_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let cap = std::env::var("MVOPR_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&t| t > 0);
    match cap.and_then(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub scenario: String,
    pub rep: u64,
    pub seed: u64,
    pub method: String,
    pub metric: String,
    pub modality: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkFailure {
    pub rep: u64,
    pub method: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
    pub failures: Vec<BenchmarkFailure>,
}

impl BenchmarkTable {
    pub const HEADER: [&'static str; 7] = ["scenario", "rep", "seed", "method", "metric", "modality", "value"];

    pub fn to_csv(&self) -> String {
        let mut out = Self::HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.scenario, r.rep, r.seed, r.method, r.metric, r.modality, r.value
            ));
        }
        out
    }

    /// Mean of `metric` for `method` on `modality` over all replications.
    pub fn mean(&self, method: &str, metric: &str, modality: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.metric == metric && r.modality == modality)
            .map(|r| r.value)
            .collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    }
}

/// AUC overall and per modality; modalities without true features are skipped.
pub fn path_aucs(path: &RegularizationPath, data: &SimulatedDataset) -> Result<Vec<(String, f64)>> {
    let support = data.global_support();
    let mut out = vec![("overall".to_string(), selection_auc(path, &support, None)?)];
    let offsets = data.chain.offsets();
    for (j, name) in data.chain.names().iter().enumerate() {
        let range = offsets[j]..offsets[j] + data.chain.dims()[j];
        match selection_auc(path, &support, Some(range)) {
            Ok(a) => out.push((name.clone(), a)),
            Err(MvoprError::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn score_method(method: MethodKind, data: &SimulatedDataset) -> Result<Vec<(String, String, f64)>> {
    let modalities = data.chain.modalities();
    let auc_rows = |path: &RegularizationPath| -> Result<Vec<(String, String, f64)>> {
        Ok(path_aucs(path, data)?.into_iter().map(|(m, v)| ("auc".to_string(), m, v)).collect())
    };
    if method == MethodKind::Cooperative(None) {
        let mut best: Option<(f64, f64, Vec<(String, String, f64)>)> = None;
        for rho in COOPERATIVE_RHO_GRID {
            let fitted = MethodKind::Cooperative(Some(rho)).fit(modalities, &data.y, None)?;
            let rows = auc_rows(fitted.path())?;
            let overall = rows[0].2;
            if best.as_ref().is_none_or(|b| overall > b.0) {
                best = Some((overall, rho, rows));
            }
        }
        let (_, rho, mut rows) = best.expect("grid is nonempty");
        rows.push(("rho".into(), "overall".into(), rho));
        return Ok(rows);
    }
    let fitted = method.fit(modalities, &data.y, None)?;
    auc_rows(fitted.path())
}

/// Simulates every replication of `config` and scores each method. Output
/// rows are sorted by (scenario, rep, method, metric, modality).
pub fn run_benchmark(config: &ScenarioConfig, methods: &[MethodKind]) -> Result<BenchmarkTable> {
    config.validate()?;
    if methods.is_empty() {
        return Err(MvoprError::invalid("no methods given"));
    }
    let per_rep: Vec<(Vec<BenchmarkRow>, Vec<BenchmarkFailure>)> = with_worker_pool(|| {
        (0..config.reps as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rows = Vec::new();
                let mut fails = Vec::new();
                let data = match simulate_scenario(config, rep) {
                    Ok(d) => d,
                    Err(e) => {
                        for m in methods {
                            fails.push(BenchmarkFailure { rep, method: m.id(), reason: format!("simulation: {e}") });
                        }
                        return (rows, fails);
                    }
                };
                for &m in methods {
                    match score_method(m, &data) {
                        Ok(vals) => rows.extend(vals.into_iter().map(|(metric, modality, value)| BenchmarkRow {
                            scenario: config.scenario.to_string(),
                            rep,
                            seed: config.seed,
                            method: m.id(),
                            metric,
                            modality,
                            value,
                        })),
                        Err(e) => fails.push(BenchmarkFailure { rep, method: m.id(), reason: e.to_string() }),
                    }
                }
                (rows, fails)
            })
            .collect()
    });
    let mut table = BenchmarkTable::default();
    for (r, f) in per_rep {
        table.rows.extend(r);
        table.failures.extend(f);
    }
    table.rows.sort_by(|a, b| {
        (&a.scenario, a.rep, &a.method, &a.metric, &a.modality).cmp(&(&b.scenario, b.rep, &b.method, &b.metric, &b.modality))
    });
    table.failures.sort_by(|a, b| (a.rep, &a.method).cmp(&(b.rep, &b.method)));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_path(betas: Vec<Vec<f64>>) -> RegularizationPath {
        let p = betas[0].len();
        let l = betas.len();
        RegularizationPath {
            lambdas: (0..l).map(|i| 1.0 / (i + 1) as f64).collect(),
            beta: betas,
            gamma: vec![Vec::new(); l],
            weights: vec![1.0; p],
            kkt: vec![0.0; l],
            x_means: vec![0.0; p],
            x_scales: vec![1.0; p],
            u_means: Vec::new(),
            y_mean: 0.0,
            degenerate: false,
        }
    }

    #[test]
    fn auc_extremes() {
        let perfect = toy_path(vec![vec![0.0; 4], vec![1.0, 1.0, 0.0, 0.0], vec![1.0; 4]]);
        assert_eq!(selection_auc(&perfect, &[0, 1], None).unwrap(), 1.0);
        let empty = toy_path(vec![vec![0.0; 4]; 3]);
        assert_eq!(selection_auc(&empty, &[0, 1], None).unwrap(), 0.5);
        assert!(matches!(selection_auc(&empty, &[0, 1], Some(2..4)), Err(MvoprError::UndefinedMetric(_))));
    }

    #[test]
    fn set_similarities() {
        let (a, b) = (vec![0, 1], vec![1, 2]);
        assert!((jaccard(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ochiai(&a, &b), 0.5);
        assert_eq!(dice(&a, &b), 0.5);
        assert_eq!((jaccard(&a, &a), ochiai(&a, &a), dice(&a, &a)), (1.0, 1.0, 1.0));
        assert_eq!((jaccard(&a, &[5]), ochiai(&a, &[5]), dice(&a, &[5])), (0.0, 0.0, 0.0));
        assert_eq!((jaccard(&[], &[]), ochiai(&[], &[]), dice(&[], &[])), (1.0, 1.0, 1.0));
        assert_eq!((jaccard(&a, &[]), ochiai(&a, &[]), dice(&a, &[])), (0.0, 0.0, 0.0));
        assert!(stability_summary(&[a.clone()]).is_err());
        let s = stability_summary(&[a.clone(), a.clone(), a]).unwrap();
        assert_eq!((s.jaccard, s.ochiai, s.dice), (1.0, 1.0, 1.0));
    }
}
