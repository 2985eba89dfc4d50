//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod oracles;

use std::time::Instant;

use rand::Rng;

use mvopr_cli::{cmd_simulate, SimulateArgs};
use mvopr_core::baselines::{fit_cooperative, fit_factor_adjusted, select_num_factors, FactorCount};
use mvopr_core::evaluation::{dice, jaccard, ochiai, run_benchmark, selection_auc, stability_summary};
use mvopr_core::methods::{MethodKind, SelectionMethod};
use mvopr_core::numerics::{max_normalized_inner, standard_normal_matrix, DenseMatrix, RngStream, Vector};
use mvopr_core::penalized::{fit_path, solve_path, standardize_problem, PathOptions, PenaltySpec, RegularizationPath};
use mvopr_core::projection::transform_chain;
use mvopr_core::rrr::fit_rrr;
use mvopr_core::simulation::{simulate_scenario, ScenarioConfig, ScenarioId};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const REPS: usize = 20;

fn orthogonality_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..REPS as u64 {
        let mut cfg = ScenarioConfig::builtin(ScenarioId::S1);
        cfg.dims = vec![100, 100];
        cfg.seed = 1000 + seed;
        let data = simulate_scenario(&cfg, 0).expect("simulate");
        let t = transform_chain(&data.chain).expect("transform");
        worst = worst.max(t.orthogonality_defect());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs <= 120.0,
        format!("max |cos(block, nuisance)| = {worst:.2e} (tol 1e-6) over {REPS} datasets; {secs:.1}s (limit 120s)"),
    )
}

fn independence_audit() -> Outcome {
    let mut claims = [0.0f64; 5];
    for rep in 0..REPS as u64 {
        let data = simulate_scenario(&ScenarioConfig::builtin(ScenarioId::S6Chain), rep).expect("simulate");
        let t = transform_chain(&data.chain).expect("transform");
        let (m1, m2, m3) = (&t.blocks[0], &t.blocks[1], &t.blocks[2]);
        let (u1, u2) = (&t.nuisance.u_blocks[0], &t.nuisance.u_blocks[1]);
        let c = |a: &DenseMatrix, b: &DenseMatrix| max_normalized_inner(a, b);
        let vals = [
            c(m3, m1).max(c(m3, m2)),
            c(m2, m1),
            c(m1, u1).max(c(m2, u2)),
            c(m2, u1).max(c(m3, u1)),
            c(m1, u2).max(c(m3, u2)),
        ];
        for (w, v) in claims.iter_mut().zip(vals) {
            *w = w.max(v);
        }
    }
    let pass = claims.iter().all(|v| *v <= 1e-6);
    let parts: Vec<String> = claims.iter().enumerate().map(|(i, v)| format!("claim{}={v:.2e}", i + 1)).collect();
    outcome(pass, format!("max |cos| per claim over {REPS} s6 datasets (tol 1e-6): {}", parts.join(" ")))
}

fn path_kkt(path: &RegularizationPath) -> f64 {
    path.kkt.iter().copied().fold(0.0, f64::max)
}

fn solver_certificates() -> Outcome {
    let mut worst_kkt: f64 = 0.0;
    let mut points = 0usize;
    let opts = PathOptions::default();
    for seed in 0..5u64 {
        let x = oracles::random_matrix(60, 40, 10 + seed);
        let u = oracles::random_matrix(60, 3, 20 + seed);
        let y = Vector::from_iterator(60, (0..60).map(|i| x[(i, 0)] * 2.0 - x[(i, 5)] + u[(i, 1)] + 0.3 * x[(i, 9)] * x[(i, 2)]));
        for penalty in [PenaltySpec::l1(), PenaltySpec::adaptive(1.0)] {
            for nuis in [DenseMatrix::zeros(60, 0), u.clone()] {
                let path = fit_path(&x, &nuis, &y, &penalty, &opts).expect("path");
                worst_kkt = worst_kkt.max(path_kkt(&path));
                points += path.len();
            }
        }
        let (m1, m2) = (x.columns(0, 20).into_owned(), x.columns(20, 20).into_owned());
        let coop = fit_cooperative(&m1, &m2, &y, 0.5, &PenaltySpec::l1(), None, &opts).expect("coop");
        worst_kkt = worst_kkt.max(path_kkt(&coop));
        points += coop.len();
        let fa = fit_factor_adjusted(&[m1, m2], &y, &PenaltySpec::l1(), None, FactorCount::default(), &opts).expect("factor");
        worst_kkt = worst_kkt.max(path_kkt(&fa.path));
        points += fa.path.len();
    }
    let data = simulate_scenario(&ScenarioConfig { dims: vec![100, 100], ..ScenarioConfig::builtin(ScenarioId::S1) }, 0)
        .expect("simulate");
    for m in [MethodKind::Mvopr, MethodKind::MvoprAdaptive, MethodKind::IntegrativeFactor] {
        let fit = m.fit(data.chain.modalities(), &data.y, None).expect("fit");
        worst_kkt = worst_kkt.max(path_kkt(fit.path()));
        points += fit.path().len();
    }

    let mut worst_closed: f64 = 0.0;
    for seed in 0..5u64 {
        let n = 50;
        let x = oracles::orthonormal_design(n, 8, 40 + seed);
        let mut y = oracles::random_matrix(n, 1, 50 + seed).column(0).into_owned() + &x.column(0) * 3.0 - &x.column(4) * 1.5;
        let ym = y.mean();
        y.add_scalar_mut(-ym);
        let path = fit_path(&x, &DenseMatrix::zeros(n, 0), &y, &PenaltySpec::l1(), &opts).expect("path");
        let c = x.transpose() * &y / n as f64;
        for (l, &lam) in path.lambdas.iter().enumerate() {
            for j in 0..8 {
                let expect = c[j].signum() * (c[j].abs() - lam).max(0.0);
                worst_closed = worst_closed.max((path.beta[l][j] - expect).abs());
            }
        }
    }
    outcome(
        worst_kkt <= 1e-6 && worst_closed <= 1e-8,
        format!("max KKT residual {worst_kkt:.2e} over {points} path points (tol 1e-6); orthonormal closed-form error {worst_closed:.2e} (tol 1e-8)"),
    )
}

fn oracle_equivalences() -> Outcome {
    let mut rrr_err: f64 = 0.0;
    for seed in 0..10u64 {
        let x = oracles::random_matrix(30, 6, 100 + seed);
        let b = oracles::random_matrix(6, 2, 200 + seed) * oracles::random_matrix(2, 5, 300 + seed);
        let y = &x * &b + oracles::random_matrix(30, 5, 400 + seed) * 0.5;
        let fit = fit_rrr(&x, &y, 2).expect("rrr");
        let als = oracles::rrr_als(&x, &y, 2, seed);
        rrr_err = rrr_err.max((&fit.b_hat - als).norm());
    }

    let mut obj_err: f64 = 0.0;
    for seed in 0..5u64 {
        let x = oracles::random_matrix(40, 8, 500 + seed);
        let u = if seed % 2 == 0 { DenseMatrix::zeros(40, 0) } else { oracles::random_matrix(40, 2, 600 + seed) };
        let y = Vector::from_iterator(40, (0..40).map(|i| x[(i, 1)] - 2.0 * x[(i, 3)] + 0.5 * x[(i, 6)])) + oracles::random_matrix(40, 1, 700 + seed).column(0);
        let lam = 0.1;
        let path = solve_path(&x, &u, &y, &PenaltySpec::l1(), &[lam], &PathOptions::default()).expect("solve");
        let prob = standardize_problem(&x, &u, &y, true).expect("std");
        let w = vec![1.0; 8];
        let ours = prob.objective(&path.beta[0], &path.gamma[0], lam, &w);
        let (_, _, oracle) = oracles::lasso_proximal_oracle(&prob.design, &prob.nuisance, &prob.y, lam, &w, 1_000_000);
        obj_err = obj_err.max((ours - oracle).abs());
    }

    let toy = RegularizationPath {
        lambdas: vec![1.0, 0.5, 0.25],
        beta: vec![vec![0.0; 4], vec![1.0, 0.0, 1.0, 0.0], vec![1.0, 1.0, 1.0, 0.0]],
        gamma: vec![Vec::new(); 3],
        weights: vec![1.0; 4],
        kkt: vec![0.0; 3],
        x_means: vec![0.0; 4],
        x_scales: vec![1.0; 4],
        u_means: Vec::new(),
        y_mean: 0.0,
        degenerate: false,
    };
    let auc = selection_auc(&toy, &[0, 1], None).expect("auc");
    let hand = oracles::hand_auc(&[(0.0, 0.0), (0.5, 0.5), (0.5, 1.0)]);
    let auc_ok = auc == hand && hand == 0.625;
    outcome(
        rrr_err <= 1e-6 && obj_err <= 1e-8 && auc_ok,
        format!("RRR vs ALS max Frobenius {rrr_err:.2e} (tol 1e-6); path objective vs proximal oracle {obj_err:.2e} (tol 1e-8); toy AUC {auc} vs hand {hand}"),
    )
}

fn mean_of(table: &mvopr_core::BenchmarkTable, method: &str, modality: &str) -> f64 {
    table.mean(method, "auc", modality).unwrap_or(f64::NAN)
}

fn s1_trend() -> Outcome {
    let start = Instant::now();
    std::env::set_var("MVOPR_THREADS", "1");
    let mut cfg = ScenarioConfig::builtin(ScenarioId::S1);
    cfg.dims = vec![100, 100];
    cfg.snr_links = vec![10.0];
    cfg.reps = REPS;
    let methods = [MethodKind::Mvopr, MethodKind::AdaptiveLasso, MethodKind::Cooperative(None)];
    let table = run_benchmark(&cfg, &methods).expect("benchmark");
    std::env::remove_var("MVOPR_THREADS");
    let secs = start.elapsed().as_secs_f64();
    let (mv, ad, co) = (mean_of(&table, "mvopr", "overall"), mean_of(&table, "adaptive", "overall"), mean_of(&table, "cooperative", "overall"));
    let margin = (mv - ad).min(mv - co);
    outcome(
        margin >= 0.03 && secs <= 600.0 && table.failures.is_empty(),
        format!(
            "mean AUC mvopr {mv:.4}, adaptive {ad:.4}, cooperative(best rho) {co:.4}; margin {margin:.4} (need >= 0.03); {} failures; {secs:.1}s single-threaded (limit 600s)",
            table.failures.len()
        ),
    )
}

fn null_similarity() -> Outcome {
    let mut cfg = ScenarioConfig::builtin(ScenarioId::S5Null);
    cfg.reps = REPS;
    let table = run_benchmark(&cfg, &[MethodKind::Mvopr, MethodKind::Lasso]).expect("benchmark");
    let (mv, la) = (mean_of(&table, "mvopr", "overall"), mean_of(&table, "lasso", "overall"));
    let gap = (mv - la).abs();
    outcome(gap <= 0.05 && table.failures.is_empty(), format!("mean AUC mvopr {mv:.4}, lasso {la:.4}; |gap| {gap:.4} (tol 0.05)"))
}

fn s2_ordering() -> Outcome {
    let mut cfg = ScenarioConfig::builtin(ScenarioId::S2);
    cfg.dims = vec![50, 150];
    cfg.snr_links = vec![30.0];
    cfg.reps = REPS;
    let table = run_benchmark(&cfg, &[MethodKind::Mvopr, MethodKind::IntegrativeFactor]).expect("benchmark");
    let (mv, ifr) = (mean_of(&table, "mvopr", "m1"), mean_of(&table, "integfactor", "m1"));
    outcome(mv > ifr && table.failures.is_empty(), format!("mean AUC on m1: mvopr {mv:.4} vs integrative factor {ifr:.4} (need strictly greater)"))
}

fn stability_metrics() -> Outcome {
    let (a, b) = (vec![0usize, 1], vec![1usize, 2]);
    let exact = jaccard(&a, &b) == 1.0 / 3.0 && ochiai(&a, &b) == 0.5 && dice(&a, &b) == 0.5;
    let summary = stability_summary(&[a, b]).expect("summary");
    let summary_ok = summary.jaccard == 1.0 / 3.0 && summary.ochiai == 0.5 && summary.dice == 0.5;
    let mut rng = RngStream::new(8, 0).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut draw = || -> Vec<usize> { (0..30).filter(|_| rng.random_bool(0.3)).collect() };
        let (s, t) = (draw(), draw());
        let j = jaccard(&s, &t);
        worst = worst.max((dice(&s, &t) - 2.0 * j / (1.0 + j)).abs());
    }
    outcome(
        exact && summary_ok && worst <= 1e-12,
        format!("pair {{a,b}} vs {{b,c}} exact: {exact}; summary exact: {summary_ok}; max |dice - 2j/(1+j)| over 1000 pairs {worst:.1e}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let run = |name: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let args = SimulateArgs {
            scenario: Some("s1".into()),
            config: None,
            snr2: Some(8.0),
            reps: Some(3),
            seed: Some(42),
            methods: "mvopr,lasso".into(),
            out: out.clone(),
        };
        cmd_simulate(&args).expect("simulate");
        std::fs::read(out).expect("read")
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    let rows = a.iter().filter(|c| **c == b'\n').count();
    outcome(a == b && rows > 1, format!("two runs: {} and {} bytes, identical = {}", a.len(), b.len(), a == b))
}

fn factor_counts() -> Outcome {
    let (n, p) = (200, 100);
    let mut spiked_hits = 0;
    let mut null_hits = 0;
    for seed in 0..REPS as u64 {
        let mut rng = RngStream::new(900 + seed, 0).rng();
        let f = standard_normal_matrix(n, 3, &mut rng);
        let l = standard_normal_matrix(p, 3, &mut rng);
        let e = standard_normal_matrix(n, p, &mut rng);
        // per-entry factor signal sd 10 against unit noise
        let m = &f * l.transpose() * (10.0 / 3f64.sqrt()) + &e;
        let kmax = 8;
        if select_num_factors(&m, kmax) == 3 {
            spiked_hits += 1;
        }
        if select_num_factors(&e, kmax) == 0 {
            null_hits += 1;
        }
    }
    let need = (0.9 * REPS as f64).ceil() as usize;
    outcome(
        spiked_hits >= need && null_hits >= need,
        format!("true k=3 selected {spiked_hits}/{REPS}; k=0 on isotropic noise {null_hits}/{REPS} (need >= {need} each)"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 orthogonality suite", orthogonality_suite),
        ("2 independence audit (three modalities)", independence_audit),
        ("3 solver certificates", solver_certificates),
        ("4 oracle equivalences", oracle_equivalences),
        ("5 s1 trend: mvopr over adaptive lasso and cooperative", s1_trend),
        ("6 null experiment: mvopr similar to lasso", null_similarity),
        ("7 s2 ordering on m1: mvopr over integrative factor", s2_ordering),
        ("8 stability metrics", stability_metrics),
        ("9 simulate determinism", determinism),
        ("10 factor-count selection", factor_counts),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("[{tag}] criterion {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
