mod common;

use proptest::prelude::*;

use mvopr_core::baselines::{cooperative_design, estimate_factors, fit_factor_adjusted, FactorCount};
use mvopr_core::evaluation::{dice, jaccard, selection_auc};
use mvopr_core::numerics::{
    build_covariance, sample_mvn, svd_all, CovarianceKind, CovarianceSpec, DenseMatrix, RngStream, Vector,
};
use mvopr_core::penalized::{fit_path, solve_path, standardize_problem, PathOptions, PenaltySpec, RegularizationPath};
use mvopr_core::projection::{project_out, transform_chain, ModalityChain};
use mvopr_core::rrr::fit_rrr;
use mvopr_core::simulation::{entry_variance, simulate_scenario, ScenarioConfig, ScenarioId};

use common::random_matrix;

fn cov_kind() -> impl Strategy<Value = CovarianceKind> {
    prop_oneof![
        Just(CovarianceKind::Identity),
        (-0.95f64..0.95).prop_map(|rho| CovarianceKind::Ar1 { rho }),
        (0.0f64..0.95).prop_map(|mu| CovarianceKind::CompoundSymmetry { mu }),
    ]
}

fn response(x: &DenseMatrix, seed: u64) -> Vector {
    let n = x.nrows();
    let noise = random_matrix(n, 1, seed ^ 0xABCD);
    Vector::from_fn(n, |i, _| x[(i, 0)] * 1.5 - x[(i, x.ncols() - 1)] + 0.5 * noise[(i, 0)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn covariance_symmetric_and_pd(kind in cov_kind(), dim in 1usize..30) {
        let s = build_covariance(&CovarianceSpec::new(kind, dim)).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                prop_assert_eq!(s[(i, j)], s[(j, i)]);
            }
        }
        prop_assert!(s.cholesky().is_some());
    }

    #[test]
    fn svd_orthonormal_and_sorted(n in 2usize..25, p in 2usize..25, seed in any::<u64>()) {
        let svd = svd_all(&random_matrix(n, p, seed));
        let k = svd.singular_values.len();
        let utu = svd.u.transpose() * &svd.u - DenseMatrix::identity(k, k);
        let vtv = svd.v.transpose() * &svd.v - DenseMatrix::identity(k, k);
        prop_assert!(utu.amax() <= 1e-10 && vtv.amax() <= 1e-10);
        prop_assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mvn_reproducible(kind in cov_kind(), seed in any::<u64>(), stream in any::<u64>()) {
        let spec = CovarianceSpec::new(kind, 6);
        let a = sample_mvn(10, &spec, RngStream::new(seed, stream)).unwrap();
        let b = sample_mvn(10, &spec, RngStream::new(seed, stream)).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rrr_residual_identity_and_monotone(n in 8usize..30, p in 1usize..8, q in 1usize..8, seed in any::<u64>()) {
        let x = random_matrix(n, p, seed);
        let y = random_matrix(n, q, seed.wrapping_add(1));
        let mut last = f64::INFINITY;
        for r in 0..=p.min(q) {
            let fit = fit_rrr(&x, &y, r).unwrap();
            let recon = &x * &fit.b_hat + &fit.residuals - &y;
            prop_assert!(recon.amax() <= 1e-10);
            let norm = fit.residuals.norm();
            prop_assert!(norm <= last + 1e-10);
            last = norm;
        }
    }

    #[test]
    fn transform_invariants(n in 15usize..40, dims in prop::collection::vec(2usize..12, 2..4), seed in any::<u64>()) {
        let mods: Vec<DenseMatrix> = dims.iter().enumerate().map(|(i, &d)| random_matrix(n, d, seed.wrapping_add(i as u64))).collect();
        let mut linked = mods.clone();
        for j in 1..linked.len() {
            let b = random_matrix(dims[j - 1], dims[j], seed ^ 99) * 0.8;
            linked[j] = &linked[j - 1] * b + &linked[j];
        }
        let chain = ModalityChain::unnamed(linked.clone()).unwrap();
        let t = transform_chain(&chain).unwrap();
        prop_assert!(t.orthogonality_defect() <= 1e-8);
        for (b, m) in t.blocks.iter().zip(&linked) {
            prop_assert_eq!(b.shape(), m.shape());
            if t.nuisance.ncols() > 0 {
                let again = project_out(&t.nuisance.concatenated, b).unwrap();
                prop_assert!((again - b).amax() <= 1e-12 * (1.0 + b.amax()));
            }
        }
        let ranks = t.link_ranks();
        for (i, u) in t.nuisance.u_blocks.iter().enumerate() {
            prop_assert!(u.ncols() <= ranks[i..].iter().sum::<usize>());
        }
    }

    #[test]
    fn path_invariants(n in 20usize..50, p in 3usize..15, m in 0usize..3, seed in any::<u64>()) {
        let x = random_matrix(n, p, seed);
        let u = random_matrix(n, m, seed.wrapping_add(5));
        let y = response(&x, seed);
        let path = fit_path(&x, &u, &y, &PenaltySpec::l1(), &PathOptions::default()).unwrap();
        prop_assert!(path.beta[0].iter().all(|b| *b == 0.0));
        prop_assert!(path.kkt.iter().all(|k| *k <= 1e-6));
        prop_assert!(path.lambdas.windows(2).all(|w| w[0] > w[1]));
        let prob = standardize_problem(&x, &u, &y, true).unwrap();
        for i in 1..path.len() {
            let here = prob.objective(&path.beta[i], &path.gamma[i], path.lambdas[i], &path.weights);
            let prev = prob.objective(&path.beta[i - 1], &path.gamma[i - 1], path.lambdas[i], &path.weights);
            prop_assert!(here <= prev + 1e-9 * (1.0 + prev.abs()));
        }
    }

    #[test]
    fn gamma_constant_when_blocks_decouple(n in 20usize..40, p in 3usize..10, seed in any::<u64>()) {
        let z = random_matrix(n, p + 2, seed);
        let mut c = z.clone();
        for mut col in c.column_iter_mut() {
            let mu = col.mean();
            col.add_scalar_mut(-mu);
        }
        let q = c.qr().q();
        let x = q.columns(0, p).into_owned();
        let u = q.columns(p, 2).into_owned();
        let y = response(&x, seed) + &u.column(0) * 2.0;
        let path = fit_path(&x, &u, &y, &PenaltySpec::l1(), &PathOptions::default()).unwrap();
        for g in &path.gamma {
            for (a, b) in g.iter().zip(&path.gamma[0]) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn cooperative_layout(n in 2usize..10, p in 1usize..5, q in 1usize..5, rho in 0.0f64..4.0, seed in any::<u64>()) {
        let m1 = random_matrix(n, p, seed);
        let m2 = random_matrix(n, q, seed.wrapping_add(1));
        let y = random_matrix(n, 1, seed.wrapping_add(2)).column(0).into_owned();
        let (d, r) = cooperative_design(&m1, &m2, &y, rho).unwrap();
        prop_assert_eq!(d.view((0, 0), (n, p)).into_owned(), m1);
        prop_assert_eq!(d.view((0, p), (n, q)).into_owned(), m2);
        prop_assert_eq!(r.rows(0, n).into_owned(), y);
        prop_assert!(r.rows(n, n).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn factors_orthogonal_to_idiosyncratic(n in 10usize..30, p in 3usize..12, k in 0usize..3, seed in any::<u64>()) {
        let m = random_matrix(n, p, seed);
        let d = estimate_factors(&m, k).unwrap();
        let cross = d.factors.transpose() * &d.idiosyncratic;
        prop_assert!(cross.iter().all(|v| v.abs() <= 1e-8 * n as f64));
        if k > 0 {
            let g = d.factors.transpose() * &d.factors / n as f64 - DenseMatrix::identity(k, k);
            prop_assert!(g.amax() <= 1e-8);
        }
    }

    #[test]
    fn dice_jaccard_identity(a in prop::collection::btree_set(0usize..40, 0..20), b in prop::collection::btree_set(0usize..40, 0..20)) {
        let (a, b): (Vec<usize>, Vec<usize>) = (a.into_iter().collect(), b.into_iter().collect());
        let j = jaccard(&a, &b);
        prop_assert!((dice(&a, &b) - 2.0 * j / (1.0 + j)).abs() <= 1e-12);
        prop_assert!(dice(&a, &b) >= j);
    }

    #[test]
    fn auc_bounded_and_reindex_invariant(
        betas in prop::collection::vec(prop::collection::vec(prop::bool::ANY, 8), 1..6),
        perm_seed in any::<u64>(),
    ) {
        let l = betas.len();
        let make = |bs: Vec<Vec<f64>>| RegularizationPath {
            lambdas: (0..l).map(|i| 1.0 / (i + 1) as f64).collect(),
            beta: bs,
            gamma: vec![Vec::new(); l],
            weights: vec![1.0; 8],
            kkt: vec![0.0; l],
            x_means: vec![0.0; 8],
            x_scales: vec![1.0; 8],
            u_means: Vec::new(),
            y_mean: 0.0,
            degenerate: false,
        };
        let vals: Vec<Vec<f64>> = betas.iter().map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).collect();
        let truth = [0usize, 3, 5];
        let auc = selection_auc(&make(vals.clone()), &truth, None).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        let mut perm: Vec<usize> = (0..8).collect();
        let mut s = perm_seed;
        for i in (1..8).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<Vec<f64>> = vals.iter().map(|r| (0..8).map(|j| r[perm[j]]).collect()).collect();
        let inv: Vec<usize> = truth.iter().map(|&t| perm.iter().position(|&p| p == t).unwrap()).collect();
        let auc2 = selection_auc(&make(permuted), &inv, None).unwrap();
        prop_assert_eq!(auc, auc2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_fidelity(seed in any::<u64>(), rep in 0u64..50, id in prop::sample::select(vec![ScenarioId::S1, ScenarioId::S4Cs, ScenarioId::S6Chain])) {
        let mut cfg = ScenarioConfig::builtin(id);
        cfg.seed = seed;
        cfg.n = 40;
        cfg.dims = cfg.dims.iter().map(|_| 40).collect();
        let a = simulate_scenario(&cfg, rep).unwrap();
        let b = simulate_scenario(&cfg, rep).unwrap();
        prop_assert_eq!(a.y.clone(), b.y.clone());
        for (s, &k) in a.true_supports.iter().zip(&cfg.support_sizes) {
            prop_assert_eq!(s.len(), k);
        }
        let links = cfg.links();
        let mods = a.chain.modalities();
        for (j, noise) in a.link_noise.iter().enumerate() {
            if let Some(noise) = noise {
                let mut signal = DenseMatrix::zeros(cfg.n, cfg.dims[j]);
                for (i, l) in links.iter().enumerate() {
                    if l.target == j {
                        signal += &mods[l.source] * &a.true_b[i];
                    }
                }
                let snr = entry_variance(&signal) / entry_variance(noise);
                prop_assert!((snr / cfg.snr_for_target(j).unwrap() - 1.0).abs() <= 1e-10);
                prop_assert!((&mods[j] - &signal - noise).amax() <= 1e-12 * (1.0 + mods[j].amax()));
            }
        }
        let y_signal = &a.y - &a.eps1;
        let ys = DenseMatrix::from_column_slice(cfg.n, 1, y_signal.as_slice());
        let en = DenseMatrix::from_column_slice(cfg.n, 1, a.eps1.as_slice());
        prop_assert!((entry_variance(&ys) / entry_variance(&en) / cfg.snr_eps1 - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn factor_adjusted_k0_matches_plain(seed in any::<u64>()) {
        let m1 = random_matrix(30, 6, seed);
        let m2 = random_matrix(30, 4, seed.wrapping_add(1));
        let y = response(&m1, seed);
        let opts = PathOptions::default();
        let fa = fit_factor_adjusted(&[m1.clone(), m2.clone()], &y, &PenaltySpec::l1(), None, FactorCount::Fixed(0), &opts).unwrap();
        let x = mvopr_core::numerics::hcat(&[&m1, &m2]).unwrap();
        let plain = fit_path(&x, &DenseMatrix::zeros(30, 0), &y, &PenaltySpec::l1(), &opts).unwrap();
        prop_assert_eq!(&fa.path.lambdas, &plain.lambdas);
        prop_assert_eq!(&fa.path.beta, &plain.beta);
        let again = solve_path(&x, &DenseMatrix::zeros(30, 0), &y, &PenaltySpec::l1(), &plain.lambdas, &opts).unwrap();
        prop_assert_eq!(&again.beta, &plain.beta);
    }
}
