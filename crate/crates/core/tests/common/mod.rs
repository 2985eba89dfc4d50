//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use mvopr_core::numerics::{standard_normal_matrix, DenseMatrix, RngStream, Vector};

/// Rank-`r` reduced-rank regression by alternating least squares:
/// minimize |Y - X A B^T|_F over A (p x r), B (q x r).
pub fn rrr_als(x: &DenseMatrix, y: &DenseMatrix, r: usize, seed: u64) -> DenseMatrix {
    let q = y.ncols();
    let mut b = standard_normal_matrix(q, r, &mut RngStream::new(seed, 7).rng());
    let xtx_inv = (x.transpose() * x).try_inverse().expect("full column rank");
    let mut prev = DenseMatrix::zeros(x.ncols(), q);
    for _ in 0..200_000 {
        b = b.qr().q();
        let a = &xtx_inv * x.transpose() * y * &b;
        let xa = x * &a;
        let bt = (xa.transpose() * &xa).try_inverse().expect("nonsingular") * xa.transpose() * y;
        b = bt.transpose();
        let coef = &a * b.transpose();
        if (&coef - &prev).norm() < 1e-15 {
            return coef;
        }
        prev = coef;
    }
    prev
}

/// Accelerated proximal gradient on
/// `(1/2n)|y - X b - U g|^2 + lambda * sum w_j |b_j|`, `g` unpenalized.
/// Returns `(beta, gamma, objective)`.
pub fn lasso_proximal_oracle(
    x: &DenseMatrix,
    u: &DenseMatrix,
    y: &Vector,
    lambda: f64,
    w: &[f64],
    iters: usize,
) -> (Vec<f64>, Vec<f64>, f64) {
    let n = y.len() as f64;
    let (p, m) = (x.ncols(), u.ncols());
    let mut z = DenseMatrix::zeros(y.len(), p + m);
    z.columns_mut(0, p).copy_from(x);
    if m > 0 {
        z.columns_mut(p, m).copy_from(u);
    }
    let gram = z.transpose() * &z / n;
    let zty = z.transpose() * y / n;
    let lip = gram.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / lip;
    let objective = |t: &Vector| -> f64 {
        let r = y - &z * t;
        r.norm_squared() / (2.0 * n) + lambda * (0..p).map(|j| w[j] * t[j].abs()).sum::<f64>()
    };
    let prox = |v: &Vector| -> Vector {
        Vector::from_fn(p + m, |j, _| {
            if j < p {
                let t = step * lambda * w[j];
                v[j].signum() * (v[j].abs() - t).max(0.0)
            } else {
                v[j]
            }
        })
    };
    let mut theta = Vector::zeros(p + m);
    let mut mom = theta.clone();
    let mut t_k = 1.0f64;
    let mut best = objective(&theta);
    let mut best_theta = theta.clone();
    for _ in 0..iters {
        let grad = &gram * &mom - &zty;
        let next = prox(&(&mom - grad * step));
        let f_next = objective(&next);
        let t_next = (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt()) / 2.0;
        if f_next > objective(&theta) {
            // adaptive restart
            mom = theta.clone();
            t_k = 1.0;
            continue;
        }
        mom = &next + (&next - &theta) * ((t_k - 1.0) / t_next);
        theta = next;
        t_k = t_next;
        if f_next < best {
            best = f_next;
            best_theta = theta.clone();
        }
    }
    let beta = best_theta.rows(0, p).iter().copied().collect();
    let gamma = best_theta.rows(p, m).iter().copied().collect();
    (beta, gamma, best)
}

/// Trapezoid area under explicitly listed (fpr, tpr) points, endpoints added.
pub fn hand_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts = vec![(0.0, 0.0), (1.0, 1.0)];
    pts.extend_from_slice(points);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// Design with centered columns and `X^T X / n = I`.
pub fn orthonormal_design(n: usize, p: usize, seed: u64) -> DenseMatrix {
    let mut z = standard_normal_matrix(n, p, &mut RngStream::new(seed, 0).rng());
    for mut c in z.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    z.qr().q() * (n as f64).sqrt()
}

pub fn random_matrix(n: usize, p: usize, seed: u64) -> DenseMatrix {
    standard_normal_matrix(n, p, &mut RngStream::new(seed, 0).rng())
}
