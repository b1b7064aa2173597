use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use poisson_sketch::metrics::{l1_distance, l1_norm};
use poisson_sketch::pmle::{neg_log_likelihood, sparse_poisson_solve, SolverOptions};
use poisson_sketch::stream::sample_poisson;
use poisson_sketch::BipartiteGraph;

fn dense(g: &BipartiteGraph, support: &[usize]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(g.n_right(), support.len());
    for (c, &i) in support.iter().enumerate() {
        for &j in g.column(i) {
            a[(j, c)] = 1.0;
        }
    }
    a
}

fn objective(a: &DMatrix<f64>, y: &DVector<f64>, s: f64, theta: &DVector<f64>) -> f64 {
    let mu = a * theta * s;
    mu.iter().zip(y.iter()).map(|(m, yj)| m - yj * m.ln()).sum()
}

/// Damped Newton on the unconstrained problem; valid when the optimum is interior.
fn newton(a: &DMatrix<f64>, y: &DVector<f64>, s: f64) -> DVector<f64> {
    let n = a.ncols();
    let mut theta = DVector::from_element(n, y.sum() / (s * a.sum()));
    for _ in 0..200 {
        let mu = a * &theta * s;
        let r = DVector::from_iterator(mu.len(), mu.iter().zip(y.iter()).map(|(m, yj)| 1.0 - yj / m));
        let grad = a.transpose() * r * s;
        let w = DMatrix::from_diagonal(&DVector::from_iterator(
            mu.len(),
            mu.iter().zip(y.iter()).map(|(m, yj)| yj / (m * m)),
        ));
        let hess = a.transpose() * w * a * (s * s);
        let step = hess.cholesky().expect("positive definite Hessian").solve(&grad);
        let f0 = objective(a, y, s, &theta);
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let mu = a * &cand * s;
            if mu.iter().all(|&m| m > 0.0) && objective(a, y, s, &cand) <= f0 {
                theta = cand;
                break;
            }
            t *= 0.5;
            assert!(t > 1e-20, "line search stalled");
        }
        if grad.norm() < 1e-12 {
            break;
        }
    }
    theta
}

#[test]
fn projected_gradient_matches_newton_on_a_small_instance() {
    let g = BipartiteGraph::random(10, 6, 3, 4).unwrap();
    let support = [1, 4, 6, 9];
    let a = dense(&g, &support);
    assert_eq!(a.clone().svd(false, false).rank(1e-9), 4);
    let mut truth = [0.0; 10];
    for (&i, v) in support.iter().zip([1.0, 2.0, 0.5, 3.0]) {
        truth[i] = v;
    }
    let s = 20.0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let means = g.apply(&truth).unwrap();
    let y: Vec<f64> = means.iter().map(|m| sample_poisson(&mut rng, s * m) as f64).collect();

    let oracle = newton(&a, &DVector::from_column_slice(&y), s);
    assert!(oracle.iter().all(|&v| v > 0.0), "interior optimum expected: {oracle}");

    let opts = SolverOptions {
        max_iter: 100_000,
        tol: 1e-14,
    };
    let sol = sparse_poisson_solve(&y, &g, &support, s, None, &opts).unwrap();
    let mut o = vec![0.0; 10];
    for (&i, &v) in support.iter().zip(oracle.iter()) {
        o[i] = v;
    }
    let rel = l1_distance(&sol.theta, &o) / l1_norm(&o);
    assert!(rel <= 1e-4, "relative l1 gap {rel}");
    let f_oracle = neg_log_likelihood(&o, &g, &y, s).unwrap();
    assert!(sol.objective <= f_oracle + 1e-8 * f_oracle.abs());
}

#[test]
fn boundary_optimum_is_reached_by_projection() {
    // y only touches the first flow's counters, so every other flow is pinned at zero
    let g = BipartiteGraph::from_columns(4, vec![vec![0, 1], vec![2, 3], vec![1, 2], vec![0, 3]], 0).unwrap();
    let y = [6.0, 6.0, 0.0, 0.0];
    let sol = sparse_poisson_solve(&y, &g, &[0, 1, 2], 2.0, None, &SolverOptions::default()).unwrap();
    assert!((sol.theta[0] - 3.0).abs() < 1e-6, "{:?}", sol.theta);
    assert!(sol.theta[1].abs() < 1e-9 && sol.theta[2].abs() < 1e-9);
}
