mod common;

use common::{dense_inverse, matmul, mvn_logpdf, transpose};
use tbm::correlation::{dist_corr_curve, CorrelationEngine};
use tbm::fem::assemble;
use tbm::fixtures::{calibration_fixture, Fixture};
use tbm::gmrf::{factorize, Factorization, Ordering, RandomSource};
use tbm::inference::{dense_cholesky, GaussianModel, LgcpData, LgcpModel, ObservationSet};
use tbm::mesh::{classify_triangles, generate_rect_mesh, RegionPolygon};
use tbm::precision::{assemble_q, HyperParams};

fn dense_logdet(a: &[Vec<f64>]) -> f64 {
    let l = dense_cholesky(a).unwrap();
    (0..a.len()).map(|i| 2.0 * l[i][i].ln()).sum()
}

/// Canal geometry at a coarse resolution, small enough for dense algebra.
fn coarse_canal() -> Fixture {
    let regions = vec![
        RegionPolygon::rectangle((-2.0, 4.5), (4.5, 5.5), 2).unwrap(),
        RegionPolygon::rectangle((5.5, 12.0), (4.5, 5.5), 2).unwrap(),
    ];
    Fixture::build((0.0, 10.0), (0.0, 10.0), 1.0, 1.0, regions, 2.0).unwrap()
}

#[test]
fn canal_solve_matches_dense_column() {
    let f = coarse_canal();
    let fem = f.fem().unwrap();
    let q = assemble_q(&fem, &HyperParams::new(1.0, 2.0, vec![1.0, 0.1]).unwrap()).unwrap();
    let dense = dense_inverse(&q.to_dense());
    let node = f.node_near([5.0, 4.0]);
    let mut e = vec![0.0; q.ncols()];
    e[node] = 1.0;
    for ordering in [Ordering::NestedDissection, Ordering::MinimumDegree, Ordering::Natural] {
        let col = Factorization::new(&q, ordering).unwrap().solve(&e).unwrap();
        for (i, v) in col.iter().enumerate() {
            assert!(
                (v - dense[i][node]).abs() <= 1e-10 * dense[node][node],
                "{ordering:?} row {i}"
            );
        }
    }
    let factor = factorize(&q).unwrap();
    let ones = vec![1.0; q.ncols()];
    let x = factor.solve(&q.mul_vec(&ones)).unwrap();
    assert!(x.iter().all(|v| (v - 1.0).abs() <= 1e-8));
    assert!(factor.solve(&vec![0.0; q.ncols()]).unwrap().iter().all(|&v| v == 0.0));
    assert!((factor.log_det() - dense_logdet(&q.to_dense())).abs() <= 1e-8 * factor.log_det().abs());
}

#[test]
fn selected_inverse_matches_dense_inverse_on_pattern() {
    let f = coarse_canal();
    let fem = f.fem().unwrap();
    let q = assemble_q(&fem, &HyperParams::new(0.7, 3.0, vec![1.0, 0.3]).unwrap()).unwrap();
    let dense = dense_inverse(&q.to_dense());
    let sel = factorize(&q).unwrap().selected_inverse();
    for j in 0..q.ncols() {
        let (rows, _) = q.col(j);
        for &i in rows {
            assert!((sel.get(i, j) - dense[i][j]).abs() <= 1e-10 * dense[j][j]);
        }
    }
}

#[test]
fn gaussian_posterior_matches_dense_conditioning() {
    let mesh = generate_rect_mesh((0.0, 3.0), (0.0, 3.0), 0.5, 0.5).unwrap();
    let region = RegionPolygon::rectangle((-1.0, 4.0), (1.2, 1.8), 2).unwrap();
    let lab = classify_triangles(&mesh, &[region]);
    let fem = assemble(&mesh, &lab).unwrap();
    let mut rng = RandomSource::new(5);
    let locs: Vec<[f64; 2]> = (0..15).map(|_| [3.0 * rng.uniform(), 3.0 * rng.uniform()]).collect();
    let y: Vec<f64> = (0..15).map(|_| rng.normal()).collect();
    let obs = ObservationSet::new(&mesh, locs, Some(y.clone())).unwrap();
    let fractions = [1.0, 0.2];
    let model = GaussianModel::new(&fem, &fractions, &obs).unwrap();
    let theta = [0.3f64, 0.2, -1.0];
    let (mean, sd) = model.posterior(&theta).unwrap();

    // Σ_post = Σ - Σ Aᵀ (A Σ Aᵀ + σ² I)⁻¹ A Σ; μ = Σ Aᵀ (A Σ Aᵀ + σ² I)⁻¹ y.
    let q = assemble_q(
        &fem,
        &HyperParams::new(theta[0].exp(), theta[1].exp(), fractions.to_vec()).unwrap(),
    )
    .unwrap();
    let sigma = dense_inverse(&q.to_dense());
    let a = obs.a.to_dense();
    let sat = matmul(&sigma, &transpose(&a));
    let mut s = matmul(&a, &sat);
    let noise = (2.0 * theta[2]).exp();
    for (i, row) in s.iter_mut().enumerate() {
        row[i] += noise;
    }
    let s_inv = dense_inverse(&s);
    let gain = matmul(&sat, &s_inv);
    for i in 0..mesh.n_nodes() {
        let mu: f64 = (0..y.len()).map(|k| gain[i][k] * y[k]).sum();
        let var = sigma[i][i] - (0..y.len()).map(|k| gain[i][k] * sat[i][k]).sum::<f64>();
        assert!((mean[i] - mu).abs() <= 1e-9, "mean at {i}");
        assert!((sd[i] - var.sqrt()).abs() <= 1e-9, "sd at {i}");
    }
    let direct = mvn_logpdf(&y, &s);
    assert!((model.log_likelihood(&theta).unwrap() - direct).abs() <= 1e-8);
}

#[test]
fn laplace_evidence_matches_dense_newton() {
    let mesh = generate_rect_mesh((0.0, 2.0), (0.0, 2.0), 0.5, 0.0).unwrap();
    let region = RegionPolygon::rectangle((1.0, 3.0), (-1.0, 3.0), 2).unwrap();
    let lab = classify_triangles(&mesh, &[region]);
    let fem = assemble(&mesh, &lab).unwrap();
    let events = vec![[0.3, 0.4], [0.6, 1.7], [0.2, 1.1], [0.9, 0.9], [0.45, 0.2]];
    let data = LgcpData::new(&mesh, &lab, events, &[1]).unwrap();
    let model = LgcpModel::new(&fem, &[1.0, 0.4], data.clone()).unwrap();
    let theta = [-0.2, 0.1];
    let mode = model.laplace_mode(&theta, None).unwrap();
    assert!(mode.converged);

    // Independent dense Newton on the same posterior.
    let n = mesh.n_nodes();
    let qp = model.prior_precision(&theta).unwrap().to_dense();
    let a = data.events.a.to_dense();
    let mut x = vec![0.0f64; n + 1];
    let eta_events = |x: &[f64]| -> Vec<f64> {
        a.iter()
            .map(|r| x[n] + (0..n).map(|i| r[i] * x[i]).sum::<f64>())
            .collect()
    };
    let phi = |x: &[f64]| -> f64 {
        let ev: f64 = eta_events(x).iter().sum();
        let integral: f64 = (0..n).map(|i| data.weights[i] * (x[i] + x[n]).exp()).sum();
        let quad: f64 = (0..=n)
            .map(|i| x[i] * (0..=n).map(|j| qp[i][j] * x[j]).sum::<f64>())
            .sum();
        ev - integral - 0.5 * quad
    };
    let hessian = |x: &[f64]| -> Vec<Vec<f64>> {
        let mut h = qp.clone();
        for i in 0..n {
            let l = data.weights[i] * (x[i] + x[n]).exp();
            h[i][i] += l;
            h[i][n] += l;
            h[n][i] += l;
            h[n][n] += l;
        }
        h
    };
    for _ in 0..50 {
        let mut g = vec![0.0; n + 1];
        for r in &a {
            for i in 0..n {
                g[i] += r[i];
            }
            g[n] += 1.0;
        }
        for i in 0..n {
            let l = data.weights[i] * (x[i] + x[n]).exp();
            g[i] -= l;
            g[n] -= l;
        }
        for i in 0..=n {
            g[i] -= (0..=n).map(|j| qp[i][j] * x[j]).sum::<f64>();
        }
        let hinv = dense_inverse(&hessian(&x));
        for i in 0..=n {
            x[i] += (0..=n).map(|j| hinv[i][j] * g[j]).sum::<f64>();
        }
    }
    for (u, v) in x.iter().zip(&mode.x) {
        assert!((u - v).abs() <= 1e-8);
    }
    let evidence = phi(&x) + 0.5 * dense_logdet(&qp) - 0.5 * dense_logdet(&hessian(&x));
    assert!(
        (evidence - mode.log_evidence).abs() <= 1e-8,
        "{evidence} vs {}",
        mode.log_evidence
    );
}

#[test]
fn stationary_curve_decreases_after_binning() {
    let (f, node, proj) = calibration_fixture().unwrap();
    let fem = f.fem().unwrap();
    let q = assemble_q(&fem, &HyperParams::stationary(1.0, 1.0, 1).unwrap()).unwrap();
    let field = CorrelationEngine::new(&q).unwrap().field(&f.mesh, node).unwrap();
    let curve = dist_corr_curve(&field, &proj, None).unwrap();
    let spacing = 3.0 / 299.0;
    let bins = curve.binned(spacing);
    assert!(bins.len() > 100);
    for w in bins.windows(2) {
        assert!(w[1].1 < w[0].1, "bin at {} rises", w[1].0);
    }
}
