#![allow(dead_code)]

use tbm::correlation::CorrelationEngine;
use tbm::fixtures::Fixture;
use tbm::inference::dense_cholesky;
use tbm::precision::{assemble_q, HyperParams};
use tbm::sparse::CscMatrix;

pub type Dense = Vec<Vec<f64>>;

/// Inverse of a symmetric positive definite matrix by Gauss–Jordan with
/// partial pivoting, independent of the sparse code path.
pub fn dense_inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| m[x][c].abs().partial_cmp(&m[y][c].abs()).unwrap())
            .unwrap();
        m.swap(c, p);
        let d = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    let pivot = m[c].clone();
                    m[r].iter_mut().zip(&pivot).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            let v = a[i][l];
            if v != 0.0 {
                for j in 0..m {
                    out[i][j] += v * b[l][j];
                }
            }
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// `log N(y; 0, Σ)`.
pub fn mvn_logpdf(y: &[f64], sigma: &Dense) -> f64 {
    let l = dense_cholesky(sigma).expect("covariance is positive definite");
    let n = y.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|j| l[i][j] * z[j]).sum();
        z[i] = (y[i] - s) / l[i][i];
    }
    let logdet: f64 = (0..n).map(|i| 2.0 * l[i][i].ln()).sum();
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Largest `|a - b| / max(|a|, |b|)` over the union of both patterns.
pub fn max_rel_diff(a: &CscMatrix, b: &CscMatrix) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in [(a, b), (b, a)] {
        for j in 0..x.ncols() {
            let (rows, vals) = x.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                let w = y.get(i, j);
                let scale = v.abs().max(w.abs());
                if scale > 0.0 {
                    worst = worst.max((v - w).abs() / scale);
                }
            }
        }
    }
    worst
}

/// Prior correlation between the nodes nearest two points.
pub fn probe_correlation(f: &Fixture, fractions: &[f64], a: [f64; 2], b: [f64; 2]) -> f64 {
    let fem = f.fem().unwrap();
    let hp = HyperParams::new(1.0, f.range, fractions.to_vec()).unwrap();
    let q = assemble_q(&fem, &hp).unwrap();
    let engine = CorrelationEngine::new(&q).unwrap();
    engine.field(&f.mesh, f.node_near(a)).unwrap().values[f.node_near(b)]
}
